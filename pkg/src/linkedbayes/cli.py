"""Command-line entry point: gen, exp1, exp2, eval.

Exit codes: 0 success, 1 usage error, 2 runtime error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .experiments import run_exp1, run_exp2
from .metrics import ConfusionMatrix
from .synth import WorldSpec, generate_dataset, generate_world, read_dataset, write_dataset

log = logging.getLogger("linkedbayes")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def load_config(path) -> dict:
    """JSON config: {"world": {...}, "J": int, "exp1": {...}, "exp2": {...}}; all sections optional."""
    if path is None:
        return {}
    cfg = json.loads(Path(path).read_text())
    if not isinstance(cfg, dict):
        raise ValueError("config must be a JSON object")
    return cfg


def _write_report(report: dict, path) -> None:
    text = json.dumps(report, sort_keys=True, indent=1)
    if path in (None, "-"):
        print(text)
    else:
        Path(path).write_text(text + "\n")


def cmd_gen(args) -> None:
    cfg = load_config(args.spec)
    spec = WorldSpec.from_dict(cfg.get("world", {} if "J" in cfg or "exp1" in cfg or "exp2" in cfg else cfg))
    J = args.J if args.J is not None else int(cfg.get("J", 10))
    seed_world, seed_data = np.random.SeedSequence(args.seed).spawn(2)
    world = generate_world(spec, np.random.default_rng(seed_world))
    records = generate_dataset(world, J, np.random.default_rng(seed_data))
    write_dataset(records, args.out)
    log.info("wrote %d records to %s", len(records), args.out)


def _run(fn, args) -> None:
    cfg = load_config(args.config)
    records = read_dataset(args.data)
    report = fn(records, cfg, args.seed)
    report["config"] = cfg
    report["data"] = str(args.data)
    _write_report(report, args.report)


def _render_variant(name: str, v: dict) -> list[str]:
    lines = [f"[{name}]"]
    for key in ("phoneme_accuracy",):
        if key in v:
            lines.append(f"  phoneme accuracy   {v[key]:.4f}")
    if "segmentation" in v:
        s = v["segmentation"]
        lines.append(f"  segmentation       P={s['precision']:.4f} R={s['recall']:.4f} F={s['f_measure']:.4f}"
                     f"  (tp={s['n_tp']} fp={s['n_fp']} fn={s['n_fn']})")
    for key in ("object", "motion", "integrated"):
        part = v.get(key)
        if not part:
            continue
        lines.append(f"  {key} accuracy  {part['accuracy']:.4f}")
        c = part["confusion"]
        cm = ConfusionMatrix(np.array(c["counts"], dtype=int), c["true_labels"], c["pred_labels"])
        lines.extend("    " + row for row in cm.render().splitlines())
    if v.get("flags"):
        lines.append(f"  flags: {', '.join(v['flags'])}")
    return lines


def cmd_eval(args) -> None:
    report = json.loads(Path(args.report).read_text())
    if "variants" not in report:
        raise ValueError("not an experiment report")
    lines = [f"{report.get('experiment', '?')}  seed={report.get('seed')}  records={report.get('n_records')}"]
    for name, v in report["variants"].items():
        lines.extend(_render_variant(name, v))
    print("\n".join(lines))


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="linkedbayes", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    g = sub.add_parser("gen", help="generate a synthetic dataset")
    g.add_argument("--spec", help="JSON world spec (or full config with a 'world' section)")
    g.add_argument("--seed", type=int, required=True)
    g.add_argument("--out", required=True)
    g.add_argument("--J", type=int, help="records per integrated category (default: config J or 10)")
    g.set_defaults(func=cmd_gen)

    for name, fn in (("exp1", run_exp1), ("exp2", run_exp2)):
        e = sub.add_parser(name, help=f"run {name} and write a JSON report")
        e.add_argument("--data", required=True)
        e.add_argument("--config")
        e.add_argument("--seed", type=int, required=True)
        e.add_argument("--report", default="-")
        e.set_defaults(func=lambda a, fn=fn: _run(fn, a))

    ev = sub.add_parser("eval", help="print tables and confusion matrices from a report")
    ev.add_argument("--report", required=True)
    ev.set_defaults(func=cmd_eval)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("a subcommand is required")
    except UsageError as e:
        parser.print_help(sys.stderr)
        print(e, file=sys.stderr)
        return 1
    except SystemExit as e:  # --help / --version
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except Exception as e:
        log.debug("failure", exc_info=True)
        print(f"linkedbayes {args.command}: {type(e).__name__}: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
