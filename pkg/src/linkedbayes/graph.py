"""Module graph and the three inter-module connectors.

A module owns some shared latent variables and talks to its neighbours only
through messages:

* MP  -- finite categorical distributions go up and come back down; the lower
  module samples from the normalised elementwise product.
* SIR -- the lower module proposes L candidates per instance; the upper module
  resamples one of them by its own conditional weight.
* MH  -- the lower module's posterior is the proposal, the upper module's
  conditional ratio is the acceptance probability.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np
from scipy.special import logsumexp

log = logging.getLogger(__name__)

NORM_TOL = 1e-9

# diagnostic flags
DEGENERATE_PRODUCT = "degenerate_product"
ALL_ZERO_WEIGHTS = "all_zero_weights"
ZERO_DENOMINATOR = "zero_denominator"
SINGLE_CANDIDATE = "single_candidate"


class GraphError(Exception):
    pass


class UnknownModule(GraphError):
    pass


class CycleError(GraphError):
    pass


class ArityMismatch(GraphError):
    pass


class LayerMismatch(GraphError):
    pass


class DimensionMismatch(GraphError):
    pass


class NonFiniteLikelihood(GraphError):
    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or []


@dataclass(frozen=True)
class CategoricalMessage:
    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        if p.ndim != 1 or p.size < 1:
            raise DimensionMismatch("a categorical message needs K >= 1 entries")
        if np.any(p < 0) or abs(p.sum() - 1.0) > NORM_TOL:
            raise ValueError(f"message is not a distribution (sum={p.sum()!r})")
        object.__setattr__(self, "probs", p)

    @property
    def K(self) -> int:
        return self.probs.size


@dataclass(frozen=True)
class SampleMessage:
    """L candidates for one instance.

    ``enumerated=False``: i.i.d. draws from the lower posterior, ``log_scores``
    are proposal log-densities and play no part in selection.
    ``enumerated=True``: distinct support points (e.g. an L-best list), each
    standing for its own posterior mass, so ``log_scores`` (unnormalised log
    posterior) multiply into the selection weights.
    """

    samples: tuple
    log_scores: np.ndarray
    enumerated: bool = False

    def __post_init__(self):
        s = tuple(self.samples)
        scores = np.asarray(self.log_scores, dtype=float)
        if len(s) < 1 or len(s) != scores.size:
            raise DimensionMismatch("samples and log_scores must be non-empty and equal length")
        object.__setattr__(self, "samples", s)
        object.__setattr__(self, "log_scores", scores)

    def __len__(self):
        return len(self.samples)


def check_messages(msgs: np.ndarray, K: int | None = None) -> np.ndarray:
    """Validate a stack of categorical messages (one row per instance)."""
    msgs = np.asarray(msgs, dtype=float)
    if msgs.ndim != 2:
        raise DimensionMismatch(f"expected (instances, K) messages, got shape {msgs.shape}")
    if K is not None and msgs.shape[1] != K:
        raise DimensionMismatch(f"message length {msgs.shape[1]} != K={K}")
    if np.any(msgs < 0) or np.any(np.abs(msgs.sum(axis=1) - 1.0) > NORM_TOL):
        raise ValueError("messages must be normalised within 1e-9")
    return msgs


def exp_normalize(logp: np.ndarray) -> np.ndarray:
    """Row-wise exp-normalise; rows that are all -inf come back as NaN."""
    logp = np.atleast_2d(logp)
    with np.errstate(invalid="ignore"):
        z = logsumexp(logp, axis=1, keepdims=True)
        out = np.exp(logp - z)
    return out


def _log(x):
    with np.errstate(divide="ignore"):
        return np.log(x)


class Module:
    """Contract every graph node satisfies.

    ``arity`` is the number of values of the shared latent this module exposes
    to an upper module (``None`` when unbounded, e.g. strings). ``key`` picks
    which shared latent/observation slot a connection binds.
    """

    def __init__(self, name: str, layer: int = 0, arity: int | None = None):
        if layer < 0:
            raise ValueError("layer must be non-negative")
        self.name = name
        self.layer = layer
        self.arity = arity

    # internal update
    def sweep(self, rng: np.random.Generator) -> None:
        pass

    def log_likelihood(self) -> float:
        return 0.0

    # lower-side contract
    def bottom_up(self, key=None) -> np.ndarray:
        """P(z1 | o) for each instance, shape (instances, K)."""
        raise NotImplementedError(f"{type(self).__name__} cannot emit categorical messages")

    def propose(self, key, rng: np.random.Generator, L: int) -> list[SampleMessage]:
        msgs = self.bottom_up(key)
        out = []
        for row in msgs:
            draws = rng.choice(row.size, size=L, p=row)
            out.append(SampleMessage(tuple(int(d) for d in draws), _log(row[draws])))
        return out

    def current(self, key=None) -> list:
        """Current value of the shared latent per instance (MH chain start)."""
        raise NotImplementedError

    def receive(self, key, values: Sequence, top_down: np.ndarray | None, rng) -> None:
        """Step 5 of MP, or the outcome of SIR/MH: adopt values and update parameters."""
        raise NotImplementedError

    # upper-side contract
    def absorb(self, key, messages: np.ndarray, rng) -> None:
        raise NotImplementedError

    def top_down(self, key) -> np.ndarray:
        raise NotImplementedError

    def log_weights(self, key, instance: int, candidates: Sequence) -> np.ndarray:
        """log P(z1 = candidate | z2) for one instance."""
        raise NotImplementedError

    def accept_selected(self, key, values: Sequence, rng) -> None:
        raise NotImplementedError

    def __repr__(self):
        return f"{type(self).__name__}({self.name!r}, layer={self.layer})"


# alias matching the contract's name
ModuleHandle = Module


@dataclass
class Connection:
    lower: Module
    upper: Module
    kind: str = "MP"
    L: int = 10
    burn_in: int = 0
    steps: int = 100
    lower_key: Any = None
    upper_key: Any = None
    flags: list = field(default_factory=list)

    def label(self) -> str:
        return f"{self.lower.name}->{self.upper.name}"


@dataclass
class TrainDiagnostics:
    round_index: int
    log_likelihood: dict
    message_change: float
    flags: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"round_index": self.round_index, "log_likelihood": dict(self.log_likelihood),
                "message_change": self.message_change, "flags": list(self.flags)}


class ModuleGraph:
    def __init__(self):
        self.modules: dict[str, Module] = {}
        self.connections: list[Connection] = []

    def add(self, module: Module) -> Module:
        if module.name in self.modules:
            raise GraphError(f"duplicate module name {module.name!r}")
        self.modules[module.name] = module
        return module

    def __getitem__(self, name: str) -> Module:
        try:
            return self.modules[name]
        except KeyError:
            raise UnknownModule(name) from None

    def _registered(self, m: Module) -> bool:
        return self.modules.get(m.name) is m

    def validate(self) -> None:
        for c in self.connections:
            if not (self._registered(c.lower) and self._registered(c.upper)):
                raise UnknownModule(c.label())
            if c.lower.layer != c.upper.layer - 1:
                raise LayerMismatch(f"{c.label()}: layers {c.lower.layer} and {c.upper.layer}")
            if c.kind == "MP" and c.lower.arity is None:
                raise ArityMismatch(f"{c.label()}: MP needs a finite lower latent")
        # acyclicity over the directed lower->upper edges
        adj: dict[str, list[str]] = {n: [] for n in self.modules}
        for c in self.connections:
            adj[c.lower.name].append(c.upper.name)
        state: dict[str, int] = {}

        def visit(n):
            state[n] = 1
            for m in adj[n]:
                if state.get(m) == 1:
                    raise CycleError(f"cycle through {m!r}")
                if m not in state:
                    visit(m)
            state[n] = 2

        for n in adj:
            if n not in state:
                visit(n)

    def modules_bottom_up(self) -> list[Module]:
        return sorted(self.modules.values(), key=lambda m: m.layer)

    def connections_top_down(self) -> list[Connection]:
        return sorted(self.connections, key=lambda c: -c.upper.layer)


def connect(graph: ModuleGraph, lower: Module, upper: Module, kind: str = "MP", **options) -> ModuleGraph:
    """Wire ``lower``'s shared latent to ``upper``. Options: L, burn_in, steps, lower_key, upper_key."""
    kind = kind.upper()
    if kind not in ("MP", "SIR", "MH"):
        raise GraphError(f"unknown connection kind {kind!r}")
    for m in (lower, upper):
        if not graph._registered(m):
            raise UnknownModule(getattr(m, "name", repr(m)))
    if lower is upper:
        raise CycleError(f"{lower.name!r} connected to itself")
    if kind == "MP" and lower.arity is None:
        raise ArityMismatch(f"{lower.name!r} exposes an unbounded latent; use SIR or MH")
    conn = Connection(lower, upper, kind, **options)
    graph.connections.append(conn)
    try:
        graph.validate()
    except GraphError:
        graph.connections.pop()
        raise
    return graph


# --- connectors ---------------------------------------------------------------

@dataclass
class RoundResult:
    values: list
    flags: list = field(default_factory=list)
    bottom_up: np.ndarray | None = None
    distribution: np.ndarray | None = None


def mp_product(bottom_up: np.ndarray, top_down: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Normalised elementwise product per row, in log space.

    Returns ``(dist, degenerate)``; degenerate rows fall back to ``bottom_up``.
    """
    bu = np.atleast_2d(bottom_up)
    td = np.atleast_2d(top_down)
    if bu.shape != td.shape:
        raise DimensionMismatch(f"bottom-up {bu.shape} vs top-down {td.shape}")
    dist = exp_normalize(_log(bu) + _log(td))
    bad = ~np.isfinite(dist).all(axis=1)
    if bad.any():
        dist[bad] = bu[bad]
    return dist, bad


def _categorical(rng: np.random.Generator, dist: np.ndarray) -> np.ndarray:
    cdf = np.cumsum(dist, axis=1)
    u = rng.random(dist.shape[0])[:, None] * cdf[:, -1:]
    return np.minimum((cdf <= u).sum(axis=1), dist.shape[1] - 1)


def mp_round(conn: Connection, rng) -> RoundResult:
    rng = np.random.default_rng(rng)
    lower, upper = conn.lower, conn.upper
    bu = check_messages(lower.bottom_up(conn.lower_key), lower.arity)
    upper.absorb(conn.upper_key, bu, rng)
    td = check_messages(upper.top_down(conn.upper_key))
    if td.shape != bu.shape:
        raise DimensionMismatch(f"{conn.label()}: bottom-up {bu.shape} vs top-down {td.shape}")
    dist, bad = mp_product(bu, td)
    flags = []
    if bad.any():
        log.warning("%s: degenerate message product for %d instance(s)", conn.label(), int(bad.sum()))
        flags.append(DEGENERATE_PRODUCT)
    z = _categorical(rng, dist)
    lower.receive(conn.lower_key, z.tolist(), td, rng)
    return RoundResult(z.tolist(), flags, bu, dist)


def sir_selection_probs(candidates: Sequence, log_w: np.ndarray) -> tuple[np.ndarray, bool]:
    """Probability of selecting each candidate slot; uniform when all weights are zero."""
    log_w = np.asarray(log_w, dtype=float)
    if log_w.size != len(candidates):
        raise DimensionMismatch("one weight per candidate required")
    if not np.isfinite(log_w).any():
        return np.full(log_w.size, 1.0 / log_w.size), True
    return exp_normalize(log_w)[0], False


def sir_round(conn: Connection, L: int | None, rng) -> RoundResult:
    rng = np.random.default_rng(rng)
    L = conn.L if L is None else L
    if L < 1:
        raise ValueError("L must be >= 1")
    lower, upper = conn.lower, conn.upper
    proposals = lower.propose(conn.lower_key, rng, L)
    chosen, flags = [], []
    for j, msg in enumerate(proposals):
        if len(msg) == 1:
            if SINGLE_CANDIDATE not in flags:
                flags.append(SINGLE_CANDIDATE)
            chosen.append(msg.samples[0])
            continue
        log_w = np.asarray(upper.log_weights(conn.upper_key, j, msg.samples), dtype=float)
        if msg.enumerated:
            log_w = log_w + msg.log_scores
        probs, zero = sir_selection_probs(msg.samples, log_w)
        if zero and ALL_ZERO_WEIGHTS not in flags:
            flags.append(ALL_ZERO_WEIGHTS)
        chosen.append(msg.samples[int(rng.choice(len(msg), p=probs))])
    lower.receive(conn.lower_key, chosen, None, rng)
    upper.accept_selected(conn.upper_key, chosen, rng)
    return RoundResult(chosen, flags)


def mh_round(conn: Connection, steps: int | None, rng, burn_in: int | None = None) -> RoundResult:
    """Independence Metropolis-Hastings with the lower posterior as proposal.

    Returns the full chain (``steps`` x instances) in ``values``; modules are
    updated from the final state once the chain is past ``burn_in``.
    """
    rng = np.random.default_rng(rng)
    steps = conn.steps if steps is None else steps
    burn_in = conn.burn_in if burn_in is None else burn_in
    lower, upper = conn.lower, conn.upper
    state = list(lower.current(conn.lower_key))
    cur_lw = np.array([upper.log_weights(conn.upper_key, j, [s])[0] for j, s in enumerate(state)])
    chain, flags = [], []
    for _ in range(steps):
        props = lower.propose(conn.lower_key, rng, 1)
        u = rng.random(len(state))
        for j, msg in enumerate(props):
            cand = msg.samples[0]
            new_lw = upper.log_weights(conn.upper_key, j, [cand])[0]
            if not np.isfinite(cur_lw[j]):
                if ZERO_DENOMINATOR not in flags:
                    flags.append(ZERO_DENOMINATOR)
                accept = True
            else:
                accept = np.log(u[j]) < new_lw - cur_lw[j]
            if accept:
                state[j], cur_lw[j] = cand, new_lw
        chain.append(list(state))
    if steps > burn_in:
        lower.receive(conn.lower_key, state, None, rng)
        upper.accept_selected(conn.upper_key, state, rng)
    return RoundResult(chain, flags)


def run_connection(conn: Connection, rng) -> RoundResult:
    if conn.kind == "MP":
        return mp_round(conn, rng)
    if conn.kind == "SIR":
        return sir_round(conn, conn.L, rng)
    return mh_round(conn, conn.steps, rng)


def train(graph: ModuleGraph, rounds: int, rng, callback: Callable | None = None):
    """Alternate module sweeps (bottom-up) and connector rounds (top-down).

    Returns ``(graph, diagnostics)``. ``message_change`` is the mean per-instance
    L1 change of each MP bottom-up message since the previous round, maxed over
    MP connections.
    """
    graph.validate()
    rng = np.random.default_rng(rng)
    prev = {id(c): c.lower.bottom_up(c.lower_key) for c in graph.connections if c.kind == "MP"}
    diagnostics: list[TrainDiagnostics] = []
    for r in range(rounds):
        for m in graph.modules_bottom_up():
            m.sweep(rng)
        flags, change = [], 0.0
        for c in graph.connections_top_down():
            res = run_connection(c, rng)
            c.flags.extend(f for f in res.flags if f not in c.flags)
            flags.extend(f"{c.label()}:{f}" for f in res.flags)
            if c.kind == "MP":
                change = max(change, float(np.abs(res.bottom_up - prev[id(c)]).sum(axis=1).mean()))
                prev[id(c)] = res.bottom_up
        ll = {m.name: float(m.log_likelihood()) for m in graph.modules.values()}
        diag = TrainDiagnostics(r, ll, change, flags)
        diagnostics.append(diag)
        if not all(np.isfinite(v) for v in ll.values()):
            raise NonFiniteLikelihood(f"non-finite log-likelihood in round {r}", diagnostics)
        if callback is not None:
            callback(diag)
    return graph, diagnostics


# --- declarative wiring -------------------------------------------------------

def build_graph(config: dict, factories: dict[str, Callable[..., Module]]) -> ModuleGraph:
    """Build a graph from ``{"modules": [...], "connections": [...]}``.

    Each module entry needs ``name`` and ``kind`` (a key of ``factories``); the
    remaining keys are passed to the factory. Connection entries carry
    ``lower``, ``upper``, ``kind`` and optional ``L``, ``burn_in``, ``steps``,
    ``lower_key``, ``upper_key``.
    """
    g = ModuleGraph()
    for spec in config.get("modules", []):
        spec = dict(spec)
        kind = spec.pop("kind")
        if kind not in factories:
            raise GraphError(f"unknown module kind {kind!r}")
        g.add(factories[kind](**spec))
    for spec in config.get("connections", []):
        spec = dict(spec)
        lower, upper = g[spec.pop("lower")], g[spec.pop("upper")]
        connect(g, lower, upper, spec.pop("kind", "MP"), **spec)
    return g
