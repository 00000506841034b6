"""The two example systems and their baselines.

exp1: object MLDA (visual/audio/haptic) and motion MLDA (motion) either
trained independently or both MP-connected to an integration MLDA that
observes pseudo-observation histograms of their document posteriors.

exp2: recognizer + NPYLM + MLDA. Variant (a) recognizes once with a
uniform phoneme LM, segments once and trains the MLDA. Variant (b) continues
from (a) and iterates L-best recognition under the current LM, segmentation,
MLDA-weighted SIR selection, MLDA update and LM refit.
"""
from __future__ import annotations

import copy
import logging
import time

import numpy as np

from .channel import ChannelParams, Hypothesis, NpylmLM, PhonemeAlphabet, recognize_lbest
from .graph import Module, ModuleGraph, SampleMessage, connect, train
from .metrics import SegEvalResult, cuts_from_words, matched_accuracy, phoneme_accuracy, seg_eval
from .mlda import Mlda, MldaConfig
from .npylm import NPYLM
from .synth import MOTION_MODALITIES, OBJECT_MODALITIES, DatasetRecord, WorldSpec, count_matrix

log = logging.getLogger(__name__)

EXP1_DEFAULTS = {"alpha": 1.0, "gamma": 0.1, "K_obj": None, "K_mot": None, "K_int": None,
                 "pseudo_obs": 100, "init_sweeps": 100, "rounds": 50, "absorb_sweeps": 2,
                 "integration_alpha": None}
EXP2_DEFAULTS = {"alpha": 1.0, "gamma": 0.1, "K": None, "L": 10, "beam": 64, "max_len": None,
                 "W_max": 8, "outer": 10, "sweeps": 100, "seg_iters": 20, "accept_sweeps": 10,
                 "channel": None}


def _settings(config: dict, section: str, defaults: dict) -> dict:
    given = dict(config.get(section) or {})
    unknown = set(given) - set(defaults)
    if unknown:
        raise ValueError(f"unknown {section} settings: {sorted(unknown)}")
    return {**defaults, **given}


def _dims(records, names):
    return [(m, len(records[0].counts[m])) for m in names]


def _check_records(records, names):
    if not records:
        raise ValueError("dataset is empty")
    for m in names:
        if any(m not in r.counts for r in records):
            raise ValueError(f"dataset lacks modality {m!r}")


def _labels_report(true, model: Mlda) -> dict:
    pred = model.current()
    acc, conf, mapping = matched_accuracy(true, pred)
    return {"accuracy": acc, "confusion": conf.to_dict(), "predictions": pred,
            "mapping": {str(k): v for k, v in sorted(mapping.items())}}


def _mlda(name, K, modalities, s, layer=0, **kw) -> Mlda:
    return Mlda(name, MldaConfig(K, modalities, s["alpha"], s["gamma"]), layer, **kw)


# --- exp1 -------------------------------------------------------------------------

def run_exp1(records: list[DatasetRecord], config: dict, seed: int) -> dict:
    t0 = time.perf_counter()
    s = _settings(config, "exp1", EXP1_DEFAULTS)
    _check_records(records, OBJECT_MODALITIES + MOTION_MODALITIES)
    z_obj = [r.z_obj for r in records]
    z_mot = [r.z_mot for r in records]
    K_obj = s["K_obj"] or max(z_obj) + 1
    K_mot = s["K_mot"] or max(z_mot) + 1
    K_int = s["K_int"] or max(r.z for r in records) + 1
    rng = np.random.default_rng(seed)

    obj = _mlda("object", K_obj, _dims(records, OBJECT_MODALITIES), s)
    mot = _mlda("motion", K_mot, _dims(records, MOTION_MODALITIES), s)
    obj.set_observations({m: count_matrix(records, m) for m in OBJECT_MODALITIES}, rng)
    mot.set_observations({m: count_matrix(records, m) for m in MOTION_MODALITIES}, rng)
    for _ in range(s["init_sweeps"]):
        obj.gibbs_sweep(None, rng)
        mot.gibbs_sweep(None, rng)

    seed_ind, seed_con = rng.integers(2**63, size=2)

    # independent: same number of lower-module sweeps per round as the connected run
    ind_obj, ind_mot = obj.copy(), mot.copy()
    r_ind = np.random.default_rng(seed_ind)
    for _ in range(s["rounds"]):
        for m in (ind_obj, ind_mot):
            m.gibbs_sweep(None, r_ind)
            m.gibbs_sweep(None, r_ind)

    con_obj, con_mot = obj.copy(), mot.copy()
    s_int = {**s, "alpha": s["integration_alpha"] or s["alpha"]}
    integ = _mlda("integration", K_int, [("object", K_obj), ("motion", K_mot)], s_int, layer=1,
                  pseudo_obs=s["pseudo_obs"], absorb_sweeps=s["absorb_sweeps"])
    g = ModuleGraph()
    for m in (con_obj, con_mot, integ):
        g.add(m)
    connect(g, con_obj, integ, "MP", upper_key="object")
    connect(g, con_mot, integ, "MP", upper_key="motion")
    _, diags = train(g, s["rounds"], np.random.default_rng(seed_con))

    z_int = [r.z for r in records]
    report = {
        "experiment": "exp1",
        "seed": seed,
        "settings": {**s, "K_obj": K_obj, "K_mot": K_mot, "K_int": K_int},
        "n_records": len(records),
        "labels": {"object": z_obj, "motion": z_mot, "integrated": z_int},
        "variants": {
            "independent": {
                "object": _labels_report(z_obj, ind_obj),
                "motion": _labels_report(z_mot, ind_mot),
                "object_posterior": ind_obj.theta().tolist(),
            },
            "connected": {
                "object": _labels_report(z_obj, con_obj),
                "motion": _labels_report(z_mot, con_mot),
                "integrated": _labels_report(z_int, integ) if integ.J else None,
                "object_posterior": con_obj.theta().tolist(),
                "integration_dims": list(integ.V),
                "diagnostics": [d.to_dict() for d in diags],
            },
        },
    }
    report["wall_clock"] = time.perf_counter() - t0
    return report


# --- exp2 -------------------------------------------------------------------------

class SpeechModule(Module):
    """Recognizer + segmenter exposing segmented L-best hypotheses as SIR candidates.

    Its parameters are the NPYLM; adopting selected word sequences refits it.
    """

    def __init__(self, name, observed, params: ChannelParams, alphabet: PhonemeAlphabet, lm: NPYLM,
                 L=10, beam=64, W_max=8, max_len=None, layer=0):
        super().__init__(name, layer, None)
        self.observed = list(observed)
        self.params, self.alphabet = params, alphabet
        self.lm = lm
        self.beam, self.W_max, self.max_len = beam, W_max, max_len
        self.L = L
        self.selected: list = []
        self.exhausted = 0

    def propose(self, key, rng, L):
        snap = NpylmLM(self.lm, self.alphabet, self.W_max)
        out = []
        self.exhausted = 0
        for j, o in enumerate(self.observed):
            res = recognize_lbest(o, self.params, self.alphabet, snap, L, max(self.beam, L),
                                  None if self.max_len is None else max(self.max_len, 1))
            self.exhausted += res.exhausted
            hyps = res.hypotheses or [Hypothesis(o, 0.0)]
            # blocked Gibbs: segment against the LM without this utterance's own words
            own = self.selected[j] if j < len(self.selected) else None
            if own:
                self.lm.remove_sentence(own, rng)
            samples = tuple(tuple(self.lm.sample_segmentation(h.text, self.W_max, rng)) for h in hyps)
            if own:
                self.lm.add_sentence(own, rng)
            out.append(SampleMessage(samples, [h.log_score for h in hyps], enumerated=True))
        return out

    def current(self, key=None):
        return list(self.selected)

    def receive(self, key, values, top_down, rng):
        self.selected = [tuple(v) for v in values]
        self.lm.fit_from_words(self.selected, rng)


def _segment_metrics(records, word_seqs) -> tuple[SegEvalResult, float]:
    seg = SegEvalResult(0, 0, 0, 0)
    accs = []
    for r, words in zip(records, word_seqs):
        hyp = "".join(words)
        seg = seg + seg_eval(r.cuts, cuts_from_words(words), r.clean, hyp)
        accs.append(phoneme_accuracy(r.clean, hyp))
    return seg, float(np.mean(accs))


def run_exp2(records: list[DatasetRecord], config: dict, seed: int) -> dict:
    t0 = time.perf_counter()
    s = _settings(config, "exp2", EXP2_DEFAULTS)
    _check_records(records, OBJECT_MODALITIES)
    world = WorldSpec.from_dict(config["world"]) if config.get("world") else WorldSpec()
    alphabet = world.phonemes
    params = ChannelParams(**s["channel"]) if s["channel"] else world.channel_params
    z_obj = [r.z_obj for r in records]
    K = s["K"] or max(z_obj) + 1
    rng = np.random.default_rng(seed)
    observed = [r.observed for r in records]

    # (a) one shot: uniform-LM top-1, one segmentation run, MLDA on the words
    top1 = []
    for o in observed:
        hyps = recognize_lbest(o, params, alphabet, None, 1, max(s["beam"], 1), s["max_len"]).hypotheses
        top1.append(hyps[0].text if hyps else o)
    lm = NPYLM(alphabet.symbols)
    _, seg_a = lm.segment_corpus(top1, s["seg_iters"], s["W_max"], rng)
    mods = _dims(records, OBJECT_MODALITIES) + [("words", 1)]
    mlda = _mlda("concept", K, mods, s, layer=1, accept_sweeps=s["accept_sweeps"])
    mlda.set_observations({m: count_matrix(records, m) for m in OBJECT_MODALITIES}, rng, len(records))
    mlda.set_word_documents("words", seg_a, rng)
    for _ in range(s["sweeps"]):
        mlda.gibbs_sweep(None, rng)
    seg_res_a, pacc_a = _segment_metrics(records, seg_a)
    variant_a = {
        "phoneme_accuracy": pacc_a,
        "segmentation": seg_res_a.to_dict(),
        "object": _labels_report(z_obj, mlda),
        "recognized": top1,
        "words": [list(w) for w in seg_a],
    }

    # (b) mutual learning from (a)'s models
    speech = SpeechModule("speech", observed, params, alphabet, copy.deepcopy(lm),
                          s["L"], s["beam"], s["W_max"], s["max_len"])
    concept = mlda.copy()
    g = ModuleGraph()
    g.add(speech)
    g.add(concept)
    connect(g, speech, concept, "SIR", L=s["L"], upper_key="words")
    scores = []

    def record_scores(diag):
        th = concept.theta_without("words")
        sel = speech.selected
        scores.append(float(np.mean([concept.score_word_sequence(j, w, "words", th[j]) for j, w in enumerate(sel)])))
        log.info("exp2 round %d: mean selected score %.3f", diag.round_index, scores[-1])

    _, diags = train(g, s["outer"], rng, callback=record_scores)
    seg_b = speech.selected if speech.selected else seg_a
    seg_res_b, pacc_b = _segment_metrics(records, seg_b)
    variant_b = {
        "phoneme_accuracy": pacc_b,
        "segmentation": seg_res_b.to_dict(),
        "object": _labels_report(z_obj, concept),
        "recognized": ["".join(w) for w in seg_b],
        "words": [list(w) for w in seg_b],
        "selected_scores": scores,
        "flags": sorted({f for d in diags for f in d.flags}),
        "diagnostics": [d.to_dict() for d in diags],
    }
    report = {
        "experiment": "exp2",
        "seed": seed,
        "settings": {**s, "K": K, "channel": {"p_sub": params.p_sub, "p_del": params.p_del, "p_ins": params.p_ins}},
        "n_records": len(records),
        "labels": {"object": z_obj, "clean": [r.clean for r in records], "cuts": [list(r.cuts) for r in records]},
        "variants": {"a": variant_a, "b": variant_b},
    }
    report["wall_clock"] = time.perf_counter() - t0
    return report
