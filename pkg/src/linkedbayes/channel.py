"""Noisy phoneme channel and an L-best beam-search recognizer.

Channel: at every gap (before each source symbol and after the last) a
geometric number of uniformly drawn symbols is inserted; each source symbol
is then deleted with ``p_del``, replaced by a different uniform symbol with
``p_sub``, or copied. ``channel_logprob`` sums over all alignments exactly.

Forward recursion over the source, one column per consumed source symbol
(``j`` counts observed symbols emitted so far)::

    E[j] = G[j] * p_del + G[j-1] * emit(s_i, o_j)
    H[j] = E[j] + r * H[j-1]              r = p_ins / |alphabet|
    G    = (1 - p_ins) * H
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.signal import lfilter

from .npylm import BOS, EOW, BOW, NPYLM


class BeamExhausted(Warning):
    pass


@dataclass(frozen=True)
class PhonemeAlphabet:
    symbols: tuple

    def __post_init__(self):
        syms = tuple(self.symbols)
        if len(syms) < 2:
            raise ValueError("need at least 2 symbols")
        if len(set(syms)) != len(syms):
            raise ValueError("symbols must be unique")
        if any(len(s) != 1 for s in syms) or {EOW, BOW} & set(syms):
            raise ValueError(f"symbols must be single characters other than {EOW!r}/{BOW!r}")
        object.__setattr__(self, "symbols", syms)

    def __len__(self):
        return len(self.symbols)

    def __iter__(self):
        return iter(self.symbols)

    def index(self, ch) -> int:
        return self.symbols.index(ch)


@dataclass(frozen=True)
class ChannelParams:
    p_sub: float = 0.0
    p_del: float = 0.0
    p_ins: float = 0.0

    def __post_init__(self):
        for name in ("p_sub", "p_del", "p_ins"):
            v = getattr(self, name)
            if not 0.0 <= v < 1.0:
                raise ValueError(f"{name} must lie in [0, 1), got {v}")
        if self.p_sub + self.p_del >= 1.0:
            raise ValueError("p_sub + p_del must be < 1")

    @property
    def p_match(self) -> float:
        return 1.0 - self.p_sub - self.p_del


def corrupt(clean: str, params: ChannelParams, alphabet: PhonemeAlphabet, rng) -> str:
    rng = np.random.default_rng(rng)
    syms = alphabet.symbols
    A = len(syms)
    out = []

    def inserts():
        n = rng.geometric(1.0 - params.p_ins) - 1 if params.p_ins > 0 else 0
        out.extend(syms[i] for i in rng.integers(0, A, size=n))

    for ch in clean:
        if ch not in syms:
            raise ValueError(f"symbol {ch!r} not in alphabet")
        inserts()
        u = rng.random()
        if u < params.p_del:
            continue
        if u < params.p_del + params.p_sub:
            k = alphabet.index(ch)
            out.append(syms[(k + 1 + rng.integers(0, A - 1)) % A])
        else:
            out.append(ch)
    inserts()
    return "".join(out)


def _emission_table(observed: str, params: ChannelParams, alphabet: PhonemeAlphabet) -> np.ndarray:
    """(|alphabet|, |o|) probability of emitting o_j from each source symbol."""
    syms = np.array(alphabet.symbols)
    obs = np.array(list(observed)) if observed else np.zeros(0, dtype=syms.dtype)
    same = syms[:, None] == obs[None, :]
    return np.where(same, params.p_match, params.p_sub / (len(syms) - 1))


def _initial_column(m: int, params: ChannelParams, A: int):
    r = params.p_ins / A
    # j leading insertions before the first source symbol: (1 - p_ins) r^j
    if r > 0:
        logcol = np.log1p(-params.p_ins) + np.arange(m + 1) * np.log(r)
    else:
        logcol = np.full(m + 1, -np.inf)
        logcol[0] = 0.0
    top = logcol.max()
    return np.exp(logcol - top), top


def _advance(G: np.ndarray, emit: np.ndarray, params: ChannelParams, A: int):
    """Advance scaled column(s) ``G`` by one source symbol with emission rows ``emit``.

    ``emit`` has shape (n, m); returns new columns (n, m+1) and their log scales
    relative to the input scale (-inf where a column is all zero).
    """
    E = np.empty((emit.shape[0], G.size))
    E[:] = G * params.p_del
    E[:, 1:] += G[:-1] * emit
    r = params.p_ins / A
    H = lfilter([1.0], [1.0, -r], E, axis=1) if r > 0 else E
    Gn = (1.0 - params.p_ins) * H
    top = Gn.max(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        Gn = Gn / np.where(top > 0, top, 1.0)[:, None]
        return Gn, np.log(top)


def channel_logprob(candidate: str, observed: str, params: ChannelParams, alphabet: PhonemeAlphabet) -> float:
    """log P(observed | candidate) summed over every alignment (nats)."""
    A = len(alphabet)
    emit = _emission_table(observed, params, alphabet)
    G, scale = _initial_column(len(observed), params, A)
    for ch in candidate:
        G, ds = _advance(G, emit[alphabet.index(ch)][None, :], params, A)
        G, scale = G[0], scale + ds[0]
        if not np.isfinite(scale):
            return -np.inf
    with np.errstate(divide="ignore"):
        return float(scale + np.log(G[-1]))


# --- language models ------------------------------------------------------------

class UniformLM:
    """Every symbol equally likely: log P(s) = |s| log(1/|alphabet|)."""

    def __init__(self, alphabet: PhonemeAlphabet):
        self.alphabet = alphabet
        self._lp = -np.log(len(alphabet))

    def initial(self):
        return None

    def extend(self, state, prefix: str):
        A = len(self.alphabet)
        return np.full(A, self._lp), [None] * A

    def logprob(self, s: str) -> float:
        return len(s) * self._lp


class NpylmLM:
    """String probability under a frozen NPYLM, summed over segmentations.

    The state of a prefix is its scaled forward table (see
    ``NPYLM._forward``), so each appended symbol costs O(W_max) word lookups
    plus a bigram correction for every preceding known word.
    """

    def __init__(self, model: NPYLM, alphabet: PhonemeAlphabet, W_max: int = 8):
        self.model = model
        self.alphabet = alphabet
        self.W = W_max
        self._uni: dict = {}
        self._bi: dict = {}
        self._pre: dict = {"": 1.0}
        self._root = model.words.nodes.get(())

    def _ctx(self, s):
        return (BOW + s)[-(self.model.char_order - 1):]

    def _prefix(self, s):
        """Character-model probability of spelling ``s`` without the word end."""
        p = self._pre.get(s)
        if p is None:
            p = self._pre[s] = self._prefix(s[:-1]) * self.model.chars.prob(s[-1], self._ctx(s[:-1]))
        return p

    def _unigram(self, w):
        p = self._uni.get(w)
        if p is None:
            base = self._prefix(w) * self.model.chars.prob(EOW, self._ctx(w))
            words = self.model.words
            p = base if self._root is None else self._root.predictive(w, base, words.d[0], words.theta[0])
            self._uni[w] = p
        return p

    def _bigram(self, w, h):
        key = (h, w)
        p = self._bi.get(key)
        if p is None:
            node = self.model.words.nodes.get((h,))
            words = self.model.words
            p = self._unigram(w)
            if node is not None:
                p = node.predictive(w, p, words.d[1], words.theta[1])
            self._bi[key] = p
        return p

    def initial(self):
        return ([np.zeros(self.W + 1)], [0.0])

    def extend(self, state, prefix: str):
        rows, scales = state
        t = len(prefix)
        syms = self.alphabet.symbols
        nodes = self.model.words.nodes
        vals = np.zeros((len(syms), self.W + 1))
        for k in range(1, min(self.W, t + 1) + 1):
            start = t + 1 - k
            stem = prefix[start:t]
            rescale = np.exp(scales[start] - scales[t])
            if start == 0:
                vals[:, k] = [self._bigram(stem + c, BOS) for c in syms]
                vals[:, k] *= rescale
                continue
            prev = rows[start]
            known = []
            for j in range(1, min(self.W, start) + 1):
                h = prefix[start - j:start]
                if prev[j] > 0 and (h,) in nodes:
                    known.append((h, prev[j]))
            mass = prev.sum()
            for ci, c in enumerate(syms):
                w = stem + c
                u = self._unigram(w)
                acc = u * mass
                for h, a in known:
                    acc += (self._bigram(w, h) - u) * a
                vals[ci, k] = acc * rescale
        z = vals.sum(axis=1)
        logz = np.log(z)
        states = [(rows + [vals[ci] / z[ci]], scales + [scales[t] + logz[ci]]) for ci in range(len(syms))]
        return logz, states

    def logprob(self, s: str) -> float:
        return self.model.string_logprob(s, self.W) if s else 0.0


# --- recognizer ---------------------------------------------------------------------

class Hypothesis(NamedTuple):
    text: str
    log_score: float


class LBest(NamedTuple):
    hypotheses: list
    exhausted: bool


def recognize_lbest(observed: str, params: ChannelParams, alphabet: PhonemeAlphabet, lm=None,
                    L: int = 10, beam: int = 64, max_len: int | None = None) -> LBest:
    """Length-synchronous beam search for the L best source strings.

    Complete score is channel log-probability plus LM log-probability. Beam
    pruning ranks prefixes of equal length by their forward mass with each
    unconsumed observed symbol charged ``p_match / |alphabet|``. Every prefix
    the beam visits is a complete candidate; the best ``L`` distinct strings
    with finite score are returned, and ``exhausted`` is set when fewer exist.
    """
    if L < 1:
        raise ValueError("L must be >= 1")
    if beam < L:
        raise ValueError("beam must be >= L")
    lm = UniformLM(alphabet) if lm is None else lm
    A = len(alphabet)
    m = len(observed)
    max_len = max(2 * m, 1) if max_len is None else max_len
    emit = _emission_table(observed, params, alphabet)
    q = np.log(params.p_match / A) if params.p_match > 0 else -np.inf
    future = (m - np.arange(m + 1)) * q if m else np.zeros(1)
    future[-1] = 0.0

    G0, s0 = _initial_column(m, params, A)
    frontier = [("", G0, s0, lm.initial(), 0.0)]
    complete: list[Hypothesis] = []
    for _ in range(max_len):
        children = []
        for text, G, scale, lm_state, lm_lp in frontier:
            cols, ds = _advance(G, emit, params, A)
            dlm, lm_states = lm.extend(lm_state, text)
            with np.errstate(divide="ignore", invalid="ignore"):
                logcols = np.log(cols) + (scale + ds)[:, None]
                ends = logcols[:, -1] + lm_lp + dlm
                prune = np.logaddexp.reduce(logcols + future[None, :], axis=1) + lm_lp + dlm
            for ci, ch in enumerate(alphabet.symbols):
                if np.isfinite(ends[ci]):
                    complete.append(Hypothesis(text + ch, float(ends[ci])))
                if np.isfinite(prune[ci]):
                    children.append((float(prune[ci]), text + ch, cols[ci], scale + ds[ci],
                                     lm_states[ci], lm_lp + dlm[ci]))
        if not children:
            break
        children.sort(key=lambda c: (-c[0], c[1]))
        frontier = [c[1:] for c in children[:beam]]
    complete.sort(key=lambda h: (-h.log_score, h.text))
    return LBest(complete[:L], len(complete) < L)


def best_string(observed: str, params: ChannelParams, alphabet: PhonemeAlphabet, lm=None, beam: int = 64) -> str:
    hyps = recognize_lbest(observed, params, alphabet, lm, 1, beam).hypotheses
    return hyps[0].text if hyps else ""
