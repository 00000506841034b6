"""Nested Pitman-Yor language model and blocked-Gibbs word segmentation.

The word bigram HPYLM uses a character HPYLM as its base measure: the
probability of a spelling is the product of character predictives followed
by an end-of-word symbol. Whenever the word model opens a table at its root,
the spelling is added to the character model as data.
"""
from __future__ import annotations

from collections import Counter
from typing import Iterable, Sequence

import numpy as np

from .pyp import HPYLM

BOS = "<s>"
BOW = "^"
EOW = "$"


class UnknownCharacter(ValueError):
    pass


class NPYLM:
    def __init__(self, alphabet: Iterable[str], char_order: int = 8, word_order: int = 2,
                 d: float = 0.5, theta: float = 2.0):
        self.alphabet = tuple(alphabet)
        if len(set(self.alphabet)) != len(self.alphabet):
            raise ValueError("alphabet symbols must be unique")
        if any(len(a) != 1 for a in self.alphabet) or {BOW, EOW} & set(self.alphabet):
            raise ValueError(f"alphabet symbols must be single characters other than {BOW!r}/{EOW!r}")
        self._symbols = frozenset(self.alphabet)
        self.char_order = char_order
        self.word_order = word_order
        self.d, self.theta = d, theta
        self.reset()

    def reset(self) -> None:
        uniform = 1.0 / (len(self.alphabet) + 1)
        self.chars = HPYLM(self.char_order, lambda c: uniform, self.d, self.theta)
        self.words = HPYLM(self.word_order, self.base_word_prob, self.d, self.theta,
                           on_base_add=self._spell_add, on_base_remove=self._spell_remove)
        self.lexicon: Counter = Counter()
        self._rng = np.random.default_rng(0)

    # character model -------------------------------------------------------

    def _spelling(self, w: str):
        ctx = BOW
        for ch in w + EOW:
            yield ch, ctx[-(self.char_order - 1):]
            ctx += ch

    def _check(self, w: str):
        bad = set(w) - self._symbols
        if bad:
            raise UnknownCharacter(f"{sorted(bad)} not in alphabet")

    def base_word_prob(self, w: str) -> float:
        self._check(w)
        p = 1.0
        for ch, ctx in self._spelling(w):
            p *= self.chars.prob(ch, ctx)
        return p

    def _spell_add(self, w):
        for ch, ctx in self._spelling(w):
            self.chars.add(ch, ctx, self._rng)

    def _spell_remove(self, w):
        for ch, ctx in self._spelling(w):
            self.chars.remove(ch, ctx, self._rng)

    # word model --------------------------------------------------------------

    def word_prob(self, w: str, h: str = BOS) -> float:
        return self.words.prob(w, (h,))

    def add_sentence(self, words: Sequence[str], rng) -> None:
        self._rng = rng
        prev = BOS
        for w in words:
            self.words.add(w, (prev,), rng)
            prev = w
        self.lexicon.update(words)

    def remove_sentence(self, words: Sequence[str], rng) -> None:
        self._rng = rng
        prev = BOS
        for w in words:
            self.words.remove(w, (prev,), rng)
            prev = w
        self.lexicon.subtract(words)
        self.lexicon += Counter()  # drop zero entries

    def sequence_prob(self, words: Sequence[str]) -> float:
        """Sum of log bigram predictives with a sentence-start context (nats)."""
        lp, prev = 0.0, BOS
        for w in words:
            lp += np.log(self.word_prob(w, prev))
            prev = w
        return float(lp)

    def fit_from_words(self, sequences: Sequence[Sequence[str]], rng) -> NPYLM:
        """Rebuild the model from scratch on the given word sequences."""
        rng = np.random.default_rng(rng)
        self.reset()
        for words in sequences:
            self.add_sentence(words, rng)
        return self

    # segmentation --------------------------------------------------------------

    def _forward(self, s: str, W_max: int, cache: dict):
        """Scaled forward table over the substring lattice.

        ``alpha[t][k]`` is the (scaled) probability of s[:t] with the last word
        being s[t-k:t]. Returns ``(alpha, log_scale)``.
        """
        N = len(s)
        alpha = np.zeros((N + 1, W_max + 1))
        log_scale = np.zeros(N + 1)

        def uni(w):
            p = cache.get(w)
            if p is None:
                p = cache[w] = self.words.prob(w, ())
            return p

        ctx_nodes = self.words.nodes
        for t in range(1, N + 1):
            for k in range(1, min(W_max, t) + 1):
                w = s[t - k:t]
                start = t - k
                # rows are scaled separately; bring s[:start] onto row t-1's scale
                rescale = np.exp(log_scale[start] - log_scale[t - 1])
                if start == 0:
                    alpha[t, k] = self.word_prob(w, BOS) * rescale
                    continue
                prev = alpha[start]
                acc = uni(w) * prev.sum()
                for j in range(1, min(W_max, start) + 1):
                    h = s[start - j:start]
                    if (h,) in ctx_nodes and prev[j] > 0:
                        acc += (self.word_prob(w, h) - uni(w)) * prev[j]
                alpha[t, k] = acc * rescale
            z = alpha[t].sum()
            alpha[t] /= z
            log_scale[t] = log_scale[t - 1] + np.log(z)
        return alpha, log_scale

    def sample_segmentation(self, s: str, W_max: int, rng, cache: dict | None = None) -> list[str]:
        """Forward-filter backward-sample one segmentation under the current (frozen) model."""
        if not s:
            return []
        self._check(s)
        rng = np.random.default_rng(rng)
        alpha, _ = self._forward(s, W_max, {} if cache is None else cache)
        words = []
        t = len(s)
        weights = alpha[t].copy()
        while t > 0:
            k = int(rng.choice(weights.size, p=weights / weights.sum()))
            w = s[t - k:t]
            words.append(w)
            t -= k
            if t == 0:
                break
            weights = np.zeros(W_max + 1)
            for j in range(1, min(W_max, t) + 1):
                weights[j] = alpha[t, j] * self.word_prob(w, s[t - j:t])
        return words[::-1]

    def string_logprob(self, s: str, W_max: int = 8) -> float:
        """log of the sum over segmentations of s (nats)."""
        if not s:
            return 0.0
        _, log_scale = self._forward(s, W_max, {})
        return float(log_scale[-1])

    def segment_corpus(self, strings: Sequence[str], iters: int, W_max: int = 8, rng=None,
                       init: Sequence[Sequence[str]] | None = None, callback=None):
        """Blocked Gibbs over whole-sentence segmentations.

        Sentences not yet in the model (all of them on the first pass, unless
        ``init`` is given) are sampled against the others. Returns
        ``(self, segmentations)``.
        """
        if iters < 1 or W_max < 1:
            raise ValueError("iters and W_max must be >= 1")
        rng = np.random.default_rng(rng)
        segs: list = [None] * len(strings)
        if init is not None:
            for i, words in enumerate(init):
                if "".join(words) != strings[i]:
                    raise ValueError(f"initial segmentation {i} does not spell its string")
                segs[i] = list(words)
                self.add_sentence(words, rng)
        for it in range(iters):
            for i in rng.permutation(len(strings)):
                if not strings[i]:
                    segs[i] = []
                    continue
                if segs[i] is not None:
                    self.remove_sentence(segs[i], rng)
                segs[i] = self.sample_segmentation(strings[i], W_max, rng)
                self.add_sentence(segs[i], rng)
            if callback is not None:
                callback(it, self, segs)
        return self, segs

    def dump(self) -> str:
        out = ["# word model"] + self.words.dump() + ["# character model"] + self.chars.dump()
        return "\n".join(out) + "\n"

    def audit(self) -> list[str]:
        return self.words.audit() + self.chars.audit()


def enumerate_segmentations(s: str, W_max: int):
    """All segmentations of s into pieces of length <= W_max (small strings only)."""
    if not s:
        yield []
        return
    for k in range(1, min(W_max, len(s)) + 1):
        for rest in enumerate_segmentations(s[k:], W_max):
            yield [s[:k]] + rest
