"""Multimodal LDA with collapsed Gibbs sampling.

One category variable per token, shared document-level category proportions
across all modalities. External per-document messages multiply into the token
conditionals, which is how a connected upper module steers this one.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from scipy.special import gammaln

from . import _kernels
from .graph import CategoricalMessage, DimensionMismatch, Module, check_messages


class MessageLengthMismatch(DimensionMismatch):
    pass


@dataclass
class MldaConfig:
    K: int
    modalities: list  # [(name, vocab_size)]
    alpha: float = 1.0
    gamma: float | dict = 0.1

    def __post_init__(self):
        self.modalities = [(str(n), int(v)) for n, v in self.modalities]
        if self.K < 1:
            raise ValueError("K must be >= 1")
        if self.alpha <= 0:
            raise ValueError("alpha must be > 0")
        if any(v < 1 for _, v in self.modalities):
            raise ValueError("every modality needs a vocabulary of size >= 1")
        for name, _ in self.modalities:
            if self.gamma_of(name) <= 0:
                raise ValueError(f"gamma for {name!r} must be > 0")

    def gamma_of(self, name: str) -> float:
        if isinstance(self.gamma, Mapping):
            return float(self.gamma.get(name, 0.1))
        return float(self.gamma)


def collapsed_conditional(n_jk, n_kw, n_k, alpha, gamma, V, external=None) -> np.ndarray:
    """Normalised p(z = k | rest) for a token whose counts were already removed."""
    p = (np.asarray(n_jk, float) + alpha) * (np.asarray(n_kw, float) + gamma) / (np.asarray(n_k, float) + gamma * V)
    if external is not None:
        p = p * np.asarray(external, float)
    return p / p.sum()


def draw_pseudo_obs(msg, N: int, rng) -> np.ndarray:
    """Histogram of ``N`` categorical draws from ``msg``."""
    if N < 0:
        raise ValueError("N must be >= 0")
    probs = msg.probs if isinstance(msg, CategoricalMessage) else np.asarray(msg, float)
    return np.random.default_rng(rng).multinomial(N, probs / probs.sum())


@dataclass
class _Tokens:
    doc: np.ndarray
    word: np.ndarray
    z: np.ndarray


class Mlda(Module):
    """Multimodal LDA module.

    As a lower module it emits document posteriors and folds top-down
    messages into its token conditionals. As an upper module, each modality
    can be bound to a lower module: it then holds pseudo-observations drawn
    from that module's messages and answers with P(z_lower | doc).
    """

    def __init__(self, name: str, config: MldaConfig, layer: int = 0, *,
                 pseudo_obs: int = 100, absorb_sweeps: int = 2, accept_sweeps: int = 10):
        super().__init__(name, layer, config.K)
        self.config = config
        self.K = config.K
        self.names = [n for n, _ in config.modalities]
        self.V = [v for _, v in config.modalities]
        self.gamma = np.array([config.gamma_of(n) for n in self.names])
        self.pseudo_obs = pseudo_obs
        self.absorb_sweeps = absorb_sweeps
        self.accept_sweeps = accept_sweeps
        self.vocab: dict[int, dict[str, int]] = {}
        self.external: np.ndarray | None = None
        self.fallbacks = 0
        self._init_empty(0)

    # --- state ------------------------------------------------------------

    def _init_empty(self, J: int):
        self.J = J
        M = len(self.names)
        self.n_jk = np.zeros((J, self.K), np.int64)
        self.n_kw = [np.zeros((self.K, v), np.int64) for v in self.V]
        self.n_mk = np.zeros((M, self.K), np.int64)
        empty = np.zeros(0, np.int64)
        self.tokens = [_Tokens(empty.copy(), empty.copy(), empty.copy()) for _ in range(M)]

    def modality_index(self, name) -> int:
        if isinstance(name, (int, np.integer)):
            return int(name)
        try:
            return self.names.index(name)
        except ValueError:
            raise KeyError(f"{self.name}: no modality {name!r}") from None

    def set_observations(self, counts: Mapping[str, np.ndarray], rng, n_docs: int | None = None) -> None:
        """Load per-modality (J, V_m) count matrices and draw initial assignments uniformly."""
        rng = np.random.default_rng(rng)
        if n_docs is None:
            n_docs = max(np.asarray(c).shape[0] for c in counts.values())
        self._init_empty(n_docs)
        for name, mat in counts.items():
            m = self.modality_index(name)
            mat = np.asarray(mat, np.int64)
            if mat.shape != (n_docs, self.V[m]):
                raise DimensionMismatch(f"{name}: expected {(n_docs, self.V[m])}, got {mat.shape}")
            doc, word = _expand(mat)
            z = rng.integers(0, self.K, size=doc.size)
            self.tokens[m] = _Tokens(doc, word, z)
            np.add.at(self.n_jk, (doc, z), 1)
            np.add.at(self.n_kw[m], (z, word), 1)
            self.n_mk[m] = np.bincount(z, minlength=self.K)

    def counts_matrix(self, name) -> np.ndarray:
        m = self.modality_index(name)
        out = np.zeros((self.J, self.V[m]), np.int64)
        t = self.tokens[m]
        np.add.at(out, (t.doc, t.word), 1)
        return out

    def replace_modality_counts(self, name, counts: np.ndarray, rng) -> None:
        """Swap one modality's observations, keeping assignments of tokens that survive.

        Per (document, word), the first ``min(old, new)`` tokens keep their
        categories; surplus old tokens are dropped and new ones are seated from
        the current conditional. The vocabulary may grow.
        """
        rng = np.random.default_rng(rng)
        m = self.modality_index(name)
        counts = np.asarray(counts, np.int64)
        if counts.shape[0] != self.J:
            raise DimensionMismatch(f"expected {self.J} documents, got {counts.shape[0]}")
        Vn = counts.shape[1]
        if Vn < self.V[m]:
            raise DimensionMismatch("vocabulary cannot shrink")
        if Vn > self.V[m]:
            pad = np.zeros((self.K, Vn - self.V[m]), np.int64)
            self.n_kw[m] = np.hstack([self.n_kw[m], pad])
            self.V[m] = Vn
        t = self.tokens[m]
        key = t.doc * Vn + t.word
        order = np.argsort(key, kind="stable")
        sk = key[order]
        starts = np.searchsorted(sk, sk, side="left")
        rank = np.empty_like(order)
        rank[order] = np.arange(sk.size) - starts
        keep = rank < counts.reshape(-1)[key]
        drop = ~keep
        np.subtract.at(self.n_jk, (t.doc[drop], t.z[drop]), 1)
        np.subtract.at(self.n_kw[m], (t.z[drop], t.word[drop]), 1)
        np.subtract.at(self.n_mk[m], t.z[drop], 1)
        kept = np.zeros(self.J * Vn, np.int64)
        np.add.at(kept, key[keep], 1)
        doc_new, word_new = _expand(counts - kept.reshape(self.J, Vn))
        z_new = np.zeros(doc_new.size, np.int64)
        if doc_new.size:
            n_kw_all, offsets = self._stack_kw()
            _kernels.add_tokens(doc_new, np.full(doc_new.size, m, np.int64), word_new + offsets[m], z_new,
                                self.n_jk, n_kw_all, self.n_mk, float(self.config.alpha), self.gamma,
                                np.asarray(self.V, np.float64), rng.random(doc_new.size))
            self._unstack_kw(n_kw_all, offsets)
        self.tokens[m] = _Tokens(np.concatenate([t.doc[keep], doc_new]),
                                 np.concatenate([t.word[keep], word_new]),
                                 np.concatenate([t.z[keep], z_new]))

    def set_word_documents(self, name, documents: Sequence[Sequence[str]], rng) -> None:
        """Replace a string-valued modality with per-document word lists, growing its registry."""
        m = self.modality_index(name)
        reg = self.vocab.setdefault(m, {})
        for words in documents:
            for w in words:
                if w not in reg:
                    reg[w] = len(reg)
        V = max(len(reg), self.V[m])
        counts = np.zeros((self.J, V), np.int64)
        for j, words in enumerate(documents):
            for w in words:
                counts[j, reg[w]] += 1
        self.replace_modality_counts(m, counts, rng)

    def _stack_kw(self):
        offsets = np.concatenate([[0], np.cumsum(self.V)[:-1]]).astype(np.int64)
        return np.ascontiguousarray(np.hstack(self.n_kw)), offsets

    def _unstack_kw(self, n_kw_all, offsets):
        for m, v in enumerate(self.V):
            self.n_kw[m] = n_kw_all[:, offsets[m]:offsets[m] + v].copy()

    def check_counts(self) -> bool:
        """Recount every table from the assignments."""
        n_jk = np.zeros_like(self.n_jk)
        for m, t in enumerate(self.tokens):
            np.add.at(n_jk, (t.doc, t.z), 1)
            n_kw = np.zeros_like(self.n_kw[m])
            np.add.at(n_kw, (t.z, t.word), 1)
            if not np.array_equal(n_kw, self.n_kw[m]):
                return False
            if not np.array_equal(np.bincount(t.z, minlength=self.K), self.n_mk[m]):
                return False
        return np.array_equal(n_jk, self.n_jk)

    # --- sampling ---------------------------------------------------------

    def gibbs_sweep(self, external=None, rng=None, order: np.ndarray | None = None) -> int:
        """Resample every token once; ``external`` is a (J, K) array of per-document messages.

        Returns the number of tokens whose product conditional was all-zero and
        fell back to the plain collapsed conditional.
        """
        rng = np.random.default_rng(rng)
        if external is not None:
            external = np.asarray(external, np.float64)
            if external.shape != (self.J, self.K):
                raise MessageLengthMismatch(f"external messages {external.shape} vs {(self.J, self.K)}")
        doc = np.concatenate([t.doc for t in self.tokens])
        mod = np.concatenate([np.full(t.doc.size, m, np.int64) for m, t in enumerate(self.tokens)])
        n_kw_all, offsets = self._stack_kw()
        wid = np.concatenate([t.word + offsets[m] for m, t in enumerate(self.tokens)])
        z = np.concatenate([t.z for t in self.tokens])
        if order is None:
            order = np.lexsort((mod, doc))
        order = np.asarray(order, np.int64)
        ext = external if external is not None else np.ones((max(self.J, 1), self.K))
        fb = _kernels.gibbs_sweep(doc, mod, wid, z, order, self.n_jk, n_kw_all, self.n_mk,
                                  float(self.config.alpha), self.gamma, np.asarray(self.V, np.float64),
                                  np.ascontiguousarray(ext), external is not None, rng.random(order.size))
        self._unstack_kw(n_kw_all, offsets)
        start = 0
        for t in self.tokens:
            t.z = z[start:start + t.doc.size].copy()
            start += t.doc.size
        self.fallbacks += fb
        return fb

    # --- queries ----------------------------------------------------------

    def theta(self) -> np.ndarray:
        a = self.n_jk + self.config.alpha
        return a / a.sum(axis=1, keepdims=True)

    def phi(self, name) -> np.ndarray:
        m = self.modality_index(name)
        g = self.gamma[m]
        return (self.n_kw[m] + g) / (self.n_mk[m][:, None] + g * self.V[m])

    def estimate_params(self):
        """Smoothed point estimates ``(theta, {modality: phi})``."""
        return self.theta(), {n: self.phi(n) for n in self.names}

    def doc_posterior(self, j: int) -> CategoricalMessage:
        if not 0 <= j < self.J:
            raise IndexError(j)
        a = self.n_jk[j] + self.config.alpha
        return CategoricalMessage(a / a.sum())

    def doc_topic_counts(self, name) -> np.ndarray:
        m = self.modality_index(name)
        out = np.zeros((self.J, self.K), np.int64)
        t = self.tokens[m]
        np.add.at(out, (t.doc, t.z), 1)
        return out

    def theta_without(self, name) -> np.ndarray:
        """Document proportions estimated from every modality except ``name``."""
        a = self.n_jk - self.doc_topic_counts(name) + self.config.alpha
        return a / a.sum(axis=1, keepdims=True)

    def score_word_sequence(self, j: int, words: Sequence[str], name=None, theta_row=None) -> float:
        """log P(words | other modalities of doc j) as a token-independent mixture (nats).

        Empty sequences score 0. Words missing from the registry get the
        prior floor, with the vocabulary size grown to include them.
        """
        m = self._word_modality(name)
        if len(words) == 0:
            return 0.0
        reg = self.vocab.get(m, {})
        if theta_row is None:
            theta_row = self.theta_without(m)[j]
        unknown = {w for w in words if w not in reg}
        V = self.V[m] + len(unknown)
        g = self.gamma[m]
        denom = self.n_mk[m] + g * V
        total = 0.0
        for w in words:
            n = self.n_kw[m][:, reg[w]] if w in reg else 0
            total += np.log(np.dot(theta_row, (n + g) / denom))
        return float(total)

    def _word_modality(self, name) -> int:
        if name is not None:
            return self.modality_index(name)
        if len(self.vocab) == 1:
            return next(iter(self.vocab))
        raise KeyError(f"{self.name}: name the word modality")

    def predict_modality(self, partial: Mapping[str, np.ndarray], missing, rng=None,
                         iters: int = 100, burn: int = 20) -> CategoricalMessage:
        """Distribution over the missing modality's vocabulary for a new document."""
        rng = np.random.default_rng(rng)
        mi = self.modality_index(missing)
        phis = [self.phi(n) for n in self.names]
        offsets = np.concatenate([[0], np.cumsum(self.V)[:-1]]).astype(np.int64)
        phi_all = np.ascontiguousarray(np.hstack(phis))
        wid = []
        for name, vec in partial.items():
            m = self.modality_index(name)
            if m == mi:
                continue
            _, words = _expand(np.asarray(vec, np.int64)[None, :])
            wid.append(words + offsets[m])
        wid = np.concatenate(wid) if wid else np.zeros(0, np.int64)
        if wid.size == 0:
            theta = np.full(self.K, 1.0 / self.K)
        else:
            u = rng.random(wid.size * (iters + 1))
            theta = _kernels.fold_in(wid, phi_all, float(self.config.alpha), iters, burn, u)
        pred = theta @ phis[mi]
        return CategoricalMessage(pred / pred.sum())

    def log_likelihood(self) -> float:
        """Collapsed joint log p(words, assignments)."""
        K, a = self.K, self.config.alpha
        ll = 0.0
        if self.J:
            nj = self.n_jk.sum(axis=1)
            ll += (self.J * (gammaln(K * a) - K * gammaln(a)) - gammaln(nj + K * a).sum()
                   + gammaln(self.n_jk + a).sum())
        for m, v in enumerate(self.V):
            g = self.gamma[m]
            ll += (K * (gammaln(v * g) - v * gammaln(g)) - gammaln(self.n_mk[m] + v * g).sum()
                   + gammaln(self.n_kw[m] + g).sum())
        return float(ll)

    def copy(self) -> Mlda:
        return copy.deepcopy(self)

    # --- graph contract ---------------------------------------------------

    def sweep(self, rng):
        self.gibbs_sweep(self.external, rng)

    def bottom_up(self, key=None):
        return self.theta()

    def posterior(self) -> np.ndarray:
        """Document posteriors, times the last top-down message when one was received."""
        th = self.theta()
        if self.external is None:
            return th
        p = th * self.external
        s = p.sum(axis=1, keepdims=True)
        return np.where(s > 0, p / np.where(s > 0, s, 1.0), th)

    def current(self, key=None):
        return [int(k) for k in self.posterior().argmax(axis=1)]

    def receive(self, key, values, top_down, rng):
        if top_down is not None:
            self.external = check_messages(top_down, self.K)
        self.gibbs_sweep(self.external, rng)

    def absorb(self, key, messages, rng):
        rng = np.random.default_rng(rng)
        m = self.modality_index(key)
        msgs = check_messages(messages, self.V[m])
        if self.J == 0:
            self._init_empty(msgs.shape[0])
        counts = np.stack([draw_pseudo_obs(row, self.pseudo_obs, rng) for row in msgs])
        self.replace_modality_counts(m, counts, rng)
        for _ in range(self.absorb_sweeps):
            self.gibbs_sweep(self.external, rng)

    def top_down(self, key):
        return topdown_messages(self, key)

    def log_weights(self, key, instance, candidates):
        m = self._word_modality(key)
        theta_row = self.theta_without(m)[instance]
        return np.array([self.score_word_sequence(instance, c, m, theta_row) for c in candidates])

    def accept_selected(self, key, values, rng):
        rng = np.random.default_rng(rng)
        self.set_word_documents(self._word_modality(key), values, rng)
        for _ in range(self.accept_sweeps):
            self.gibbs_sweep(self.external, rng)


def topdown_messages(upper: Mlda, name) -> np.ndarray:
    """P(z_lower | doc) = sum_z P(z_lower | z) P(z | doc) for every document, shape (J, V_name)."""
    out = upper.theta() @ upper.phi(name)
    return out / out.sum(axis=1, keepdims=True)


def topdown_message(upper: Mlda, j: int, name) -> CategoricalMessage:
    return CategoricalMessage(topdown_messages(upper, name)[j])


def _expand(counts: np.ndarray):
    """(J, V) counts -> (doc, word) token arrays in document-major order."""
    counts = np.asarray(counts, np.int64)
    if np.any(counts < 0):
        raise ValueError("counts must be non-negative")
    J, V = counts.shape
    flat = counts.reshape(-1)
    idx = np.repeat(np.arange(J * V, dtype=np.int64), flat)
    return idx // V, idx % V


def make_mlda(name, K, modalities, alpha=1.0, gamma=0.1, layer=0, **kw):
    """Factory for declarative graph configs."""
    mods = modalities.items() if isinstance(modalities, Mapping) else modalities
    return Mlda(name, MldaConfig(K, list(mods), alpha, gamma), layer, **kw)
