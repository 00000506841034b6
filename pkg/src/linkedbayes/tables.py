"""Modules with fixed conditional tables.

They make the connectors checkable against exact enumeration: a lower module
holding P(o_j | z1) per instance and an upper module holding P(z2) and
P(z1 | z2).
"""
from __future__ import annotations

import numpy as np

from .graph import Module, _log


class TableLower(Module):
    """Terminal module with a fixed likelihood table P(o_j | z1 = k), uniform prior on z1."""

    def __init__(self, name, likelihood, layer=0):
        lik = np.atleast_2d(np.asarray(likelihood, dtype=float))
        super().__init__(name, layer, lik.shape[1])
        self.likelihood = lik
        self.z = [int(k) for k in lik.argmax(axis=1)]

    def bottom_up(self, key=None):
        return self.likelihood / self.likelihood.sum(axis=1, keepdims=True)

    def current(self, key=None):
        return list(self.z)

    def receive(self, key, values, top_down, rng):
        self.z = [int(v) for v in values]


class TableUpper(Module):
    """Upper module with a latent z2 per instance, fixed P(z2) and P(z1 | z2).

    Re-estimation from a bottom-up message draws z2 with z1 summed out against
    the (soft) message.
    """

    def __init__(self, name, prior, conditional, n_instances=1, layer=1):
        prior = np.asarray(prior, dtype=float)
        cond = np.atleast_2d(np.asarray(conditional, dtype=float))
        super().__init__(name, layer, prior.size)
        self.prior = prior / prior.sum()
        self.cond = cond / cond.sum(axis=1, keepdims=True)
        self.z2 = [int(self.prior.argmax())] * n_instances

    def _draw_z2(self, rng, weights):
        p = self.prior[None, :] * weights
        s = p.sum(axis=1, keepdims=True)
        # an impossible observation carries no information: fall back to the prior
        p = np.where(s > 0, p / np.where(s > 0, s, 1.0), self.prior[None, :])
        return [int(rng.choice(p.shape[1], p=row)) for row in p]

    def absorb(self, key, messages, rng):
        self.z2 = self._draw_z2(rng, messages @ self.cond.T)

    def top_down(self, key=None):
        return self.cond[self.z2]

    def log_weights(self, key, instance, candidates):
        return _log(self.cond[self.z2[instance], list(candidates)])

    def accept_selected(self, key, values, rng):
        self.z2 = self._draw_z2(rng, self.cond[:, list(values)].T)


def make_table_lower(name, likelihood, layer=0):
    return TableLower(name, likelihood, layer)


def make_table_upper(name, prior, conditional, n_instances=1, layer=1):
    return TableUpper(name, prior, conditional, n_instances, layer)
