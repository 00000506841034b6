"""Pitman-Yor restaurants and a hierarchical PY n-gram model.

Context nodes are keyed by the context itself (a tuple or a string, most
recent symbol last); the parent of ``h`` is ``h[1:]``. Every table opened at a
node sends one customer to the parent; a table opened at the root draws from
the base measure, which is reported through ``on_base_add``.
"""
from __future__ import annotations

from collections import defaultdict
from typing import Callable, Hashable

import numpy as np


class RemoveFromEmpty(KeyError):
    pass


class Restaurant:
    __slots__ = ("tables", "cw", "tw", "C", "T")

    def __init__(self):
        self.tables: dict[Hashable, list[int]] = {}
        self.cw: dict[Hashable, int] = {}
        self.tw: dict[Hashable, int] = {}
        self.C = 0
        self.T = 0

    def predictive(self, w, p_parent: float, d: float, theta: float) -> float:
        c = self.cw.get(w, 0)
        t = self.tw.get(w, 0)
        return (c - d * t + (theta + d * self.T) * p_parent) / (theta + self.C)

    def backoff(self, d: float, theta: float) -> float:
        return (theta + d * self.T) / (theta + self.C)

    def add(self, w, p_parent: float, d: float, theta: float, rng) -> bool:
        """Seat one customer; True when a new table was opened."""
        tabs = self.tables.get(w)
        new_w = (theta + d * self.T) * p_parent
        if tabs:
            weights = np.array([n - d for n in tabs] + [new_w])
            k = int(np.searchsorted(np.cumsum(weights), rng.random() * weights.sum(), side="right"))
            k = min(k, len(tabs))
        else:
            tabs = self.tables[w] = []
            k = 0
        opened = k == len(tabs)
        if opened:
            tabs.append(1)
            self.tw[w] = self.tw.get(w, 0) + 1
            self.T += 1
        else:
            tabs[k] += 1
        self.cw[w] = self.cw.get(w, 0) + 1
        self.C += 1
        return opened

    def remove(self, w, rng) -> bool:
        """Unseat one customer of ``w``; True when its table emptied."""
        tabs = self.tables.get(w)
        if not tabs:
            raise RemoveFromEmpty(w)
        cum = np.cumsum(tabs)
        k = int(np.searchsorted(cum, rng.random() * cum[-1], side="right"))
        k = min(k, len(tabs) - 1)
        tabs[k] -= 1
        self.cw[w] -= 1
        self.C -= 1
        emptied = tabs[k] == 0
        if emptied:
            tabs.pop(k)
            self.tw[w] -= 1
            self.T -= 1
            if not tabs:
                del self.tables[w], self.cw[w], self.tw[w]
        return emptied

    def __len__(self):
        return self.C

    def audit(self) -> list[str]:
        errs = []
        for w, tabs in self.tables.items():
            if any(n < 1 for n in tabs):
                errs.append(f"{w!r}: empty table kept")
            if sum(tabs) != self.cw.get(w) or len(tabs) != self.tw.get(w):
                errs.append(f"{w!r}: tallies disagree")
            if not 1 <= self.tw[w] <= self.cw[w]:
                errs.append(f"{w!r}: t={self.tw[w]} c={self.cw[w]}")
        if set(self.cw) != set(self.tables) or set(self.tw) != set(self.tables):
            errs.append("stale entries")
        if sum(self.cw.values()) != self.C or sum(self.tw.values()) != self.T:
            errs.append("totals disagree")
        return errs


def _per_depth(x, n):
    if np.ndim(x) == 0:
        return [float(x)] * n
    x = [float(v) for v in x]
    if len(x) != n:
        raise ValueError(f"need {n} per-depth values, got {len(x)}")
    return x


class HPYLM:
    """Hierarchical Pitman-Yor n-gram model over hashable symbols."""

    def __init__(self, order: int, base: Callable[[Hashable], float], d=0.5, theta=2.0,
                 on_base_add: Callable | None = None, on_base_remove: Callable | None = None):
        if order < 1:
            raise ValueError("order must be >= 1")
        self.order = order
        self.d = _per_depth(d, order)
        self.theta = _per_depth(theta, order)
        for d_, t_ in zip(self.d, self.theta):
            if not (0 <= d_ < 1 and t_ > -d_):
                raise ValueError(f"invalid PY parameters d={d_}, theta={t_}")
        self.base = base
        self.on_base_add = on_base_add
        self.on_base_remove = on_base_remove
        self.nodes: dict[Hashable, Restaurant] = {}
        # customers inserted directly at a node (as opposed to arriving from a child table)
        self.direct: dict[Hashable, dict] = defaultdict(lambda: defaultdict(int))
        self.base_draws: dict[Hashable, int] = defaultdict(int)

    def _trim(self, ctx):
        n = self.order - 1
        return ctx[len(ctx) - n:] if n and len(ctx) > n else (ctx if n else ctx[:0])

    def _chain(self, w, ctx):
        """Parent probabilities down the context chain: ``ps[i]`` feeds depth ``i``."""
        ps = [self.base(w)]
        for depth in range(len(ctx) + 1):
            node = self.nodes.get(ctx[len(ctx) - depth:])
            if node is None:
                break
            ps.append(node.predictive(w, ps[-1], self.d[depth], self.theta[depth]))
        return ps

    def prob(self, w, ctx=()) -> float:
        ctx = self._trim(ctx)
        p = self.base(w)
        for depth in range(len(ctx) + 1):
            node = self.nodes.get(ctx[len(ctx) - depth:])
            if node is None:
                break
            p = node.predictive(w, p, self.d[depth], self.theta[depth])
        return p

    def backoff_mass(self, ctx=()) -> float:
        """Weight the predictive at ``ctx`` puts on the base measure."""
        ctx = self._trim(ctx)
        b = 1.0
        for depth in range(len(ctx) + 1):
            node = self.nodes.get(ctx[len(ctx) - depth:])
            if node is None:
                break
            b *= node.backoff(self.d[depth], self.theta[depth])
        return b

    def add(self, w, ctx, rng) -> None:
        ctx = self._trim(ctx)
        ps = self._chain(w, ctx)
        depth = len(ctx)
        self.direct[ctx][w] += 1
        while depth >= 0:
            key = ctx[len(ctx) - depth:]
            node = self.nodes.get(key)
            if node is None:
                node = self.nodes[key] = Restaurant()
            p_parent = ps[depth] if depth < len(ps) else ps[-1]
            if not node.add(w, p_parent, self.d[depth], self.theta[depth], rng):
                return
            depth -= 1
        self.base_draws[w] += 1
        if self.on_base_add is not None:
            self.on_base_add(w)

    def remove(self, w, ctx, rng) -> None:
        ctx = self._trim(ctx)
        if self.direct.get(ctx, {}).get(w, 0) < 1:
            raise RemoveFromEmpty(f"{w!r} was never added at context {ctx!r}")
        self.direct[ctx][w] -= 1
        if not self.direct[ctx][w]:
            del self.direct[ctx][w]
            if not self.direct[ctx]:
                del self.direct[ctx]
        depth = len(ctx)
        while depth >= 0:
            key = ctx[len(ctx) - depth:]
            node = self.nodes[key]
            emptied = node.remove(w, rng)
            if not node.C:
                del self.nodes[key]
            if not emptied:
                return
            depth -= 1
        self.base_draws[w] -= 1
        if not self.base_draws[w]:
            del self.base_draws[w]
        if self.on_base_remove is not None:
            self.on_base_remove(w)

    def counts(self) -> dict:
        """{context: {symbol: c(w|h)}} snapshot."""
        return {h: dict(r.cw) for h, r in self.nodes.items()}

    def audit(self) -> list[str]:
        """Check seating tallies and that each table is backed by one parent customer."""
        errs = []
        expect: dict[Hashable, dict] = defaultdict(lambda: defaultdict(int))
        for h, inserted in self.direct.items():
            for w, n in inserted.items():
                expect[h][w] += n
        for h, r in self.nodes.items():
            errs.extend(f"{h!r} {e}" for e in r.audit())
            if len(h):
                for w, t in r.tw.items():
                    expect[h[1:]][w] += t
        for h in set(expect) | set(self.nodes):
            got = self.nodes[h].cw if h in self.nodes else {}
            want = {w: n for w, n in expect.get(h, {}).items() if n}
            if got != want:
                errs.append(f"{h!r}: customers {got} vs table/insert backing {want}")
        root = self.nodes.get(self._root_key())
        if dict(self.base_draws) != (dict(root.tw) if root else {}):
            errs.append("root tables disagree with base draws")
        return errs

    def _root_key(self):
        for h in self.nodes:
            return h[:0]
        return ()

    def dump(self) -> list[str]:
        lines = []
        for h in sorted(self.nodes, key=lambda k: (len(k), str(k))):
            r = self.nodes[h]
            for w in sorted(r.cw, key=str):
                lines.append(f"{h!r}\t{w!r}\tc={r.cw[w]}\tt={r.tw[w]}")
        return lines
