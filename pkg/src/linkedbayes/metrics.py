"""Clustering accuracy, cut-point segmentation scores and phoneme accuracy."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment


class LengthMismatch(ValueError):
    pass


class EmptyReference(ValueError):
    pass


@dataclass
class ConfusionMatrix:
    """Rows are true labels, columns predicted labels (already relabelled by the matching)."""

    counts: np.ndarray
    true_labels: list[int] = field(default_factory=list)
    pred_labels: list[int] = field(default_factory=list)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def to_dict(self) -> dict:
        return {
            "counts": self.counts.astype(int).tolist(),
            "true_labels": list(self.true_labels),
            "pred_labels": list(self.pred_labels),
        }

    def render(self) -> str:
        width = max(3, len(str(int(self.counts.max(initial=0)))) + 1)
        head = " " * 5 + "".join(f"{p:>{width}}" for p in self.pred_labels)
        rows = [head]
        for t, row in zip(self.true_labels, self.counts):
            rows.append(f"{t:>4} " + "".join(f"{int(v):>{width}}" for v in row))
        return "\n".join(rows)


def matched_accuracy(true_labels, pred_labels):
    """Accuracy under the label permutation that maximises the confusion trace.

    Returns ``(accuracy, confusion, mapping)`` where ``mapping[p]`` is the true
    label that predicted label ``p`` is matched to. The confusion matrix has its
    columns ordered so that matched pairs sit on the diagonal.
    """
    t = np.asarray(true_labels, dtype=np.int64)
    p = np.asarray(pred_labels, dtype=np.int64)
    if t.shape != p.shape:
        raise LengthMismatch(f"{t.size} true labels vs {p.size} predictions")
    if t.size == 0:
        return 1.0, ConfusionMatrix(np.zeros((0, 0), dtype=np.int64)), {}
    if t.min() < 0 or p.min() < 0:
        raise ValueError("labels must be non-negative")
    n = int(max(t.max(), p.max())) + 1
    counts = np.zeros((n, n), dtype=np.int64)
    np.add.at(counts, (t, p), 1)
    rows, cols = linear_sum_assignment(counts, maximize=True)
    mapping = {int(c): int(r) for r, c in zip(rows, cols)}
    acc = counts[rows, cols].sum() / t.size
    order = [c for _, c in sorted(zip(rows, cols))]
    confusion = ConfusionMatrix(counts[:, order], list(range(n)), [int(c) for c in order])
    return float(acc), confusion, mapping


# --- segmentation -------------------------------------------------------------

MATCH, SUB, DEL, INS = 0, 1, 2, 3


@dataclass
class SegEvalResult:
    n_tp: int
    n_fp: int
    n_fn: int
    n_tn: int = 0

    @property
    def precision(self) -> float:
        d = self.n_tp + self.n_fp
        return self.n_tp / d if d else 0.0

    @property
    def recall(self) -> float:
        d = self.n_tp + self.n_fn
        return self.n_tp / d if d else 0.0

    @property
    def f_measure(self) -> float:
        p, r = self.precision, self.recall
        return 2 * r * p / (r + p) if r + p > 0 else 0.0

    def __add__(self, other: SegEvalResult) -> SegEvalResult:
        return SegEvalResult(self.n_tp + other.n_tp, self.n_fp + other.n_fp,
                             self.n_fn + other.n_fn, self.n_tn + other.n_tn)

    def to_dict(self) -> dict:
        return {"n_tp": self.n_tp, "n_fp": self.n_fp, "n_fn": self.n_fn, "n_tn": self.n_tn,
                "precision": self.precision, "recall": self.recall, "f_measure": self.f_measure}


def _edit_table(a: str, b: str) -> np.ndarray:
    d = np.zeros((len(a) + 1, len(b) + 1), dtype=np.int64)
    d[:, 0] = np.arange(len(a) + 1)
    d[0, :] = np.arange(len(b) + 1)
    for i in range(1, len(a) + 1):
        for j in range(1, len(b) + 1):
            d[i, j] = min(d[i - 1, j - 1] + (a[i - 1] != b[j - 1]),
                          d[i - 1, j] + 1, d[i, j - 1] + 1)
    return d


def edit_distance(a: str, b: str) -> int:
    return int(_edit_table(a, b)[len(a), len(b)])


def align(a: str, b: str) -> list[tuple[int, int]]:
    """Minimum-edit alignment of ``a`` against ``b``.

    Each column is ``(i, j)``: the 1-based count of characters of ``a`` and ``b``
    consumed after the column. Ties prefer match, then substitution, then
    deletion (consume ``a`` only), then insertion. The alignment is computed on
    a canonical ordering of the pair, so ``align(b, a)`` is the transpose of
    ``align(a, b)``.
    """
    if b < a:
        return [(j, i) for i, j in align(b, a)]
    d = _edit_table(a, b)
    i, j = len(a), len(b)
    cols = []
    while i > 0 or j > 0:
        cols.append((i, j))
        if i > 0 and j > 0 and a[i - 1] == b[j - 1] and d[i, j] == d[i - 1, j - 1]:
            i, j = i - 1, j - 1
        elif i > 0 and j > 0 and d[i, j] == d[i - 1, j - 1] + 1:
            i, j = i - 1, j - 1
        elif i > 0 and d[i, j] == d[i - 1, j] + 1:
            i -= 1
        else:
            j -= 1
    return cols[::-1]


def seg_eval(correct_cuts, estimated_cuts, correct_str: str, estimated_str: str) -> SegEvalResult:
    """Classify aligned inter-character positions as TP/FP/FN/TN.

    A cut after character ``c`` of a string is attached to the boundary that
    follows the alignment column consuming that character.
    """
    cols = align(correct_str, estimated_str)
    ccuts, ecuts = set(correct_cuts), set(estimated_cuts)
    tp = fp = fn = tn = 0
    prev = (0, 0)
    for col in cols[:-1]:
        in_c = col[0] != prev[0] and col[0] in ccuts
        in_e = col[1] != prev[1] and col[1] in ecuts
        if in_c and in_e:
            tp += 1
        elif in_e:
            fp += 1
        elif in_c:
            fn += 1
        else:
            tn += 1
        prev = col
    return SegEvalResult(tp, fp, fn, tn)


def cuts_from_words(words) -> list[int]:
    cuts, pos = [], 0
    for w in list(words)[:-1]:
        pos += len(w)
        cuts.append(pos)
    return cuts


def phoneme_accuracy(reference: str, hypothesis: str) -> float:
    if not reference:
        raise EmptyReference("reference string is empty")
    return max(0.0, 1.0 - edit_distance(reference, hypothesis) / len(reference))
