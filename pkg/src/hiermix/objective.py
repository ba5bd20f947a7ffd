"""Per-depth scoring, the zero-bounded multi-label loss, and prediction.

A depth's score vector is the dot product of that depth's verbalizer rows
with one mask hidden state. The loss anchors positive labels above zero
and negative labels below zero:

    loss = log(1 + sum_neg exp(p_v)) + log(1 + sum_pos exp(-p_v))

evaluated with max-shifted log-sum-exp so scores beyond +-700 stay finite.
Mixing two instances' losses at one mixed score vector is a convex
combination, and so is its gradient; ``mixed_zmlce_grad`` realizes that
linearity directly.

At inference a label is predicted iff its score is strictly positive.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .taxonomy import LocalHierarchy, Taxonomy


@dataclass(frozen=True)
class DepthScores:
    p: np.ndarray
    depth: int


@dataclass(frozen=True)
class DepthLabelSplit:
    """Within-depth label indices split into positives and negatives."""

    pos: tuple[int, ...]
    neg: tuple[int, ...]

    def __post_init__(self):
        overlap = set(self.pos) & set(self.neg)
        if overlap:
            raise ValueError(f"pos and neg overlap: {sorted(overlap)}")

    @staticmethod
    def from_positives(depth_size: int, pos: tuple[int, ...]) -> "DepthLabelSplit":
        pos_set = set(pos)
        if pos_set and (min(pos_set) < 0 or max(pos_set) >= depth_size):
            raise ValueError("positive index out of range")
        neg = tuple(i for i in range(depth_size) if i not in pos_set)
        return DepthLabelSplit(pos=tuple(sorted(pos_set)), neg=neg)


def splits_for_hierarchy(tax: Taxonomy, lh: LocalHierarchy) -> list[DepthLabelSplit]:
    """One pos/neg split per depth; depths without gold labels get pos=()."""
    splits = []
    for depth in range(1, tax.max_depth + 1):
        pos = tuple(tax.depth_index[lid] for lid in lh.per_depth[depth - 1])
        splits.append(
            DepthLabelSplit.from_positives(len(tax.labels_at(depth)), pos)
        )
    return splits


def score_depth(h: np.ndarray, verbalizer_matrix: np.ndarray) -> np.ndarray:
    """Scores p_v = w_v . h, one per label row, no bias."""
    if verbalizer_matrix.shape[1] != h.shape[0]:
        raise ValueError(
            f"hidden size {h.shape[0]} != verbalizer width {verbalizer_matrix.shape[1]}"
        )
    return verbalizer_matrix @ h


def _log1p_sum_exp(values: np.ndarray) -> float:
    """log(1 + sum(exp(values))), overflow-safe; 0.0 for an empty set."""
    if values.size == 0:
        return 0.0
    m = max(float(values.max()), 0.0)
    return m + np.log(np.exp(-m) + np.exp(values - m).sum())


def zmlce(p: np.ndarray, split: DepthLabelSplit) -> float:
    neg = np.asarray(split.neg, dtype=np.intp)
    pos = np.asarray(split.pos, dtype=np.intp)
    return _log1p_sum_exp(p[neg]) + _log1p_sum_exp(-p[pos])


def zmlce_grad(p: np.ndarray, split: DepthLabelSplit) -> np.ndarray:
    """d loss / d p; nonzero only on the split's members."""
    grad = np.zeros_like(p)
    neg = np.asarray(split.neg, dtype=np.intp)
    pos = np.asarray(split.pos, dtype=np.intp)
    if neg.size:
        lse = _log1p_sum_exp(p[neg])
        grad[neg] = np.exp(p[neg] - lse)
    if pos.size:
        lse = _log1p_sum_exp(-p[pos])
        grad[pos] = -np.exp(-p[pos] - lse)
    return grad


def _check_ratio(lam: float) -> None:
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"mixing ratio must lie in [0, 1], got {lam}")


def mixed_zmlce(
    lam: float, p_mixed: np.ndarray, split_i: DepthLabelSplit, split_j: DepthLabelSplit
) -> float:
    _check_ratio(lam)
    return lam * zmlce(p_mixed, split_i) + (1.0 - lam) * zmlce(p_mixed, split_j)


def mixed_zmlce_grad(
    lam: float, p_mixed: np.ndarray, split_i: DepthLabelSplit, split_j: DepthLabelSplit
) -> np.ndarray:
    _check_ratio(lam)
    return lam * zmlce_grad(p_mixed, split_i) + (1.0 - lam) * zmlce_grad(
        p_mixed, split_j
    )


def predict(scores_by_depth: list[np.ndarray], tax: Taxonomy) -> set[str]:
    """Labels whose score is strictly greater than zero; ties are negative."""
    predicted: set[str] = set()
    for depth, scores in enumerate(scores_by_depth, start=1):
        ids = tax.labels_at(depth)
        for i in np.flatnonzero(scores > 0.0):
            predicted.add(ids[i])
    return predicted


def close_predictions(predicted: set[str], tax: Taxonomy) -> set[str]:
    """Optional analysis mode: add all ancestors of predicted labels."""
    return tax.ancestor_closure(predicted) if predicted else set()
