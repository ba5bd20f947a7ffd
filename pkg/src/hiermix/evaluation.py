"""Metrics, breakdowns, label-similarity ranking, multi-seed statistics.

Micro-F1 pools all (instance, label) decisions; Macro-F1 averages
per-label F1 over the WHOLE label universe, counting labels that are never
gold and never predicted as zero. That convention changes absolute values
versus averaging over observed labels only, so it is stated here once and
used everywhere.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.special import stdtr

from .corpus import Vocabulary
from .encoder import EncoderParams, detached_forward
from .mixup import similarity
from .prompt import build_local_hierarchy_sequence
from .taxonomy import Taxonomy, extract_local_hierarchy


def _confusion(
    pred_sets: list[set[str]], gold_sets: list[set[str]], labels
) -> dict[str, tuple[int, int, int]]:
    if len(pred_sets) != len(gold_sets):
        raise ValueError("pred and gold lists differ in length")
    counts = {label: [0, 0, 0] for label in labels}  # tp, fp, fn
    for pred, gold in zip(pred_sets, gold_sets):
        for label in pred:
            if label in counts:
                counts[label][0 if label in gold else 1] += 1
        for label in gold:
            if label in counts and label not in pred:
                counts[label][2] += 1
    return {label: tuple(c) for label, c in counts.items()}


def _f1(tp: int, fp: int, fn: int) -> float:
    denom = 2 * tp + fp + fn
    return 2 * tp / denom if denom else 0.0


def micro_f1(
    pred_sets: list[set[str]], gold_sets: list[set[str]], labels
) -> float:
    counts = _confusion(pred_sets, gold_sets, labels)
    tp = sum(c[0] for c in counts.values())
    fp = sum(c[1] for c in counts.values())
    fn = sum(c[2] for c in counts.values())
    return _f1(tp, fp, fn)


def macro_f1(
    pred_sets: list[set[str]], gold_sets: list[set[str]], labels
) -> float:
    counts = _confusion(pred_sets, gold_sets, labels)
    labels = list(labels)
    if not labels:
        return 0.0
    return sum(_f1(*counts[label]) for label in labels) / len(labels)


@dataclass(frozen=True)
class MetricsReport:
    micro_f1: float
    macro_f1: float
    per_depth: tuple[tuple[float, float], ...]  # (micro, macro) per depth
    per_bucket: tuple[tuple[float, int], ...]  # (macro, label count) per bucket
    n_instances: int

    def to_json_obj(self) -> dict:
        return {
            "micro_f1": self.micro_f1,
            "macro_f1": self.macro_f1,
            "per_depth": [
                {"depth": d + 1, "micro_f1": m, "macro_f1": M}
                for d, (m, M) in enumerate(self.per_depth)
            ],
            "per_bucket": [
                {"bucket": b, "macro_f1": m, "n_labels": n}
                for b, (m, n) in enumerate(self.per_bucket)
            ],
            "n_instances": self.n_instances,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_obj(), indent=1, sort_keys=True)

    def csv_row(self) -> dict:
        return {
            "micro_f1": self.micro_f1,
            "macro_f1": self.macro_f1,
            "n_instances": self.n_instances,
        }


def breakdown_by_depth(
    pred_sets: list[set[str]], gold_sets: list[set[str]], tax: Taxonomy
) -> list[tuple[float, float]]:
    """(micro, macro) restricted to each depth's label set."""
    return [
        (
            micro_f1(pred_sets, gold_sets, tax.labels_at(d)),
            macro_f1(pred_sets, gold_sets, tax.labels_at(d)),
        )
        for d in range(1, tax.max_depth + 1)
    ]


def breakdown_by_bucket(
    pred_sets: list[set[str]],
    gold_sets: list[set[str]],
    buckets: dict[str, int],
) -> list[tuple[float, int]]:
    """(macro, label count) per frequency bucket, low-frequency bucket first."""
    n_buckets = max(buckets.values()) + 1 if buckets else 0
    out = []
    for b in range(n_buckets):
        members = [label for label, bucket in buckets.items() if bucket == b]
        out.append((macro_f1(pred_sets, gold_sets, members), len(members)))
    return out


def build_report(
    pred_sets: list[set[str]],
    gold_sets: list[set[str]],
    tax: Taxonomy,
    buckets: dict[str, int] | None = None,
) -> MetricsReport:
    universe = list(tax.nodes)
    return MetricsReport(
        micro_f1=micro_f1(pred_sets, gold_sets, universe),
        macro_f1=macro_f1(pred_sets, gold_sets, universe),
        per_depth=tuple(breakdown_by_depth(pred_sets, gold_sets, tax)),
        per_bucket=tuple(
            breakdown_by_bucket(pred_sets, gold_sets, buckets) if buckets else ()
        ),
        n_instances=len(pred_sets),
    )


def label_representations(
    encoder: EncoderParams, tax: Taxonomy, vocab: Vocabulary
) -> dict[str, np.ndarray]:
    """[CLS] hidden of each label's single-path local-hierarchy sequence."""
    reps = {}
    for label_id in tax.nodes:
        lh = extract_local_hierarchy(tax, {label_id}, auto_close=True)
        seq = build_local_hierarchy_sequence(vocab, lh, tax)
        reps[label_id] = detached_forward(encoder, seq).h_cls
    return reps


def rank_similar_labels(
    target: str,
    k: int,
    encoder: EncoderParams,
    tax: Taxonomy,
    vocab: Vocabulary,
) -> list[tuple[str, float]]:
    """The k labels most similar to ``target``, descending, ties by order."""
    if target not in tax.nodes:
        raise ValueError(f"unknown label id: {target!r}")
    if k > len(tax.nodes) - 1:
        raise ValueError(f"k={k} exceeds the {len(tax.nodes) - 1} other labels")
    reps = label_representations(encoder, tax, vocab)
    scored = [
        (label_id, similarity(reps[target], reps[label_id]))
        for label_id in tax.nodes
        if label_id != target
    ]
    scored.sort(key=lambda item: (-item[1], tax.order[item[0]]))
    return scored[:k]


def welch_t_test(sample_a: list[float], sample_b: list[float]) -> float:
    """Two-sided Welch's t-test p-value.

    Uses the Welch-Satterthwaite degrees of freedom. Two zero-variance
    samples give p = 1 when their means agree and p = 0 otherwise.
    """
    a = np.asarray(sample_a, dtype=np.float64)
    b = np.asarray(sample_b, dtype=np.float64)
    if a.size < 2 or b.size < 2:
        raise ValueError("each sample needs at least two observations")
    var_a = a.var(ddof=1)
    var_b = b.var(ddof=1)
    se2 = var_a / a.size + var_b / b.size
    diff = a.mean() - b.mean()
    if se2 == 0.0:
        return 1.0 if diff == 0.0 else 0.0
    t = diff / np.sqrt(se2)
    dof = se2**2 / (
        (var_a / a.size) ** 2 / (a.size - 1) + (var_b / b.size) ** 2 / (b.size - 1)
    )
    return float(2.0 * stdtr(dof, -abs(t)))


def mean_std(values: list[float]) -> tuple[float, float]:
    arr = np.asarray(values, dtype=np.float64)
    std = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
    return float(arr.mean()), std
