"""Ranking metrics for multi-label evaluation: P@k, nDCG@k, PSP@k.

All three consume a ranked list of label ids per instance plus the set of
true labels.  PSP additionally needs per-label propensities estimated from
the training label frequencies, so rare labels count for more.
"""

from __future__ import annotations

import math
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field

import numpy as np

DEFAULT_KS = (1, 3, 5)

PROPENSITY_A = 0.55
PROPENSITY_B = 1.5


def precision_at_k(ranked: Sequence[int], y_true: set[int], k: int) -> float:
    """Fraction of the top k ranked ids that are true labels."""
    if k < 1:
        raise ValueError("k must be >= 1")
    return sum(1 for l in ranked[:k] if l in y_true) / k


def ndcg_at_k(ranked: Sequence[int], y_true: set[int], k: int) -> float:
    """DCG over the top k (gain 1/ln(i+1), natural log) divided by the ideal
    DCG for min(k, |y_true|) hits.  Zero when there are no true labels."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if not y_true:
        return 0.0
    dcg = sum(1.0 / math.log(i + 2) for i, l in enumerate(ranked[:k]) if l in y_true)
    idcg = sum(1.0 / math.log(i + 2) for i in range(min(k, len(y_true))))
    return dcg / idcg


def propensities(label_counts: np.ndarray, n_train: int,
                 a: float = PROPENSITY_A, b: float = PROPENSITY_B) -> np.ndarray:
    """Per-label propensity scores p in (0, 1] from training frequencies.

    p_l = 1 / (1 + C * exp(-a * ln(N_l + b))) with C = (ln N - 1)(1 + b)^a,
    N the number of training points and N_l the label's frequency.
    """
    if n_train < 1:
        raise ValueError("n_train must be >= 1")
    counts = np.asarray(label_counts, dtype=np.float64)
    if (counts < 0).any():
        raise ValueError("label counts must be non-negative")
    c = (math.log(n_train) - 1.0) * (1.0 + b) ** a
    p = 1.0 / (1.0 + c * np.exp(-a * np.log(counts + b)))
    return np.clip(p, np.finfo(np.float64).tiny, 1.0)


def psp_at_k(ranked: Sequence[int], y_true: set[int], props: np.ndarray, k: int,
             normalized: bool = False) -> float:
    """Propensity-scored precision: (1/k) * sum over the top k of y_l / p_l.

    The raw form can exceed 1.  With ``normalized=True`` it is divided by the
    best achievable value for this instance (the k largest 1/p_l among the
    true labels), which caps it at 1.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    score = sum(1.0 / float(props[l]) for l in ranked[:k] if l in y_true) / k
    if not normalized:
        return score
    if not y_true:
        return 0.0
    best = sorted((1.0 / float(props[l]) for l in y_true), reverse=True)[:k]
    denom = sum(best) / k
    return score / denom if denom > 0 else 0.0


@dataclass
class MetricsReport:
    n_instances: int
    precision: dict[int, float] = field(default_factory=dict)
    ndcg: dict[int, float] = field(default_factory=dict)
    psp: dict[int, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        out: dict = {"n_instances": self.n_instances}
        for name, table in (("precision", self.precision), ("ndcg", self.ndcg), ("psp", self.psp)):
            for k, v in sorted(table.items()):
                out[f"{name}@{k}"] = v
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        rep = cls(n_instances=d["n_instances"])
        for key, v in d.items():
            if "@" not in key:
                continue
            name, k = key.split("@")
            getattr(rep, name)[int(k)] = v
        return rep

    def format_table(self) -> str:
        lines = [f"instances: {self.n_instances}"]
        for name, table in (("P", self.precision), ("nDCG", self.ndcg), ("PSP", self.psp)):
            if table:
                cells = "  ".join(f"@{k}={100 * v:.2f}" for k, v in sorted(table.items()))
                lines.append(f"{name:>5}  {cells}")
        return "\n".join(lines)


def evaluate(rankings: Iterable[Sequence[int]], truths: Iterable[set[int]],
             ks: Sequence[int] = DEFAULT_KS, props: np.ndarray | None = None,
             psp_normalized: bool = False) -> MetricsReport:
    """Mean P@k / nDCG@k (and PSP@k when propensities are given) over a corpus."""
    ks = sorted(set(ks))
    p_sums = {k: 0.0 for k in ks}
    n_sums = {k: 0.0 for k in ks}
    s_sums = {k: 0.0 for k in ks}
    n = 0
    for ranked, y_true in zip(rankings, truths, strict=True):
        n += 1
        for k in ks:
            p_sums[k] += precision_at_k(ranked, y_true, k)
            n_sums[k] += ndcg_at_k(ranked, y_true, k)
            if props is not None:
                s_sums[k] += psp_at_k(ranked, y_true, props, k, normalized=psp_normalized)
    if n == 0:
        raise ValueError("no instances to evaluate")
    report = MetricsReport(
        n_instances=n,
        precision={k: p_sums[k] / n for k in ks},
        ndcg={k: n_sums[k] / n for k in ks},
    )
    if props is not None:
        report.psp = {k: s_sums[k] / n for k in ks}
    return report
