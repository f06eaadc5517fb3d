"""Label clustering over bag-of-words features and dynamic negative sampling.

For large label spaces the classifier first scores a small set of balanced
label clusters, then scores only the labels inside the winning clusters.
During training the candidate set always contains every positive label of the
sample plus the members of the highest-scoring other clusters, which is what
makes the negatives "hard".
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp
import torch

from .corpus import CLS_ID, PAD_ID, DatasetBundle


@dataclass
class ClusterIndex:
    """Partition of label ids into C clusters."""

    assignments: np.ndarray  # (L,) label_id -> cluster_id
    members: list[list[int]]  # cluster_id -> sorted label ids
    C: int

    def __post_init__(self) -> None:
        if len(self.members) != self.C:
            raise ValueError("members length disagrees with C")
        if any(len(m) == 0 for m in self.members):
            raise ValueError("clusters must be non-empty")
        flat = sorted(l for m in self.members for l in m)
        if flat != list(range(len(self.assignments))):
            raise ValueError("members must partition the label ids")

    def to_json(self) -> str:
        return json.dumps({"C": self.C, "assignments": [int(a) for a in self.assignments]})

    def save(self, path: Path | str) -> None:
        Path(path).write_text(self.to_json() + "\n", encoding="utf-8")

    @classmethod
    def from_assignments(cls, assignments: np.ndarray, C: int) -> "ClusterIndex":
        members: list[list[int]] = [[] for _ in range(C)]
        for label_id, c in enumerate(assignments):
            members[int(c)].append(label_id)
        return cls(assignments=np.asarray(assignments, dtype=np.int64), members=members, C=C)

    @classmethod
    def from_json(cls, text: str) -> "ClusterIndex":
        obj = json.loads(text)
        return cls.from_assignments(np.asarray(obj["assignments"], dtype=np.int64), int(obj["C"]))


def label_bow(bundle: DatasetBundle) -> sp.csr_matrix:
    """L2-normalized bag-of-words rows, one per label, shape (L, V).

    Row l aggregates the token counts of every training text tagged with l.
    A label that tags no training sample falls back to the bag-of-words of
    its own label text (zero row if that text carries no corpus tokens).
    """
    L = bundle.labels.num_labels
    V = bundle.tokens.size
    per_label: list[Counter] = [Counter() for _ in range(L)]
    seen = [False] * L
    for sample in bundle.train:
        counts = Counter(t for t in sample.text_tokens if t not in (CLS_ID, PAD_ID))
        for l in sample.positive_labels:
            per_label[l].update(counts)
            seen[l] = True
    for l in range(L):
        if not seen[l]:
            per_label[l] = Counter(bundle.tokens.encode(bundle.labels.text(l)))

    rows, cols, data = [], [], []
    for l, counts in enumerate(per_label):
        norm = np.sqrt(sum(float(c) ** 2 for c in counts.values()))
        if norm == 0.0:
            continue
        for tok, c in counts.items():
            rows.append(l)
            cols.append(tok)
            data.append(c / norm)
    return sp.csr_matrix((data, (rows, cols)), shape=(L, V), dtype=np.float64)


def _row_sqnorms(rows) -> np.ndarray:
    if sp.issparse(rows):
        return np.asarray(rows.multiply(rows).sum(axis=1)).ravel()
    return (np.asarray(rows) ** 2).sum(axis=1)


def _mean_row(rows) -> np.ndarray:
    return np.asarray(rows.mean(axis=0)).ravel()


def _balanced_bisect(bow, idx: np.ndarray, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Split idx into halves (sizes differing by <= 1) along the 2-means axis."""
    rows = bow[idx]
    seeds = rng.choice(len(idx), size=2, replace=False)
    centers = np.stack([_mean_row(rows[[s]]) for s in seeds])
    sq = _row_sqnorms(rows)
    for _ in range(8):
        # squared distance to each center, up to the shared ||x||^2 term
        d = np.stack([sq - 2.0 * np.asarray(rows @ c).ravel() + c @ c for c in centers])
        side = d[1] < d[0]
        if side.all() or (~side).all():
            break
        new0, new1 = _mean_row(rows[~side]), _mean_row(rows[side])
        if np.allclose(new0, centers[0]) and np.allclose(new1, centers[1]):
            centers = np.stack([new0, new1])
            break
        centers = np.stack([new0, new1])
    direction = centers[0] - centers[1]
    proj = np.asarray(rows @ direction).ravel()
    order = np.lexsort((idx, proj))  # stable under projection ties
    half = (len(idx) + 1) // 2
    return idx[order[:half]], idx[order[half:]]


def build_clusters(bow, C_target: int, seed: int) -> ClusterIndex:
    """Recursive balanced 2-means to depth log2(C_target); deterministic per seed."""
    L = bow.shape[0]
    if C_target > L:
        raise ValueError(f"C_target {C_target} exceeds number of labels {L}")
    if C_target < 1 or C_target & (C_target - 1):
        raise ValueError(f"C_target must be a power of 2, got {C_target}")
    rng = np.random.default_rng(seed)
    depth = C_target.bit_length() - 1

    members: list[list[int]] = []

    def split(idx: np.ndarray, d: int) -> None:
        if d == 0:
            members.append(sorted(int(i) for i in idx))
            return
        left, right = _balanced_bisect(bow, idx, rng)
        split(left, d - 1)
        split(right, d - 1)

    split(np.arange(L), depth)
    assignments = np.empty(L, dtype=np.int64)
    for c, labs in enumerate(members):
        assignments[labs] = c
    return ClusterIndex(assignments=assignments, members=members, C=C_target)


@dataclass
class CandidateSet:
    labels: list[int]  # sorted candidate label ids, all positives included
    cluster_target: np.ndarray  # (C,) multi-hot over positive-containing clusters
    clusters: list[int]  # chosen cluster ids


def top_clusters(cluster_scores: np.ndarray, k: int) -> list[int]:
    """Cluster ids by descending score, ties broken by ascending id."""
    order = np.lexsort((np.arange(len(cluster_scores)), -cluster_scores))
    return [int(c) for c in order[:k]]


def select_candidates(cluster_scores: np.ndarray, positives: set[int],
                      index: ClusterIndex, k_clusters: int) -> CandidateSet:
    """Candidate labels: all positive clusters plus top-scoring others.

    Every positive label is guaranteed to be a candidate even if the
    positives span more than ``k_clusters`` clusters.
    """
    if k_clusters > index.C:
        raise ValueError(f"k_clusters {k_clusters} exceeds cluster count {index.C}")
    target = np.zeros(index.C, dtype=np.float64)
    pos_clusters = sorted({int(index.assignments[l]) for l in positives})
    target[pos_clusters] = 1.0
    chosen = list(pos_clusters)
    if len(chosen) < k_clusters:
        in_chosen = set(chosen)
        order = np.lexsort((np.arange(index.C), -cluster_scores))
        for c in order:
            if int(c) not in in_chosen:
                chosen.append(int(c))
                in_chosen.add(int(c))
                if len(chosen) == k_clusters:
                    break
    candidates = sorted(l for c in chosen for l in index.members[c])
    return CandidateSet(labels=candidates, cluster_target=target, clusters=sorted(chosen))


def rank_descending(scores: np.ndarray) -> np.ndarray:
    """Label ids by descending score; equal scores order by ascending id."""
    return np.lexsort((np.arange(len(scores)), -scores))


def two_stage_predict(model, e_t: torch.Tensor, index: ClusterIndex,
                      k_clusters: int, top_k: int) -> tuple[np.ndarray, np.ndarray]:
    """Score clusters, keep the top k_clusters, then rank only their members.

    Labels outside the winning clusters receive no score; they appear after
    all candidates (in ascending id, score 0) only when ``top_k`` exceeds the
    candidate count.  Returns (ids, scores), each (batch, top_k).
    """
    if getattr(model, "cluster_head", None) is None:
        raise RuntimeError("cluster head is disabled; use rank_classify for single-stage scoring")
    with torch.no_grad():
        hidden = model.classifier_activation(e_t)
        cluster_scores = model.cluster_head(hidden).cpu().numpy()
        label_probs = torch.sigmoid(model.label_head(hidden)).cpu().numpy()
    L = label_probs.shape[1]
    top_k = min(top_k, L)
    all_ids = []
    all_scores = []
    for row in range(e_t.shape[0]):
        cand = select_candidates(cluster_scores[row], set(), index, k_clusters)
        cand_ids = np.asarray(cand.labels, dtype=np.int64)
        cand_scores = label_probs[row, cand_ids]
        order = np.lexsort((cand_ids, -cand_scores))
        ranked = cand_ids[order]
        scores = cand_scores[order]
        if len(ranked) < top_k:
            rest = np.setdiff1d(np.arange(L, dtype=np.int64), cand_ids, assume_unique=False)
            ranked = np.concatenate([ranked, rest])
            scores = np.concatenate([scores, np.zeros(len(rest))])
        all_ids.append(ranked[:top_k])
        all_scores.append(scores[:top_k])
    return np.stack(all_ids), np.stack(all_scores)
