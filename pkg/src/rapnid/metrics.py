"""Clustering quality: NMI, ARI, and Hungarian-matched accuracy."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .clustering import AssignmentMapping, hungarian


@dataclass
class Contingency:
    counts: np.ndarray  # true classes x predicted clusters
    classes: np.ndarray
    clusters: np.ndarray

    @property
    def row_sums(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    @property
    def col_sums(self) -> np.ndarray:
        return self.counts.sum(axis=0)

    @property
    def n(self) -> int:
        return int(self.counts.sum())


@dataclass
class MetricsReport:
    nmi: float
    ari: float
    acc: float
    cluster_sizes: list[int] = field(default_factory=list)
    mapping: dict[int, int] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "nmi": self.nmi,
            "ari": self.ari,
            "acc": self.acc,
            "cluster_sizes": list(self.cluster_sizes),
            "mapping": {str(k): v for k, v in self.mapping.items()},
        }


def _check(y_gt, y_p):
    a = np.asarray(y_gt)
    b = np.asarray(y_p)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError(f"label vectors differ in length: {a.shape} vs {b.shape}")
    if a.size == 0:
        raise ValueError("label vectors are empty")
    return a, b


def contingency(y_gt, y_p) -> Contingency:
    a, b = _check(y_gt, y_p)
    classes, ai = np.unique(a, return_inverse=True)
    clusters, bi = np.unique(b, return_inverse=True)
    counts = np.zeros((len(classes), len(clusters)), dtype=np.int64)
    np.add.at(counts, (ai, bi), 1)
    return Contingency(counts, classes, clusters)


def _entropy(counts: np.ndarray, n: int) -> float:
    p = counts[counts > 0] / n
    return float(-np.sum(p * np.log(p)))


def nmi(y_gt, y_p) -> float:
    """Mutual information over the arithmetic mean of the two entropies
    (natural log). Defined as 0 when both partitions are a single group."""
    tab = contingency(y_gt, y_p)
    n = tab.n
    h_gt = _entropy(tab.row_sums, n)
    h_p = _entropy(tab.col_sums, n)
    if h_gt == 0.0 and h_p == 0.0:
        return 0.0
    nz = tab.counts > 0
    nij = tab.counts[nz].astype(float)
    outer = np.outer(tab.row_sums, tab.col_sums)[nz].astype(float)
    mi = float(np.sum(nij / n * (np.log(nij * n) - np.log(outer))))
    denom = 0.5 * (h_gt + h_p)
    return float(np.clip(mi / denom, 0.0, 1.0))


def _comb2(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return x * (x - 1.0) / 2.0


def ari(y_gt, y_p) -> float:
    tab = contingency(y_gt, y_p)
    sum_ij = float(_comb2(tab.counts).sum())
    sum_u = float(_comb2(tab.row_sums).sum())
    sum_v = float(_comb2(tab.col_sums).sum())
    total = float(_comb2(tab.n))
    if total == 0.0:
        return 1.0
    expected = sum_u * sum_v / total
    max_index = 0.5 * (sum_u + sum_v)
    if max_index == expected:
        # both partitions trivial in the same way (e.g. one cluster each)
        return 1.0
    return (sum_ij - expected) / (max_index - expected)


def acc(y_gt, y_p) -> tuple[float, AssignmentMapping]:
    """Accuracy under the best one-to-one cluster -> class mapping.

    The returned mapping goes from predicted-cluster value to true-class
    value; clusters left without a class are omitted.
    """
    tab = contingency(y_gt, y_p)
    n_cls, n_clu = tab.counts.shape
    size = max(n_cls, n_clu)
    overlap = np.zeros((size, size))
    overlap[:n_clu, :n_cls] = tab.counts.T  # padded rows/cols have zero overlap
    match = hungarian(overlap.max() - overlap)
    mapping = {}
    hits = 0
    for r, c in match.mapping.items():
        if r < n_clu and c < n_cls:
            mapping[tab.clusters[r].item()] = tab.classes[c].item()
            hits += tab.counts[c, r]
    return float(hits / tab.n), AssignmentMapping(mapping, float(match.total_cost))


def evaluate(y_gt, y_p) -> MetricsReport:
    score, mapping = acc(y_gt, y_p)
    sizes = np.unique(np.asarray(y_p), return_counts=True)[1]
    return MetricsReport(
        nmi=nmi(y_gt, y_p),
        ari=ari(y_gt, y_p),
        acc=float(score),
        cluster_sizes=sizes.tolist(),
        mapping=mapping.mapping,
    )
