"""Class prototypes: generation from clusters, EMA tracking, and
compactness/separation statistics."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .clustering import ClusterAssignment

MIN_NORM = 1e-12


class PrototypeError(ValueError):
    pass


def normalize_rows(M: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(M, axis=-1, keepdims=True)
    if np.any(norms < MIN_NORM):
        raise PrototypeError("cannot normalize a (near-)zero vector")
    return M / norms


@dataclass
class PrototypeSet:
    mu: np.ndarray
    momentum: float = 0.9
    trainable: bool = True

    def __post_init__(self):
        self.mu = np.array(self.mu, dtype=float)
        if not 0.0 <= self.momentum <= 1.0:
            raise PrototypeError("momentum must lie in [0, 1]")

    @property
    def n_classes(self) -> int:
        return self.mu.shape[0]

    def copy(self) -> PrototypeSet:
        return PrototypeSet(self.mu.copy(), self.momentum, self.trainable)

    def renormalize(self) -> None:
        self.mu = normalize_rows(self.mu)


def generate(embeddings, assignment: ClusterAssignment | np.ndarray, n_classes: int | None = None,
             momentum: float = 0.9) -> PrototypeSet:
    """Prototype of each cluster = normalized mean of its member embeddings.

    ``assignment`` may be a ClusterAssignment or a plain label vector.
    """
    Z = np.asarray(embeddings, dtype=float)
    if isinstance(assignment, ClusterAssignment):
        labels, k = assignment.labels, assignment.k
    else:
        labels = np.asarray(assignment, dtype=int)
        k = int(labels.max()) + 1 if n_classes is None else n_classes
    if labels.shape[0] != Z.shape[0]:
        raise PrototypeError("assignment does not cover every embedding")
    counts = np.bincount(labels, minlength=k)
    if np.any(counts == 0):
        raise PrototypeError(f"empty cluster(s): {np.flatnonzero(counts == 0).tolist()}")
    sums = np.zeros((k, Z.shape[1]))
    np.add.at(sums, labels, Z)
    return PrototypeSet(normalize_rows(sums / counts[:, None]), momentum)


def ema_update(protos: PrototypeSet, c: int, z) -> PrototypeSet:
    """Blend prototype ``c`` toward ``z`` with the set's momentum and
    project the result back onto the unit sphere."""
    lam = protos.momentum
    blend = lam * protos.mu[c] + (1.0 - lam) * np.asarray(z, dtype=float)
    norm = np.linalg.norm(blend)
    if norm < MIN_NORM:
        raise PrototypeError(f"EMA blend for prototype {c} has near-zero norm")
    mu = protos.mu.copy()
    mu[c] = blend / norm
    return PrototypeSet(mu, lam, protos.trainable)


def within_between_stats(embeddings, labels, protos: PrototypeSet) -> tuple[float, float]:
    """Mean cosine distance of samples to their prototype, and mean cosine
    distance over unordered prototype pairs. Unscaled (multiply by 100 for
    report-style numbers)."""
    Z = normalize_rows(np.asarray(embeddings, dtype=float))
    labels = np.asarray(labels, dtype=int)
    P = normalize_rows(protos.mu)
    within = float(np.mean(1.0 - np.sum(Z * P[labels], axis=1))) if len(Z) else 0.0
    C = P.shape[0]
    if C < 2:
        return within, 0.0
    iu = np.triu_indices(C, k=1)
    between = float(np.mean(1.0 - (P @ P.T)[iu]))
    return within, between
