"""Training objectives with analytic gradients.

Every loss returns a ``LossValue``: the scalar value plus gradients with
respect to the embeddings it consumed (``d_z``), the prototypes (``d_mu``),
the classifier (``d_cls``), and, when the loss runs the encoder itself,
the encoder parameters (``d_enc``).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .config import TrainConfig
from .encoder import ClassifierHead, EncoderHead, ForwardCache, ParamGradients, backward, forward
from .prototypes import PrototypeSet


@dataclass
class Batch:
    x: np.ndarray
    z: np.ndarray
    y: np.ndarray
    labeled_mask: np.ndarray
    cache: ForwardCache | None = field(default=None, repr=False)

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=int)
        self.labeled_mask = np.asarray(self.labeled_mask, dtype=bool)
        n = self.x.shape[0]
        if not (self.z.shape[0] == self.y.shape[0] == self.labeled_mask.shape[0] == n):
            raise ValueError("batch fields disagree in size")

    @classmethod
    def encode(cls, encoder: EncoderHead, x, y, labeled_mask=None) -> Batch:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        z, cache = forward(encoder, x)
        if labeled_mask is None:
            labeled_mask = np.zeros(len(x), dtype=bool)
        return cls(x, z, y, labeled_mask, cache)

    def __len__(self):
        return self.x.shape[0]


@dataclass
class LossValue:
    value: float
    d_z: np.ndarray | None = None
    d_mu: np.ndarray | None = None
    d_cls: ParamGradients | None = None
    d_enc: ParamGradients | None = None
    parts: dict = field(default_factory=dict)


def _log_softmax(logits: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise log-softmax and softmax with max-shift."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - lse
    return logp, np.exp(logp)


def _soft_pcl(Z, M, targets, tau):
    """Mean cross-entropy between soft targets and softmax(Z M^T / tau)."""
    n = Z.shape[0]
    logp, p = _log_softmax(Z @ M.T / tau)
    value = -float(np.sum(targets * logp)) / n
    dlogits = (p - targets) / n
    return value, dlogits @ M / tau, dlogits.T @ Z / tau


def _onehot(y, n_classes):
    out = np.zeros((len(y), n_classes))
    out[np.arange(len(y)), y] = 1.0
    return out


def pcl_loss(batch: Batch, protos: PrototypeSet | np.ndarray, tau: float = 0.1) -> LossValue:
    """Prototypical contrastive loss of each embedding against all prototypes."""
    M = protos.mu if isinstance(protos, PrototypeSet) else np.asarray(protos, dtype=float)
    if len(batch) == 0:
        raise ValueError("empty batch")
    value, dZ, dM = _soft_pcl(batch.z, M, _onehot(batch.y, M.shape[0]), tau)
    return LossValue(value, d_z=dZ, d_mu=dM)


def mixup(x_a, x_b, eta):
    """Convex combination ``eta * x_a + (1 - eta) * x_b``; ``eta`` may be
    a scalar or one weight per row."""
    x_a = np.asarray(x_a, dtype=float)
    x_b = np.asarray(x_b, dtype=float)
    if x_a.shape != x_b.shape:
        raise ValueError("mixup operands differ in shape")
    eta = np.asarray(eta, dtype=float)
    if eta.ndim == 1 and x_a.ndim == 2:
        eta = eta[:, None]
    return eta * x_a + (1.0 - eta) * x_b


def sample_pairing(n: int, alpha: float, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Random partner permutation and Beta(alpha, alpha) weights for a batch."""
    perm = rng.permutation(n) if n > 1 else np.zeros(1, dtype=int)
    eta = rng.beta(alpha, alpha, size=n)
    return perm, eta


def rpal_loss(batch: Batch, pairing, eta, protos: PrototypeSet | np.ndarray,
              tau: float, encoder: EncoderHead) -> LossValue:
    """Prototypical loss on mixed inputs with mixed targets.

    Sample ``i`` is mixed with ``pairing[i]``; the embedding of the mixture
    is pulled toward both source prototypes in proportion ``eta[i]``.
    ``d_z`` is the gradient with respect to the mixed embeddings.
    """
    M = protos.mu if isinstance(protos, PrototypeSet) else np.asarray(protos, dtype=float)
    n = len(batch)
    pairing = np.asarray(pairing, dtype=int)
    eta = np.broadcast_to(np.asarray(eta, dtype=float), (n,))
    if n == 1:
        pairing = np.zeros(1, dtype=int)
    x_mix = mixup(batch.x, batch.x[pairing], eta)
    z_mix, cache = forward(encoder, x_mix)
    C = M.shape[0]
    targets = eta[:, None] * _onehot(batch.y, C) + (1.0 - eta)[:, None] * _onehot(batch.y[pairing], C)
    value, dZ, dM = _soft_pcl(z_mix, M, targets, tau)
    d_enc, _ = backward(encoder, cache, dZ)
    return LossValue(value, d_z=dZ, d_mu=dM, d_enc=d_enc)


def instance_contrastive_loss(z, tau: float = 0.1) -> LossValue:
    """Alignment of paired views plus log-sum-exp uniformity.

    Rows ``i`` and ``i + n`` of ``z`` (shape ``(2n, h)``) are two views of
    the same instance.
    """
    Z = np.asarray(z, dtype=float)
    m = Z.shape[0]
    if m % 2 or m == 0:
        raise ValueError("instance contrastive loss needs an even, nonzero number of views")
    n = m // 2
    partner = np.concatenate([np.arange(n, m), np.arange(n)])
    align = -float(np.sum(Z[:n] * Z[n:])) / (tau * n)
    d_align = -Z[partner] / (tau * n)

    S = Z @ Z.T / tau
    np.fill_diagonal(S, -np.inf)
    logp, p = _log_softmax(S)
    row_max = S.max(axis=1)
    lse = row_max + np.log(np.exp(S - row_max[:, None]).sum(axis=1))
    uniform = float(lse.mean())
    dS = p / m
    d_uniform = (dS + dS.T) @ Z / tau
    return LossValue(align + uniform, d_z=d_align + d_uniform,
                     parts={"alignment": align, "uniformity": uniform})


def apdl_loss(protos: PrototypeSet | np.ndarray, tau: float = 0.1, eps_dist: float = 1e-6) -> LossValue:
    """Dispersion loss over prototype pairs, each pair weighted by the
    reciprocal of its Euclidean distance (floored at ``eps_dist``)."""
    M = protos.mu if isinstance(protos, PrototypeSet) else np.asarray(protos, dtype=float)
    C = M.shape[0]
    if C < 2:
        raise ValueError("dispersion loss needs at least two prototypes")
    norms = np.linalg.norm(M, axis=1)
    U = M / norms[:, None]
    cos = U @ U.T
    diff = M[:, None, :] - M[None, :, :]
    dist = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    floored = dist < eps_dist
    logw = cos / tau - np.log(np.maximum(dist, eps_dist))
    np.fill_diagonal(logw, -np.inf)
    logp, p = _log_softmax(logw)
    row_max = logw.max(axis=1)
    lse = row_max + np.log(np.exp(logw - row_max[:, None]).sum(axis=1))
    value = float(np.mean(lse - np.log(C - 1)))

    A = (p + p.T) / C  # both (i, j) and (j, i) terms depend on the pair
    np.fill_diagonal(A, 0.0)
    # d cos_ij / d mu_i = (u_j - cos_ij u_i) / ||mu_i||
    d_cos = (A @ U - np.sum(A * cos, axis=1)[:, None] * U) / norms[:, None]
    # d log dist_ij / d mu_i = (mu_i - mu_j) / dist_ij^2, zero where floored
    inv_d2 = np.where(floored, 0.0, 1.0 / np.where(floored, 1.0, dist) ** 2)
    np.fill_diagonal(inv_d2, 0.0)
    W = A * inv_d2
    d_dist = W.sum(axis=1)[:, None] * M - W @ M
    return LossValue(value, d_mu=d_cos / tau - d_dist)


def ce_loss(batch: Batch, cls: ClassifierHead) -> LossValue:
    """Softmax cross-entropy of the classifier on the labeled rows only."""
    n_known = cls.V.shape[0]
    mask = batch.labeled_mask
    d_z = np.zeros_like(batch.z)
    if not mask.any():
        return LossValue(0.0, d_z=d_z, d_cls=ParamGradients(dV=np.zeros_like(cls.V), dc=np.zeros_like(cls.c)))
    y = batch.y[mask]
    if np.any(y < 0) or np.any(y >= n_known):
        raise ValueError(f"labeled targets must lie in [0, {n_known})")
    Z = batch.z[mask]
    logp, p = _log_softmax(Z @ cls.V.T + cls.c)
    n = Z.shape[0]
    value = -float(logp[np.arange(n), y].sum()) / n
    dlogits = (p - _onehot(y, n_known)) / n
    d_z[mask] = dlogits @ cls.V
    return LossValue(value, d_z=d_z, d_cls=ParamGradients(dV=dlogits.T @ Z, dc=dlogits.sum(axis=0)))


def multitask_loss(batch: Batch, protos: PrototypeSet | np.ndarray, cls: ClassifierHead,
                   config: TrainConfig, encoder: EncoderHead, pairing, eta) -> LossValue:
    """Weighted sum ``omega * L_r + L_a + L_ce`` with combined gradients.

    ``d_z`` is the gradient with respect to the batch embeddings (from the
    classifier term); ``d_enc`` already folds every encoder path in.
    """
    M = protos.mu if isinstance(protos, PrototypeSet) else np.asarray(protos, dtype=float)
    cache = batch.cache if batch.cache is not None else forward(encoder, batch.x)[1]
    if config.use_mixup:
        l_r = rpal_loss(batch, pairing, eta, M, config.tau, encoder)
    else:
        l_r = pcl_loss(batch, M, config.tau)
        l_r.d_enc = backward(encoder, cache, l_r.d_z)[0]
    if config.use_apdl:
        l_a = apdl_loss(M, config.tau, config.eps_dist)
    else:
        l_a = LossValue(0.0, d_mu=np.zeros_like(M))
    l_ce = ce_loss(batch, cls)

    w = config.omega
    d_enc = w * l_r.d_enc + backward(encoder, cache, l_ce.d_z)[0]
    value = w * l_r.value + l_a.value + l_ce.value
    return LossValue(
        value,
        d_z=l_ce.d_z,
        d_mu=w * l_r.d_mu + l_a.d_mu,
        d_cls=l_ce.d_cls,
        d_enc=d_enc,
        parts={"L_r": l_r.value, "L_a": l_a.value, "L_ce": l_ce.value},
    )
