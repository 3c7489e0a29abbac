"""End-to-end training: supervised warmup, per-epoch pseudo-labeling and
prototype refresh, joint optimization, early stopping, k-means inference."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import clustering
from .clustering import ClusterAssignment, hungarian, kmeans
from .config import TrainConfig
from .dataset import Dataset
from .encoder import (
    ClassifierHead,
    EncoderHead,
    ParamGradients,
    backward,
    embed,
    init_classifier,
    init_encoder,
)
from .losses import Batch, ce_loss, multitask_loss, sample_pairing
from .metrics import MetricsReport, evaluate, nmi
from .prototypes import PrototypeSet, ema_update, normalize_rows, within_between_stats

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass
class EpochLog:
    epoch: int
    L_all: float
    L_r: float
    L_a: float
    L_ce: float
    val_nmi: float
    within: float
    between: float

    COLUMNS = ("epoch", "L_all", "L_r", "L_a", "L_ce", "val_nmi", "within", "between")

    def row(self) -> list:
        return [getattr(self, c) for c in self.COLUMNS]


@dataclass
class RAPModel:
    """Trained encoder, classifier, and prototypes plus run metadata."""

    encoder: EncoderHead
    classifier: ClassifierHead
    prototypes: PrototypeSet
    config: TrainConfig
    n_clusters: int
    class_names: list[str] = field(default_factory=list)
    logs: list[EpochLog] = field(default_factory=list)
    warmup_losses: list[float] = field(default_factory=list)
    best_epoch: int = 0

    def embed(self, X) -> np.ndarray:
        return embed(self.encoder, np.atleast_2d(np.asarray(X, dtype=float)))


@dataclass
class TrainingData:
    """Array view of a dataset, ready for optimization."""

    X: np.ndarray  # labeled (train part) rows first, then unlabeled
    y: np.ndarray  # known-class index for labeled rows, -1 otherwise
    X_val: np.ndarray
    y_val: np.ndarray
    n_known: int

    @property
    def labeled_mask(self) -> np.ndarray:
        return self.y >= 0


def _seeds(seed: int):
    names = ("init", "warmup", "train", "kmeans", "split")
    seqs = np.random.SeedSequence(seed).spawn(len(names))
    return {name: np.random.default_rng(seq) for name, seq in zip(names, seqs)}


def split_training_data(X_lab, y_lab, X_unl, n_known: int, val_fraction: float,
                        rng: np.random.Generator) -> TrainingData:
    X_lab = np.asarray(X_lab, dtype=float).reshape(len(y_lab), -1) if len(y_lab) else np.asarray(X_lab, float)
    y_lab = np.asarray(y_lab, dtype=int)
    X_unl = np.asarray(X_unl, dtype=float)
    n_val = int(round(val_fraction * len(y_lab)))
    if val_fraction > 0 and len(y_lab) >= 2:
        n_val = max(n_val, 1)
    n_val = min(n_val, len(y_lab) - 1) if len(y_lab) else 0
    order = rng.permutation(len(y_lab))
    val, tr = order[:n_val], order[n_val:]
    d = X_unl.shape[1] if X_unl.size else X_lab.shape[1]
    parts = [X_lab[tr].reshape(-1, d), X_unl.reshape(-1, d)]
    X = np.concatenate(parts)
    y = np.concatenate([y_lab[tr], -np.ones(len(X_unl), dtype=int)])
    return TrainingData(X, y, X_lab[val].reshape(-1, d), y_lab[val], n_known)


def _clip(grads: list[np.ndarray], max_norm: float) -> float:
    total = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads)))
    if max_norm > 0 and total > max_norm:
        scale = max_norm / total
        for g in grads:
            g *= scale
    return total


def _sgd_step(encoder, classifier, grads: ParamGradients, lr, extra=()):
    if grads.dW is not None:
        encoder.W -= lr * grads.dW
        encoder.b -= lr * grads.db
    if grads.dV is not None:
        classifier.V -= lr * grads.dV
        classifier.c -= lr * grads.dc
    for param, grad in extra:
        param -= lr * grad


def _check_finite(value: float, where: str):
    if not np.isfinite(value):
        raise TrainingError(f"non-finite loss during {where}")


def _full_ce(encoder, classifier, X, y) -> float:
    z = embed(encoder, X)
    return ce_loss(Batch(X, z, y, np.ones(len(y), dtype=bool)), classifier).value


def warmup(data: TrainingData, encoder: EncoderHead, classifier: ClassifierHead,
           config: TrainConfig, rng: np.random.Generator) -> list[float]:
    """Cross-entropy-only training on the labeled rows.

    Returns the full-labeled-set cross-entropy after each epoch.
    """
    mask = data.labeled_mask
    if not mask.any():
        raise TrainingError("warmup needs at least one labeled sample")
    X, y = data.X[mask], data.y[mask]
    history = []
    for epoch in range(config.warmup_epochs):
        order = rng.permutation(len(y))
        for start in range(0, len(y), config.batch_size):
            idx = order[start : start + config.batch_size]
            batch = Batch.encode(encoder, X[idx], y[idx], np.ones(len(idx), dtype=bool))
            loss = ce_loss(batch, classifier)
            _check_finite(loss.value, f"warmup epoch {epoch + 1}")
            grads = backward(encoder, batch.cache, loss.d_z)[0] + loss.d_cls
            _clip(grads.arrays(), config.grad_clip)
            _sgd_step(encoder, classifier, grads, config.learning_rate)
        history.append(_full_ce(encoder, classifier, X, y))
        log.debug("warmup epoch %d: ce=%.6f", epoch + 1, history[-1])
    return history


def align_clusters(cluster_labels: np.ndarray, y: np.ndarray, n_clusters: int) -> np.ndarray:
    """Map cluster indices to class indices by maximum overlap on the
    labeled rows (``y >= 0``). Returns ``perm`` with ``perm[cluster] = class``."""
    overlap = np.zeros((n_clusters, n_clusters))
    mask = y >= 0
    np.add.at(overlap, (cluster_labels[mask], y[mask]), 1.0)
    match = hungarian(overlap.max() - overlap)
    return match.as_array(n_clusters)


def pseudo_label(Z: np.ndarray, data: TrainingData, n_clusters: int, seed: int,
                 n_init: int = 1) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """k-means on the embeddings, aligned to known classes.

    Returns the per-row training targets (ground truth on labeled rows,
    aligned cluster elsewhere), the aligned cluster of every row, and the
    k-means centroids reordered so that row ``c`` belongs to class ``c``.
    """
    km = kmeans(Z, n_clusters, seed=seed, n_init=n_init)
    perm = align_clusters(km.labels, data.y, n_clusters)
    aligned = perm[km.labels]
    targets = np.where(data.labeled_mask, data.y, aligned)
    centroids = np.empty_like(km.centroids)
    centroids[perm] = km.centroids
    return targets, aligned, centroids


def cluster_prototypes(Z, aligned, centroids, momentum) -> PrototypeSet:
    """Normalized mean embedding per aligned cluster; a cluster left empty
    by the final k-means assignment falls back to its centroid."""
    k = centroids.shape[0]
    sums = np.zeros((k, Z.shape[1]))
    np.add.at(sums, aligned, Z)
    counts = np.bincount(aligned, minlength=k)
    mu = centroids.copy()
    nonempty = counts > 0
    mu[nonempty] = sums[nonempty] / counts[nonempty, None]
    return PrototypeSet(normalize_rows(mu), momentum)


def _predict_nearest(Z: np.ndarray, protos: PrototypeSet) -> np.ndarray:
    return np.argmax(Z @ protos.mu.T, axis=1)


def validation_nmi(encoder: EncoderHead, protos: PrototypeSet, data: TrainingData) -> float:
    if len(data.y_val) == 0:
        return float("nan")
    pred = _predict_nearest(embed(encoder, data.X_val), protos)
    return nmi(data.y_val, pred)


def fit_arrays(data: TrainingData, n_clusters: int, config: TrainConfig,
               class_names: list[str] | None = None) -> RAPModel:
    """Run warmup and joint training on prepared arrays."""
    rngs = _seeds(config.seed)
    if n_clusters < max(data.n_known, 2):
        raise TrainingError(f"n_clusters={n_clusters} must be >= max(known classes, 2)")
    if n_clusters > len(data.X):
        raise TrainingError(f"n_clusters={n_clusters} exceeds the {len(data.X)} training rows")
    d = data.X.shape[1]
    encoder = init_encoder(d, config.embed_dim, rngs["init"])
    classifier = init_classifier(config.embed_dim, max(data.n_known, 1), rngs["init"])
    warm_hist = warmup(data, encoder, classifier, config, rngs["warmup"]) if data.labeled_mask.any() else []

    model = RAPModel(encoder, classifier, PrototypeSet(np.eye(n_clusters, config.embed_dim), config.momentum),
                     config, n_clusters, list(class_names or []), [], warm_hist, 0)
    rng = rngs["train"]
    km_rng = rngs["kmeans"]
    best_val = -np.inf
    best_state = (encoder.copy(), classifier.copy(), model.prototypes.copy())
    lr = config.learning_rate
    mask_all = data.labeled_mask

    for epoch in range(1, config.epochs + 1):
        Z = embed(encoder, data.X)
        targets, aligned, centroids = pseudo_label(Z, data, n_clusters, int(km_rng.integers(2**31)),
                                                   config.kmeans_n_init)
        protos = cluster_prototypes(Z, aligned, centroids, config.momentum)

        sums = {"L_all": 0.0, "L_r": 0.0, "L_a": 0.0, "L_ce": 0.0}
        n_steps = 0
        order = rng.permutation(len(data.X))
        for start in range(0, len(order), config.batch_size):
            idx = order[start : start + config.batch_size]
            batch = Batch.encode(encoder, data.X[idx], targets[idx], mask_all[idx])
            pairing, eta = sample_pairing(len(idx), config.alpha, rng)
            loss = multitask_loss(batch, protos, classifier, config, encoder, pairing, eta)
            _check_finite(loss.value, f"epoch {epoch}")
            grads = loss.d_enc + loss.d_cls
            d_mu = loss.d_mu.copy() if protos.trainable else np.zeros_like(protos.mu)
            _clip(grads.arrays() + [d_mu], config.grad_clip)
            _sgd_step(encoder, classifier, grads, lr, [(protos.mu, d_mu)])
            protos.renormalize()
            for c in np.unique(batch.y):
                mean = batch.z[batch.y == c].mean(axis=0)
                norm = np.linalg.norm(mean)
                if norm > 1e-12:
                    protos = ema_update(protos, int(c), mean / norm)
            sums["L_all"] += loss.value
            for key in ("L_r", "L_a", "L_ce"):
                sums[key] += loss.parts[key]
            n_steps += 1

        Z = embed(encoder, data.X)
        within, between = within_between_stats(Z, targets, protos)
        val = validation_nmi(encoder, protos, data)
        means = {k: v / n_steps for k, v in sums.items()}
        entry = EpochLog(epoch, means["L_all"], means["L_r"], means["L_a"], means["L_ce"],
                         val, within, between)
        model.logs.append(entry)
        log.info("epoch %d: L_all=%.4f val_nmi=%.4f within=%.4f between=%.4f",
                 epoch, entry.L_all, val, within, between)
        model.prototypes = protos
        # ties count as improvement so a plateau keeps the latest state
        score = -np.inf if np.isnan(val) else val
        if score >= best_val:
            best_val = score
            model.best_epoch = epoch
            best_state = (encoder.copy(), classifier.copy(), protos.copy())
        elif epoch - model.best_epoch >= config.early_stop_patience:
            log.info("early stop at epoch %d (best %d)", epoch, model.best_epoch)
            break

    if model.logs:
        model.encoder, model.classifier, model.prototypes = best_state
    return model


def dataset_arrays(dataset: Dataset, config: TrainConfig) -> TrainingData:
    index = {name: i for i, name in enumerate(dataset.task.known_classes)}
    y_lab = np.array([index[s.label] for s in dataset.labeled], dtype=int)
    return split_training_data(
        dataset.matrix("labeled"), y_lab, dataset.matrix("unlabeled"),
        dataset.task.n_known, config.val_fraction, _seeds(config.seed)["split"],
    )


def train(dataset: Dataset, config: TrainConfig) -> RAPModel:
    """Train on a dataset's labeled and unlabeled splits."""
    data = dataset_arrays(dataset, config)
    k = config.k
    if k == "estimate":
        k = clustering.estimate_k(data.X, min(2 * dataset.task.total_classes, len(data.X)),
                                  seed=config.seed)
        log.info("estimated k=%d", k)
    elif k == "truth":
        k = dataset.task.total_classes
    return fit_arrays(data, int(k), config, dataset.class_names())


def infer(model_or_encoder, X, k: int, seed: int = 0, y_true=None,
          n_init: int = 1) -> tuple[ClusterAssignment, MetricsReport | None]:
    """Embed, cluster with k-means, and score against ``y_true`` if given."""
    encoder = model_or_encoder.encoder if isinstance(model_or_encoder, RAPModel) else model_or_encoder
    Z = embed(encoder, np.atleast_2d(np.asarray(X, dtype=float)))
    result = kmeans(Z, k, seed=seed, n_init=n_init)
    report = None if y_true is None else evaluate(np.asarray(y_true), result.labels)
    return result, report
