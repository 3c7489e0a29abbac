import numpy as np
import pytest

from rapnid.config import TrainConfig
from rapnid.dataset import synth_mixture
from rapnid.encoder import init_classifier, init_encoder
from rapnid.prototypes import PrototypeSet
from rapnid.trainer import (
    EpochLog,
    TrainingData,
    TrainingError,
    align_clusters,
    cluster_prototypes,
    dataset_arrays,
    fit_arrays,
    infer,
    split_training_data,
    train,
    warmup,
)

SMALL = dict(epochs=4, warmup_epochs=2, embed_dim=8, batch_size=32)


@pytest.fixture(scope="module")
def small_ds():
    return synth_mixture(5, 40, 6, sep=8, labeled_fraction=0.3, known_fraction=0.6, seed=1,
                         test_fraction=0.25)


def test_split_keeps_every_row(rng):
    X_lab, y_lab = rng.normal(size=(20, 3)), rng.integers(0, 2, 20)
    X_unl = rng.normal(size=(7, 3))
    data = split_training_data(X_lab, y_lab, X_unl, 2, 0.1, rng)
    assert len(data.y_val) == 2 and len(data.X) == 25
    assert data.labeled_mask.sum() == 18 and np.all(data.y[~data.labeled_mask] == -1)


def test_warmup_zero_epochs_is_noop(rng):
    enc, cls = init_encoder(3, 4, rng), init_classifier(4, 2, rng)
    W0, V0 = enc.W.copy(), cls.V.copy()
    data = TrainingData(rng.normal(size=(10, 3)), rng.integers(0, 2, 10), np.zeros((0, 3)),
                        np.zeros(0, int), 2)
    assert warmup(data, enc, cls, TrainConfig(warmup_epochs=0), rng) == []
    assert np.array_equal(enc.W, W0) and np.array_equal(cls.V, V0)


def test_warmup_ce_non_increasing_on_separable_data():
    rng = np.random.default_rng(0)
    X = np.vstack([rng.normal(size=(40, 2)) + [4, 0], rng.normal(size=(40, 2)) - [4, 0]])
    y = np.repeat([0, 1], 40)
    data = TrainingData(X, y, np.zeros((0, 2)), np.zeros(0, int), 2)
    cfg = TrainConfig(warmup_epochs=15, embed_dim=4, batch_size=80)
    hist = warmup(data, init_encoder(2, 4, rng), init_classifier(4, 2, rng), cfg, rng)
    assert np.all(np.diff(hist) <= 1e-6)
    assert hist[-1] < hist[0]


def test_align_clusters_recovers_permutation():
    y = np.array([0, 0, 1, 1, 2, 2, -1, -1])
    clusters = np.array([2, 2, 0, 0, 1, 1, 1, 0])
    perm = align_clusters(clusters, y, 3)
    assert perm.tolist() == [1, 2, 0]


def test_cluster_prototypes_fall_back_to_centroid():
    Z = np.array([[1.0, 0.0], [0.0, 1.0]])
    cents = np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]])
    p = cluster_prototypes(Z, np.array([0, 1]), cents, 0.9)
    assert np.allclose(p.mu, cents)


def test_train_produces_logs_and_unit_prototypes(small_ds):
    model = train(small_ds, TrainConfig(**SMALL))
    assert len(model.logs) == 4 and 1 <= model.best_epoch <= 4
    assert len(model.warmup_losses) == 2
    assert np.allclose(np.linalg.norm(model.prototypes.mu, axis=1), 1.0)
    assert model.n_clusters == 5 and model.class_names[:3] == list(small_ds.task.known_classes)
    for entry in model.logs:
        assert isinstance(entry, EpochLog) and all(np.isfinite(entry.row()[1:5]))


def test_training_is_deterministic(small_ds):
    a = train(small_ds, TrainConfig(**SMALL, seed=3))
    b = train(small_ds, TrainConfig(**SMALL, seed=3))
    assert [e.row() for e in a.logs] == [e.row() for e in b.logs]
    assert np.array_equal(a.encoder.W, b.encoder.W)


def test_frozen_system_leaves_parameters_unchanged(small_ds):
    cfg = TrainConfig(**{**SMALL, "warmup_epochs": 0}, omega=0.0, momentum=1.0, learning_rate=0.0)
    data = dataset_arrays(small_ds, cfg)
    model = fit_arrays(data, 5, cfg)
    ref = fit_arrays(data, 5, cfg.replace(epochs=0))
    assert np.array_equal(model.encoder.W, ref.encoder.W)
    assert np.array_equal(model.classifier.V, ref.classifier.V)


def test_omega_zero_log_identity(small_ds):
    model = train(small_ds, TrainConfig(**SMALL, omega=0.0))
    for e in model.logs:
        assert abs(e.L_all - (e.L_a + e.L_ce)) < 1e-9


def test_k_options(small_ds):
    assert train(small_ds, TrainConfig(**SMALL, k=6)).n_clusters == 6
    est = train(small_ds, TrainConfig(**SMALL, k="estimate"))
    assert 3 <= est.n_clusters <= 10
    with pytest.raises(TrainingError):
        train(small_ds, TrainConfig(**SMALL, k=2))


def test_early_stopping(small_ds):
    model = train(small_ds, TrainConfig(**{**SMALL, "epochs": 30}, early_stop_patience=1))
    assert len(model.logs) <= 30
    assert len(model.logs) - model.best_epoch <= 1


def test_infer_k1_and_idempotence(small_ds):
    model = train(small_ds, TrainConfig(**SMALL))
    X, y = small_ds.matrix("test"), small_ds.eval_labels("test")
    res, rep = infer(model, X, 1, y_true=y)
    assert np.all(res.labels == 0)
    assert rep.acc == pytest.approx(np.bincount(np.unique(y, return_inverse=True)[1]).max() / len(y))
    a, _ = infer(model, X, 5, seed=4)
    b, _ = infer(model.encoder, X, 5, seed=4)
    assert np.array_equal(a.labels, b.labels)


def test_unlabeled_only_training(rng):
    data = TrainingData(rng.normal(size=(30, 3)), -np.ones(30, int), np.zeros((0, 3)), np.zeros(0, int), 0)
    model = fit_arrays(data, 3, TrainConfig(**SMALL))
    assert len(model.logs) >= 1 and np.isnan(model.logs[0].val_nmi)
