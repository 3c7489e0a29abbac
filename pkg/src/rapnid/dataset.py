"""Feature-vector datasets for new-category discovery.

A dataset has three splits: ``labeled`` samples carry a known-class label,
``unlabeled`` samples may carry a hidden ``eval_label`` that only metrics
read, and ``test`` samples carry their ground-truth label.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

SPLITS = ("labeled", "unlabeled", "test")


class DatasetError(ValueError):
    """Raised for malformed or inconsistent dataset input."""


@dataclass(frozen=True)
class Sample:
    id: str
    features: np.ndarray
    label: str | None = None
    eval_label: str | None = None

    @property
    def truth(self) -> str | None:
        """Ground-truth class, whichever field holds it."""
        return self.label if self.label is not None else self.eval_label

    def __eq__(self, other):
        if not isinstance(other, Sample):
            return NotImplemented
        return (
            self.id == other.id
            and self.label == other.label
            and self.eval_label == other.eval_label
            and np.array_equal(self.features, other.features)
        )

    __hash__ = None


@dataclass(frozen=True)
class TaskSpec:
    known_classes: tuple[str, ...]
    total_classes: int

    def __post_init__(self):
        known = tuple(sorted(set(self.known_classes)))
        object.__setattr__(self, "known_classes", known)
        if self.total_classes < 1:
            raise DatasetError("total_classes must be positive")
        if len(known) > self.total_classes:
            raise DatasetError(
                f"{len(known)} known classes exceed total_classes={self.total_classes}"
            )

    @property
    def novel_class_count(self) -> int:
        return self.total_classes - len(self.known_classes)

    @property
    def n_known(self) -> int:
        return len(self.known_classes)


@dataclass
class Dataset:
    labeled: list[Sample]
    unlabeled: list[Sample]
    test: list[Sample]
    task: TaskSpec
    dim: int = field(init=False)

    def __post_init__(self):
        samples = self.labeled + self.unlabeled + self.test
        if not samples:
            raise DatasetError("dataset is empty")
        self.dim = samples[0].features.shape[0]
        seen: set[str] = set()
        known = set(self.task.known_classes)
        for split in SPLITS:
            for s in getattr(self, split):
                if s.features.shape != (self.dim,):
                    raise DatasetError(
                        f"sample {s.id!r}: dimension {s.features.shape[0]} != {self.dim}"
                    )
                if not np.all(np.isfinite(s.features)):
                    raise DatasetError(f"sample {s.id!r}: non-finite feature")
                if s.id in seen:
                    raise DatasetError(f"duplicate id {s.id!r}")
                seen.add(s.id)
        for s in self.labeled:
            if s.label is None:
                raise DatasetError(f"labeled sample {s.id!r} has no label")
            if s.label not in known:
                raise DatasetError(
                    f"labeled sample {s.id!r} has label {s.label!r} outside the known classes"
                )

    @property
    def n_labeled(self) -> int:
        return len(self.labeled)

    @property
    def n_unlabeled(self) -> int:
        return len(self.unlabeled)

    def matrix(self, split: str) -> np.ndarray:
        rows = getattr(self, split)
        if not rows:
            return np.empty((0, self.dim))
        return np.stack([s.features for s in rows])

    def class_names(self) -> list[str]:
        """Known classes (sorted) followed by any other observed classes (sorted).

        The position in this list is the dense integer index of a class.
        """
        known = list(self.task.known_classes)
        others = sorted(
            {
                s.truth
                for split in SPLITS
                for s in getattr(self, split)
                if s.truth is not None and s.truth not in self.task.known_classes
            }
        )
        return known + others

    def eval_labels(self, split: str) -> np.ndarray | None:
        """Integer ground truth for a split, or None if any sample lacks it."""
        index = {name: i for i, name in enumerate(self.class_names())}
        truths = [s.truth for s in getattr(self, split)]
        if not truths or any(t is None for t in truths):
            return None
        return np.array([index[t] for t in truths], dtype=int)

    def fingerprint(self) -> str:
        import hashlib

        return hashlib.sha256(dumps_jsonl(self).encode()).hexdigest()


def mean_pool(tokens) -> np.ndarray:
    """Average token-level vectors into one sentence-level vector."""
    rows = np.asarray(tokens, dtype=float)
    if rows.ndim != 2 or rows.shape[0] == 0:
        raise DatasetError("token matrix needs at least one row of equal-length vectors")
    return rows.mean(axis=0)


def _parse_record(rec: dict, lineno: int) -> tuple[str, Sample]:
    if not isinstance(rec, dict):
        raise DatasetError(f"line {lineno}: record must be a JSON object")
    if "id" not in rec:
        raise DatasetError(f"line {lineno}: missing 'id'")
    split = rec.get("split")
    if split not in SPLITS:
        raise DatasetError(f"line {lineno}: split must be one of {SPLITS}, got {split!r}")
    try:
        if "features" in rec:
            feats = np.asarray(rec["features"], dtype=np.float64)
            if feats.ndim != 1:
                raise ValueError("features must be a flat list")
        elif "tokens" in rec:
            feats = mean_pool(rec["tokens"])
        else:
            raise ValueError("record needs 'features' or 'tokens'")
    except (ValueError, TypeError, DatasetError) as exc:
        raise DatasetError(f"line {lineno}: {exc}") from None
    if feats.size == 0:
        raise DatasetError(f"line {lineno}: empty feature vector")
    if not np.all(np.isfinite(feats)):
        raise DatasetError(f"line {lineno}: non-finite feature value")
    label = rec.get("label")
    eval_label = rec.get("eval_label")
    if split == "unlabeled" and label is not None:
        raise DatasetError(f"line {lineno}: unlabeled record carries a 'label'")
    if split != "unlabeled" and label is None:
        raise DatasetError(f"line {lineno}: {split} record needs a 'label'")
    sample = Sample(
        id=str(rec["id"]),
        features=feats,
        label=None if label is None else str(label),
        eval_label=None if eval_label is None else str(eval_label),
    )
    return split, sample


def load_jsonl(path) -> Dataset:
    """Read a dataset from JSON Lines.

    The first line may be a header ``{"task": {"known_classes": [...],
    "total_classes": C}}``. Without one, the known classes are the labels
    seen in the labeled split and C counts every distinct class observed.
    """
    text = Path(path).read_text()
    splits: dict[str, list[Sample]] = {s: [] for s in SPLITS}
    task_obj = None
    dim = None
    ids: set[str] = set()
    n_records = 0
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DatasetError(f"line {lineno}: malformed JSON ({exc.msg})") from None
        if isinstance(rec, dict) and "task" in rec:
            if n_records or task_obj is not None:
                raise DatasetError(f"line {lineno}: task header must be the first line")
            task_obj = rec["task"]
            continue
        split, sample = _parse_record(rec, lineno)
        n_records += 1
        if dim is None:
            dim = sample.features.shape[0]
        elif sample.features.shape[0] != dim:
            raise DatasetError(
                f"line {lineno}: dimension mismatch ({sample.features.shape[0]} != {dim})"
            )
        if sample.id in ids:
            raise DatasetError(f"line {lineno}: duplicate id {sample.id!r}")
        ids.add(sample.id)
        splits[split].append(sample)
    if n_records == 0:
        raise DatasetError(f"{path}: empty dataset")

    if task_obj is None:
        known = sorted({s.label for s in splits["labeled"]})
        every = {s.truth for ss in splits.values() for s in ss if s.truth is not None}
        task = TaskSpec(tuple(known), max(len(every), len(known), 1))
    else:
        try:
            task = TaskSpec(
                tuple(str(c) for c in task_obj["known_classes"]),
                int(task_obj["total_classes"]),
            )
        except (KeyError, TypeError) as exc:
            raise DatasetError(f"line 1: bad task header ({exc})") from None
    known = set(task.known_classes)
    for s in splits["labeled"]:
        if s.label not in known:
            raise DatasetError(f"sample {s.id!r}: label {s.label!r} outside the known classes")
    return Dataset(splits["labeled"], splits["unlabeled"], splits["test"], task)


def dumps_jsonl(ds: Dataset) -> str:
    header = {"task": {"known_classes": list(ds.task.known_classes), "total_classes": ds.task.total_classes}}
    lines = [json.dumps(header)]
    for split in SPLITS:
        for s in getattr(ds, split):
            rec = {"id": s.id, "features": [float(v) for v in s.features], "split": split}
            if s.label is not None:
                rec["label"] = s.label
            if s.eval_label is not None:
                rec["eval_label"] = s.eval_label
            lines.append(json.dumps(rec))
    return "\n".join(lines) + "\n"


def write_jsonl(ds: Dataset, path) -> None:
    Path(path).write_text(dumps_jsonl(ds))


def _place_centers(k, d, sep, rng):
    # Rejection-sample centers, widening the spread whenever placement stalls.
    scale = 1.5 * sep / math.sqrt(2 * d)
    centers = []
    misses = 0
    while len(centers) < k:
        cand = rng.normal(0.0, scale, size=d)
        if all(np.linalg.norm(cand - c) >= sep for c in centers):
            centers.append(cand)
            misses = 0
        else:
            misses += 1
            if misses > 200:
                scale *= 1.1
                misses = 0
    return np.array(centers)


def synth_mixture(
    k: int,
    n_per_class: int,
    d: int,
    sep: float = 6.0,
    sigma: float = 1.0,
    labeled_fraction: float = 0.1,
    known_fraction: float = 0.75,
    seed: int = 0,
    test_fraction: float = 0.0,
) -> Dataset:
    """Isotropic Gaussian clusters with pairwise center distance >= ``sep``.

    Classes are named ``c00, c01, ...``. ``round(known_fraction * k)`` of them,
    chosen at random, are known. Per class, ``round(test_fraction * n)``
    samples go to the test split; of the remaining known-class samples,
    ``round(labeled_fraction * n)`` are labeled and everything else is
    unlabeled with its class kept in ``eval_label``.
    """
    if k < 2:
        raise DatasetError("k must be >= 2")
    if n_per_class < 1:
        raise DatasetError("n_per_class must be >= 1")
    if d < 1:
        raise DatasetError("d must be >= 1")
    if sep <= 0 or sigma <= 0:
        raise DatasetError("sep and sigma must be positive")
    for name, frac in [("labeled_fraction", labeled_fraction), ("known_fraction", known_fraction),
                       ("test_fraction", test_fraction)]:
        if not 0.0 <= frac <= 1.0:
            raise DatasetError(f"{name} must lie in [0, 1]")
    n_known = int(round(known_fraction * k))
    if n_known == 0:
        raise DatasetError("known_fraction yields no known classes")

    rng = np.random.default_rng(seed)
    width = len(str(k - 1))
    names = [f"c{i:0{max(width, 2)}d}" for i in range(k)]
    centers = _place_centers(k, d, sep, rng)
    known = sorted(rng.choice(k, size=n_known, replace=False).tolist())
    known_set = set(known)

    labeled, unlabeled, test = [], [], []
    n_test = int(round(test_fraction * n_per_class))
    for c in range(k):
        pts = centers[c] + sigma * rng.normal(size=(n_per_class, d))
        order = rng.permutation(n_per_class)
        n_lab = int(round(labeled_fraction * (n_per_class - n_test))) if c in known_set else 0
        for rank, i in enumerate(order):
            sid = f"{names[c]}-{i:05d}"
            if rank < n_test:
                test.append(Sample(sid, pts[i], label=names[c]))
            elif rank < n_test + n_lab:
                labeled.append(Sample(sid, pts[i], label=names[c]))
            else:
                unlabeled.append(Sample(sid, pts[i], eval_label=names[c]))
    task = TaskSpec(tuple(names[c] for c in known), k)
    return Dataset(labeled, unlabeled, test, task)
