"""JSON checkpoint container for trained models.

Layout (``version`` 1)::

    {
      "format": "rapnid-checkpoint",
      "version": 1,
      "seed": int,
      "input_dim": int,
      "n_clusters": int,
      "best_epoch": int,
      "class_names": [str, ...],
      "config": {TrainConfig fields},
      "encoder": {"W": [[float]], "b": [float]},
      "classifier": {"V": [[float]], "c": [float]},
      "prototypes": {"mu": [[float]], "momentum": float, "trainable": bool}
    }

Floats are written with ``repr`` precision, so a save/load round trip is
exact.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .config import TrainConfig
from .encoder import ClassifierHead, EncoderHead
from .prototypes import PrototypeSet
from .trainer import RAPModel

FORMAT = "rapnid-checkpoint"
VERSION = 1
DEFAULT_NAME = "ckpt"


class CheckpointError(ValueError):
    pass


def to_dict(model: RAPModel) -> dict:
    return {
        "format": FORMAT,
        "version": VERSION,
        "seed": model.config.seed,
        "input_dim": model.encoder.in_dim,
        "n_clusters": model.n_clusters,
        "best_epoch": model.best_epoch,
        "class_names": list(model.class_names),
        "config": model.config.to_dict(),
        "encoder": {"W": model.encoder.W.tolist(), "b": model.encoder.b.tolist()},
        "classifier": {"V": model.classifier.V.tolist(), "c": model.classifier.c.tolist()},
        "prototypes": {
            "mu": model.prototypes.mu.tolist(),
            "momentum": model.prototypes.momentum,
            "trainable": model.prototypes.trainable,
        },
    }


def from_dict(data: dict) -> RAPModel:
    if data.get("format") != FORMAT:
        raise CheckpointError("not a rapnid checkpoint")
    if data.get("version") != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {data.get('version')!r}")
    try:
        config = TrainConfig.from_mapping(data["config"])
        encoder = EncoderHead(np.array(data["encoder"]["W"], dtype=float),
                              np.array(data["encoder"]["b"], dtype=float))
        classifier = ClassifierHead(np.array(data["classifier"]["V"], dtype=float),
                                    np.array(data["classifier"]["c"], dtype=float))
        p = data["prototypes"]
        protos = PrototypeSet(np.array(p["mu"], dtype=float), p["momentum"], p["trainable"])
        model = RAPModel(encoder, classifier, protos, config, int(data["n_clusters"]),
                         list(data["class_names"]), best_epoch=int(data["best_epoch"]))
    except (KeyError, TypeError) as exc:
        raise CheckpointError(f"malformed checkpoint: missing or bad field {exc}") from None
    if encoder.in_dim != data["input_dim"]:
        raise CheckpointError("encoder shape disagrees with input_dim")
    return model


def resolve_path(path) -> Path:
    path = Path(path)
    return path / DEFAULT_NAME if path.is_dir() else path


def save(model: RAPModel, path) -> Path:
    path = Path(path)
    if path.is_dir():
        path = path / DEFAULT_NAME
    path.write_text(json.dumps(to_dict(model)))
    return path


def load(path) -> RAPModel:
    path = resolve_path(path)
    try:
        data = json.loads(path.read_text())
    except FileNotFoundError:
        raise CheckpointError(f"checkpoint not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path}: not valid JSON ({exc.msg})") from None
    return from_dict(data)
