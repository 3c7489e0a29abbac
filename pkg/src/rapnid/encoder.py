"""Single-layer normalized encoder and linear classifier head.

The encoder maps ``x -> z = u / ||u||`` with ``u = tanh(W x + b)``. Both
``forward`` and ``backward`` accept a single vector or a batch of row
vectors.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEGENERATE_NORM = 1e-12


class DegenerateEmbeddingError(ArithmeticError):
    """The pre-normalization activation vanished, so z is undefined."""


@dataclass
class EncoderHead:
    W: np.ndarray
    b: np.ndarray

    @property
    def in_dim(self) -> int:
        return self.W.shape[1]

    @property
    def out_dim(self) -> int:
        return self.W.shape[0]

    def copy(self) -> EncoderHead:
        return EncoderHead(self.W.copy(), self.b.copy())


@dataclass
class ClassifierHead:
    V: np.ndarray
    c: np.ndarray

    def copy(self) -> ClassifierHead:
        return ClassifierHead(self.V.copy(), self.c.copy())


@dataclass
class ParamGradients:
    """Gradients for encoder and classifier parameters; absent parts are None."""

    dW: np.ndarray | None = None
    db: np.ndarray | None = None
    dV: np.ndarray | None = None
    dc: np.ndarray | None = None

    _FIELDS = ("dW", "db", "dV", "dc")

    def __add__(self, other: ParamGradients) -> ParamGradients:
        out = {}
        for name in self._FIELDS:
            a, b = getattr(self, name), getattr(other, name)
            out[name] = b if a is None else a if b is None else a + b
        return ParamGradients(**out)

    def __mul__(self, scale: float) -> ParamGradients:
        return ParamGradients(
            **{n: None if getattr(self, n) is None else scale * getattr(self, n) for n in self._FIELDS}
        )

    __rmul__ = __mul__

    def arrays(self):
        return [g for g in (getattr(self, n) for n in self._FIELDS) if g is not None]


@dataclass
class ForwardCache:
    x: np.ndarray
    u: np.ndarray
    norm: np.ndarray
    z: np.ndarray
    single: bool


def init_encoder(in_dim: int, out_dim: int, rng: np.random.Generator) -> EncoderHead:
    bound = 1.0 / np.sqrt(in_dim)
    return EncoderHead(
        W=rng.uniform(-bound, bound, size=(out_dim, in_dim)),
        b=rng.uniform(-bound, bound, size=out_dim),
    )


def init_classifier(in_dim: int, n_classes: int, rng: np.random.Generator) -> ClassifierHead:
    bound = 1.0 / np.sqrt(in_dim)
    return ClassifierHead(
        V=rng.uniform(-bound, bound, size=(n_classes, in_dim)),
        c=rng.uniform(-bound, bound, size=n_classes),
    )


def forward(head: EncoderHead, x) -> tuple[np.ndarray, ForwardCache]:
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = x[None, :] if single else x
    u = np.tanh(X @ head.W.T + head.b)
    norm = np.linalg.norm(u, axis=1, keepdims=True)
    if np.any(norm < DEGENERATE_NORM):
        raise DegenerateEmbeddingError("pre-normalization activation has near-zero norm")
    z = u / norm
    cache = ForwardCache(X, u, norm, z, single)
    return (z[0] if single else z), cache


def embed(head: EncoderHead, X) -> np.ndarray:
    return forward(head, X)[0]


def backward(head: EncoderHead, cache: ForwardCache, dL_dz) -> tuple[ParamGradients, np.ndarray]:
    """Backpropagate ``dL/dz`` through normalization, tanh, and the affine map.

    Returns encoder gradients (``dW``, ``db``) and ``dL/dx``.
    """
    G = np.asarray(dL_dz, dtype=float)
    if cache.single:
        G = G[None, :]
    z = cache.z
    # (I - z z^T) / ||u|| projects out the radial component
    du = (G - z * np.sum(z * G, axis=1, keepdims=True)) / cache.norm
    da = du * (1.0 - cache.u**2)
    grads = ParamGradients(dW=da.T @ cache.x, db=da.sum(axis=0))
    dx = da @ head.W
    return grads, (dx[0] if cache.single else dx)


def classify(cls: ClassifierHead, z) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    return z @ cls.V.T + cls.c
