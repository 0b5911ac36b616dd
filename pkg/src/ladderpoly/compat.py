"""Exact conversions between ladder networks and classical polynomial models.

Polynomial-kernel models and second-order factorization machines become
ladder networks over the augmented input ``[x, 1]``; a homogeneous ladder
network becomes a chain of three-way tensor-train cores.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import Head, LadderLayer, LadderNetwork
from .errors import ConfigError, DataError, PreconditionError, ShapeError


@dataclass(frozen=True, eq=False)
class KernelModel:
    """``y(x) = sum_k pi_k (lam + p_k . x)^m``."""

    pi: np.ndarray
    p: np.ndarray
    lam: float
    m: int

    def __post_init__(self):
        pi = np.atleast_1d(np.asarray(self.pi, dtype=np.float64))
        p = np.atleast_2d(np.asarray(self.p, dtype=np.float64))
        if pi.ndim != 1 or p.shape[0] != pi.shape[0]:
            raise ShapeError("pi needs one weight per kernel point (rows of p)")
        if pi.shape[0] < 1:
            raise ConfigError("at least one kernel is required")
        if int(self.m) != self.m or self.m < 1:
            raise ConfigError(f"degree m must be an integer >= 1, got {self.m}")
        object.__setattr__(self, "pi", pi)
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "lam", float(self.lam))
        object.__setattr__(self, "m", int(self.m))

    @property
    def d(self) -> int:
        return self.p.shape[1]

    def predict(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        return ((self.lam + X @ self.p.T) ** self.m) @ self.pi


@dataclass(frozen=True, eq=False)
class FM2Model:
    """``y(x) = w0 + w1 . x + sum_{i<j} (v_i . v_j) x_i x_j`` with ``v_i`` the
    rows of ``factors`` (shape ``(d, r)``)."""

    w0: float
    w1: np.ndarray
    factors: np.ndarray

    def __post_init__(self):
        w1 = np.atleast_1d(np.asarray(self.w1, dtype=np.float64))
        f = np.atleast_2d(np.asarray(self.factors, dtype=np.float64))
        if f.shape[0] != w1.shape[0]:
            raise ShapeError("factors must have one row per input feature")
        if f.shape[1] < 1:
            raise ConfigError("factor rank must be at least 1")
        object.__setattr__(self, "w0", float(self.w0))
        object.__setattr__(self, "w1", w1)
        object.__setattr__(self, "factors", f)

    @property
    def d(self) -> int:
        return self.w1.shape[0]

    @property
    def rank(self) -> int:
        return self.factors.shape[1]

    def predict(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        F = self.factors
        pair = 0.5 * (((X @ F) ** 2).sum(axis=1) - (X**2) @ (F**2).sum(axis=1))
        return self.w0 + X @ self.w1 + pair


def augment(X) -> np.ndarray:
    """Append a constant 1 to every input (vector or row matrix)."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        return np.append(X, 1.0)
    return np.hstack([X, np.ones((X.shape[0], 1))])


def _unit(d: int, k: int) -> np.ndarray:
    e = np.zeros((1, d))
    e[0, k] = 1.0
    return e


def from_poly_kernel(model: KernelModel) -> LadderNetwork:
    """Ladder network over ``[x, 1]`` equal to the kernel model.

    Rows of ``Q = [P, lam]`` are the kernels.  The first layer squares each
    kernel, layers ``2 .. m-1`` (identity ``W``) multiply in one more factor,
    and a final layer gated by the constant coordinate takes the
    ``pi``-weighted sum.  The result has ``m`` layers in total.
    """
    K, d = model.p.shape
    Q = np.hstack([model.p, np.full((K, 1), model.lam)])
    gate = _unit(d + 1, d)
    if model.m == 1:
        layers = [LadderLayer(model.pi[None, :] @ Q, gate)]
    else:
        layers = [LadderLayer(Q, Q)]
        layers += [LadderLayer(np.eye(K), Q) for _ in range(model.m - 2)]
        layers.append(LadderLayer(model.pi[None, :], gate))
    return LadderNetwork(tuple(layers), head=Head.REGRESSION)


def from_fm2(model: FM2Model) -> LadderNetwork:
    """Two-layer ladder network over ``[x, 1]`` equal to the factorization machine.

    Layer 1 stacks ``r`` factor rows ``(F^T x)^2``, ``d`` identity rows
    ``x_i^2`` and one linear row ``(w0 + w1 . x) * 1``.  Layer 2 is gated by
    the constant coordinate and combines them as
    ``0.5 * sum_r (F^T x)_r^2 - 0.5 * sum_i |v_i|^2 x_i^2 + linear``.
    """
    d, r = model.factors.shape
    Ft = np.hstack([model.factors.T, np.zeros((r, 1))])
    I = np.hstack([np.eye(d), np.zeros((d, 1))])
    lin = np.append(model.w1, model.w0)[None, :]
    gate = _unit(d + 1, d)
    w1 = np.vstack([Ft, I, lin])
    v1 = np.vstack([Ft, I, gate])
    diag = (model.factors**2).sum(axis=1)
    w2 = np.concatenate([np.full(r, 0.5), -0.5 * diag, [1.0]])[None, :]
    return LadderNetwork((LadderLayer(w1, v1), LadderLayer(w2, gate)), head=Head.REGRESSION)


@dataclass(frozen=True, eq=False)
class TTCore:
    """Three-way core indexed ``(i_out, n, i_in)``."""

    g: np.ndarray

    def __post_init__(self):
        g = np.asarray(self.g, dtype=np.float64)
        if g.ndim != 3:
            raise ShapeError(f"a core must be three-way, got shape {g.shape}")
        object.__setattr__(self, "g", g)

    @property
    def shape(self) -> tuple:
        return self.g.shape

    def mode2(self, x) -> np.ndarray:
        """2-mode product with a vector: the matrix ``sum_n g[:, n, :] x_n``."""
        return np.einsum("anb,n->ab", self.g, x)


def to_tensor_train(net: LadderNetwork, output: int | None = None) -> list[TTCore]:
    """Cores ``G^0 .. G^L`` with ``G^l(i, n, j) = W^l[i, j] V^l[i, n]``.

    ``G^0`` is the identity with a trailing singleton dimension.  With
    ``output`` set, ``G^L`` keeps only that output row, giving the size-1
    leading dimension of a scalar tensor train.
    """
    if net.has_intercepts or net.has_bn:
        raise PreconditionError("tensor-train form needs an intercept-free network without batch norm")
    cores = [TTCore(np.eye(net.d_0)[:, :, None])]
    for layer in net.layers:
        cores.append(TTCore(layer.w[:, None, :] * layer.v[:, :, None]))
    if output is not None:
        if not 0 <= output < net.d_out:
            raise IndexError(f"output {output} out of range [0, {net.d_out})")
        cores[-1] = TTCore(cores[-1].g[output : output + 1])
    return cores


def tt_contract(cores, x) -> np.ndarray:
    """``prod_l (G^l x_2 x)`` evaluated right to left; returns a vector."""
    if not cores:
        raise ShapeError("empty core chain")
    x = np.asarray(x, dtype=np.float64)
    for k, c in enumerate(cores):
        if c.shape[1] != x.shape[0]:
            raise ShapeError(f"core {k} has mode-2 size {c.shape[1]}, x has length {x.shape[0]}")
        if k and c.shape[2] != cores[k - 1].shape[0]:
            raise ShapeError(f"core {k} does not chain onto core {k - 1}")
    if cores[0].shape[2] != 1:
        raise ShapeError("the first core must have a trailing dimension of 1")
    M = cores[0].mode2(x)
    for c in cores[1:]:
        M = c.mode2(x) @ M
    return M[:, 0]


def tt_to_dict(cores) -> dict:
    return {
        "format": "ladderpoly-tt",
        "version": 1,
        "cores": [{"dims": list(c.shape), "data": [float(v) for v in c.g.ravel()]} for c in cores],
    }


def tt_from_dict(doc: dict) -> list[TTCore]:
    if doc.get("format") != "ladderpoly-tt":
        raise DataError("not a ladderpoly-tt document")
    try:
        return [TTCore(np.array(c["data"], dtype=np.float64).reshape(c["dims"])) for c in doc["cores"]]
    except (KeyError, ValueError) as exc:
        raise DataError(f"malformed core container: {exc}") from exc


def save_tt(cores, path) -> None:
    Path(path).write_text(json.dumps(tt_to_dict(cores)) + "\n")


def load_tt(path) -> list[TTCore]:
    return tt_from_dict(json.loads(Path(path).read_text()))


def kernel_from_dict(doc: dict) -> KernelModel:
    try:
        return KernelModel(doc["pi"], doc["p"], doc.get("lambda", doc.get("lam", 0.0)), doc["m"])
    except KeyError as exc:
        raise DataError(f"kernel description is missing {exc}") from exc


def fm2_from_dict(doc: dict) -> FM2Model:
    try:
        return FM2Model(doc.get("w0", 0.0), doc["w1"], doc["factors"])
    except KeyError as exc:
        raise DataError(f"factorization machine description is missing {exc}") from exc
