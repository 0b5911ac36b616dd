"""Parameter containers and the forward pass of a ladder polynomial network.

Every layer multiplies an affine image of the previous hidden layer with a
linear image of the raw network input::

    h^0 = x
    u^l = W^l h^{l-1} + b^l
    h^l = u^l * (V^l x)

so a network with ``L`` layers and no intercepts is a homogeneous polynomial of
degree ``L + 1`` in ``x``.  When batch normalization is attached, it acts on
the hidden responses ``h^1 .. h^{L-1}`` before they are consumed by the next
layer.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError, NumericError, ShapeError, StateError

__all__ = [
    "Head",
    "LadderLayer",
    "BatchNormParams",
    "LadderNetwork",
    "ActivationTrace",
    "layer_forward",
    "forward",
    "forward_batch",
    "predict",
    "init_network",
    "geometric_widths",
]


class Head(str, enum.Enum):
    RAW = "raw"
    REGRESSION = "scalar-regression"
    BINARY = "binary-logit"
    MULTICLASS = "k-class-logits"


def _frozen(a, name: str, ndim: int) -> np.ndarray:
    arr = np.array(a, dtype=np.float64)
    if arr.ndim != ndim:
        raise ShapeError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"{name} contains non-finite entries")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class LadderLayer:
    """One ladder layer: weight pair ``(w, v)`` and an optional intercept ``b``.

    ``w`` has shape ``(d_out, d_in)`` and consumes the previous hidden layer;
    ``v`` has shape ``(d_out, d_0)`` and always consumes the raw input.
    """

    w: np.ndarray
    v: np.ndarray
    b: Optional[np.ndarray] = None

    def __post_init__(self):
        object.__setattr__(self, "w", _frozen(self.w, "w", 2))
        object.__setattr__(self, "v", _frozen(self.v, "v", 2))
        if self.w.shape[0] != self.v.shape[0]:
            raise ShapeError(
                f"w and v must have the same number of rows, got {self.w.shape} and {self.v.shape}"
            )
        if self.b is not None:
            object.__setattr__(self, "b", _frozen(self.b, "b", 1))
            if self.b.shape[0] != self.w.shape[0]:
                raise ShapeError(f"b has length {self.b.shape[0]}, expected {self.w.shape[0]}")

    @property
    def d_out(self) -> int:
        return self.w.shape[0]

    @property
    def d_in(self) -> int:
        return self.w.shape[1]

    @property
    def d_0(self) -> int:
        return self.v.shape[1]

    def with_params(self, **changes) -> "LadderLayer":
        return replace(self, **changes)


@dataclass(frozen=True, eq=False)
class BatchNormParams:
    """Frozen batch-norm affine map ``gamma * (h - mu) / (sigma + eps) + beta``.

    The divisor is ``sigma + eps`` and not ``sqrt(var + eps)``; the folding
    equations in :mod:`ladderpoly.train` depend on this form.
    """

    gamma: np.ndarray
    beta: np.ndarray
    mu: np.ndarray
    sigma: np.ndarray
    eps: float = 1e-5

    def __post_init__(self):
        for name in ("gamma", "beta", "mu", "sigma"):
            object.__setattr__(self, name, _frozen(getattr(self, name), name, 1))
        n = self.gamma.shape[0]
        if any(getattr(self, k).shape[0] != n for k in ("beta", "mu", "sigma")):
            raise ShapeError("gamma, beta, mu and sigma must share one length")
        if np.any(self.sigma < 0):
            raise ConfigError("sigma must be nonnegative")
        if not self.eps >= 0:
            raise ConfigError("eps must be nonnegative")
        if np.any(self.sigma + self.eps <= 0):
            raise ConfigError("sigma + eps must be positive")

    @property
    def width(self) -> int:
        return self.gamma.shape[0]

    @classmethod
    def identity(cls, width: int, eps: float = 1e-5) -> "BatchNormParams":
        return cls(np.ones(width), np.zeros(width), np.zeros(width), np.ones(width), eps)

    def apply(self, h: np.ndarray) -> np.ndarray:
        return self.gamma * (h - self.mu) / (self.sigma + self.eps) + self.beta


@dataclass(frozen=True, eq=False)
class LadderNetwork:
    """An ordered stack of ladder layers.

    ``bn`` is either ``None`` or one entry per hidden layer (``L - 1`` entries);
    an entry may itself be ``None`` to skip normalization after that layer.
    The network output is ``h^L``; the head only decides how the output is
    interpreted by losses and :func:`predict`.
    """

    layers: tuple
    head: Head = Head.RAW
    bn: Optional[tuple] = None
    dropout_rate: float = 0.0

    def __post_init__(self):
        layers = tuple(self.layers)
        if not layers:
            raise ShapeError("a network needs at least one layer")
        object.__setattr__(self, "layers", layers)
        object.__setattr__(self, "head", Head(self.head))
        d_0 = layers[0].d_0
        if layers[0].d_in != d_0:
            raise ShapeError(f"first layer consumes {layers[0].d_in} inputs, but v has {d_0} columns")
        for i, (prev, cur) in enumerate(zip(layers, layers[1:]), start=1):
            if cur.d_0 != d_0:
                raise ShapeError(f"layer {i} v has {cur.d_0} columns, expected d_0={d_0}")
            if cur.d_in != prev.d_out:
                raise ShapeError(f"layer {i} consumes {cur.d_in} units, previous layer has {prev.d_out}")
        if self.bn is not None:
            bn = tuple(self.bn)
            if len(bn) != len(layers) - 1:
                raise ShapeError(f"expected {len(layers) - 1} batch-norm entries, got {len(bn)}")
            for i, p in enumerate(bn):
                if p is not None and p.width != layers[i].d_out:
                    raise ShapeError(f"batch-norm {i} has width {p.width}, layer has {layers[i].d_out}")
            object.__setattr__(self, "bn", bn if any(p is not None for p in bn) else None)
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(f"dropout_rate must lie in [0, 1), got {self.dropout_rate}")

    @property
    def d_0(self) -> int:
        return self.layers[0].d_0

    @property
    def depth(self) -> int:
        return len(self.layers)

    @property
    def d_out(self) -> int:
        return self.layers[-1].d_out

    @property
    def widths(self) -> list[int]:
        return [layer.d_out for layer in self.layers]

    @property
    def has_intercepts(self) -> bool:
        return any(layer.b is not None for layer in self.layers)

    @property
    def has_bn(self) -> bool:
        return self.bn is not None

    @property
    def is_homogeneous(self) -> bool:
        """True when the network is a pure homogeneous polynomial in ``x``."""
        return not self.has_intercepts and not self.has_bn

    def bn_at(self, i: int) -> Optional[BatchNormParams]:
        if self.bn is None or i >= len(self.bn):
            return None
        return self.bn[i]

    def replace_layer(self, i: int, **changes) -> "LadderNetwork":
        layers = list(self.layers)
        layers[i] = layers[i].with_params(**changes)
        return replace(self, layers=tuple(layers))

    def replace(self, **changes) -> "LadderNetwork":
        return replace(self, **changes)


@dataclass
class ActivationTrace:
    """Per-layer pre-product inputs ``u`` and post-product responses ``h``."""

    u: list = field(default_factory=list)
    h: list = field(default_factory=list)


def _check_input(x, d: int, name: str = "x") -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (d,):
        raise ShapeError(f"{name} must have shape ({d},), got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise NumericError(f"{name} contains non-finite entries")
    return x


def layer_forward(layer: LadderLayer, h_prev, x) -> np.ndarray:
    """Return ``(W h_prev + b) * (V x)`` for a single sample."""
    h_prev = _check_input(h_prev, layer.d_in, "h_prev")
    x = _check_input(x, layer.d_0)
    u = _rowdot(h_prev[None, :], layer.w)[0]
    if layer.b is not None:
        u = u + layer.b
    return u * _rowdot(x[None, :], layer.v)[0]


def _rowdot(H: np.ndarray, M: np.ndarray) -> np.ndarray:
    # Each output entry is reduced on its own row, so results never depend on
    # how many rows are processed together (BLAS gemm/gemv do not promise this).
    return np.multiply(H[:, None, :], M[None, :, :]).sum(axis=-1)


def _run(net: LadderNetwork, X: np.ndarray, keep_trace: bool):
    us, hs = [], []
    h = X
    for i, layer in enumerate(net.layers):
        u = _rowdot(h, layer.w)
        if layer.b is not None:
            u = u + layer.b
        h = u * _rowdot(X, layer.v)
        if keep_trace:
            us.append(u)
            hs.append(h)
        bn = net.bn_at(i)
        if bn is not None:
            h = bn.apply(h)
    return h, us, hs


def forward(net: LadderNetwork, x, bn_mode: str = "infer"):
    """Evaluate the network on one input vector.

    Returns ``(output, trace)`` where ``output`` is ``h^L`` and ``trace`` holds
    ``u^l`` and ``h^l`` for every layer.  Batch norm always uses its frozen
    statistics here; a single sample cannot supply batch statistics.
    """
    if bn_mode != "infer":
        if net.has_bn:
            raise StateError("batch-norm training mode needs a batch; use the training forward pass")
        if bn_mode != "train":
            raise ConfigError(f"unknown bn_mode {bn_mode!r}")
    x = _check_input(x, net.d_0)
    out, us, hs = _run(net, x[None, :], keep_trace=True)
    trace = ActivationTrace(u=[u[0] for u in us], h=[h[0] for h in hs])
    return out[0], trace


def forward_batch(net: LadderNetwork, X) -> np.ndarray:
    """Row-wise :func:`forward` on an ``(n, d_0)`` matrix, returning ``(n, d_L)``."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != net.d_0:
        raise ShapeError(f"X must have shape (n, {net.d_0}), got {X.shape}")
    if not np.all(np.isfinite(X)):
        raise NumericError("X contains non-finite entries")
    if X.shape[0] == 0:
        return np.empty((0, net.d_out))
    chunk = max(1, 2**22 // max(1, max(l.d_out * max(l.d_in, l.d_0) for l in net.layers)))
    return np.concatenate(
        [_run(net, X[i : i + chunk], keep_trace=False)[0] for i in range(0, X.shape[0], chunk)]
    )


def predict(net: LadderNetwork, X) -> np.ndarray:
    """Apply the head's link to the network output.

    Regression heads return ``h^L``; the binary head returns ``P(y=1)``; the
    multiclass head returns softmax probabilities.
    """
    out = forward_batch(net, X)
    if net.head is Head.BINARY:
        return 0.5 * (1.0 + np.tanh(0.5 * out[:, 0]))
    if net.head is Head.MULTICLASS:
        z = out - out.max(axis=1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=1, keepdims=True)
    return out


def geometric_widths(d_in: int, d_out: int, n_hidden: int, alpha: float) -> list[int]:
    """Hidden widths ``round(alpha^l (d_in - d_out) + d_out)`` for ``l = 1..n_hidden``,
    shrinking from the input dimension toward the output dimension."""
    if not 0.0 < alpha < 1.0:
        raise ConfigError("alpha must lie in (0, 1)")
    return [max(1, int(round(alpha**l * (d_in - d_out) + d_out))) for l in range(1, n_hidden + 1)]


def init_network(
    d_0: int,
    widths: Sequence[int],
    rng: np.random.Generator,
    *,
    intercepts: bool = False,
    batch_norm: bool = False,
    head: Head = Head.RAW,
    dropout_rate: float = 0.0,
    scale: float = 1.0,
    bn_eps: float = 1e-5,
    gate_column: Optional[int] = None,
    gate_bias: float = 1.0,
) -> LadderNetwork:
    """Random network with ``W`` entries ~ N(0, scale^2/fan_in) and ``V`` entries
    ~ N(0, scale^2/d_0), which keeps each layer's output O(1) on standardized
    inputs.  Intercepts start at zero; batch norm starts as the identity.

    ``gate_column`` names an input coordinate that is constantly 1 (an
    appended bias feature).  Adding ``gate_bias`` to that column of every
    ``V`` starts each gate ``V x`` near a positive constant, so every layer
    begins close to a linear map.  With zero-mean gates the final gate's zero
    set usually cuts through the data, and training tends to stall there.
    """
    if not widths:
        raise ConfigError("widths must list at least the output layer")
    if gate_column is not None and not 0 <= gate_column < d_0:
        raise ConfigError(f"gate_column {gate_column} out of range [0, {d_0})")
    layers = []
    d_in = d_0
    for d in widths:
        w = rng.normal(0.0, scale / np.sqrt(d_in), size=(d, d_in))
        v = rng.normal(0.0, scale / np.sqrt(d_0), size=(d, d_0))
        if gate_column is not None:
            v[:, gate_column] += gate_bias
        layers.append(LadderLayer(w, v, np.zeros(d) if intercepts else None))
        d_in = d
    bn = None
    if batch_norm and len(widths) > 1:
        bn = tuple(BatchNormParams.identity(d, bn_eps) for d in widths[:-1])
    return LadderNetwork(tuple(layers), head=head, bn=bn, dropout_rate=dropout_rate)
