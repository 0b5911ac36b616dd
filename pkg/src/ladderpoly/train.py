"""Losses, exact backpropagation through product activations, optimizers,
batch normalization, dropout and folding batch norm back into the weights."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .core import BatchNormParams, Head, LadderLayer, LadderNetwork, _rowdot, forward_batch
from .errors import ConfigError, NumericError, ShapeError, StateError

log = logging.getLogger(__name__)

LOSS_KINDS = ("mse", "logistic", "softmax_ce")
ADAM_BETA1, ADAM_BETA2, ADAM_EPS = 0.9, 0.999, 1e-8


def loss_kind_for(head: Head) -> str:
    return {
        Head.RAW: "mse",
        Head.REGRESSION: "mse",
        Head.BINARY: "logistic",
        Head.MULTICLASS: "softmax_ce",
    }[Head(head)]


# ---------------------------------------------------------------- losses


def _softplus(z):
    return np.logaddexp(0.0, z)


def _prepare_targets(Y, n: int, d_out: int, kind: str) -> np.ndarray:
    Y = np.asarray(Y)
    if kind == "mse":
        Y = np.asarray(Y, dtype=np.float64).reshape(n, -1) if Y.size == n * d_out else None
        if Y is None or Y.shape[1] != d_out:
            raise ShapeError(f"mse targets must hold {d_out} values per sample")
        if not np.all(np.isfinite(Y)):
            raise NumericError("targets contain non-finite entries")
        return Y
    if kind == "logistic":
        if d_out != 1:
            raise ShapeError("logistic loss needs a single output unit")
        Y = Y.reshape(-1)
        if Y.shape[0] != n or not np.all((Y == 0) | (Y == 1)):
            raise ConfigError("logistic targets must be 0/1 labels, one per sample")
        return Y.astype(np.float64)
    if kind == "softmax_ce":
        Y = Y.reshape(-1)
        if Y.shape[0] != n:
            raise ShapeError("softmax targets must be one class index per sample")
        if not np.all(Y == np.round(Y)):
            raise ConfigError("class indices must be integers")
        Y = Y.astype(np.int64)
        if np.any(Y < 0) or np.any(Y >= d_out):
            raise ConfigError(f"class index out of range [0, {d_out})")
        return Y
    raise ConfigError(f"unknown loss kind {kind!r}; expected one of {LOSS_KINDS}")


def _loss_and_dpred(P: np.ndarray, Y: np.ndarray, kind: str):
    """Mean loss over the batch and its gradient w.r.t. the predictions."""
    n = P.shape[0]
    if kind == "mse":
        r = P - Y
        return float(np.mean(r**2)), 2.0 * r / r.size
    if kind == "logistic":
        z = P[:, 0]
        per = _softplus(z) - Y * z
        sig = 0.5 * (1.0 + np.tanh(0.5 * z))
        return float(per.mean()), ((sig - Y) / n)[:, None]
    z = P - P.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    per = lse - z[np.arange(n), Y]
    prob = np.exp(z - lse[:, None])
    prob[np.arange(n), Y] -= 1.0
    return float(per.mean()), prob / n


def loss(pred, target, kind: str) -> float:
    """Loss of one prediction vector.

    ``mse`` is the mean squared error over the outputs, ``logistic`` takes a
    single logit and a 0/1 label, ``softmax_ce`` takes logits and a class index.
    """
    pred = np.asarray(pred, dtype=np.float64).reshape(1, -1)
    Y = _prepare_targets(np.asarray(target).reshape(1, -1), 1, pred.shape[1], kind)
    return _loss_and_dpred(pred, Y, kind)[0]


# ------------------------------------------------------------ parameters


def get_params(net: LadderNetwork) -> list[np.ndarray]:
    """Writable copies of every trainable array, in a fixed order:
    ``w, v, [b]`` for each layer, then ``gamma, beta`` for each batch norm."""
    out = []
    for layer in net.layers:
        out += [layer.w.copy(), layer.v.copy()]
        if layer.b is not None:
            out.append(layer.b.copy())
    for p in net.bn or ():
        if p is not None:
            out += [p.gamma.copy(), p.beta.copy()]
    return out


def set_params(net: LadderNetwork, params, bn_stats=None) -> LadderNetwork:
    """Inverse of :func:`get_params`; ``bn_stats`` optionally replaces the
    running ``(mu, sigma)`` of each batch norm."""
    it = iter(params)
    layers = []
    for layer in net.layers:
        w, v = next(it), next(it)
        b = next(it) if layer.b is not None else None
        layers.append(LadderLayer(w, v, b))
    bn = None
    if net.bn is not None:
        bn = []
        for i, p in enumerate(net.bn):
            if p is None:
                bn.append(None)
                continue
            gamma, beta = next(it), next(it)
            mu, sigma = (p.mu, p.sigma) if bn_stats is None else bn_stats[i]
            bn.append(BatchNormParams(gamma, beta, mu, sigma, p.eps))
        bn = tuple(bn)
    return replace(net, layers=tuple(layers), bn=bn)


@dataclass
class Gradients:
    """Loss gradient for every parameter; ``None`` where a parameter is absent."""

    w: list
    v: list
    b: list
    gamma: list = field(default_factory=list)
    beta: list = field(default_factory=list)

    def as_list(self) -> list[np.ndarray]:
        out = []
        for w, v, b in zip(self.w, self.v, self.b):
            out += [w, v]
            if b is not None:
                out.append(b)
        for g, be in zip(self.gamma, self.beta):
            if g is not None:
                out += [g, be]
        return out


# ------------------------------------------------------- batch norm, dropout


def bn_forward(batch_h, params: BatchNormParams, mode: str = "infer", momentum: float = 0.9):
    """Normalize a batch of hidden responses.

    Returns ``(output, params)``.  In ``train`` mode the batch mean and
    (population) standard deviation are used and the returned params carry
    running statistics updated as ``momentum * running + (1 - momentum) * batch``.
    In ``infer`` mode the stored statistics are used and params come back
    unchanged.
    """
    H = np.asarray(batch_h, dtype=np.float64)
    if H.ndim != 2 or H.shape[1] != params.width:
        raise ShapeError(f"batch must have shape (n, {params.width}), got {H.shape}")
    if mode == "infer":
        return params.apply(H), params
    if mode != "train":
        raise ConfigError(f"unknown batch-norm mode {mode!r}")
    if H.shape[0] < 2:
        raise ConfigError("batch-norm training mode needs a batch of at least 2 rows")
    mu = H.mean(axis=0)
    sigma = H.std(axis=0)
    out = params.gamma * (H - mu) / (sigma + params.eps) + params.beta
    updated = replace(
        params,
        mu=momentum * params.mu + (1.0 - momentum) * mu,
        sigma=momentum * params.sigma + (1.0 - momentum) * sigma,
    )
    return out, updated


def dropout_mask(shape, rate: float, rng: np.random.Generator) -> np.ndarray:
    """Inverted-dropout mask: entries are 0 with probability ``rate`` and
    ``1 / (1 - rate)`` otherwise."""
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout rate must lie in [0, 1), got {rate}")
    if rate == 0.0:
        return np.ones(shape)
    keep = rng.random(shape) >= rate
    return keep / (1.0 - rate)


def dropout_apply(h, rate: float, rng: Optional[np.random.Generator] = None, training: bool = True):
    h = np.asarray(h, dtype=np.float64)
    if not training or rate == 0.0:
        return h.copy()
    if rng is None:
        raise ConfigError("training-mode dropout needs a random generator")
    return h * dropout_mask(h.shape, rate, rng)


def fold_bn(next_layer: LadderLayer, bn: BatchNormParams) -> LadderLayer:
    """Absorb a frozen batch norm into the W-branch of the layer consuming it.

    With ``s = gamma / (sigma + eps)`` the folded layer has
    ``W = W' diag(s)`` and ``b = W' (beta - s * mu) + b'``.
    """
    if next_layer.d_in != bn.width:
        raise ShapeError(f"layer consumes {next_layer.d_in} units, batch norm has {bn.width}")
    s = bn.gamma / (bn.sigma + bn.eps)
    w = next_layer.w * s[None, :]
    b = next_layer.w @ (bn.beta - s * bn.mu)
    if next_layer.b is not None:
        b = b + next_layer.b
    return LadderLayer(w, next_layer.v, b)


def fold_network(net: LadderNetwork) -> LadderNetwork:
    """Equivalent network with every batch norm folded away."""
    if net.bn is None:
        return net
    layers = list(net.layers)
    for i, p in enumerate(net.bn):
        if p is not None:
            layers[i + 1] = fold_bn(layers[i + 1], p)
    return replace(net, layers=tuple(layers), bn=None)


# ------------------------------------------------------- forward / backward


def _forward_cache(net, X, bn_mode, masks, momentum=0.9):
    cache = []
    h = X
    new_stats = []
    for i, layer in enumerate(net.layers):
        u = _rowdot(h, layer.w)
        if layer.b is not None:
            u = u + layer.b
        p = _rowdot(X, layer.v)
        out = u * p
        entry = {"h_in": h, "u": u, "p": p}
        bn = net.bn_at(i)
        stats = None
        if bn is not None and i < len(net.layers) - 1:
            if bn_mode == "train":
                if X.shape[0] < 2:
                    raise StateError("batch-norm training mode needs a batch of at least 2 rows")
                mu = out.mean(axis=0)
                sigma = out.std(axis=0)
                stats = (
                    momentum * bn.mu + (1.0 - momentum) * mu,
                    momentum * bn.sigma + (1.0 - momentum) * sigma,
                )
            else:
                mu, sigma = bn.mu, bn.sigma
            s = sigma + bn.eps
            zhat = (out - mu) / s
            entry.update(bn=bn, c=out - mu, s=s, sigma=sigma, zhat=zhat)
            out = bn.gamma * (out - mu) / s + bn.beta
        new_stats.append(stats)
        if masks is not None and i < len(net.layers) - 1 and masks[i] is not None:
            entry["mask"] = masks[i]
            out = out * masks[i]
        cache.append(entry)
        h = out
    return h, cache, new_stats


def loss_and_grad(net: LadderNetwork, X, Y, kind: str, *, bn_mode: str = "infer", masks=None):
    """Mean loss over a batch and its exact gradient for every parameter.

    ``masks`` optionally fixes one dropout mask per hidden layer.  In
    ``bn_mode="train"`` batch statistics are used and differentiated through.
    Returns ``(loss, Gradients, running_stats)`` where ``running_stats`` holds
    the updated ``(mu, sigma)`` per batch norm (``None`` in infer mode).
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != net.d_0:
        raise ShapeError(f"X must have shape (n, {net.d_0}), got {X.shape}")
    if bn_mode not in ("train", "infer"):
        raise ConfigError(f"unknown bn_mode {bn_mode!r}")
    n = X.shape[0]
    Yp = _prepare_targets(Y, n, net.d_out, kind)
    P, cache, stats = _forward_cache(net, X, bn_mode, masks)
    value, d = _loss_and_dpred(P, Yp, kind)

    L = len(net.layers)
    gw, gv, gb = [None] * L, [None] * L, [None] * L
    ggamma = [None] * len(net.bn or ())
    gbeta = [None] * len(net.bn or ())
    for i in reversed(range(L)):
        e = cache[i]
        layer = net.layers[i]
        if "mask" in e:
            d = d * e["mask"]
        if "bn" in e:
            bn = e["bn"]
            ggamma[i] = (d * e["zhat"]).sum(axis=0)
            gbeta[i] = d.sum(axis=0)
            dz = d * bn.gamma
            s = e["s"]
            if bn_mode == "train":
                dh = dz / s - dz.mean(axis=0) / s
                sigma = e["sigma"]
                safe = np.where(sigma > 0, sigma, 1.0)
                coef = np.where(sigma > 0, (dz * e["c"]).sum(axis=0) / (s**2 * n * safe), 0.0)
                dh = dh - coef * e["c"]
            else:
                dh = dz / s
            d = dh
        du = d * e["p"]
        dp = d * e["u"]
        gw[i] = du.T @ e["h_in"]
        gv[i] = dp.T @ X
        if layer.b is not None:
            gb[i] = du.sum(axis=0)
        d = du @ layer.w
    grads = Gradients(gw, gv, gb, ggamma, gbeta)
    return value, grads, stats


def grad_params(net: LadderNetwork, x, target, kind: str, masks=None) -> Gradients:
    """Gradient of the single-sample loss; batch norm uses its frozen statistics."""
    x = np.asarray(x, dtype=np.float64).reshape(1, -1)
    target = np.asarray(target).reshape(1, -1)
    if masks is not None:
        masks = [None if m is None else np.asarray(m).reshape(1, -1) for m in masks]
    return loss_and_grad(net, x, target, kind, bn_mode="infer", masks=masks)[1]


def dataset_loss(net: LadderNetwork, X, Y, kind: Optional[str] = None) -> float:
    kind = kind or loss_kind_for(net.head)
    X = np.asarray(X, dtype=np.float64)
    Yp = _prepare_targets(Y, X.shape[0], net.d_out, kind)
    return _loss_and_dpred(forward_batch(net, X), Yp, kind)[0]


# -------------------------------------------------------------- optimizers


@dataclass
class TrainConfig:
    optimizer: str = "adam"
    learning_rate: float = 1e-3
    epochs: int = 200
    batch_size: int = 32
    l2_weight: float = 0.0
    dropout_rate: float = 0.0
    bn_enabled: bool = False
    seed: int = 0
    bn_momentum: float = 0.9
    bn_eps: float = 1e-5
    restore_best: bool = False  # return the epoch with the lowest validation loss

    def __post_init__(self):
        if self.optimizer not in ("sgd", "adam"):
            raise ConfigError(f"optimizer must be 'sgd' or 'adam', got {self.optimizer!r}")
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be positive")
        if self.epochs < 0:
            raise ConfigError("epochs must be nonnegative")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be at least 1")
        if not self.l2_weight >= 0:
            raise ConfigError("l2_weight must be nonnegative")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError("dropout_rate must lie in [0, 1)")
        if not 0.0 <= self.bn_momentum < 1.0:
            raise ConfigError("bn_momentum must lie in [0, 1)")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")


@dataclass
class OptimizerState:
    step: int = 0
    m: Optional[list] = None
    v: Optional[list] = None


def optimizer_step(params, grads, state: OptimizerState, config: TrainConfig):
    """One update; L2 decay enters as ``g + l2 * theta`` for both optimizers.
    Returns ``(new_params, new_state)``; inputs are not modified."""
    lr, l2 = config.learning_rate, config.l2_weight
    g = [gi + l2 * p if l2 else gi for p, gi in zip(params, grads)]
    if config.optimizer == "sgd":
        return [p - lr * gi for p, gi in zip(params, g)], OptimizerState(state.step + 1)
    m = state.m if state.m is not None else [np.zeros_like(p) for p in params]
    v = state.v if state.v is not None else [np.zeros_like(p) for p in params]
    t = state.step + 1
    m = [ADAM_BETA1 * mi + (1 - ADAM_BETA1) * gi for mi, gi in zip(m, g)]
    v = [ADAM_BETA2 * vi + (1 - ADAM_BETA2) * gi * gi for vi, gi in zip(v, g)]
    c1 = 1 - ADAM_BETA1**t
    c2 = 1 - ADAM_BETA2**t
    new = [p - lr * (mi / c1) / (np.sqrt(vi / c2) + ADAM_EPS) for p, mi, vi in zip(params, m, v)]
    return new, OptimizerState(t, m, v)


# ----------------------------------------------------------------- training


@dataclass
class TrainResult:
    net: LadderNetwork
    history: list  # (epoch, train_loss, val_loss)

    def history_csv(self) -> str:
        lines = ["epoch,train_loss,val_loss"]
        lines += [f"{e},{tr!r},{va!r}" for e, tr, va in self.history]
        return "\n".join(lines) + "\n"


def _xy(data):
    if data is None:
        return None, None
    if hasattr(data, "features"):
        return np.asarray(data.features, dtype=np.float64), np.asarray(data.targets)
    X, Y = data
    return np.asarray(X, dtype=np.float64), np.asarray(Y)


def train_model(net: LadderNetwork, dataset, config: TrainConfig, val=None) -> TrainResult:
    """Minibatch training with a fixed seed.

    ``dataset`` and ``val`` are :class:`ladderpoly.dataio.Dataset` objects or
    ``(X, Y)`` tuples.  The history records the loss of the inference-mode
    network on the training and validation sets after every epoch (epoch 0 is
    the initial network).  With ``restore_best`` and a validation set the
    returned network is the one from the epoch with the lowest validation loss.
    Raises :class:`NumericError` on a non-finite loss.
    """
    # overflow is reported through NumericError, not numpy warnings
    with np.errstate(over="ignore", invalid="ignore"):
        return _train(net, dataset, config, val)


def _train(net: LadderNetwork, dataset, config: TrainConfig, val) -> TrainResult:
    X, Y = _xy(dataset)
    Xv, Yv = _xy(val)
    if X.shape[0] == 0:
        raise ConfigError("training set is empty")
    kind = loss_kind_for(net.head)
    if config.bn_enabled and net.bn is None and net.depth > 1:
        net = replace(net, bn=tuple(BatchNormParams.identity(d, config.bn_eps) for d in net.widths[:-1]))
    net = replace(net, dropout_rate=config.dropout_rate)
    bn_mode = "train" if (config.bn_enabled and net.bn is not None) else "infer"

    def record(epoch, cur):
        tr = dataset_loss(cur, X, Y, kind)
        va = dataset_loss(cur, Xv, Yv, kind) if Xv is not None else float("nan")
        if not math.isfinite(tr):
            raise NumericError(f"non-finite training loss after epoch {epoch}; try batch norm or a smaller learning rate")
        return (epoch, tr, va)

    history = [record(0, net)]
    if config.epochs == 0:
        return TrainResult(net, history)
    best_val, best_net = history[0][2], net

    rng = np.random.default_rng(config.seed)
    params = get_params(net)
    state = OptimizerState()
    n = X.shape[0]
    bs = min(config.batch_size, n)
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n)
        for start in range(0, n, bs):
            idx = order[start : start + bs]
            if bn_mode == "train" and idx.shape[0] < 2:
                continue
            masks = None
            if config.dropout_rate > 0:
                masks = [dropout_mask((idx.shape[0], d), config.dropout_rate, rng) for d in net.widths[:-1]]
            value, grads, stats = loss_and_grad(net, X[idx], Y[idx], kind, bn_mode=bn_mode, masks=masks)
            if not math.isfinite(value):
                raise NumericError(
                    f"non-finite loss at epoch {epoch}, batch starting {start}; "
                    "the network may be unstable without batch norm"
                )
            params, state = optimizer_step(params, grads.as_list(), state, config)
            if not all(np.all(np.isfinite(p)) for p in params):
                raise NumericError(f"parameters diverged at epoch {epoch}")
            net = set_params(net, params, stats if bn_mode == "train" else None)
        history.append(record(epoch, net))
        log.debug("epoch %d train %.6g val %.6g", *history[-1])
        if history[-1][2] < best_val:
            best_val, best_net = history[-1][2], net
    if config.restore_best and Xv is not None:
        net = best_net
    return TrainResult(net, history)
