"""Output moments of a ladder network whose weights are independent Gaussians.

Because the network is multilinear in its weight matrices, the output mean is
the output of the mean network.  The raw second moment follows the recursion

    Sigma^l_ij = (x^T E[V_i^T V_j] x) * tr(E[W_i^T W_j] Sigma^{l-1}),
    Sigma^0    = x x^T,

where ``V_i`` and ``W_i`` are rows.  With independent entries,
``E[A_i^T A_j] = mean_i^T mean_j + [i == j] diag(var_i)``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats

from .core import LadderNetwork, forward
from .errors import ConfigError, PreconditionError, ShapeError

MC_BLOCK = 4096


@dataclass(frozen=True, eq=False)
class GaussianWeightPrior:
    """Independent ``N(mean, var)`` entries for every ``W^l`` and ``V^l``."""

    mean: LadderNetwork
    var_w: tuple
    var_v: tuple

    def __post_init__(self):
        if self.mean.has_intercepts or self.mean.has_bn:
            raise PreconditionError("weight priors are defined for intercept-free networks without batch norm")
        var_w = tuple(np.array(a, dtype=np.float64) for a in self.var_w)
        var_v = tuple(np.array(a, dtype=np.float64) for a in self.var_v)
        if len(var_w) != self.mean.depth or len(var_v) != self.mean.depth:
            raise ShapeError("one variance array per layer is required for W and V")
        for layer, vw, vv in zip(self.mean.layers, var_w, var_v):
            if vw.shape != layer.w.shape or vv.shape != layer.v.shape:
                raise ShapeError("variance arrays must match the weight shapes")
            if np.any(vw < 0) or np.any(vv < 0) or not (np.all(np.isfinite(vw)) and np.all(np.isfinite(vv))):
                raise ConfigError("variances must be finite and nonnegative")
        object.__setattr__(self, "var_w", var_w)
        object.__setattr__(self, "var_v", var_v)

    @classmethod
    def isotropic(cls, mean: LadderNetwork, sigma2: float) -> "GaussianWeightPrior":
        """Every entry gets the same variance ``sigma2`` around ``mean``."""
        return cls(
            mean,
            tuple(np.full(l.w.shape, float(sigma2)) for l in mean.layers),
            tuple(np.full(l.v.shape, float(sigma2)) for l in mean.layers),
        )

    @property
    def is_deterministic(self) -> bool:
        return not any(np.any(a) for a in self.var_w + self.var_v)


@dataclass
class MomentResult:
    mu: np.ndarray
    sigma2: np.ndarray

    @property
    def cov(self) -> np.ndarray:
        return self.sigma2 - np.outer(self.mu, self.mu)

    @property
    def var(self) -> np.ndarray:
        return np.maximum(np.diag(self.cov), 0.0)


def _x(prior: GaussianWeightPrior, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (prior.mean.d_0,):
        raise ShapeError(f"x must have shape ({prior.mean.d_0},), got {x.shape}")
    return x


def output_mean(prior: GaussianWeightPrior, x) -> np.ndarray:
    return forward(prior.mean, _x(prior, x))[0]


def second_moment(prior: GaussianWeightPrior, x) -> np.ndarray:
    """Exact ``E[h^L (h^L)^T]`` under the prior."""
    x = _x(prior, x)
    S = np.outer(x, x)
    for layer, vw, vv in zip(prior.mean.layers, prior.var_w, prior.var_v):
        a = layer.v @ x
        xv = a[:, None] * a[None, :] + np.diag(vv @ (x * x))
        ws = layer.w @ S @ layer.w.T + np.diag(vw @ np.diag(S))
        S = xv * ws
        S = 0.5 * (S + S.T)
    return S


def moments(prior: GaussianWeightPrior, x) -> MomentResult:
    mu = output_mean(prior, x)
    if prior.is_deterministic:
        # E[hh^T] is exactly mu mu^T; skip the recursion and its roundoff
        return MomentResult(mu, np.outer(mu, mu))
    return MomentResult(mu, second_moment(prior, x))


class BinaryPredictive:
    """``P(y = 1 | x)`` for ``y = 1[h^L > 0]`` under the Gaussian approximation."""

    def __init__(self, mu: float, var: float):
        self.mu = float(mu)
        self.var = max(float(var), 0.0)

    @property
    def p1(self) -> float:
        if self.var == 0.0:
            return 0.5 if self.mu == 0 else float(self.mu > 0)
        return float(stats.norm.cdf(self.mu / np.sqrt(self.var)))


def gaussian_predictive(prior: GaussianWeightPrior, x, task: str = "regression", noise_var: float = 0.0):
    """Moment-matched predictive distribution.

    ``regression`` returns a frozen ``scipy.stats.norm`` (scalar output) or
    ``multivariate_normal`` with covariance ``cov + noise_var I``;
    ``binary`` returns a :class:`BinaryPredictive`.
    """
    m = moments(prior, x)
    if task == "binary":
        if m.mu.shape[0] != 1:
            raise ConfigError("binary predictive needs a single output unit")
        return BinaryPredictive(m.mu[0], m.var[0])
    if task != "regression":
        raise ConfigError(f"unknown task {task!r}")
    if noise_var < 0:
        raise ConfigError("noise_var must be nonnegative")
    if m.mu.shape[0] == 1:
        return stats.norm(loc=m.mu[0], scale=np.sqrt(m.var[0] + noise_var))
    cov = m.cov
    cov = 0.5 * (cov + cov.T) + noise_var * np.eye(cov.shape[0])
    return stats.multivariate_normal(mean=m.mu, cov=cov, allow_singular=True)


def _sample_block(prior: GaussianWeightPrior, x: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    h = np.broadcast_to(x, (n, x.shape[0]))
    for layer, vw, vv in zip(prior.mean.layers, prior.var_w, prior.var_v):
        W = layer.w + np.sqrt(vw) * rng.standard_normal((n,) + layer.w.shape)
        V = layer.v + np.sqrt(vv) * rng.standard_normal((n,) + layer.v.shape)
        # same elementwise-then-sum reduction as the forward pass
        h = (W * h[:, None, :]).sum(axis=-1) * (V * x).sum(axis=-1)
    return h


def mc_outputs(prior: GaussianWeightPrior, x, n: int, seed: int = 0) -> np.ndarray:
    """``n`` samples of ``h^L`` with weights drawn entrywise from the prior.

    Samples are generated in fixed blocks of 4096, each from its own child of
    ``SeedSequence(seed)``, so sample ``i`` depends only on ``(seed, i)``.
    """
    if n < 1:
        raise ConfigError("n must be at least 1")
    x = _x(prior, x)
    n_blocks = -(-n // MC_BLOCK)
    children = np.random.SeedSequence(seed).spawn(n_blocks)
    out = []
    for b, child in enumerate(children):
        size = min(MC_BLOCK, n - b * MC_BLOCK)
        # Draw a full block so sample i is the same whatever n is.
        out.append(_sample_block(prior, x, MC_BLOCK, np.random.default_rng(child))[:size])
    return np.concatenate(out)


def histogram(samples, bins: int = 50):
    """``(left, right, count)`` rows of a histogram; a degenerate sample set
    collapses to a single zero-width bin."""
    s = np.asarray(samples, dtype=np.float64).ravel()
    lo, hi = float(s.min()), float(s.max())
    if lo == hi:
        return np.array([[lo, hi, s.size]], dtype=np.float64)
    counts, edges = np.histogram(s, bins=bins)
    return np.column_stack([edges[:-1], edges[1:], counts])


def ks_to_gaussian(samples, mu: float, var: float) -> float:
    """Kolmogorov-Smirnov distance between samples and ``N(mu, var)``."""
    s = np.asarray(samples, dtype=np.float64).ravel()
    if var <= 0:
        return float(np.mean(s != mu))
    return float(stats.kstest(s, "norm", args=(mu, np.sqrt(var))).statistic)
