"""Reference experiments: how well a one-hidden-layer tanh network fits a
product of two inputs compared with a ReLU ridge, and the Monte-Carlo check
of the Gaussian output approximation."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .bayes import GaussianWeightPrior, histogram, ks_to_gaussian, mc_outputs, moments
from .train import ADAM_BETA1, ADAM_BETA2, ADAM_EPS


@dataclass
class TanhNet:
    """``y = w . tanh(W x + b1) + b2``; a plain feedforward baseline, not a
    ladder network."""

    W: np.ndarray
    b1: np.ndarray
    w: np.ndarray
    b2: float

    @classmethod
    def init(cls, d_in: int, hidden: int, rng: np.random.Generator) -> "TanhNet":
        return cls(
            rng.normal(0.0, 1.0, size=(hidden, d_in)),
            np.zeros(hidden),
            rng.normal(0.0, 1.0 / np.sqrt(hidden), size=hidden),
            0.0,
        )

    def predict(self, X) -> np.ndarray:
        return np.tanh(X @ self.W.T + self.b1) @ self.w + self.b2

    def params(self) -> list:
        return [self.W, self.b1, self.w, np.array([self.b2])]

    def grads(self, X, y) -> list:
        a = np.tanh(X @ self.W.T + self.b1)
        r = a @ self.w + self.b2 - y
        dr = 2.0 * r / r.size
        dw = a.T @ dr
        db2 = dr.sum()
        dz = np.outer(dr, self.w) * (1.0 - a**2)
        return [dz.T @ X, dz.sum(axis=0), dw, np.array([db2])]

    def set_params(self, p) -> None:
        self.W, self.b1, self.w, self.b2 = p[0], p[1], p[2], float(p[3][0])


def fit_tanh(
    X, y, hidden: int, rng: np.random.Generator, *, epochs: int = 200, lr: float = 0.01, batch_size: int | None = None
) -> TanhNet:
    """Adam on mean squared error.  ``batch_size=None`` means full batch."""
    net = TanhNet.init(X.shape[1], hidden, rng)
    params = net.params()
    m = [np.zeros_like(p) for p in params]
    v = [np.zeros_like(p) for p in params]
    n = X.shape[0]
    bs = n if batch_size is None else batch_size
    t = 0
    for _ in range(epochs):
        order = rng.permutation(n) if bs < n else np.arange(n)
        for s in range(0, n, bs):
            idx = order[s : s + bs]
            g = net.grads(X[idx], y[idx])
            t += 1
            for k in range(len(params)):
                m[k] = ADAM_BETA1 * m[k] + (1 - ADAM_BETA1) * g[k]
                v[k] = ADAM_BETA2 * v[k] + (1 - ADAM_BETA2) * g[k] ** 2
                mh = m[k] / (1 - ADAM_BETA1**t)
                vh = v[k] / (1 - ADAM_BETA2**t)
                params[k] = params[k] - lr * mh / (np.sqrt(vh) + ADAM_EPS)
            net.set_params(params)
    return net


def product_target(X) -> np.ndarray:
    """``4 x1 x2``; on the uniform square its mean absolute value is 1."""
    return 4.0 * X[:, 0] * X[:, 1]


def relu_target(X) -> np.ndarray:
    """``relu(0.5 x1 + 1.5 x2) / C`` with ``C`` the sample mean absolute value."""
    r = np.maximum(0.5 * X[:, 0] + 1.5 * X[:, 1], 0.0)
    return r / np.mean(np.abs(r))


TARGETS = {"product": product_target, "relu": relu_target}


@dataclass
class ProductApproxConfig:
    hidden_units: tuple = (1, 2, 3, 4)
    targets: tuple = ("product", "relu")
    runs: int = 10
    n: int = 1000
    epochs: int = 200
    learning_rate: float = 0.01
    batch_size: int | None = 16
    seed: int = 0


@dataclass
class ProductApproxReport:
    config: ProductApproxConfig
    rmse: dict = field(default_factory=dict)  # (target, hidden) -> list of run RMSEs

    def cell(self, target: str, hidden: int) -> tuple[float, float]:
        r = np.asarray(self.rmse[(target, hidden)])
        return float(r.mean()), float(r.std())

    def to_csv(self) -> str:
        lines = ["target,hidden,mean_rmse,std_rmse,runs"]
        for (target, hidden), r in sorted(self.rmse.items()):
            mean, std = self.cell(target, hidden)
            lines.append(f"{target},{hidden},{mean!r},{std!r},{len(r)}")
        return "\n".join(lines) + "\n"


def run_product_approx(config: ProductApproxConfig = ProductApproxConfig()) -> ProductApproxReport:
    """Fit each target with 1..4 tanh units, ``runs`` times per cell.

    Inputs are uniform on ``[-1, 1]^2``.  Each run draws its own training and
    evaluation samples from a seed derived from ``(seed, target, hidden, run)``
    and reports RMSE on the evaluation sample.
    """
    report = ProductApproxReport(config)
    for ti, target in enumerate(config.targets):
        f = TARGETS[target]
        for hidden in config.hidden_units:
            scores = []
            for run in range(config.runs):
                rng = np.random.default_rng([config.seed, ti, hidden, run])
                X = rng.uniform(-1.0, 1.0, size=(config.n, 2))
                Xe = rng.uniform(-1.0, 1.0, size=(config.n, 2))
                net = fit_tanh(
                    X, f(X), hidden, rng, epochs=config.epochs, lr=config.learning_rate, batch_size=config.batch_size
                )
                scores.append(float(np.sqrt(np.mean((net.predict(Xe) - f(Xe)) ** 2))))
            report.rmse[(target, hidden)] = scores
    return report


@dataclass
class OutputDistributionCheck:
    sigma2: float
    mu: float
    var: float
    mc_mean: float
    mc_var: float
    mean_se: float
    var_se: float
    ks: float
    hist: np.ndarray

    @property
    def mean_z(self) -> float:
        return abs(self.mu - self.mc_mean) / self.mean_se if self.mean_se > 0 else float(self.mu != self.mc_mean) * np.inf

    @property
    def var_z(self) -> float:
        return abs(self.var - self.mc_var) / self.var_se if self.var_se > 0 else float(self.var != self.mc_var) * np.inf


def output_distribution_check(net, x, sigma2: float, n: int = 10_000, seed: int = 0, bins: int = 50):
    """Compare analytic output moments of ``N(net, sigma2 I)`` weights with
    ``n`` Monte-Carlo samples at input ``x`` (scalar-output networks)."""
    prior = GaussianWeightPrior.isotropic(net, sigma2)
    m = moments(prior, x)
    s = mc_outputs(prior, x, n, seed)[:, 0]
    mu, var = float(m.mu[0]), float(m.var[0])
    c = s - s.mean()
    mc_var = float(np.mean(c**2))
    m4 = float(np.mean(c**4))
    return OutputDistributionCheck(
        sigma2=sigma2,
        mu=mu,
        var=var,
        mc_mean=float(s.mean()),
        mc_var=mc_var,
        mean_se=float(s.std(ddof=1) / np.sqrt(n)),
        var_se=float(np.sqrt(max(m4 - mc_var**2, 0.0) / n)),
        ks=ks_to_gaussian(s, mu, var),
        hist=histogram(s, bins),
    )
