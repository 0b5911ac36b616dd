"""Polynomial analysis of ladder networks: input Jacobians, Lipschitz upper
bounds, restriction to a line as a univariate polynomial, and exact
minimization along a direction."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import LadderNetwork, forward, forward_batch
from .errors import ConfigError, PreconditionError, ShapeError

SVD_MAX_DIM = 512
POWER_TOL = 1e-12
POWER_MAX_ITER = 10_000
IMAG_TOL = 1e-8


def _require_no_bn(net: LadderNetwork, what: str):
    if net.has_bn:
        raise PreconditionError(f"{what} needs a pure polynomial network; fold batch norm first")


def _vec(x, d: int, name: str) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (d,):
        raise ShapeError(f"{name} must have shape ({d},), got {x.shape}")
    return x


def input_jacobian(net: LadderNetwork, x) -> np.ndarray:
    """Exact ``d h^L / d x`` of shape ``(d_L, d_0)``.

    Uses ``grad h^l = diag(V x) W grad h^{l-1} + diag(W h^{l-1} + b) V`` with
    ``grad h^0 = I``.  Intercepts are allowed; batch norm must be folded.
    """
    _require_no_bn(net, "input_jacobian")
    x = _vec(x, net.d_0, "x")
    h = x
    J = np.eye(net.d_0)
    for layer in net.layers:
        u = layer.w @ h
        if layer.b is not None:
            u = u + layer.b
        p = layer.v @ x
        J = p[:, None] * (layer.w @ J) + u[:, None] * layer.v
        h = u * p
    return J


def _power_norm(M: np.ndarray) -> float:
    G = M.T @ M if M.shape[0] >= M.shape[1] else M @ M.T
    rng = np.random.default_rng(0)
    q = rng.normal(size=G.shape[0])
    q /= np.linalg.norm(q)
    lam = 0.0
    for _ in range(POWER_MAX_ITER):
        z = G @ q
        nz = np.linalg.norm(z)
        if nz == 0.0:
            return 0.0
        q = z / nz
        if abs(nz - lam) <= POWER_TOL * nz:
            lam = nz
            break
        lam = nz
    return float(np.sqrt(lam))


def operator_norm(M) -> float:
    """Largest singular value (spectral norm).

    Full SVD for matrices up to 512 on a side, power iteration on the Gram
    matrix beyond that.
    """
    M = np.atleast_2d(np.asarray(M, dtype=np.float64))
    if M.size == 0:
        return 0.0
    if max(M.shape) <= SVD_MAX_DIM:
        return float(np.linalg.svd(M, compute_uv=False)[0])
    return _power_norm(M)


@dataclass
class LipschitzReport:
    radius: float
    w_norms: list
    v_norms: list

    def _prod(self, layer: int) -> float:
        return float(np.prod([a * b for a, b in zip(self.v_norms[:layer], self.w_norms[:layer])]))

    def h_bound(self, layer: int, radius: float | None = None) -> float:
        """Bound on ``||h^layer(x)||`` for ``||x|| <= radius`` (layers count from 1)."""
        r = self.radius if radius is None else radius
        return self._prod(layer) * r ** (layer + 1)

    def grad_bound(self, layer: int, radius: float | None = None) -> float:
        """Bound on the spectral norm of ``grad h^layer(x)`` for ``||x|| <= radius``."""
        r = self.radius if radius is None else radius
        return (layer + 1) * self._prod(layer) * r**layer

    @property
    def depth(self) -> int:
        return len(self.w_norms)

    def to_dict(self) -> dict:
        return {
            "radius": self.radius,
            "layers": [
                {
                    "layer": l,
                    "w_norm": self.w_norms[l - 1],
                    "v_norm": self.v_norms[l - 1],
                    "h_bound": self.h_bound(l),
                    "grad_bound": self.grad_bound(l),
                }
                for l in range(1, self.depth + 1)
            ],
            "lipschitz_bound": self.grad_bound(self.depth),
        }


def lipschitz_bounds(net: LadderNetwork, R: float) -> LipschitzReport:
    """Per-layer norm and gradient bounds on the ball ``||x|| <= R``:
    ``||h^l|| <= prod_k ||V^k|| ||W^k|| R^(l+1)`` and
    ``||grad h^l|| <= (l+1) prod_k ||V^k|| ||W^k|| R^l``."""
    if net.has_intercepts or net.has_bn:
        raise PreconditionError("Lipschitz bounds hold only for intercept-free networks without batch norm")
    if not R > 0:
        raise ConfigError("radius must be positive")
    return LipschitzReport(
        float(R),
        [operator_norm(l.w) for l in net.layers],
        [operator_norm(l.v) for l in net.layers],
    )


@dataclass
class LineCoeffs:
    """Coefficients of a vector of univariate polynomials, one row per unit,
    highest order first (``coeffs[:, j]`` multiplies ``t^(degree - j)``)."""

    coeffs: np.ndarray

    @property
    def degree(self) -> int:
        return self.coeffs.shape[1] - 1

    def evaluate(self, t) -> np.ndarray:
        """Values at ``t``; scalar ``t`` gives shape ``(d,)``, an array gives ``(len(t), d)``."""
        t = np.asarray(t, dtype=np.float64)
        out = np.zeros(t.shape + (self.coeffs.shape[0],))
        for c in self.coeffs.T:
            out = out * t[..., None] + c
        return out


def line_coeffs_all(net: LadderNetwork, x0, g) -> list[LineCoeffs]:
    """Line coefficients of every hidden layer ``h^1 .. h^L`` along ``x0 + t g``."""
    _require_no_bn(net, "line_coeffs")
    x0 = _vec(x0, net.d_0, "x0")
    g = _vec(g, net.d_0, "g")
    alpha = np.column_stack([g, x0])
    out = []
    for layer in net.layers:
        c = layer.w @ alpha
        if layer.b is not None:
            c[:, -1] += layer.b
        vg = (layer.v @ g)[:, None]
        vx = (layer.v @ x0)[:, None]
        zero = np.zeros((c.shape[0], 1))
        # t * (V g) raises every order by one; (V x0) keeps orders in place
        alpha = np.hstack([vg * c, zero]) + np.hstack([zero, vx * c])
        out.append(LineCoeffs(alpha))
    return out


def line_coeffs(net: LadderNetwork, x0, g) -> LineCoeffs:
    """Exact coefficients of ``t -> h^L(x0 + t g)``, a polynomial of degree ``L + 1``."""
    return line_coeffs_all(net, x0, g)[-1]


def companion_roots(c) -> np.ndarray:
    """Complex roots of a polynomial given highest order first, from the
    eigenvalues of its companion matrix.  Leading zeros are dropped."""
    c = np.trim_zeros(np.asarray(c, dtype=np.float64), "f")
    if c.size <= 1:
        return np.empty(0, dtype=complex)
    c = c / c[0]
    n = c.size - 1
    C = np.zeros((n, n))
    C[0, :] = -c[1:]
    C[1:, :-1] = np.eye(n - 1)
    return np.linalg.eigvals(C)


def _real_critical_points(p: np.ndarray) -> np.ndarray:
    dp = np.polyder(p)
    if not np.any(dp):
        return np.empty(0)
    roots = companion_roots(dp)
    real = roots[np.abs(roots.imag) <= IMAG_TOL * (1 + np.abs(roots.real))].real
    ddp = np.polyder(dp)
    for i, r in enumerate(real):
        slope = np.polyval(ddp, r)
        if slope != 0:
            real[i] = r - np.polyval(dp, r) / slope
    return real


def minimize_polynomial(p, lo: float, hi: float) -> tuple[float, float]:
    """Global minimum of ``p`` (highest order first) on ``[lo, hi]``."""
    if not lo <= hi:
        raise ConfigError(f"empty interval [{lo}, {hi}]")
    if not (np.isfinite(lo) and np.isfinite(hi)):
        raise ConfigError("interval must be finite")
    p = np.asarray(p, dtype=np.float64)
    cand = [lo, hi] + [r for r in _real_critical_points(p) if lo <= r <= hi]
    cand = np.array(cand)
    vals = np.polyval(p, cand)
    k = int(np.argmin(vals))
    return float(cand[k]), float(vals[k])


def minimize_along(net: LadderNetwork, x0, g, t_range) -> tuple[float, float]:
    """Minimize the scalar network output over ``x0 + t g`` for ``t`` in
    ``t_range``; returns ``(t_star, value)``."""
    if net.d_out != 1:
        raise ShapeError("minimize_along needs a scalar-output network")
    lo, hi = t_range
    coeffs = line_coeffs(net, x0, g).coeffs[0]
    return minimize_polynomial(coeffs, float(lo), float(hi))


def activation_scatter(net: LadderNetwork, X, layer: int, units) -> dict:
    """``(u_i, h_i)`` pairs of the product activation for every row of ``X``.

    ``layer`` counts from 0.  Returns ``{unit: array of shape (n, 2)}`` with
    columns ``u`` (the pre-product input) and ``h`` (the response).
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != net.d_0:
        raise ShapeError(f"X must have shape (n, {net.d_0})")
    if not 0 <= layer < net.depth:
        raise IndexError(f"layer {layer} out of range [0, {net.depth})")
    width = net.layers[layer].d_out
    units = list(units)
    for i in units:
        if not 0 <= i < width:
            raise IndexError(f"unit {i} out of range [0, {width})")
    traces = [forward(net, x)[1] for x in X]
    return {
        i: np.array([[tr.u[layer][i], tr.h[layer][i]] for tr in traces]).reshape(-1, 2) for i in units
    }


def sample_line(net: LadderNetwork, x0, g, t_values) -> np.ndarray:
    """Network outputs along the line at the given ``t``; shape ``(len(t), d_L)``."""
    x0 = _vec(x0, net.d_0, "x0")
    g = _vec(g, net.d_0, "g")
    t = np.asarray(t_values, dtype=np.float64)
    return forward_batch(net, x0[None, :] + t[:, None] * g[None, :])
