import numpy as np
import pytest

from conftest import random_net
from ladderpoly.experiments import (
    ProductApproxConfig,
    TanhNet,
    fit_tanh,
    output_distribution_check,
    product_target,
    relu_target,
    run_product_approx,
)


def test_targets_have_unit_mean_abs():
    X = np.random.default_rng(0).uniform(-1, 1, size=(200_000, 2))
    assert np.mean(np.abs(product_target(X))) == pytest.approx(1.0, abs=0.01)
    assert np.mean(np.abs(relu_target(X))) == pytest.approx(1.0, rel=1e-12)


def test_tanh_gradients_match_finite_differences():
    rng = np.random.default_rng(1)
    net = TanhNet.init(2, 3, rng)
    net.b1 = rng.normal(size=3)
    X, y = rng.normal(size=(7, 2)), rng.normal(size=7)
    params = [p.copy() for p in net.params()]
    grads = net.grads(X, y)

    def mse(ps):
        n = TanhNet(*params)
        n.set_params(ps)
        return np.mean((n.predict(X) - y) ** 2)

    for k, p in enumerate(params):
        for idx in np.ndindex(p.shape):
            up = [q.copy() for q in params]
            dn = [q.copy() for q in params]
            up[k][idx] += 1e-6
            dn[k][idx] -= 1e-6
            fd = (mse(up) - mse(dn)) / 2e-6
            assert grads[k][idx] == pytest.approx(fd, rel=1e-5, abs=1e-8)


def test_fit_tanh_reduces_error():
    rng = np.random.default_rng(2)
    X = rng.uniform(-1, 1, size=(300, 2))
    y = np.tanh(X[:, 0] - X[:, 1])
    net = fit_tanh(X, y, 2, rng, epochs=50, lr=0.01)
    assert np.sqrt(np.mean((net.predict(X) - y) ** 2)) < 0.1


def test_report_structure_and_determinism():
    cfg = ProductApproxConfig(hidden_units=(1, 2), runs=2, n=100, epochs=3)
    a = run_product_approx(cfg)
    assert sorted(a.rmse) == [("product", 1), ("product", 2), ("relu", 1), ("relu", 2)]
    assert all(len(v) == 2 for v in a.rmse.values())
    assert a.to_csv() == run_product_approx(cfg).to_csv()
    assert a.to_csv().splitlines()[0] == "target,hidden,mean_rmse,std_rmse,runs"


def test_output_distribution_check_fields():
    net = random_net(np.random.default_rng(3), 3, [4, 1])
    chk = output_distribution_check(net, np.ones(3), 0.05, n=2000, seed=0, bins=20)
    assert chk.hist.shape == (20, 3) and chk.hist[:, 2].sum() == 2000
    assert chk.mean_z < 4 and chk.var_z < 4


def test_output_distribution_check_degenerate():
    net = random_net(np.random.default_rng(3), 3, [4, 1])
    chk = output_distribution_check(net, np.ones(3), 0.0, n=500)
    assert chk.var == 0 and chk.ks == 0 and chk.hist.shape == (1, 3)
    assert chk.hist[0, 0] == chk.mu
