import numpy as np
import pytest

from ladderpoly import BatchNormParams, LadderLayer, LadderNetwork


def random_net(rng, d0, widths, intercepts=False, scale=1.0):
    layers, d_in = [], d0
    for d in widths:
        b = rng.normal(size=d) * scale if intercepts else None
        layers.append(LadderLayer(rng.normal(size=(d, d_in)) * scale, rng.normal(size=(d, d0)) * scale, b))
        d_in = d
    return LadderNetwork(tuple(layers))


def random_bn(rng, widths, eps=1e-5):
    return tuple(
        BatchNormParams(rng.normal(size=d), rng.normal(size=d), rng.normal(size=d), rng.uniform(0.5, 2.0, size=d), eps)
        for d in widths
    )


def cube_net(depth=2):
    one = np.ones((1, 1))
    return LadderNetwork(tuple(LadderLayer(one, one) for _ in range(depth)))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
