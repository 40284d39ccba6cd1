import numpy as np
import pytest

from patchmomentum.distribution import ExperimentConfig, sample_dataset


def tiny_config(**kw):
    base = dict(d=4, P=2, m=2, N=3, mu=0.5, sigma=0.8, T=0)
    base.update(kw)
    return ExperimentConfig(**base)


def fd_gradient(fun, W, h=1e-5):
    """Central finite differences of a scalar function of a matrix."""
    grad = np.zeros_like(W)
    for idx in np.ndindex(W.shape):
        Wp, Wm = W.copy(), W.copy()
        Wp[idx] += h
        Wm[idx] -= h
        grad[idx] = (fun(Wp) - fun(Wm)) / (2 * h)
    return grad


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_dataset():
    cfg = ExperimentConfig(d=6, P=3, m=3, N=40, mu=0.3, T=0, seed=3)
    return cfg, sample_dataset(cfg)
