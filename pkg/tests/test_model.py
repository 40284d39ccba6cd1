import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from patchmomentum import model
from patchmomentum.distribution import Dataset, ExperimentConfig, make_wstar, sample_dataset

from conftest import fd_gradient, tiny_config


class TestForward:
    def test_zero_weights(self):
        X = np.random.default_rng(0).normal(size=(3, 4))
        assert model.forward(np.zeros((2, 4)), X) == 0.0

    def test_hand_example(self):
        # <(1,2),(3,4)> = 11, 11**3 = 1331
        assert model.forward(np.array([[1.0, 2.0]]), np.array([[3.0, 4.0]])) == 1331.0

    def test_batch_matches_single(self, small_dataset):
        _, ds = small_dataset
        W = np.random.default_rng(0).normal(size=(3, 6))
        batch = model.forward(W, ds.X)
        for i in range(5):
            assert batch[i] == pytest.approx(model.forward(W, ds.X[i]), rel=1e-13)

    def test_shape_mismatch(self):
        with pytest.raises(model.InvalidInputError):
            model.forward(np.zeros((2, 3)), np.zeros((2, 4)))

    @settings(max_examples=100, deadline=None)
    @given(c=st.floats(-3, 3), seed=st.integers(0, 2**32 - 1))
    def test_cubic_homogeneity(self, c, seed):
        rng = np.random.default_rng(seed)
        W = rng.normal(size=(3, 5))
        X = rng.normal(size=(4, 5))
        assert model.forward(c * W, X) == pytest.approx(c ** 3 * model.forward(W, X), rel=1e-10, abs=1e-12)


class TestLoss:
    def test_zero_weights_log2(self, small_dataset):
        _, ds = small_dataset
        rep = model.loss(np.zeros((3, 6)), ds)
        assert rep.total == pytest.approx(math.log(2), rel=1e-15)
        np.testing.assert_allclose(rep.per_sample_derivative, 0.5)

    def test_saturated_margins_zero_loss(self):
        cfg = tiny_config(P=1)
        ds = sample_dataset(cfg)
        W = np.zeros((2, 4))
        W[:, 0] = 50.0 * 1.0
        assert model.loss(W, ds).total < 1e-100

    def test_ridge_term(self):
        ds = sample_dataset(tiny_config(m=1))
        assert model.loss(np.zeros((1, 4)), ds, lam=2.0).reg_term == 0.0
        W = np.zeros((1, 4))
        W[0, 0] = 1.0
        rep = model.loss(W, ds, lam=2.0)
        assert rep.reg_term == 1.0
        assert rep.total == rep.data_term + rep.reg_term

    def test_empty_dataset(self):
        ds = sample_dataset(tiny_config())
        with pytest.raises(model.InvalidInputError):
            model.loss(np.zeros((2, 4)), ds.subset(np.array([], dtype=int)))

    def test_reordering_invariance(self, rng):
        ds = sample_dataset(ExperimentConfig(d=10, P=3, m=3, N=2000, mu=0.2, T=0))
        W = rng.normal(0, 0.5, size=(3, 10))
        a = model.loss(W, ds).total
        b = model.loss(W, ds.subset(rng.permutation(ds.N))).total
        assert abs(a - b) <= 1e-12 * abs(a)

    def test_stable_at_large_margins(self):
        # S(-700) rounds to exactly 1.0 in float64; the upper bound is closed
        # there, the lower bound stays strict.
        x = np.array([-700.0, -50.0, 0.0, 50.0, 700.0])
        ell = model.neg_sigmoid(x)
        assert np.all((ell > 0) & (ell <= 1))
        assert np.all(np.isfinite(model.log_loss(x)))
        assert model.log_loss(np.array([-700.0]))[0] == pytest.approx(700.0)
        assert ell[0] == 1.0 - ell[-1]

    def test_derivative_matches_definition(self):
        x = np.linspace(-30, 30, 101)
        np.testing.assert_allclose(model.neg_sigmoid(x), 1 / (1 + np.exp(x)), rtol=1e-13)
        np.testing.assert_allclose(model.log_loss(x), np.logaddexp(0.0, -x), rtol=1e-12)


class TestGradient:
    def test_zero_weights(self, small_dataset):
        _, ds = small_dataset
        assert np.all(model.gradient(np.zeros((3, 6)), ds) == 0.0)

    @pytest.mark.parametrize("seed", range(50))
    def test_matches_finite_differences(self, seed):
        rng = np.random.default_rng(seed)
        ds = sample_dataset(tiny_config(seed=seed))
        W = rng.normal(0, 0.7, size=(2, 4))
        lam = 0.01 * (seed % 10)
        g = model.gradient(W, ds, lam)
        fd = fd_gradient(lambda V: model.loss(V, ds, lam).total, W)
        assert np.max(np.abs(g - fd)) / np.max(np.abs(fd)) <= 1e-6

    def test_saturated_margins_reduce_to_ridge(self):
        cfg = tiny_config(P=1, m=3)
        ds = sample_dataset(cfg)
        rng = np.random.default_rng(5)
        W = rng.normal(0, 0.3, size=(3, 4))
        W[:, 0] = 10.0 + rng.random(3)  # every margin >= beta**3 * 3000
        lam = 1e-3
        g = model.gradient(W, ds, lam)
        np.testing.assert_allclose(g, lam * W, rtol=1e-8)

    def test_matches_explicit_sum(self, small_dataset):
        """-(3/N) sum_i sum_j ell_i y_i <w_r, X_i[j]>^2 X_i[j], with explicit loops."""
        _, ds = small_dataset
        W = np.random.default_rng(2).normal(0, 0.5, size=(3, 6))
        ell = model.neg_sigmoid(model.margins(W, ds))
        expected = np.zeros_like(W)
        for r in range(3):
            for i in range(ds.N):
                for j in range(ds.P):
                    x = ds.X[i, j]
                    expected[r] -= 3 / ds.N * ell[i] * ds.y[i] * (W[r] @ x) ** 2 * x
        np.testing.assert_allclose(model.gradient(W, ds), expected, rtol=1e-12, atol=1e-15)


class TestDerivatives:
    def test_zero_weights(self, small_dataset):
        _, ds = small_dataset
        nu1, nu2, ell = model.per_sample_derivatives(np.zeros((3, 6)), ds)
        assert nu1 == pytest.approx((1 - ds.z2_fraction) / 2, rel=1e-15)
        assert nu2 == pytest.approx(ds.z2_fraction / 2, rel=1e-15)

    def test_all_z1(self):
        ds = sample_dataset(ExperimentConfig(d=5, N=30, mu=0.0, T=0))
        assert model.per_sample_derivatives(np.ones((5, 5)), ds)[1] == 0.0

    def test_partition(self, small_dataset, rng):
        _, ds = small_dataset
        nu1, nu2, ell = model.per_sample_derivatives(rng.normal(size=(3, 6)), ds)
        assert nu1 + nu2 == pytest.approx(np.mean(ell), rel=1e-14)


def test_weights_round_trip(tmp_path, rng):
    W = rng.normal(size=(4, 7))
    model.save_weights(W, tmp_path / "w.json")
    np.testing.assert_array_equal(model.load_weights(tmp_path / "w.json"), W)
