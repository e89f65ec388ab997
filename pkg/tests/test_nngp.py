import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import erf

from ewa import _kernels_py
from ewa.core import cholesky_psd
from ewa.errors import NonpositiveDiagonal
from ewa.nngp import (
    Activation,
    activation_mean_cov,
    gram_matrix,
    joint_kernel,
    nngp_compose,
    nngp_step,
    nngp_trajectory,
)

SIGMA = {"erf": erf, "relu": lambda x: np.maximum(x, 0.0), "identity": lambda x: x}


def mc_theta(K, act, lam, n, rng):
    """Monte-Carlo estimate of E[sigma sigma^T]/lam and its standard error."""
    L = np.linalg.cholesky(K + 1e-300 * np.eye(len(K)))
    h = L @ rng.standard_normal((len(K), n))
    s = SIGMA[act](h)
    prod = s[:, None, :] * s[None, :, :] / lam
    return prod.mean(-1), prod.std(-1) / np.sqrt(n)


def random_kernel(n, rng):
    A = rng.standard_normal((n, n + 2)) * rng.uniform(0.3, 2.0)
    return A @ A.T / (n + 2)


class TestGram:
    def test_identity(self):
        np.testing.assert_allclose(gram_matrix(np.eye(2), 1.0), np.eye(2) / 2)

    def test_homogeneity(self):
        X = np.random.default_rng(0).standard_normal((4, 5))
        np.testing.assert_allclose(gram_matrix(2 * X, 0.5), 4 * gram_matrix(X, 0.5))


class TestStep:
    def test_identity_activation(self):
        K = random_kernel(3, np.random.default_rng(0))
        np.testing.assert_allclose(nngp_step(K, "identity", 2.0), K / 2)

    def test_relu_identity_input(self):
        T = nngp_step(np.eye(2), "relu", 1.0)
        np.testing.assert_allclose(np.diag(T), 0.5, atol=1e-15)
        assert T[0, 1] == pytest.approx(1 / (2 * np.pi), abs=1e-12)
        est, se = mc_theta(np.eye(2), "relu", 1.0, 1_000_000, np.random.default_rng(1))
        assert np.all(np.abs(est - T) < 3 * se)

    def test_erf_identity_input(self):
        T = nngp_step(np.eye(2), "erf", 1.0)
        assert T[0, 1] == 0.0
        np.testing.assert_allclose(np.diag(T), 2 / np.pi * np.arcsin(2 / 3), rtol=1e-15)

    @pytest.mark.parametrize("act", ["erf", "relu"])
    def test_mc_oracle(self, act):
        rng = np.random.default_rng(2 if act == "erf" else 3)
        for _ in range(10):
            K = random_kernel(2, rng)
            lam = rng.uniform(0.5, 2.0)
            est, se = mc_theta(K, act, lam, 200_000, rng)
            assert np.all(np.abs(est - nngp_step(K, act, lam)) < 4 * se)

    @pytest.mark.parametrize("act", ["erf", "relu"])
    def test_backends_agree(self, act):
        K = random_kernel(30, np.random.default_rng(4))
        d = np.diag(K).copy()
        fn = getattr(_kernels_py, f"{act}_map")
        np.testing.assert_allclose(nngp_step(K, act), fn(K, d, d, True), rtol=1e-13, atol=1e-15)
        np.testing.assert_allclose(nngp_step(K, act), fn(K, d, d, False), rtol=1e-9, atol=1e-12)

    def test_duplicate_inputs_finite(self):
        x = np.random.default_rng(5).standard_normal(10)
        C = gram_matrix(np.stack([x, x, -x]))
        T = nngp_step(C, "relu", 1.0)
        assert np.all(np.isfinite(T))
        assert T[0, 1] == pytest.approx(T[0, 0], rel=1e-10)
        assert T[0, 2] == pytest.approx(0.0, abs=1e-10)

    def test_negative_diagonal(self):
        with pytest.raises(NonpositiveDiagonal):
            nngp_step(np.diag([1.0, -1.0]), "erf", 1.0)

    def test_zero_variance_unit(self):
        T = nngp_step(np.diag([1.0, 0.0]), "relu", 1.0)
        assert T[1, 1] == 0.0 and T[0, 1] == 0.0

    @settings(max_examples=50, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), n=st.integers(2, 10), c=st.floats(0.01, 100.0))
    def test_relu_homogeneity(self, seed, n, c):
        K = random_kernel(n, np.random.default_rng(seed))
        np.testing.assert_allclose(nngp_step(c * K, "relu", 1.0), c * nngp_step(K, "relu", 1.0),
                                   rtol=1e-12, atol=1e-12 * c)

    @settings(max_examples=50, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), n=st.integers(1, 10))
    def test_relu_criticality(self, seed, n):
        K = random_kernel(n, np.random.default_rng(seed))
        np.testing.assert_allclose(np.diag(nngp_step(K, "relu", 0.5)), np.diag(K), rtol=1e-12)

    @settings(max_examples=50, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), n=st.integers(2, 25),
           act=st.sampled_from(["erf", "relu", "identity"]))
    def test_psd_preserved(self, seed, n, act):
        rng = np.random.default_rng(seed)
        X = rng.standard_normal((n, rng.integers(1, 2 * n)))
        T = nngp_step(gram_matrix(X), act, 1.0)
        assert cholesky_psd(T).jitter <= 1e-8


class TestCompose:
    def test_depth_zero(self):
        C = random_kernel(4, np.random.default_rng(0))
        np.testing.assert_array_equal(nngp_compose(C, 0, "erf", []), C)

    def test_linear(self):
        C = random_kernel(4, np.random.default_rng(0))
        np.testing.assert_allclose(nngp_compose(C, 3, "identity", 2.0), C / 8)

    def test_manual_steps(self):
        C = random_kernel(12, np.random.default_rng(1))
        T = C
        for _ in range(5):
            T = nngp_step(T, "erf", 1.0)
        np.testing.assert_array_equal(nngp_compose(C, 5, "erf", [1.0] * 5), T)
        assert len(nngp_trajectory(C, 5, "erf", 1.0)) == 6


class TestJointKernel:
    @pytest.mark.parametrize("act", ["erf", "relu", "identity"])
    def test_matches_full_composition(self, act):
        rng = np.random.default_rng(3)
        X, Xt = rng.standard_normal((15, 8)), rng.standard_normal((6, 8))
        lam = [0.7, 1.0, 0.5, 2.0]
        jk, tt = joint_kernel(X, Xt, 3, act, lam, with_test_block=True)
        full = nngp_compose(gram_matrix(np.vstack([X, Xt]), lam[0]), 3, act, lam[1:])
        np.testing.assert_allclose(jk.train, full[:15, :15], rtol=1e-12)
        np.testing.assert_allclose(jk.cross, full[:15, 15:], rtol=1e-10, atol=1e-14)
        np.testing.assert_allclose(jk.test_diag, np.diag(full)[15:], rtol=1e-12)
        np.testing.assert_allclose(tt, full[15:, 15:], rtol=1e-10, atol=1e-14)

    def test_test_equals_train(self):
        X = np.random.default_rng(0).standard_normal((7, 5))
        jk = joint_kernel(X, X, 2, "erf", 1.0)
        np.testing.assert_allclose(jk.cross, jk.train, rtol=1e-9)
        jk1 = joint_kernel(X, X[3:4], 2, "erf", 1.0)
        np.testing.assert_allclose(jk1.cross[:, 0], jk1.train[:, 3], rtol=1e-9)

    def test_assembled_psd(self):
        rng = np.random.default_rng(9)
        X, Xt = rng.standard_normal((20, 10)), rng.standard_normal((10, 10))
        jk, tt = joint_kernel(X, Xt, 3, "relu", 1.0, with_test_block=True)
        assert np.linalg.eigvalsh(jk.assemble(tt)).min() > -1e-8


class TestMeanCov:
    def test_erf_zero_mean(self):
        K = random_kernel(4, np.random.default_rng(0))
        m, S = activation_mean_cov(K, "erf", 1.5)
        np.testing.assert_array_equal(m, 0.0)
        np.testing.assert_allclose(S, 1.5 * nngp_step(K, "erf", 1.5))

    def test_relu_mean(self):
        m, _ = activation_mean_cov(np.array([[2 * np.pi]]), "relu")
        assert m[0] == pytest.approx(1.0)
        h = np.sqrt(2 * np.pi) * np.random.default_rng(1).standard_normal(1_000_000)
        r = np.maximum(h, 0)
        assert abs(r.mean() - 1.0) < 4 * r.std() / 1000

    @pytest.mark.parametrize("act", list(Activation))
    def test_identity_relation(self, act):
        K = random_kernel(5, np.random.default_rng(2))
        m, S = activation_mean_cov(K, act, 0.8)
        np.testing.assert_allclose(S + np.outer(m, m), 0.8 * nngp_step(K, act, 0.8), atol=1e-12)
