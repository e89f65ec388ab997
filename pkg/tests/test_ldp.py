import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats
from scipy.optimize import minimize

from ewa.core import RandomSource
from ewa.errors import ConfigError, TooFewSamples
from ewa.ldp import (
    bootstrap_rate_ci,
    conditional_sample_q,
    empirical_rate,
    rate_central,
    rate_noncentral,
    rate_product,
    sample_q_batch,
    sup_deviation,
    toy_disorder_rate,
    write_rate_csv,
)
from ewa.nngp import gram_matrix
from ewa.theory.noncentral import DomainError


def test_rate_central_values():
    assert rate_central(1.0) == 0.0
    assert rate_central(np.e) == pytest.approx(0.5 * (np.e - 2), rel=1e-14)
    assert rate_central(np.e) == pytest.approx(0.3591, abs=1e-4)
    with pytest.raises(DomainError):
        rate_central(0.0)


@given(a=st.floats(0.01, 50), b=st.floats(0.01, 50))
def test_rate_central_convex(a, b):
    assert rate_central(0.5 * (a + b)) <= 0.5 * (rate_central(a) + rate_central(b)) + 1e-12


def test_rate_product():
    y = np.linspace(0.3, 3, 9)
    assert np.array_equal(rate_product(y, 1), rate_central(y))
    assert all(rate_product(1.0, L) == 0.0 for L in (1, 2, 7))
    # min sum_l I(x_l) subject to prod x_l = 2, in log coordinates
    obj = lambda u: sum(rate_central(np.exp(v)) for v in [u[0], u[1], np.log(2) - u[0] - u[1]])
    res = minimize(obj, [0.1, 0.3], method="BFGS", options={"gtol": 1e-12})
    assert res.fun == pytest.approx(rate_product(2.0, 3), abs=1e-6)
    with pytest.raises(DomainError):
        rate_product(-1.0, 2)


def test_rate_noncentral_reductions():
    x = np.linspace(0.2, 4.0, 40)
    assert np.allclose(rate_noncentral(x, 0.0), rate_central(x), atol=1e-8)
    for lam in (0.0, 0.3, 2.0, 10.0):
        assert abs(rate_noncentral(1.0, lam)) < 1e-12
    assert rate_noncentral(1.5, 100.0, N=200) == pytest.approx(rate_noncentral(1.5, 0.5))


def test_rate_noncentral_tilted_sampling():
    # normalised non-central chi^2: X = sum_i (z_i + mu)^2 / (N (1 + lam)), mu^2 = lam;
    # sampled under the exponential tilt exp(s sum y^2) and reweighted exactly
    N, lam, x0 = 2000, 0.5, 1.5
    mu = np.sqrt(lam)
    t = 0.5 * (1 + lam - (1 + np.sqrt(1 + 4 * x0 * lam * (1 + lam))) / (2 * x0))
    s = t / (1 + lam)
    rng = np.random.default_rng(0)
    n = 20000
    ys = rng.standard_normal((n, N)) / np.sqrt(1 - 2 * s) + mu / (1 - 2 * s)
    S = np.sum(ys * ys, axis=1)
    X = S / (N * (1 + lam))
    log_m = -0.5 * np.log(1 - 2 * s) + lam * s / (1 - 2 * s)
    logw = -s * S + N * log_m
    edges = np.quantile(X, np.linspace(0.1, 0.9, 9))
    idx = np.digitize(X, edges) - 1
    for b in range(len(edges) - 1):
        sel = idx == b
        lw = logw[sel]
        log_dens = np.log(np.sum(np.exp(lw - lw.max()))) + lw.max() - np.log(n * (edges[b + 1] - edges[b]))
        xc = 0.5 * (edges[b] + edges[b + 1])
        assert abs(-log_dens / N - rate_noncentral(xc, lam)) < 0.05


def test_identity_one_layer_is_gamma():
    X = np.random.default_rng(1).standard_normal((30, 60))
    b = sample_q_batch(gram_matrix(X), 1, "identity", [1.0, 1.0], 40, 3000, RandomSource(2))
    assert stats.kstest(b.q[:, 0], stats.gamma(20, scale=2 / 40).cdf).pvalue > 0.01
    assert np.all(b.Q > 0) and np.array_equal(b.Q, b.q[:, 0])
    with pytest.raises(ConfigError):
        sample_q_batch(gram_matrix(X), 0, "erf", [1.0], 40, 10, 0)


def test_erf_layers_concentrate_at_one():
    X = np.random.default_rng(3).standard_normal((200, 100))
    b = sample_q_batch(gram_matrix(X), 3, "erf", [1.0] * 4, 200, 400, RandomSource(4))
    m, se = b.q.mean(0), b.q.std(0, ddof=1) / np.sqrt(len(b.q))
    assert np.all(np.abs(m - 1) < 3 * se)
    # layers decouple in the central case
    for i, j in [(0, 1), (0, 2), (1, 2)]:
        r = np.corrcoef(b.q[:, i], b.q[:, j])[0, 1]
        assert abs(r) < 3 / np.sqrt(len(b.q))
    # product mode gives the same law
    p = sample_q_batch(gram_matrix(X), 3, "erf", [1.0] * 4, 200, 400, RandomSource(4), per_layer=False)
    assert np.allclose(p.Q, b.Q, rtol=1e-10)


def test_conditional_one_layer_matches_batch():
    X = np.random.default_rng(5).standard_normal((40, 30))
    C = gram_matrix(X)
    c = conditional_sample_q(C, 1, "relu", [1.0, 1.0], 40, 2000, RandomSource(6))
    b = sample_q_batch(C, 1, "relu", [1.0, 1.0], 40, 2000, RandomSource(7), fbar=c.fbar)
    assert stats.ks_2samp(c.q[:, 0], b.q[:, 0]).pvalue > 0.01


def test_noncentral_rate_explains_large_overlap():
    X = np.random.default_rng(8).standard_normal((100, 50))
    N = 100
    c = conditional_sample_q(gram_matrix(X), 1, "relu", [1.0, 1.0], N, 5000, RandomSource(9), overlap=0.95)
    assert c.lam_nc[0] > 0.5
    curve = empirical_rate(c.q[:, 0], N)
    d_nc = sup_deviation(curve, lambda x: rate_noncentral(x, c.lam_nc[0]), 0.75, 1.3)
    d_c = sup_deviation(curve, rate_central, 0.75, 1.3)
    assert d_nc < d_c


def test_empirical_rate_gamma_oracle():
    N = 500
    s = stats.gamma(N / 2, scale=2 / N).rvs(size=20000, random_state=10)
    curve = empirical_rate(s, N)
    assert curve.rate.min() == 0 and np.all(curve.rate >= 0)
    assert sup_deviation(curve, rate_central, 0.7, 1.4) < 0.05
    const = empirical_rate(np.full(1000, 2.0), N)
    assert np.array_equal(const.rate, [0.0]) and len(const.x) == 1
    with pytest.raises(TooFewSamples):
        empirical_rate(s[:999], N)


def test_bootstrap_band_shrinks_with_samples():
    N = 200
    g = stats.gamma(N / 2, scale=2 / N)
    widths = []
    for n in (4000, 8000):
        s = g.rvs(size=n, random_state=11)
        c = bootstrap_rate_ci(s, empirical_rate(s, N, n_bins=20), rng=12)
        xs = np.linspace(0.85, 1.15, 7)
        widths.append(np.interp(xs, c.x, c.ci_high - c.ci_low))
    assert np.all(widths[1] < widths[0])


def test_fbar_robustness():
    X = np.random.default_rng(13).standard_normal((100, 50))
    C = gram_matrix(X)
    curves = []
    for k in range(2):
        b = sample_q_batch(C, 1, "erf", [1.0, 1.0], 100, 4000, RandomSource(14, k))
        c = bootstrap_rate_ci(b.Q, empirical_rate(b.Q, 100, n_bins=20), rng=k)
        curves.append(c)
    xs = np.linspace(0.85, 1.15, 7)
    a, b = curves
    diff = np.abs(np.interp(xs, a.x, a.rate) - np.interp(xs, b.x, b.rate))
    band = np.interp(xs, a.x, a.ci_high - a.ci_low) + np.interp(xs, b.x, b.ci_high - b.ci_low)
    assert np.all(diff < band)


def test_toy_disorder_rate():
    y = np.linspace(0.8, 1.2, 5)
    homog = toy_disorder_rate(y, 2, [1.0, 1.0])
    assert np.allclose(toy_disorder_rate(y, 2, [2.0, 2.0 / 3.0]), homog, rtol=1e-14)
    assert np.allclose(homog, 0.25 * (y - 1) ** 2 / 2)
    # quadratic program: min sum a_l k/2 d_l^2 with the linearised product constraint sum d_l = y - 1
    a, k = np.array([4.0, 4.0]), 0.5
    for yi in y:
        cons = {"type": "eq", "fun": lambda d: d.sum() - (yi - 1)}
        r = minimize(lambda d: 0.5 * k * a @ d**2, [0.0, 0.0], constraints=[cons], method="SLSQP",
                     options={"ftol": 1e-16})
        assert r.fun == pytest.approx(toy_disorder_rate(yi, 2, a, kappa=k), abs=1e-8)


def test_rate_csv(tmp_path):
    s = stats.gamma(50, scale=0.02).rvs(size=2000, random_state=15)
    c = empirical_rate(s, 100, n_bins=10)
    sup_deviation(c, rate_central)
    write_rate_csv(tmp_path / "r.csv", c)
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines[0] == "x,I_emp,CI_low,CI_high,I_theory"
    assert len(lines) == len(c.x) + 1 and lines[1].split(",")[2] == "nan"


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10**6), n_bins=st.integers(5, 60), scale=st.floats(1.0, 1000.0))
def test_empirical_rate_shifted_to_zero(seed, n_bins, scale):
    s = np.random.default_rng(seed).lognormal(size=1500)
    c = empirical_rate(s, scale, n_bins)
    assert c.rate.min() == 0.0 and np.all(c.rate >= 0)
    assert np.all(c.counts >= 5)


def test_unequal_precisions_telescope():
    X = np.random.default_rng(16).standard_normal((30, 20))
    C = gram_matrix(X)
    lam = [1.0, 0.7, 1.3, 2.0]
    b = sample_q_batch(C, 3, "erf", lam, 60, 200, RandomSource(17))
    p = sample_q_batch(C, 3, "erf", lam, 60, 200, RandomSource(17), per_layer=False)
    assert np.allclose(b.Q, p.Q, rtol=1e-10)
    c = conditional_sample_q(C, 3, "erf", lam, 200, 300, RandomSource(18))
    assert np.all(np.abs(c.q.mean(0) - 1) < 0.05) and np.all(np.isfinite(c.lam_nc))
