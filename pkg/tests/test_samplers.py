import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ewa.core import RandomSource
from ewa.data import gaussian_teacher
from ewa.errors import Divergence, InvalidParameter, TooFewChains, TooShort
from ewa.nets import NetworkSpec, ParamLayout
from ewa.samplers import (
    Posterior,
    blocking_error,
    gelman_rubin,
    load_record,
    lmc_run,
    mala_log_accept,
    mala_run,
    pcn_run,
    phase_windows,
    save_record,
)


def _linear(P=40, N0=4, Pt=3, T=0.1, lam=1.0, seed=0):
    """Bayesian linear regression and its exact posterior over test outputs."""
    rng = np.random.default_rng(seed)
    X, Xt = rng.standard_normal((P, N0)), rng.standard_normal((Pt, N0))
    y = X @ rng.standard_normal(N0) / np.sqrt(N0) + 0.3 * rng.standard_normal(P)
    spec = NetworkSpec(N0, (), "identity", precisions=(lam,), temperature=T)
    A, At = X / np.sqrt(N0), Xt / np.sqrt(N0)
    H = A.T @ A + T * lam * np.eye(N0)
    m = np.linalg.solve(H, A.T @ y)
    S = T * np.linalg.inv(H)
    post = Posterior(spec, X, y, Xt, np.zeros(Pt))
    return post, At @ m, np.diag(At @ S @ At.T), (A, y, H, m)


def _check_moments(rec, mean, var, k=3.0):
    for j in range(len(mean)):
        o = rec.outputs[:, j]
        bm = blocking_error(o)
        assert abs(bm.mean - mean[j]) < k * bm.delta
        bv = blocking_error((o - mean[j]) ** 2)
        assert abs(bv.mean - var[j]) < k * bv.delta


def test_lmc_zero_temperature_reaches_ridge():
    post, _, _, (A, y, H, _) = _linear(T=1e-16)
    post_np = Posterior(post.spec, post.X, y, project=False)
    rec, th = lmc_run(post_np, 0.05, 20000, thin=100, rng=0, return_state=True)
    A2 = post_np.X / np.sqrt(post_np.spec.n_in)
    ridge = np.linalg.solve(A2.T @ A2 + 1e-16 * np.eye(A2.shape[1]), A2.T @ y)
    assert np.allclose(th, ridge, atol=1e-6)


def test_lmc_linear_regression_posterior():
    post, mean, var, _ = _linear()
    rec = lmc_run(post, 2e-3, 120000, burn_in=2000, thin=10, rng=RandomSource(1))
    _check_moments(rec, mean, var)


def test_lmc_halved_step_compatible():
    post, _, _, _ = _linear()
    a = lmc_run(post, 1e-3, 100000, burn_in=2000, thin=10, rng=RandomSource(2))
    b = lmc_run(post, 5e-4, 200000, burn_in=4000, thin=20, rng=RandomSource(3))
    for j in range(3):
        ea, eb = blocking_error(a.outputs[:, j]), blocking_error(b.outputs[:, j])
        assert abs(ea.mean - eb.mean) < 3 * np.hypot(ea.delta, eb.delta)


def test_mala_and_pcn_exact_on_linear_task():
    post, mean, var, _ = _linear()
    m = mala_run(post, 0.02, 40000, burn_in=500, thin=5, rng=RandomSource(4))
    assert 0.0 < m.acceptance <= 1.0
    _check_moments(m, mean, var)
    p = pcn_run(post, 0.1, 60000, burn_in=1000, thin=5, rng=RandomSource(5))
    _check_moments(p, mean, var)


def test_mala_one_dimensional_gaussian():
    # L_reg = (y - v)^2 / 2 + T v^2 / 2 at T = 1: posterior N(y/2, 1/2)
    spec = NetworkSpec(1, (), "identity", temperature=1.0)
    post = Posterior(spec, np.ones((1, 1)), np.array([0.5]), np.ones((1, 1)), np.zeros(1))
    rec = mala_run(post, 0.5, 60000, thin=2, rng=RandomSource(6))
    _check_moments(rec, [0.25], [0.5])


def test_mala_degenerate_proposal_accepted():
    x = np.array([0.3, -1.2])
    g = np.array([0.5, 0.1])
    assert mala_log_accept(x, x, 2.0, 2.0, g, g, 1e-3, 0.1) == 0.0


def test_pcn_prior_reduction():
    spec = NetworkSpec(5, (30,), "erf", precisions=(2.0, 4.0), temperature=np.inf)
    X = np.random.default_rng(7).standard_normal((10, 5))
    post = Posterior(spec, X, np.zeros(10), project=False)
    rec, th = pcn_run(post, 0.5, 3000, rng=RandomSource(8), return_state=True)
    assert rec.acceptance == 1.0
    lay = ParamLayout(spec)
    W1, v = lay.views(th)
    assert abs(np.mean(W1**2) - 0.5) < 4 * np.sqrt(2) * 0.5 / np.sqrt(W1.size)
    assert abs(np.mean(v**2) - 0.25) < 4 * np.sqrt(2) * 0.25 / np.sqrt(v.size)


def test_samplers_agree_on_small_network():
    d = gaussian_teacher(N0=10, P=12, P_t=4, rng=9)
    spec = NetworkSpec(10, (8,), "erf", temperature=0.1)
    post = Posterior(spec, d.X_train, d.y_train, d.X_test, d.y_test)
    a = mala_run(post, 5e-3, 40000, burn_in=2000, thin=10, rng=RandomSource(10))
    b = pcn_run(post, 0.05, 80000, burn_in=4000, thin=20, rng=RandomSource(11))
    for j in range(4):
        ea, eb = blocking_error(a.outputs[:, j]), blocking_error(b.outputs[:, j])
        assert abs(ea.mean - eb.mean) < 4 * np.hypot(ea.delta, eb.delta)


def test_deep_relu_acceptance_band():
    d = gaussian_teacher(N0=300, P=50, P_t=20, rng=0)
    spec = NetworkSpec(300, (50,) * 5, "relu", precisions=[1.0] + [0.5] * 5, temperature=0.1)
    post = Posterior(spec, d.X_train, d.y_train, d.X_test, d.y_test, test_idx=np.arange(2))
    _, s = lmc_run(post, 1e-3, 1500, rng=RandomSource(12), return_state=True)
    m = mala_run(post, 1e-3, 500, rng=RandomSource(13), state0=s)
    p = pcn_run(post, 2e-3, 500, rng=RandomSource(14), state0=s)
    assert 0.6 < m.acceptance < 1.0
    assert 0.2 < p.acceptance < 1.0


def test_chain_determinism_and_roundtrip(tmp_path):
    post, _, _, _ = _linear(Pt=2)
    a = lmc_run(post, 1e-3, 500, thin=5, rng=RandomSource(3, 7))
    b = lmc_run(post, 1e-3, 500, thin=5, rng=RandomSource(3, 7))
    assert a.train_loss.tobytes() == b.train_loss.tobytes()
    assert a.outputs.tobytes() == b.outputs.tobytes()
    assert (a.seed, a.stream, len(a)) == (3, 7, 100)
    save_record(tmp_path / "c.npz", a)
    c = load_record(tmp_path / "c.npz")
    assert np.array_equal(c.outputs, a.outputs) and c.hyper == a.hyper and np.isnan(c.acceptance)


def test_lmc_divergence_keeps_partial_record():
    post, _, _, _ = _linear()
    with pytest.raises(Divergence) as e:
        lmc_run(post, 5.0, 1000, rng=0)
    assert e.value.record is not None and e.value.record.steps < 1000
    with pytest.raises(InvalidParameter):
        pcn_run(post, 1.5, 10)


# ---------------------------------------------------------------- diagnostics

def test_blocking_iid():
    x = np.random.default_rng(15).standard_normal(2**16)
    r = blocking_error(x)
    assert r.plateau and abs(r.tau_int - 0.5) < 0.05
    assert r.n_eff == pytest.approx(len(x) / (2 * r.tau_int))
    with pytest.raises(TooShort):
        blocking_error(x[:100])


def test_blocking_ar1():
    rng = np.random.default_rng(16)
    phi, n = 0.9, 2**19
    e = rng.standard_normal(n)
    x = np.empty(n)
    x[0] = e[0] / np.sqrt(1 - phi**2)
    for t in range(1, n):
        x[t] = phi * x[t - 1] + e[t]
    r = blocking_error(x)
    assert abs(r.tau_int - 9.5) < 0.2 * 9.5


def test_blocking_trend_has_no_plateau():
    x = np.linspace(0, 10, 2**14) + 0.01 * np.random.default_rng(17).standard_normal(2**14)
    assert not blocking_error(x).plateau


def test_gelman_rubin():
    x = np.random.default_rng(18).standard_normal((1, 500, 3))
    R, mean = gelman_rubin(np.concatenate([x, x]))
    assert np.all(R == 1.0) and mean == 1.0
    y = np.random.default_rng(19).standard_normal((2, 500))
    y[1] += 10
    assert gelman_rubin(y)[1] > 3
    with pytest.raises(TooFewChains):
        gelman_rubin(x)


def test_gelman_rubin_converged_lmc_chains():
    post, _, _, _ = _linear()
    recs = [lmc_run(post, 2e-3, 40000, burn_in=2000, thin=10, rng=RandomSource(20, c)) for c in range(2)]
    _, mean = gelman_rubin(np.stack([r.outputs for r in recs]))
    assert mean < 1.05


def test_phase_windows():
    rng = np.random.default_rng(21)
    assert len(phase_windows(rng.standard_normal(4000))) == 1
    step = np.r_[np.zeros(1000), np.ones(1000)]
    w = phase_windows(step + 1e-3 * rng.standard_normal(2000))
    assert [(a.start, a.end) for a in w] == [(0, 1000), (1000, 2000)]
    # drop of five pooled standard errors of the two half means
    drop = 5 * np.sqrt(2.0 / 3000)
    levels = [1.0, 1.0 - drop]
    x = np.r_[levels[0] + rng.standard_normal(3000), levels[1] + rng.standard_normal(3000)]
    w = phase_windows(x)
    assert len(w) == 2
    for win, lv in zip(w, levels):
        assert abs(win.mean - lv) < 3 * win.error


# ---------------------------------------------------------------- properties

@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10**6), n=st.integers(2, 6), k=st.floats(-5, 5), s=st.floats(0.1, 10))
def test_gelman_rubin_affine_invariant(seed, n, k, s):
    c = np.random.default_rng(seed).standard_normal((n, 200, 2))
    R1, _ = gelman_rubin(c)
    R2, _ = gelman_rubin(s * c + k)
    assert np.allclose(R1, R2, rtol=1e-8)
    assert np.all(R1 >= 1.0)


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 10**6), lam=st.floats(0.5, 4.0))
def test_pcn_prior_shell_long_run(seed, lam):
    spec = NetworkSpec(3, (20,), "relu", precisions=(lam, lam), temperature=np.inf)
    post = Posterior(spec, np.ones((2, 3)), np.zeros(2), project=False)
    rec, th = pcn_run(post, 1.0, 200, rng=RandomSource(seed), return_state=True)
    assert abs(np.mean(th**2) * lam - 1.0) < 4 * np.sqrt(2.0 / th.size)
