"""Large-deviation rate functions of the kernel order parameters and their sampling.

For a network of width N the prior kernels are sampled layer by layer:
with Phi = sigma(H_l) / sqrt(lambda N), the next pre-activations
H_{l+1} = Phi Z (Z an N x N standard Gaussian matrix) have iid columns
N(0, K_E^l) where K_E^l = Phi Phi^T.  Along such a chain and for a fixed
dual vector fbar,

    q_l = c_l / c_{l-1},   c_l = fbar^T Theta^{L-l}(K_E^l) fbar,   K_E^0 = C,

so that Q = prod q_l = c_L / c_0.  The central theory predicts
I_q(x) = (x - 1 - log x)/2 per layer at speed N and L I_q(Q^{1/L}) for
the product.
"""

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .core import _gen
from .errors import ConfigError, InvalidParameter, TooFewSamples
from .nngp import Activation, activation_mean_cov, check_precisions, nngp_compose, nngp_step
from .theory.noncentral import DomainError

__all__ = [
    "RateCurve",
    "QSampleBatch",
    "rate_central",
    "rate_product",
    "rate_noncentral",
    "noncentral_cgf",
    "sample_q_batch",
    "conditional_sample_q",
    "empirical_rate",
    "bootstrap_rate_ci",
    "sup_deviation",
    "toy_disorder_rate",
    "write_rate_csv",
]


def rate_central(x):
    """I_q(x) = (x - 1 - log x) / 2."""
    x = np.asarray(x, dtype=np.float64)
    if np.any(x <= 0):
        raise DomainError("rate function needs x > 0")
    out = 0.5 * (x - 1.0 - np.log(x))
    return float(out) if out.ndim == 0 else out


def rate_product(y, L):
    """Contracted rate of a product of L iid layers, L I_q(y^{1/L})."""
    L = int(L)
    if L < 1:
        raise InvalidParameter("L must be >= 1")
    y = np.asarray(y, dtype=np.float64)
    if np.any(y <= 0):
        raise DomainError("rate function needs y > 0")
    return L * rate_central(y ** (1.0 / L))


def noncentral_cgf(t, lam_nc):
    """Scaled cumulant generating function of a normalised non-central chi^2."""
    u = 1.0 + lam_nc - 2.0 * t
    return lam_nc * t / u - 0.5 * np.log(u / (1.0 + lam_nc))


def rate_noncentral(x, lam_nc=0.0, N=None):
    """Legendre-Fenchel transform sup_t [t x - Lambda(t)], t < (1 + lam_nc)/2.

    ``lam_nc`` is the non-centrality per degree of freedom; when ``N`` is
    given it is read as the total non-centrality and divided by N.  The
    stationarity condition is monotone in u = 1 + lam_nc - 2t, so the sup
    is found by bracketed root finding in log u.
    """
    lam = float(lam_nc) / (N if N else 1.0)
    if lam < 0 or not np.isfinite(lam):
        raise DomainError("non-centrality must be finite and non-negative")
    xs = np.atleast_1d(np.asarray(x, dtype=np.float64))
    if np.any(xs <= 0):
        raise DomainError("rate function needs x > 0")
    out = np.empty_like(xs)
    c = lam * (1.0 + lam)
    for i, xi in enumerate(xs):
        # d/dt [t x - Lambda] = x - c/u^2 - 1/u, increasing in u
        h = lambda s: xi - c * np.exp(-2 * s) - np.exp(-s)
        lo, hi = -1.0, 1.0
        while h(lo) > 0:
            lo -= 5.0
        while h(hi) < 0:
            hi += 5.0
        s = brentq(h, lo, hi, xtol=1e-14, rtol=4 * np.finfo(float).eps)
        t = 0.5 * (1.0 + lam - np.exp(s))
        out[i] = t * xi - noncentral_cgf(t, lam)
    return float(out[0]) if np.ndim(x) == 0 else out


@dataclass
class QSampleBatch:
    """Samples q[m, l] of the layer order parameters, with Q[m] = prod_l q[m, l]."""

    q: np.ndarray
    fbar: np.ndarray
    N: int
    Q: np.ndarray = None
    lam_nc: np.ndarray = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.Q is None:
            self.Q = np.prod(self.q, axis=1)


def _check(L, N, n_samples):
    if int(L) < 1:
        raise ConfigError("sampling the order parameters needs L >= 1")
    if int(N) < 1 or int(n_samples) < 1:
        raise ConfigError("N and the sample count must be positive")


def _unit(v):
    return v / np.linalg.norm(v)


def _draw_layer(Phi, act, lam, N, g):
    """Phi_next = sigma(Phi Z) / sqrt(lam N) for an (P, n) factor Phi."""
    H = Phi @ g.standard_normal((Phi.shape[1], N))
    return act(H) / np.sqrt(lam * N)


def _root(C):
    # any factor with C = F F^T
    w, U = np.linalg.eigh(C)
    keep = w > 1e-14 * max(w[-1], 1e-300)
    return U[:, keep] * np.sqrt(w[keep])


def sample_q_batch(C, L, act, precisions, N, n_samples, rng, fbar=None, per_layer=True):
    """Independent prior samples of (q_1..q_L) for a fixed fbar.

    ``precisions`` has L+1 entries; ``precisions[l]`` (l >= 1) scales the
    l-th empirical kernel and ``precisions[0]`` is assumed already inside C.
    ``fbar`` defaults to a uniform direction on the unit sphere drawn once.
    With ``per_layer=False`` only c_L / c_0 is evaluated and ``q`` holds
    the product in a single column, which avoids the kernel compositions.
    """
    _check(L, N, n_samples)
    act = Activation.parse(act)
    lam = check_precisions(precisions, L + 1)
    g = _gen(rng)
    C = np.asarray(C, dtype=np.float64)
    P = len(C)
    fbar = _unit(g.standard_normal(P)) if fbar is None else np.asarray(fbar, dtype=np.float64)
    traj = [C]
    for ell in range(1, L + 1):
        traj.append(nngp_step(traj[-1], act, lam[ell]))
    # c0 = fbar^T Theta^L(C) fbar
    c0 = float(fbar @ traj[L] @ fbar)
    F0 = _root(C)
    q = np.empty((n_samples, L if per_layer else 1))
    for m in range(n_samples):
        Phi = F0
        prev = c0
        for ell in range(1, L + 1):
            Phi = _draw_layer(Phi, act, lam[ell], N, g)
            if per_layer:
                K = Phi @ Phi.T
                if ell < L:
                    K = nngp_compose(K, L - ell, act, lam[ell + 1:])
                c = float(fbar @ K @ fbar)
                q[m, ell - 1] = c / prev
                prev = c
        if not per_layer:
            v = Phi.T @ fbar
            q[m, 0] = float(v @ v) / c0
    return QSampleBatch(q, fbar, int(N), meta={"L": L, "P": P, "act": act.value, "alpha": P / N})


def _fbar_with_overlap(m, overlap, g):
    P = len(m)
    u = g.standard_normal(P)
    if not np.any(m):
        return _unit(u)
    mh = _unit(m)
    u = _unit(u - (u @ mh) * mh)
    return overlap * mh + np.sqrt(max(0.0, 1.0 - overlap**2)) * u


def conditional_sample_q(C, L, act, precisions, N, n_samples, rng, overlap=0.0):
    """Layer-wise conditional samples of q_l (Conditional Sampling Algorithm).

    One reference chain C = K*_0, K*_1, ..., K*_L is drawn first.  fbar has
    cosine ``overlap`` with the activation mean computed from K*_{L-1}.
    Layer l then holds the denominator fbar^T Theta^{L-l+1}(K*_{l-1}) fbar
    fixed and draws ``n_samples`` fresh K_l | K*_{l-1}.  The returned
    ``lam_nc[l]`` is (fbar . m_l)^2 / fbar^T Sigma_l fbar with m_l, Sigma_l
    evaluated on Theta^{L-l}(K*_{l-1}).
    """
    _check(L, N, n_samples)
    if not 0.0 <= overlap <= 1.0:
        raise InvalidParameter("overlap must lie in [0, 1]")
    act = Activation.parse(act)
    lam = check_precisions(precisions, L + 1)
    g = _gen(rng)
    C = np.asarray(C, dtype=np.float64)
    P = len(C)
    roots = [_root(C)]
    Ks = [C]
    for ell in range(1, L + 1):
        Phi = _draw_layer(roots[-1], act, lam[ell], N, g)
        roots.append(Phi)
        Ks.append(Phi @ Phi.T)
    m_L, _ = activation_mean_cov(Ks[L - 1], act)
    fbar = _fbar_with_overlap(m_L, overlap, g)
    q = np.empty((n_samples, L))
    lam_nc = np.empty(L)
    for ell in range(1, L + 1):
        tail = lam[ell + 1:]
        base = nngp_compose(Ks[ell - 1], L - ell, act, lam[ell:L])
        m, Sig = activation_mean_cov(base, act)
        den_nc = float(fbar @ Sig @ fbar)
        lam_nc[ell - 1] = float(fbar @ m) ** 2 / den_nc if den_nc > 0 else 0.0
        # Theta^{L-l+1}(K*_{l-1}) is one more map on top of base
        denom = float(fbar @ nngp_step(base, act, lam[L]) @ fbar)
        for k in range(n_samples):
            Phi = _draw_layer(roots[ell - 1], act, lam[ell], N, g)
            K = Phi @ Phi.T
            if ell < L:
                K = nngp_compose(K, L - ell, act, tail)
            q[k, ell - 1] = float(fbar @ K @ fbar) / denom
    return QSampleBatch(q, fbar, int(N), lam_nc=lam_nc,
                        meta={"L": L, "P": P, "act": act.value, "alpha": P / N, "overlap": overlap})


@dataclass
class RateCurve:
    x: np.ndarray
    rate: np.ndarray
    scale: float
    n_samples: int
    counts: np.ndarray = None
    ci_low: np.ndarray = None
    ci_high: np.ndarray = None
    theory: np.ndarray = None
    meta: dict = field(default_factory=dict)


MIN_COUNT = 5


def _binned(samples, edges, scale):
    counts, _ = np.histogram(samples, bins=edges)
    width = np.diff(edges)
    keep = (counts >= MIN_COUNT) & (width > 0)
    dens = counts[keep] / (len(samples) * width[keep])
    x = 0.5 * (edges[:-1] + edges[1:])[keep]
    I = -np.log(dens) / scale
    return x, I - I.min(), counts[keep], keep


def empirical_rate(samples, scale, n_bins=40):
    """-log(density)/scale on equal-probability bins, shifted to a zero minimum.

    Bins with fewer than 5 counts are dropped; a constant sample collapses
    to a single bin with rate 0.
    """
    s = np.asarray(samples, dtype=np.float64).ravel()
    if len(s) < 1000:
        raise TooFewSamples(f"empirical rate needs at least 1000 samples, got {len(s)}")
    if np.ptp(s) == 0:
        return RateCurve(np.array([s[0]]), np.zeros(1), float(scale), len(s), np.array([len(s)]))
    edges = np.unique(np.quantile(s, np.linspace(0.0, 1.0, n_bins + 1)))
    x, I, counts, _ = _binned(s, edges, scale)
    return RateCurve(x, I, float(scale), len(s), counts, meta={"edges": edges})


def bootstrap_rate_ci(samples, curve: RateCurve, n_boot=200, level=0.9, rng=0):
    """Percentile bootstrap band of the rate on the bins of ``curve``."""
    s = np.asarray(samples, dtype=np.float64).ravel()
    edges = curve.meta["edges"]
    g = _gen(rng)
    ref_keep = _binned(s, edges, curve.scale)[3]
    reps = np.full((n_boot, int(ref_keep.sum())), np.nan)
    for b in range(n_boot):
        sb = s[g.integers(0, len(s), len(s))]
        counts, _ = np.histogram(sb, bins=edges)
        c = counts[ref_keep].astype(float)
        with np.errstate(divide="ignore"):
            I = -np.log(c / (len(s) * np.diff(edges)[ref_keep])) / curve.scale
        reps[b] = I - np.min(I[np.isfinite(I)])
    a = (1.0 - level) / 2
    curve.ci_low = np.nanquantile(reps, a, axis=0)
    curve.ci_high = np.nanquantile(reps, 1 - a, axis=0)
    return curve


def sup_deviation(curve: RateCurve, theory, lo=-np.inf, hi=np.inf):
    """max |I_emp - I_theory| over bin centres in [lo, hi] (theory min-shifted on the same bins)."""
    sel = (curve.x >= lo) & (curve.x <= hi)
    if not np.any(sel):
        return np.nan
    th = np.asarray(theory(curve.x), dtype=np.float64)
    curve.theory = th
    return float(np.max(np.abs(curve.rate[sel] - th[sel])))


def toy_disorder_rate(y, L, a, kappa=0.5, x_star=1.0):
    """Quadratic rate of a product of L layers with rate prefactors a_l.

    (kappa/2) (y - x*^L)^2 / (x*^{2L-2} sum_l 1/a_l); kappa = 1/2 matches
    the curvature of I_q at its minimum.
    """
    a = np.asarray(a, dtype=np.float64)
    if a.shape != (int(L),):
        raise InvalidParameter("need one prefactor per layer")
    if np.any(a <= 0):
        raise InvalidParameter("prefactors must be positive")
    y = np.asarray(y, dtype=np.float64)
    return 0.5 * kappa * (y - x_star**L) ** 2 / (x_star ** (2 * L - 2) * np.sum(1.0 / a))


def write_rate_csv(path, curve: RateCurve):
    """Columns x, I_emp, CI_low, CI_high, I_theory."""
    n = len(curve.x)
    nan = np.full(n, np.nan)
    cols = [curve.x, curve.rate,
            nan if curve.ci_low is None else curve.ci_low,
            nan if curve.ci_high is None else curve.ci_high,
            nan if curve.theory is None else curve.theory]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "I_emp", "CI_low", "CI_high", "I_theory"])
        for row in zip(*cols):
            w.writerow([f"{v:.12g}" for v in row])
