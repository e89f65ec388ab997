"""Linear algebra and random-matrix primitives.

Kernel matrices are plain float64 numpy arrays. ``as_kernel`` validates
symmetry; the factorisation helpers add a diagonal jitter that escalates
from 1e-12 up to 1e-6 when a Cholesky factorisation fails.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .errors import DegenerateDirection, NotPSD, NotSymmetric, ShapeMismatch

__all__ = [
    "RandomSource",
    "Factor",
    "as_kernel",
    "cholesky_psd",
    "solve_psd",
    "logdet_psd",
    "psd_root",
    "sample_gaussian_columns",
    "WishartSpec",
    "sample_wishart",
    "chi2_contraction",
]

JITTER_START = 1e-12
JITTER_MAX = 1e-6
SYM_RTOL = 1e-12


@dataclass
class RandomSource:
    """Counter-based (Philox) random stream identified by ``(seed, stream)``.

    Two sources with the same pair produce identical draws. Each instance
    owns its generator and should stay on one thread.
    """

    seed: int = 0
    stream: int = 0
    _gen: np.random.Generator = field(default=None, init=False, repr=False, compare=False)

    @property
    def gen(self) -> np.random.Generator:
        if self._gen is None:
            ss = np.random.SeedSequence(int(self.seed), spawn_key=(int(self.stream),))
            self._gen = np.random.Generator(np.random.Philox(ss))
        return self._gen

    def spawn(self, stream: int) -> "RandomSource":
        """Independent source for sub-stream ``stream`` of the same seed."""
        return RandomSource(self.seed, int(self.stream) * 1_000_003 + int(stream) + 1)

    def normal(self, size=None):
        return self.gen.standard_normal(size)

    def uniform(self, size=None):
        return self.gen.random(size)


def _gen(rng):
    if isinstance(rng, RandomSource):
        return rng.gen
    if isinstance(rng, np.random.Generator):
        return rng
    return RandomSource(0 if rng is None else int(rng)).gen


def as_kernel(K, rtol=SYM_RTOL):
    """Validate a square symmetric matrix and return it as a read-only array."""
    K = np.array(K, dtype=np.float64)
    if K.ndim != 2 or K.shape[0] != K.shape[1]:
        raise ShapeMismatch(f"kernel must be square, got shape {K.shape}")
    scale = max(np.max(np.abs(K)), 1e-300) if K.size else 1.0
    if K.size and np.max(np.abs(K - K.T)) > rtol * scale:
        raise NotSymmetric("kernel matrix is not symmetric")
    K.flags.writeable = False
    return K


@dataclass
class Factor:
    """Lower Cholesky factor of ``K + jitter * I``."""

    lower: np.ndarray
    jitter: float

    def solve(self, B):
        return sla.cho_solve((self.lower, True), B, check_finite=False)

    def logdet(self):
        return 2.0 * float(np.sum(np.log(np.diag(self.lower))))

    def half_solve(self, B):
        """L^{-1} B."""
        return sla.solve_triangular(self.lower, B, lower=True, check_finite=False)


def cholesky_psd(K, jitter=0.0) -> Factor:
    """Cholesky factor of K + jitter*I with automatic jitter escalation.

    Starts at ``jitter`` (no jitter by default). On failure the jitter
    goes to 1e-12 and grows tenfold up to 1e-6; beyond that ``NotPSD``.
    """
    K = np.asarray(K, dtype=np.float64)
    n = K.shape[0]
    eye = np.eye(n)
    j = float(jitter)
    while True:
        try:
            L = np.linalg.cholesky(K + j * eye if j else K)
            if np.all(np.isfinite(L)):
                return Factor(L, j)
        except np.linalg.LinAlgError:
            pass
        if j >= JITTER_MAX:
            raise NotPSD(f"matrix not positive definite with jitter up to {JITTER_MAX:g}")
        j = JITTER_START if j < JITTER_START else min(10.0 * j, JITTER_MAX)


def solve_psd(K, B, jitter=0.0):
    return cholesky_psd(K, jitter).solve(B)


def logdet_psd(K, jitter=0.0):
    return cholesky_psd(K, jitter).logdet()


def psd_root(K, tol=1e-10):
    """Matrix M with M M^T = K, tolerating rank deficiency.

    Tries a plain Cholesky first; falls back to an eigendecomposition with
    clipped eigenvalues. Raises ``NotPSD`` for clearly negative spectra.
    """
    K = np.asarray(K, dtype=np.float64)
    try:
        return np.linalg.cholesky(K)
    except np.linalg.LinAlgError:
        pass
    w, U = np.linalg.eigh(0.5 * (K + K.T))
    top = max(np.max(np.abs(w)), 1e-300) if w.size else 1.0
    if w.size and w[0] < -tol * top:
        raise NotPSD(f"matrix has negative eigenvalue {w[0]:.3e}")
    keep = w > tol * top
    return U[:, keep] * np.sqrt(w[keep])


def sample_gaussian_columns(K, n_cols, rng, root=None):
    """P x n_cols matrix whose columns are iid N(0, K)."""
    M = psd_root(K) if root is None else root
    z = _gen(rng).standard_normal((M.shape[1], int(n_cols)))
    return M @ z


@dataclass(frozen=True)
class WishartSpec:
    """Scale matrix V and degrees of freedom N of W_P(V, N)."""

    V: np.ndarray
    N: int

    def __post_init__(self):
        if int(self.N) < 1:
            raise ValueError("degrees of freedom must be >= 1")
        object.__setattr__(self, "V", as_kernel(self.V))
        object.__setattr__(self, "N", int(self.N))


def sample_wishart(spec: WishartSpec, rng, root=None):
    """R = G G^T with the N columns of G iid N(0, V); E[R] = N V.

    Pass V = V0 / N for the normalised convention E[R] = V0.
    """
    G = sample_gaussian_columns(spec.V, spec.N, rng, root=root)
    return G @ G.T


def chi2_contraction(R, V, s, tol=1e-14):
    """s^T R s / s^T V s, which is chi^2_N distributed when R ~ W_P(V, N)."""
    s = np.asarray(s, dtype=np.float64)
    den = float(s @ V @ s)
    scale = float(s @ s) * max(np.max(np.abs(np.diag(V))), 1e-300)
    if den <= tol * scale:
        raise DegenerateDirection("direction has zero variance under V")
    return float(s @ R @ s) / den
