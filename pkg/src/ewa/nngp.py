"""NNGP kernel maps for fully connected networks without biases.

One layer maps the pre-activation covariance K to

    Theta(K)_{mu nu} = E[sigma(h_mu) sigma(h_nu)] / lam,   h ~ N(0, K),

with the arcsine (Erf) and arccosine (ReLU) closed forms.  Compositions,
train/test joint kernels and the activation mean and covariance used by
the non-central theory are built on top of it.
"""

from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.special import erf

from . import _backend
from .errors import InvalidParameter, NonpositiveDiagonal, ShapeMismatch

__all__ = [
    "Activation",
    "ActivationKind",
    "JointKernel",
    "gram_matrix",
    "nngp_step",
    "nngp_block",
    "nngp_compose",
    "nngp_trajectory",
    "joint_kernel",
    "activation_mean",
    "activation_mean_cov",
    "check_precisions",
]

_TWO_OVER_SQRT_PI = 2.0 / np.sqrt(np.pi)


class Activation(str, Enum):
    ERF = "erf"
    RELU = "relu"
    IDENTITY = "identity"

    @classmethod
    def parse(cls, act):
        if isinstance(act, cls):
            return act
        try:
            return cls(str(act).lower())
        except ValueError:
            raise InvalidParameter(f"unknown activation {act!r}") from None

    @property
    def has_mean(self) -> bool:
        return self is Activation.RELU

    def __call__(self, x):
        if self is Activation.ERF:
            return erf(x)
        if self is Activation.RELU:
            return np.maximum(x, 0.0)
        return x

    def derivative(self, x):
        if self is Activation.ERF:
            return _TWO_OVER_SQRT_PI * np.exp(-x * x)
        if self is Activation.RELU:
            return (x > 0).astype(np.float64)
        return np.ones_like(x)


ActivationKind = Activation


def check_precisions(precisions, n):
    """Return ``precisions`` as a float array of length ``n`` (scalars are broadcast)."""
    lam = np.atleast_1d(np.asarray(precisions, dtype=np.float64))
    if lam.size == 1:
        lam = np.full(n, float(lam[0]))
    if lam.size != n:
        raise ShapeMismatch(f"expected {n} layer precisions, got {lam.size}")
    if np.any(~(lam > 0)):
        raise InvalidParameter("layer precisions must be strictly positive")
    return lam


def gram_matrix(X, lam0=1.0):
    """Input Gram matrix C = X X^T / (lam0 N0)."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ShapeMismatch("inputs must be a P x N0 matrix")
    if not lam0 > 0:
        raise InvalidParameter("lam0 must be positive")
    return X @ X.T / (lam0 * X.shape[1])


def _check_diag(d, act, what="kernel"):
    if act is Activation.IDENTITY:
        return
    if np.any(d < 0) or np.any(~np.isfinite(d)):
        raise NonpositiveDiagonal(f"{what} has a negative or non-finite diagonal entry")


def nngp_block(K, d_row, d_col, act, lam=1.0, symmetric=False):
    """Theta for a rectangular block given the diagonals of both sides.

    ``K[i, j]`` is the covariance between unit ``i`` of the row set and unit
    ``j`` of the column set; ``d_row`` / ``d_col`` hold their variances.
    Units with zero variance (for instance zero-padded positions) give zero.
    """
    act = Activation.parse(act)
    K = np.ascontiguousarray(K, dtype=np.float64)
    if act is Activation.IDENTITY:
        return K / lam
    d_row = np.ascontiguousarray(d_row, dtype=np.float64)
    d_col = np.ascontiguousarray(d_col, dtype=np.float64)
    _check_diag(d_row, act)
    _check_diag(d_col, act)
    if act is Activation.ERF:
        out = _backend.erf_map(K, d_row, d_col, bool(symmetric))
    else:
        out = _backend.relu_map(K, d_row, d_col, bool(symmetric))
    if lam != 1.0:
        out /= lam
    return out


def nngp_step(K, act, lam=1.0):
    """One-layer NNGP map Theta(K) = E[sigma(h) sigma(h)^T] / lam, h ~ N(0, K)."""
    K = np.asarray(K, dtype=np.float64)
    if K.ndim != 2 or K.shape[0] != K.shape[1]:
        raise ShapeMismatch("kernel must be square")
    d = np.diag(K).copy()
    return nngp_block(K, d, d, act, lam, symmetric=True)


def nngp_trajectory(C, L, act, precisions):
    """[C, Theta(C), ..., Theta^L(C)], using ``precisions[l-1]`` for the l-th map."""
    lam = check_precisions(precisions, L) if L > 0 else []
    out = [np.asarray(C, dtype=np.float64)]
    for ell in range(L):
        try:
            out.append(nngp_step(out[-1], act, lam[ell]))
        except NonpositiveDiagonal as exc:
            raise NonpositiveDiagonal(f"depth {ell + 1}: {exc}") from exc
    return out


def nngp_compose(C, L, act, precisions):
    """L-fold composition Theta_{lam_L} o ... o Theta_{lam_1}(C); L = 0 returns C."""
    return nngp_trajectory(C, L, act, precisions)[-1]


@dataclass
class JointKernel:
    """Train, train-test and test-diagonal blocks of Theta^L on the joint data."""

    train: np.ndarray  # P x P
    cross: np.ndarray  # P x Pt, column j is Theta^L(X x_j)
    test_diag: np.ndarray  # Pt, Theta^L(x_j, x_j)

    def assemble(self, test_block=None):
        """Joint (P+Pt) matrix; off-diagonal test entries need ``test_block``."""
        P, Pt = self.cross.shape
        tt = np.diag(self.test_diag) if test_block is None else test_block
        return np.block([[self.train, self.cross], [self.cross.T, tt]])


def joint_kernel(X, Xt, L, act, precisions, with_test_block=False):
    """Propagate train, cross and test-diagonal blocks together through L maps.

    ``precisions`` has L+1 entries: ``precisions[0]`` scales the input Gram,
    ``precisions[1:]`` are used by the successive maps.  Each map only needs
    the diagonals of both sides, so the test-test block is not formed
    unless ``with_test_block`` is set, in which case it is returned as a
    second value.
    """
    X = np.asarray(X, dtype=np.float64)
    Xt = np.asarray(Xt, dtype=np.float64)
    if X.shape[1] != Xt.shape[1]:
        raise ShapeMismatch("train and test inputs differ in dimension")
    lam = check_precisions(precisions, L + 1)
    n0 = X.shape[1]
    Ktr = X @ X.T / (lam[0] * n0)
    Kx = X @ Xt.T / (lam[0] * n0)
    dt = np.einsum("ij,ij->i", Xt, Xt) / (lam[0] * n0)
    Ktt = Xt @ Xt.T / (lam[0] * n0) if with_test_block else None
    for ell in range(1, L + 1):
        d = np.diag(Ktr).copy()
        Kx = nngp_block(Kx, d, dt, act, lam[ell])
        Ktr = nngp_block(Ktr, d, d, act, lam[ell], symmetric=True)
        if Ktt is not None:
            Ktt = nngp_block(Ktt, dt, dt, act, lam[ell], symmetric=True)
        dt = _diag_step(dt, act, lam[ell])
    jk = JointKernel(Ktr, Kx, dt)
    return (jk, Ktt) if with_test_block else jk


def _diag_step(d, act, lam):
    act = Activation.parse(act)
    if act is Activation.IDENTITY:
        return d / lam
    _check_diag(d, act)
    if act is Activation.ERF:
        return (2.0 / np.pi) * np.arcsin(2.0 * d / (1.0 + 2.0 * d)) / lam
    return 0.5 * d / lam


def activation_mean(K, act):
    """m_mu = E[sigma(h_mu)], h_mu ~ N(0, K_mumu)."""
    act = Activation.parse(act)
    d = np.diag(np.asarray(K, dtype=np.float64))
    if act is Activation.RELU:
        _check_diag(d, act)
        return np.sqrt(d / (2.0 * np.pi))
    return np.zeros_like(d)


def activation_mean_cov(K, act, lam=1.0):
    """Mean m and covariance Sigma = lam Theta_lam(K) - m m^T of sigma(h), h ~ N(0, K).

    Neither depends on ``lam``; it is accepted for symmetry with ``nngp_step``.
    """
    m = activation_mean(K, act)
    return m, nngp_step(K, act, 1.0) - np.outer(m, m)
