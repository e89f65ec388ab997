"""Non-central one-hidden-layer theory at zero temperature.

For activations with non-zero mean m the readout sees the second-moment
matrix K = Sigma + m m^T (= lam_1 Theta(C)).  With the task overlaps

    M_yy = y^T K^-1 y / P,  M_my = m^T K^-1 y / sqrt(P),
    M_mm = m^T K^-1 m,      Gamma_K = logdet K / P

and Delta = Q - 1/(1 + Qb) the action reads

    S(Q, Qb) = -Q Qb + log(1 + Qb) + alpha log(Q/lam_1) + alpha Gamma_K
               + alpha lam_1 M_yy / Q + (alpha/P) log(1 - Delta M_mm / Q)
               + alpha lam_1 Delta M_my^2 / (Q (Q - Delta M_mm)).

Qb is conjugate to Q, so the physical point is a stationary point of S,
not a minimum.  Central case: Qb = 1/Q - 1 gives Delta = 0 and the
remaining terms are the central action with M_yy of Theta = K / lam_1.
"""

from dataclasses import dataclass

import numpy as np
from scipy.optimize import root

from ..core import cholesky_psd, solve_psd
from ..errors import InvalidParameter, NoConvergence
from ..nngp import activation_mean_cov

__all__ = [
    "TaskOverlaps",
    "NoncentralState",
    "DomainError",
    "noncentral_overlaps",
    "noncentral_setup",
    "noncentral_action_1hl",
    "noncentral_gradient_1hl",
    "noncentral_saddle_1hl",
    "effective_dimension",
]


class DomainError(InvalidParameter):
    """Arguments of the logarithms in the non-central action are not positive."""


@dataclass(frozen=True)
class TaskOverlaps:
    Myy: float
    Mmy: float
    Mmm: float
    GammaK: float
    P: int


@dataclass(frozen=True)
class NoncentralState:
    Q: float
    Qbar: float
    converged: bool = True
    grad_norm: float = 0.0

    @property
    def delta(self):
        return self.Q - 1.0 / (1.0 + self.Qbar)


def noncentral_overlaps(K, m, y, jitter=0.0):
    """Task overlaps from the activation second-moment matrix ``K = Sigma + m m^T``."""
    y = np.asarray(y, dtype=np.float64)
    m = np.asarray(m, dtype=np.float64)
    P = len(y)
    f = cholesky_psd(K, jitter)
    a = f.half_solve(np.column_stack([y, m]))
    ay, am = a[:, 0], a[:, 1]
    return TaskOverlaps(
        Myy=float(ay @ ay) / P,
        Mmy=float(am @ ay) / np.sqrt(P),
        Mmm=float(am @ am),
        GammaK=f.logdet() / P,
        P=P,
    )


def noncentral_setup(C, act, y, jitter=0.0):
    """Mean, covariance and overlaps for a one-hidden-layer network on Gram matrix C."""
    m, Sigma = activation_mean_cov(C, act)
    ov = noncentral_overlaps(Sigma + np.outer(m, m), m, y, jitter)
    return m, Sigma, ov


def _terms(Q, Qb, ov, alpha, lam1):
    if not (Q > 0 and 1.0 + Qb > 0):
        raise DomainError("need Q > 0 and 1 + Qbar > 0")
    D = Q - 1.0 / (1.0 + Qb)
    arg = 1.0 - D * ov.Mmm / Q
    if not arg > 0:
        raise DomainError("1 - Delta M_mm / Q must be positive")
    return D, arg


def noncentral_action_1hl(state, ov: TaskOverlaps, alpha, lam1):
    """S(Q, Qb) of the module docstring; ``state`` is a NoncentralState or (Q, Qb)."""
    Q, Qb = (state.Q, state.Qbar) if isinstance(state, NoncentralState) else state
    D, arg = _terms(Q, Qb, ov, alpha, lam1)
    P = ov.P
    return float(
        -Q * Qb + np.log1p(Qb) + alpha * np.log(Q / lam1) + alpha * ov.GammaK
        + alpha * lam1 * ov.Myy / Q + alpha / P * np.log(arg)
        + alpha * lam1 * D * ov.Mmy**2 / (Q * (Q - D * ov.Mmm))
    )


def noncentral_gradient_1hl(state, ov: TaskOverlaps, alpha, lam1):
    """(dS/dQ, dS/dQb)."""
    Q, Qb = (state.Q, state.Qbar) if isinstance(state, NoncentralState) else state
    D, arg = _terms(Q, Qb, ov, alpha, lam1)
    P, Mmm = ov.P, ov.Mmm
    c = alpha * lam1 * ov.Mmy**2
    den = Q * Q - Q * D * Mmm
    # partials at fixed Delta, then through Delta (dDelta/dQ = 1, dDelta/dQb = 1/(1+Qb)^2)
    d5_dD = -(alpha / P) * (Mmm / Q) / arg
    d5_dQ = (alpha / P) * (D * Mmm / Q**2) / arg
    d6_dD = c * (1.0 / den + D * Q * Mmm / den**2)
    d6_dQ = -c * D * (2.0 * Q - D * Mmm) / den**2
    dD = d5_dD + d6_dD
    gQ = -Qb + alpha / Q - alpha * lam1 * ov.Myy / Q**2 + d5_dQ + d6_dQ + dD
    gQb = -Q + 1.0 / (1.0 + Qb) + dD / (1.0 + Qb) ** 2
    return np.array([gQ, gQb])


def noncentral_saddle_1hl(ov: TaskOverlaps, alpha, lam1, init=(1.0, 0.0), tol=1e-9):
    """Stationary point of S(Q, Qb), found as a root of the gradient.

    Starts from the infinite-width values (1, 0) and finishes with Newton
    polishing on a finite-difference Jacobian of the analytic gradient.
    """
    def g(x):
        try:
            return noncentral_gradient_1hl(tuple(x), ov, alpha, lam1)
        except DomainError:
            return np.full(2, 1e10)

    sol = root(g, np.asarray(init, dtype=np.float64), method="hybr", options={"xtol": 1e-14})
    x = sol.x
    for _ in range(20):
        r = g(x)
        if np.linalg.norm(r) < 0.1 * tol:
            break
        J = np.empty((2, 2))
        for k in range(2):
            h = 1e-7 * max(1.0, abs(x[k]))
            e = np.zeros(2)
            e[k] = h
            J[:, k] = (g(x + e) - g(x - e)) / (2 * h)
        try:
            x = x - np.linalg.solve(J, r)
        except np.linalg.LinAlgError:
            break
    gn = float(np.linalg.norm(g(x)))
    state = NoncentralState(float(x[0]), float(x[1]), gn < tol, gn)
    if not state.converged:
        err = NoConvergence(f"non-central saddle residual {gn:.3e}")
        err.result = state
        raise err
    return state


def effective_dimension(Sigma, m, Q, beta):
    """t = Tr[Sigma (I/beta + Q (Sigma + m m^T))^-1]."""
    Sigma = np.asarray(Sigma, dtype=np.float64)
    m = np.asarray(m, dtype=np.float64)
    if not (beta > 0 and Q >= 0):
        raise InvalidParameter("need beta > 0 and Q >= 0")
    A = np.eye(len(m)) / beta + Q * (Sigma + np.outer(m, m))
    return float(np.trace(solve_psd(A, Sigma)))
