"""Scalar effective action of the single-output theory and its minimisers.

For order parameters q_1..q_L with Q = prod(q) the action is

    S(q) = sum_l w_l (q_l - log q_l)
           + (alpha/P) logdet[I + beta Q Theta] + (alpha/P) y^T [I/beta + Q Theta]^{-1} y.

w_l = 1 for equal widths.  With per-layer loads alpha_l = P/N_l the
reference width is the last hidden layer: alpha = alpha_L and
w_l = N_l/N_L = alpha_L/alpha_l.  ``beta = inf`` selects the
zero-temperature action (additive constants dropped)

    sum_l w_l (q_l - log q_l) + alpha log Q + alpha M_yy / Q.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from ..core import logdet_psd, solve_psd
from ..errors import BracketFailure, InvalidParameter, NoConvergence, ShapeMismatch

__all__ = [
    "SaddleResult",
    "ScalarAction",
    "effective_action",
    "minimize_action_symmetric",
    "minimize_action_general",
    "task_overlap_Myy",
    "renorm_kernel",
    "load_weights",
]


@dataclass
class SaddleResult:
    q: np.ndarray
    action: float
    grad_norm: float
    iterations: int
    converged: bool
    history: list = field(default_factory=list, repr=False)

    @property
    def Q(self):
        """Product of the layer order parameters (scalar case) or the matrix itself."""
        q = np.asarray(self.q)
        return float(np.prod(q)) if q.ndim == 1 else q

    def to_dict(self):
        return {
            "q": np.asarray(self.q).tolist(),
            "Q": np.asarray(self.Q).tolist(),
            "action": float(self.action),
            "grad_norm": float(self.grad_norm),
            "iterations": int(self.iterations),
            "converged": bool(self.converged),
        }


def load_weights(alpha, L):
    """Data-term load and entropic weights from a scalar or per-layer ``alpha``."""
    a = np.atleast_1d(np.asarray(alpha, dtype=np.float64))
    if a.size == 1:
        if not a[0] >= 0:
            raise InvalidParameter("alpha must be non-negative")
        return float(a[0]), np.ones(L)
    if a.size != L:
        raise ShapeMismatch(f"expected {L} per-layer loads, got {a.size}")
    if np.any(a <= 0):
        raise InvalidParameter("per-layer loads must be positive")
    return float(a[-1]), a[-1] / a


def task_overlap_Myy(theta, y, jitter=0.0):
    """M_yy = y^T Theta^{-1} y / P."""
    y = np.asarray(y, dtype=np.float64)
    if not np.any(y):
        return 0.0
    return float(y @ solve_psd(theta, y, jitter)) / len(y)


def renorm_kernel(theta, params):
    """Renormalised kernel: prod(q) Theta for scalars/vectors, Q kron Theta for a matrix."""
    theta = np.asarray(theta, dtype=np.float64)
    p = np.asarray(params, dtype=np.float64)
    if p.ndim <= 1:
        return float(np.prod(p)) * theta
    if p.ndim != 2 or p.shape[0] != p.shape[1]:
        raise ShapeMismatch("matrix order parameter must be square")
    return np.kron(p, theta)


def effective_action(q, theta, y, beta, alpha):
    """S(q) evaluated directly through Cholesky factorisations."""
    q = np.atleast_1d(np.asarray(q, dtype=np.float64))
    if np.any(q <= 0):
        raise InvalidParameter("order parameters must be positive")
    a, w = load_weights(alpha, len(q))
    y = np.asarray(y, dtype=np.float64)
    P = len(y)
    Q = float(np.prod(q))
    ent = float(np.sum(w * (q - np.log(q))))
    if np.isinf(beta):
        return ent + a * np.log(Q) + a * task_overlap_Myy(theta, y) / Q
    if not beta > 0:
        raise InvalidParameter("beta must be positive")
    eye = np.eye(P)
    ld = logdet_psd(eye + beta * Q * theta)
    quad = float(y @ solve_psd(eye / beta + Q * theta, y))
    return ent + a / P * (ld + quad)


class ScalarAction:
    """Spectral evaluation of S, its gradient and Hessian in u = log q.

    Theta is diagonalised once, after which every evaluation costs O(P).
    """

    def __init__(self, theta, y, beta, alpha, L=1):
        y = np.asarray(y, dtype=np.float64)
        theta = np.asarray(theta, dtype=np.float64)
        if theta.shape != (len(y), len(y)):
            raise ShapeMismatch("kernel and labels disagree in size")
        self.L = int(L)
        if self.L < 1:
            raise InvalidParameter("need at least one layer")
        self.alpha, self.w = load_weights(alpha, self.L)
        self.beta = float(beta)
        if not self.beta > 0:
            raise InvalidParameter("beta must be positive")
        self.P = len(y)
        if np.isinf(self.beta):
            self.Myy = task_overlap_Myy(theta, y)
        else:
            e, U = np.linalg.eigh(theta)
            self.e = np.clip(e, 0.0, None)
            self.y2 = (U.T @ y) ** 2

    def data(self, Q):
        """U(Q), U'(Q), U''(Q) for the data part of the action."""
        a = self.alpha
        if np.isinf(self.beta):
            M = self.Myy
            return (a * np.log(Q) + a * M / Q, a / Q - a * M / Q**2, -a / Q**2 + 2 * a * M / Q**3)
        c = a / self.P
        e, y2 = self.e, self.y2
        den = 1.0 / self.beta + Q * e
        r = e / den
        U = c * (np.sum(np.log1p(self.beta * Q * e)) + np.sum(y2 / den))
        dU = c * (np.sum(r) - np.sum(y2 * r / den))
        d2U = c * (-np.sum(r * r) + 2.0 * np.sum(y2 * r * r / den))
        return U, dU, d2U

    def value(self, q):
        q = np.broadcast_to(np.asarray(q, dtype=np.float64), (self.L,))
        return float(np.sum(self.w * (q - np.log(q))) + self.data(float(np.prod(q)))[0])

    def grad_u(self, u):
        """dS/du_l and the Hessian in u = log q."""
        q = np.exp(u)
        Q = float(np.exp(np.sum(u)))
        _, dU, d2U = self.data(Q)
        g = self.w * (q - 1.0) + Q * dU
        H = np.diag(self.w * q) + (Q * dU + Q * Q * d2U)
        return g, H

    def grad_q(self, q):
        q = np.asarray(q, dtype=np.float64)
        return self.grad_u(np.log(q))[0] / q


def _coerce(theta_or_action, y, beta, alpha, L):
    if isinstance(theta_or_action, ScalarAction):
        return theta_or_action
    return ScalarAction(theta_or_action, y, beta, alpha, L)


def minimize_action_symmetric(theta, y, beta, alpha, L, bracket=(1e-2, 1e3)):
    """Minimiser of S on the symmetric line q_l = q.

    Root of d/du arcsinh(S(e^u, ..., e^u)) on u in [log q_min, log q_max];
    arcsinh and log only improve conditioning, the root is that of q S'(q).
    """
    act = _coerce(theta, y, beta, alpha, L)
    if np.any(act.w != act.w[0]):
        raise InvalidParameter("symmetric solver requires equal widths")
    Lw = float(np.sum(act.w))

    def h(u):
        q = np.exp(u)
        Q = np.exp(act.L * u)
        U, dU, _ = act.data(Q)
        S = Lw * (q - u) + U
        return (Lw * (q - 1.0) + act.L * Q * dU) / np.sqrt(1.0 + S * S)

    lo, hi = np.log(bracket[0]), np.log(bracket[1])
    hlo, hhi = h(lo), h(hi)
    if not (hlo < 0 < hhi):
        raise BracketFailure(
            f"action derivative has no sign change on q in [{bracket[0]:g}, {bracket[1]:g}] "
            f"(values {hlo:.3e}, {hhi:.3e})")
    u, info = brentq(h, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500,
                     full_output=True)
    q = np.full(act.L, np.exp(u))
    g = act.grad_q(q)
    gn = float(np.linalg.norm(g))
    scale = max(1.0, act.alpha, float(np.sum(act.w)))
    return SaddleResult(q, act.value(q), gn, info.iterations,
                        bool(info.converged and gn < 1e-10 * scale))


def minimize_action_general(theta, y, beta, alpha, L=None, init=None, tol=1e-10, max_iter=200):
    """L-dimensional minimisation by damped Newton in u = log q.

    The Hessian in u is diag(w q) plus a rank-one term; steps are accepted
    with an Armijo backtracking line search, so S decreases monotonically
    (recorded in ``history``).  ``tol`` bounds the gradient norm in q.
    """
    if L is None:
        L = np.atleast_1d(alpha).size
    act = _coerce(theta, y, beta, alpha, L)
    u = np.zeros(act.L) if init is None else np.log(np.asarray(init, dtype=np.float64))
    S = act.value(np.exp(u))
    history = [S]
    for it in range(1, max_iter + 1):
        g, H = act.grad_u(u)
        gq = g / np.exp(u)
        if np.linalg.norm(gq) < tol:
            return SaddleResult(np.exp(u), S, float(np.linalg.norm(gq)), it - 1, True, history)
        try:
            step = -np.linalg.solve(H, g)
            if step @ g >= 0:
                raise np.linalg.LinAlgError
        except np.linalg.LinAlgError:
            step = -g
        t = 1.0
        while t > 1e-12:
            un = u + t * step
            Sn = act.value(np.exp(un))
            if np.isfinite(Sn) and Sn <= S + 1e-4 * t * (g @ step):
                break
            t *= 0.5
        else:
            break
        u, S = un, Sn
        history.append(S)
    gq = act.grad_q(np.exp(u))
    res = SaddleResult(np.exp(u), S, float(np.linalg.norm(gq)), max_iter, False, history)
    if res.grad_norm < tol:
        res.converged = True
        return res
    err = NoConvergence(f"general saddle solver stopped with gradient norm {res.grad_norm:.3e}")
    err.result = res
    raise err
