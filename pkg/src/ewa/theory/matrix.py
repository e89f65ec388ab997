"""Matrix order parameters: multi-output and convolutional kernel renormalisation.

The action over L positive-definite matrices q_1..q_L is

    S = sum_l w_l [Tr q_l - logdet q_l] + U(Qprod),   Qprod = B B^T,  B = U_L ... U_1,

where q_l = U_l U_l^T and U(.) is a data term.  The optimiser works on
the Cholesky factors U_l with log-parametrised diagonals; this free
triangular parametrisation keeps every iterate positive definite.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from ..core import cholesky_psd
from ..errors import InvalidParameter, NoConvergence, ShapeMismatch
from .action import SaddleResult

__all__ = [
    "matrix_saddle",
    "MatrixSaddleResult",
    "multioutput_data_term",
    "cnn_data_term",
    "matrix_entropy",
]


def matrix_entropy(q):
    """Tr q - logdet q (minimised at q = I with value dim)."""
    return float(np.trace(q) - cholesky_psd(q).logdet())


@dataclass
class MatrixSaddleResult(SaddleResult):
    """SaddleResult whose ``q`` is the product matrix; ``layers`` holds q_1..q_L."""

    layers: list = field(default_factory=list, repr=False)

    @property
    def Q(self):
        return np.asarray(self.q)


def _gradient_from_solve(Ainv, z, alpha, P):
    # d/dK of (alpha/P)[logdet(I + beta K) + y^T (I/beta + K)^-1 y] = (alpha/P)(A^-1 - z z^T)
    return (alpha / P) * (Ainv - np.outer(z, z))


def multioutput_data_term(theta, Y, beta, alpha):
    """Data term for K = Qprod kron Theta with labels Y of shape (P, D).

    Labels are vectorised output-major, matching ``renorm_kernel``.
    """
    theta = np.asarray(theta, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if Y.ndim == 1:
        Y = Y[:, None]
    P, D = Y.shape
    if theta.shape != (P, P):
        raise ShapeMismatch("kernel and labels disagree in size")
    yv = Y.T.reshape(-1)
    eye = np.eye(P * D)

    def term(Qm):
        K = np.kron(Qm, theta)
        A = eye / beta + K
        f = cholesky_psd(A)
        Ainv = f.solve(eye)
        z = Ainv @ yv
        val = (alpha / P) * (cholesky_psd(eye + beta * K).logdet() + yv @ z)
        W = _gradient_from_solve(Ainv, z, alpha, P).reshape(D, P, D, P)
        G = np.einsum("bnam,mn->ab", W, theta)
        return val, 0.5 * (G + G.T)

    return term


def cnn_data_term(theta_stacked, n_patches, y, beta, alpha):
    """Data term for the convolutional renormalised kernel (see ``renorm_kernel_cnn``)."""
    Np = int(n_patches)
    T = np.asarray(theta_stacked, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    P = len(y)
    if T.shape != (Np * P, Np * P):
        raise ShapeMismatch("stacked kernel size does not match patches x patterns")
    T4 = T.reshape(Np, P, Np, P)
    eye = np.eye(P)

    def term(Qm):
        K = np.einsum("ij,jmin->mn", Qm, T4) / Np
        f = cholesky_psd(eye / beta + K)
        Ainv = f.solve(eye)
        z = Ainv @ y
        val = (alpha / P) * (cholesky_psd(eye + beta * K).logdet() + y @ z)
        W = _gradient_from_solve(Ainv, z, alpha, P)
        G = np.einsum("imjn,mn->ij", T4, W) / Np
        return val, 0.5 * (G + G.T)

    return term


def _unpack(x, dim, L):
    n = dim * (dim + 1) // 2
    il = np.tril_indices(dim)
    diag = il[0] == il[1]
    Us = []
    for ell in range(L):
        v = x[ell * n:(ell + 1) * n].copy()
        v[diag] = np.exp(v[diag])
        U = np.zeros((dim, dim))
        U[il] = v
        Us.append(U)
    return Us


def _pack_grad(GUs, Us, dim):
    il = np.tril_indices(dim)
    diag = il[0] == il[1]
    out = []
    for G, U in zip(GUs, Us):
        v = G[il].copy()
        v[diag] *= U[il][diag]
        out.append(v)
    return np.concatenate(out)


def matrix_saddle(data_term, dim, n_layers=1, weights=None, method="lbfgs", lr=5e-4,
                  tol=1e-6, max_iter=1000, init=None):
    """Minimise sum_l w_l [Tr q_l - logdet q_l] + data_term(Qprod) over PD matrices.

    ``data_term(Qm)`` returns the value and the symmetric gradient dU/dQm.
    ``method="lbfgs"`` uses a quasi-Newton solver plus Newton polishing to a gradient tolerance
    ``tol``; ``method="adam"`` runs Adam with step ``lr`` and stops when the
    action changes by less than ``tol`` for 5 consecutive epochs or after
    ``max_iter`` epochs.  Starts from q_l = I unless ``init`` (list of
    matrices) is given.
    """
    dim, L = int(dim), int(n_layers)
    if dim < 1 or L < 1:
        raise InvalidParameter("dim and n_layers must be positive")
    w = np.ones(L) if weights is None else np.asarray(weights, dtype=np.float64)
    n = dim * (dim + 1) // 2
    if init is None:
        x0 = np.zeros(L * n)
    else:
        il = np.tril_indices(dim)
        parts = []
        for q in init:
            U = np.linalg.cholesky(np.asarray(q, dtype=np.float64))
            v = U[il].copy()
            v[il[0] == il[1]] = np.log(np.diag(U))
            parts.append(v)
        x0 = np.concatenate(parts)

    def fun(x):
        Us = _unpack(x, dim, L)
        B = np.eye(dim)
        prefix = [B]
        for U in Us:
            B = U @ B
            prefix.append(B)
        Qm = B @ B.T
        val, G = data_term(Qm)
        ent = 0.0
        GUs = []
        dB = 2.0 * G @ B
        left = np.eye(dim)
        for ell in reversed(range(L)):
            U = Us[ell]
            ent += w[ell] * (np.sum(U * U) - 2.0 * np.sum(np.log(np.diag(U))))
            gU = left.T @ dB @ prefix[ell].T
            gU = gU + w[ell] * (2.0 * U - 2.0 * np.diag(1.0 / np.diag(U)))
            GUs.append(np.tril(gU))
            left = left @ U
        GUs.reverse()
        return ent + val, _pack_grad(GUs, Us, dim)

    history = []
    if method == "lbfgs":
        res = minimize(fun, x0, jac=True, method="L-BFGS-B",
                       options={"gtol": tol, "ftol": 1e-15, "maxiter": max_iter},
                       callback=lambda xk: history.append(fun(xk)[0]))
        x, nit = _newton_polish(fun, res.x, tol), res.nit
    elif method == "adam":
        x, nit = _adam(fun, x0, lr, tol, max_iter, history)
    else:
        raise InvalidParameter(f"unknown method {method!r}")
    val, g = fun(x)
    gn = float(np.linalg.norm(g))
    Us = _unpack(x, dim, L)
    layers = [U @ U.T for U in Us]
    B = np.eye(dim)
    for U in Us:
        B = U @ B
    out = MatrixSaddleResult(B @ B.T, float(val), gn, int(nit),
                             gn < tol if method == "lbfgs" else nit < max_iter, history, layers)
    if method == "lbfgs" and not out.converged:
        err = NoConvergence(f"matrix saddle stopped with gradient norm {gn:.3e}")
        err.result = out
        raise err
    return out


def _newton_polish(fun, x, tol, max_iter=20):
    # quasi-Newton stalls near sqrt(eps) in the gradient; finish with Newton
    # steps on a central-difference Hessian of the analytic gradient
    g = fun(x)[1]
    n = len(x)
    for _ in range(max_iter):
        if np.linalg.norm(g) < 0.1 * tol:
            break
        H = np.empty((n, n))
        for k in range(n):
            h = 1e-6 * max(1.0, abs(x[k]))
            e = np.zeros(n)
            e[k] = h
            H[:, k] = (fun(x + e)[1] - fun(x - e)[1]) / (2 * h)
        try:
            xn = x - np.linalg.solve(0.5 * (H + H.T), g)
        except np.linalg.LinAlgError:
            break
        gn = fun(xn)[1]
        if not np.linalg.norm(gn) < np.linalg.norm(g):
            break
        x, g = xn, gn
    return x


def _adam(fun, x, lr, tol, max_iter, history, b1=0.9, b2=0.999, eps=1e-8, patience=5):
    m = np.zeros_like(x)
    v = np.zeros_like(x)
    prev = None
    calm = 0
    for t in range(1, max_iter + 1):
        val, g = fun(x)
        history.append(val)
        if prev is not None and abs(val - prev) < tol:
            calm += 1
            if calm >= patience:
                return x, t
        else:
            calm = 0
        prev = val
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        x = x - lr * (m / (1 - b1**t)) / (np.sqrt(v / (1 - b2**t)) + eps)
    return x, max_iter
