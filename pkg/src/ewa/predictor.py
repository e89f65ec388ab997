"""Gaussian-process predictor under a (renormalised) kernel and its losses.

With A = I/beta + K (A = K at zero temperature) the posterior of the output
at a point x is Gaussian with

    mean  Gamma(x) = k(x)^T A^-1 y,
    var   sigma2(x) = k(x, x) - k(x)^T A^-1 k(x),

and the expected squared error there is (y(x) - Gamma(x))^2 + sigma2(x).
"""

import csv
import hashlib
import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from .core import cholesky_psd
from .errors import EWAError, InvalidParameter, ShapeMismatch
from .nngp import joint_kernel

__all__ = [
    "PredictorStats",
    "gp_predict",
    "pointwise_errors",
    "losses",
    "theory_losses",
    "learning_curve",
    "write_curve_csv",
    "CURVE_COLUMNS",
]

VAR_FLOOR = -1e-10


@dataclass
class PredictorStats:
    mean: np.ndarray
    var: np.ndarray
    train_loss: float = np.nan
    test_loss: float = np.nan
    jitter: float = 0.0


def gp_predict(K_train, k_cross, k_self, y, beta, jitter=0.0):
    """Predictive mean and variance at the columns of ``k_cross`` (P x Pt).

    ``beta = inf`` interpolates the training labels exactly.
    """
    K = np.asarray(K_train, dtype=np.float64)
    kx = np.asarray(k_cross, dtype=np.float64)
    if kx.ndim == 1:
        kx = kx[:, None]
    ks = np.atleast_1d(np.asarray(k_self, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64)
    P = len(y)
    if K.shape != (P, P) or kx.shape[0] != P or ks.shape != (kx.shape[1],):
        raise ShapeMismatch("kernel blocks and labels disagree in size")
    if not beta > 0:
        raise InvalidParameter("beta must be positive")
    A = K if np.isinf(beta) else K + np.eye(P) / beta
    f = cholesky_psd(A, jitter)
    alpha = f.solve(y)
    mean = kx.T @ alpha
    half = f.half_solve(kx)
    var = ks - np.einsum("ij,ij->j", half, half)
    low = var < VAR_FLOOR * max(1.0, float(np.max(np.abs(ks))))
    if np.any(low):
        warnings.warn(f"{int(low.sum())} predictive variances below {VAR_FLOOR:g}; clipped to 0",
                      RuntimeWarning, stacklevel=2)
    return PredictorStats(mean, np.clip(var, 0.0, None), jitter=f.jitter)


def pointwise_errors(stats: PredictorStats, labels):
    """eps(x) = (y - Gamma)^2 + sigma2 per point."""
    labels = np.asarray(labels, dtype=np.float64)
    return (labels - stats.mean) ** 2 + stats.var


def losses(stats: PredictorStats, labels):
    """Mean of the pointwise errors (train loss or generalisation error)."""
    return float(np.mean(pointwise_errors(stats, labels)))


def theory_losses(jk, y, yt, beta, Q=1.0, jitter=0.0):
    """Train and test errors of the predictor with kernel Q * Theta.

    ``jk`` is a ``JointKernel``.  Returns (train stats, test stats); each
    carries both aggregate losses.
    """
    K = Q * jk.train
    tr = gp_predict(K, K, np.diag(K), y, beta, jitter)
    te = gp_predict(K, Q * jk.cross, Q * jk.test_diag, y, beta, jitter)
    train_loss, test_loss = losses(tr, y), losses(te, yt)
    for s in (tr, te):
        s.train_loss, s.test_loss = train_loss, test_loss
    return tr, te


CURVE_COLUMNS = ["L", "N", "P", "Q", "train_loss", "test_loss", "converged", "grad_norm", "error"]


def learning_curve(split, grid, act, precisions=None, temperature=0.1, mode="ewa"):
    """Rows (L, N, P, Q, train/test loss) over a grid of {"L": .., "N": ..} points.

    ``mode="nngp"`` uses Q = 1; ``mode="ewa"`` solves the symmetric saddle
    at alpha = P/N.  ``precisions`` is a callable L -> list of L+1 entries,
    a list, or None for all ones.  A failing row records its error and the
    grid goes on.
    """
    from .theory import minimize_action_symmetric

    if mode not in ("nngp", "ewa"):
        raise InvalidParameter(f"unknown theory mode {mode!r}")
    X, y, Xt, yt = split.X_train, split.y_train, split.X_test, split.y_test
    P = len(y)
    beta = 1.0 / temperature
    rows = []
    for pt in grid:
        L, N = int(pt["L"]), pt.get("N")
        row = dict(L=L, N=N, P=P, Q=np.nan, train_loss=np.nan, test_loss=np.nan,
                   converged=True, grad_norm=0.0, error="")
        try:
            lam = precisions(L) if callable(precisions) else (precisions or [1.0] * (L + 1))
            jk = joint_kernel(X, Xt, L, act, lam)
            Q = 1.0
            if mode == "ewa":
                if L < 1:
                    raise InvalidParameter("the EWA saddle needs at least one hidden layer")
                res = minimize_action_symmetric(jk.train, y, beta, P / float(N), L)
                Q = res.Q
                row.update(converged=res.converged, grad_norm=res.grad_norm)
            tr, te = theory_losses(jk, y, yt, beta, Q)
            row.update(Q=Q, train_loss=tr.train_loss, test_loss=te.test_loss)
        except EWAError as exc:
            row.update(converged=False, error=f"{type(exc).__name__}: {exc}")
        rows.append(row)
    return rows


def write_curve_csv(path, rows, meta=None):
    """CSV with a fixed column order and a '# spec_hash=...' header comment."""
    meta = meta or {}
    h = hashlib.sha256(json.dumps(meta, sort_keys=True, default=str).encode()).hexdigest()[:16]
    with open(path, "w", newline="") as fh:
        fh.write(f"# spec_hash={h}\n")
        w = csv.DictWriter(fh, fieldnames=CURVE_COLUMNS, extrasaction="ignore", lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (f"{v:.12g}" if isinstance(v, float) else v) for k, v in r.items()})
    return h
