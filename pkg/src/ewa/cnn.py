"""Stacked kernels of one-dimensional convolutional networks.

A stacked kernel over ``Np`` patches and ``P`` patterns is an (Np P) x (Np P)
matrix ordered patch-major: entry (i P + mu, j P + nu) is the covariance
between patch i of pattern mu and patch j of pattern nu.

Patch windows: patch i (0-based) of a layer with mask M and stride S
covers positions S i, ..., S i + M - 1 of the previous layer; positions
past the end are zero padded.  The number of patches is floor(N_in / S).
"""

from dataclasses import dataclass

import numpy as np

from . import _kernels_py
from .errors import InvalidParameter, ShapeMismatch
from .nngp import Activation, check_precisions, nngp_block, nngp_step

__all__ = [
    "ConvSpec",
    "PatchUnderflow",
    "StackedJoint",
    "extract_patches",
    "patch_gram",
    "translational_gram",
    "omega_map",
    "stacked_nngp_step",
    "cnn_compose",
    "cnn_joint_kernel",
    "renorm_kernel_cnn",
    "renorm_self_cnn",
]


class PatchUnderflow(InvalidParameter):
    """A layer would have no patches left."""


@dataclass(frozen=True)
class ConvSpec:
    """Geometry of a stack of 1D convolutional layers.

    ``masks``, ``strides`` and ``channels`` hold one entry per layer; scalars
    are broadcast to ``depth`` layers.
    """

    n_in: int
    in_channels: int = 1
    masks: tuple = (1,)
    strides: tuple = (1,)
    channels: tuple = (1,)
    depth: int = 1

    def __post_init__(self):
        for name in ("masks", "strides", "channels"):
            v = np.atleast_1d(getattr(self, name)).astype(int)
            if v.size == 1:
                v = np.full(self.depth, int(v[0]))
            if v.size != self.depth:
                raise ShapeMismatch(f"{name} needs {self.depth} entries")
            if np.any(v < 1):
                raise InvalidParameter(f"{name} must be positive")
            object.__setattr__(self, name, tuple(int(a) for a in v))
        counts = self.patch_counts()
        if min(counts) < 1:
            raise PatchUnderflow(f"patch counts {counts} reach zero")

    def patch_counts(self):
        """[N0, Np_1, ..., Np_L]."""
        out = [int(self.n_in)]
        for S in self.strides:
            out.append(out[-1] // S)
        return out

    def n_patches(self, layer=None):
        counts = self.patch_counts()
        return counts[-1] if layer is None else counts[layer]


def _window_index(n_in, n_out, M, S):
    idx = S * np.arange(n_out)[:, None] + np.arange(M)[None, :]
    return idx, idx < n_in


def extract_patches(Z, M, S, n_out=None):
    """Gather patches along axis 1: (P, N_in, A) -> (P, N_out, M, A), zero padded."""
    P, n_in, A = Z.shape
    n_out = n_in // S if n_out is None else n_out
    idx, valid = _window_index(n_in, n_out, M, S)
    out = Z[:, np.where(valid, idx, 0), :]
    out[:, ~valid, :] = 0.0
    return out


def _as_signal(X, conv):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 2:
        X = X[:, :, None]
    if X.shape[1] != conv.n_in or X.shape[2] != conv.in_channels:
        raise ShapeMismatch(f"inputs of shape {X.shape} do not match the conv spec")
    return X


def _patch_rows(X, conv):
    M, S = conv.masks[0], conv.strides[0]
    Xp = extract_patches(X, M, S, conv.n_patches(1))
    P, Np = Xp.shape[:2]
    return np.ascontiguousarray(Xp.transpose(1, 0, 2, 3)).reshape(Np * P, -1)


def patch_gram(X, conv: ConvSpec, lam0=1.0):
    """First-layer stacked pre-activation covariance G = omega(C)."""
    X = _as_signal(X, conv)
    Z = _patch_rows(X, conv)
    return Z @ Z.T / (conv.masks[0] * conv.in_channels * lam0)


def translational_gram(X, lam0=1.0):
    """Channel-averaged position-position Gram, as a stacked kernel with N0 'patches'."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 2:
        X = X[:, :, None]
    P, N0, A = X.shape
    Z = X.transpose(1, 0, 2).reshape(N0 * P, A)
    return Z @ Z.T / (A * lam0)


def omega_map(K, n_in, M, S, n_out=None):
    """[omega(K)]_{ij} = (1/M) sum_k K_{S i + k, S j + k}, zero-padded beyond ``n_in``.

    Works for square stacked kernels and for rectangular cross blocks
    (both sides must have ``n_in`` patches).
    """
    K = np.asarray(K, dtype=np.float64)
    n_out = n_in // S if n_out is None else n_out
    P, Pc = K.shape[0] // n_in, K.shape[1] // n_in
    if P * n_in != K.shape[0] or Pc * n_in != K.shape[1]:
        raise ShapeMismatch("kernel size is not a multiple of the patch count")
    K4 = K.reshape(n_in, P, n_in, Pc)
    out = np.zeros((n_out, P, n_out, Pc))
    base = S * np.arange(n_out)
    for k in range(M):
        sel = base + k
        sel = sel[sel < n_in]  # windows are increasing, so valid ones form a prefix
        n = len(sel)
        out[:n, :, :n, :] += K4[sel][:, :, sel]
    out /= M
    return out.reshape(n_out * P, n_out * Pc)


def _omega_self(Ks, n_in, M, S, n_out):
    # per-pattern (B, n_in, n_in) patch covariances
    out = np.zeros((Ks.shape[0], n_out, n_out))
    base = S * np.arange(n_out)
    for k in range(M):
        sel = base + k
        sel = sel[sel < n_in]
        n = len(sel)
        out[:, :n, :n] += Ks[:, sel][:, :, sel]
    return out / M


def stacked_nngp_step(G, act, lam=1.0):
    """Entrywise NNGP map on a stacked kernel (same closed forms as ``nngp_step``)."""
    return nngp_step(G, act, lam)


def _batch_step(Ks, act, lam):
    act = Activation.parse(act)
    if act is Activation.IDENTITY:
        return Ks / lam
    fn = _kernels_py.erf_map if act is Activation.ERF else _kernels_py.relu_map
    out = np.empty_like(Ks)
    for b in range(Ks.shape[0]):
        d = np.diag(Ks[b]).copy()
        out[b] = fn(Ks[b], d, d, True)
    return out / lam


def cnn_compose(X, conv: ConvSpec, L, act, precisions, return_trajectory=False):
    """(Theta o omega)^L starting from raw inputs X of shape (P, N0, A0).

    The first omega is applied implicitly by ``patch_gram``.  ``precisions``
    has L+1 entries as for fully connected networks.
    """
    if L < 1 or L != conv.depth:
        raise InvalidParameter("L must equal the conv depth and be >= 1")
    lam = check_precisions(precisions, L + 1)
    counts = conv.patch_counts()
    K = patch_gram(X, conv, lam[0])
    traj = [counts[1]]
    for ell in range(1, L + 1):
        if ell > 1:
            K = omega_map(K, counts[ell - 1], conv.masks[ell - 1], conv.strides[ell - 1], counts[ell])
            traj.append(counts[ell])
        K = stacked_nngp_step(K, act, lam[ell])
    return (K, traj) if return_trajectory else K


@dataclass
class StackedJoint:
    """Stacked train kernel, train-test cross blocks and per-test-point patch blocks."""

    train: np.ndarray  # (Np P, Np P)
    cross: np.ndarray  # (Np P, Np Pt)
    test_self: np.ndarray  # (Pt, Np, Np)
    n_patches: int


def cnn_joint_kernel(X, Xt, conv: ConvSpec, L, act, precisions):
    """Propagate train, cross and test self blocks through (Theta o omega)^L."""
    lam = check_precisions(precisions, L + 1)
    X, Xt = _as_signal(X, conv), _as_signal(Xt, conv)
    counts = conv.patch_counts()
    c0 = conv.masks[0] * conv.in_channels * lam[0]
    Z, Zt = _patch_rows(X, conv), _patch_rows(Xt, conv)
    Np, Pt = counts[1], Xt.shape[0]
    tr, cr = Z @ Z.T / c0, Z @ Zt.T / c0
    Zs = Zt.reshape(Np, Pt, -1).transpose(1, 0, 2)
    ts = np.einsum("bia,bja->bij", Zs, Zs) / c0
    for ell in range(1, L + 1):
        if ell > 1:
            n_in, n_out = counts[ell - 1], counts[ell]
            M, S = conv.masks[ell - 1], conv.strides[ell - 1]
            tr = omega_map(tr, n_in, M, S, n_out)
            cr = omega_map(cr, n_in, M, S, n_out)
            ts = _omega_self(ts, n_in, M, S, n_out)
        d_tr = np.diag(tr).copy()
        d_te = np.ascontiguousarray(np.diagonal(ts, axis1=1, axis2=2).T).reshape(-1)
        cr = nngp_block(cr, d_tr, d_te, act, lam[ell])
        tr = nngp_block(tr, d_tr, d_tr, act, lam[ell], symmetric=True)
        ts = _batch_step(ts, act, lam[ell])
    return StackedJoint(tr, cr, ts, counts[L])


def renorm_kernel_cnn(theta_stacked, Q, n_patches=None):
    """K^R = (1/Np) sum_ij Q_ij Theta_ji (P x P) from a stacked kernel."""
    Q = np.asarray(Q, dtype=np.float64)
    Np = Q.shape[0] if n_patches is None else int(n_patches)
    if Q.shape != (Np, Np):
        raise ShapeMismatch("order parameter must be Np x Np")
    T = np.asarray(theta_stacked, dtype=np.float64)
    P = T.shape[0] // Np
    Pc = T.shape[1] // Np
    T4 = T.reshape(Np, P, Np, Pc)
    return np.einsum("ij,jmin->mn", Q, T4) / Np


def renorm_self_cnn(test_self, Q):
    """Per-test-point K^R(x, x) from (Pt, Np, Np) patch blocks."""
    Q = np.asarray(Q, dtype=np.float64)
    return np.einsum("ij,bji->b", Q, test_self) / Q.shape[0]
