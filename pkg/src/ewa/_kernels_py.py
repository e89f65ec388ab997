"""Pure numpy versions of the compiled Gaussian expectation maps."""

import numpy as np

RHO_MAX = 1.0 - 1e-12


def erf_map(K, dr, dc, symmetric):
    """E[erf(u) erf(v)] for every entry, u, v ~ N(0, [[dr_i, K_ij], [K_ij, dc_j]])."""
    denom = np.sqrt(np.outer(1.0 + 2.0 * dr, 1.0 + 2.0 * dc))
    out = (2.0 / np.pi) * np.arcsin(2.0 * K / denom)
    if symmetric:
        idx = np.arange(len(dr))
        out[idx, idx] = (2.0 / np.pi) * np.arcsin(2.0 * dr / (1.0 + 2.0 * dr))
        out = 0.5 * (out + out.T)
    return out


def relu_map(K, dr, dc, symmetric):
    """E[relu(u) relu(v)] for every entry; the diagonal is exact when symmetric."""
    s = np.sqrt(np.outer(dr, dc))
    with np.errstate(divide="ignore", invalid="ignore"):
        rho = np.clip(K / s, -RHO_MAX, RHO_MAX)
    rho = np.where(s > 0, rho, 0.0)
    out = s * (np.sqrt(1.0 - rho * rho) + (np.pi - np.arccos(rho)) * rho) / (2.0 * np.pi)
    if symmetric:
        idx = np.arange(len(dr))
        out[idx, idx] = 0.5 * dr
        out = 0.5 * (out + out.T)
    return out
