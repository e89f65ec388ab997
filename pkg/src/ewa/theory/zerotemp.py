"""Zero-temperature saddle point of the symmetric scalar theory.

At beta = inf the symmetric action is S(q) = L q + L(alpha - 1) log q + alpha M / q^L
and its stationary point solves q^L (q + alpha - 1) = alpha M.
"""

import numpy as np
from scipy.optimize import brentq

from ..errors import InvalidParameter

__all__ = ["zero_temp_saddle_1hl", "zero_temp_state_eq", "zero_temp_action"]


def zero_temp_action(q, alpha, Myy, L=1):
    """Symmetric zero-temperature action up to constants."""
    q = np.asarray(q, dtype=np.float64)
    return L * q + L * (alpha - 1.0) * np.log(q) + alpha * Myy / q**L


def _check(alpha, Myy):
    if not (alpha >= 0 and Myy >= 0):
        raise InvalidParameter("need alpha >= 0 and M_yy >= 0")


def zero_temp_saddle_1hl(alpha, Myy):
    """Positive root of q^2 + (alpha - 1) q - alpha M = 0."""
    _check(alpha, Myy)
    b = 0.5 * (alpha - 1.0)
    c = alpha * Myy
    if c == 0.0:
        return _degenerate(alpha)
    root = np.sqrt(b * b + c)
    # avoid cancellation when b > 0
    return float(c / (b + root)) if b > 0 else float(root - b)


def _degenerate(alpha):
    # alpha M = 0: alpha = 0 gives the prior value; M = 0 the entropic minimum 1 - alpha
    if alpha == 0.0:
        return 1.0
    if alpha < 1.0:
        return 1.0 - alpha
    raise InvalidParameter("M_yy = 0 with alpha >= 1 has no positive stationary point")


def zero_temp_state_eq(alpha, Myy, L):
    """Unique positive root of q^L (q + alpha - 1) = alpha M, by bracketed root finding."""
    _check(alpha, Myy)
    L = int(L)
    if L < 1:
        raise InvalidParameter("L must be >= 1")
    c = alpha * Myy
    if c == 0.0:
        return _degenerate(alpha)
    logc = np.log(c)

    # f is increasing in s = log q on the admissible range q > max(0, 1 - alpha)
    def f(s):
        q = np.exp(s)
        with np.errstate(divide="ignore"):  # -inf at the edge of the admissible range
            return L * s + np.log(q + alpha - 1.0) - logc

    if alpha < 1.0:
        q0 = 1.0 - alpha
        gap = q0
        for _ in range(100):
            gap *= 1e-3
            lo = np.log(q0 + gap)
            if f(lo) < 0:
                break
    else:
        lo = -1.0
        while f(lo) >= 0:
            lo -= 10.0
    hi = max(lo + 1.0, np.log(max(1.0, c)))
    while f(hi) <= 0:
        hi += 10.0
    s = brentq(f, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=1000)
    return float(np.exp(s))
