"""Mean-field (muP) output scaling.

muP divides the network output by gamma = gamma0 sqrt(N).  For the output
posterior this is the same as shrinking the readout prior variance by
gamma^2, which is how the kernel theory sees it; the temperature is
lowered to T / gamma^2 so the likelihood keeps pace with the sharper prior.
"""

from ..errors import InvalidParameter

__all__ = ["mu_p_transform", "rescale_factor"]


def mu_p_transform(spec, gamma0=1.0):
    """muP version of an SP ``NetworkSpec`` (temperature divided by gamma^2)."""
    if not gamma0 > 0:
        raise InvalidParameter("gamma0 must be positive")
    if spec.parametrization == "mup":
        raise InvalidParameter("spec is already in muP")
    out = spec.replace(parametrization="mup", gamma0=float(gamma0))
    return out.replace(temperature=spec.temperature / out.gamma**2)


def rescale_factor(Q, spec):
    """Renormalisation of the kernel relative to the prior, Q / (gamma^2 lambda_readout)."""
    return float(Q) / (spec.gamma**2 * spec.precisions[-1])
