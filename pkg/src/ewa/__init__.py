"""Finite-width Bayesian networks through renormalised kernels.

Infinite-width NNGP maps, the effective-action saddle of the Wishart
ansatz, the resulting GP predictors, large-deviation checks of the ansatz
and reference MCMC samplers for the exact network posterior.
"""

__version__ = "0.1.0"

from ._backend import BACKEND
from .core import RandomSource, WishartSpec, cholesky_psd, sample_wishart, solve_psd
from .errors import *  # noqa: F401,F403
from .nets import NetworkSpec, forward, init_from_prior, loss_and_grad
from .nngp import gram_matrix, joint_kernel, nngp_compose, nngp_step
from .predictor import gp_predict, learning_curve, theory_losses
from .theory import (
    minimize_action_general,
    minimize_action_symmetric,
    mu_p_transform,
    noncentral_saddle_1hl,
    rescale_factor,
)
