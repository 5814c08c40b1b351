"""Approximate empirical Bayes for large linear-Gaussian inverse problems.

The negative log marginal likelihood of the hyperparameters is approximated
through the optimal low-rank update of the prior covariance, computed with a
randomized eigensolver on the prior-preconditioned Hessian and a Chebyshev
approximation of the prior square root.
"""

from .covkernel import HyperParams, assemble_prior, bessel_k, matern_aniso, matern_iso
from .eb import EbProblem, EbResult, ParamSpec, SearchSpace, grid_scan, optimize
from .errors import CapacityError, ConditioningError, ConfigError, LowRankEBError, NumericalError
from .linop import (
    BlurSpec,
    GridGeometry,
    LinearOperator,
    RadonSpec,
    blur_operator,
    dense_from_operator,
    from_matrix,
    radon_operator,
)
from .marglik import (
    GaussLinModel,
    LowRankUpdate,
    MargLikValue,
    compute_z,
    dense_update,
    lowrank_update,
    marglik_dense,
    marglik_lowrank,
    precond_hessian_operator,
    logdet_identity,
)
from .posterior import PosteriorSummary, posterior_dense, posterior_lowrank, psnr
from .rsvd import EigenPairs, RsvdConfig, randomized_eig, rsvd_error_bound_check
from .sqrtm import ChebConfig, cheb_coefficients, estimate_spectral_bounds, sqrt_apply

__version__ = "0.1.0"
