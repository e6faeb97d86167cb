"""Variational inference with Gaussians and Gaussian mixtures, implemented
as gradient flows in the 2-Wasserstein geometry of Gaussian measures."""

from .bw_sgd import SgdConfig, bw_sgd_step, run_bw_sgd, run_seed_sweep
from .errors import (
    ConfigError,
    ConvergenceError,
    DegeneracyError,
    DomainError,
    ShapeError,
)
from .gaussian_flow import (
    FlowConfig,
    FlowTrace,
    SqrtGaussianState,
    gaussian_flow_rhs,
    integrate_gaussian_flow,
    rk4_step,
    sqrt_cov_rhs,
    tril_half_diag,
    write_trace_csv,
)
from .geometry import (
    BWTangent,
    GaussianParam,
    bures_metric_sq,
    bw_exp,
    bw_log,
    clip_eigenvalues,
    geodesic_point,
    ot_map,
    w2_distance_sq,
)
from .gridnorm import auto_bounds_2d, grid_normalize_2d
from .mixture_flow import (
    MixtureState,
    MixtureTrace,
    gaussian_mean_mixture_neg_entropy,
    init_particles,
    integrate_mixture_flow,
    mixture_logdensity,
    mixture_rhs,
    mixture_score,
    write_trace_jsonl,
)
from .quadrature import (
    CubatureRule,
    gauss_expect_mat,
    gauss_expect_scalar,
    gauss_expect_vec,
    gaussian_neg_entropy,
    mc_kl_mixture,
    sigma_points,
    unnormalized_kl_cubature,
)
from .targets import (
    GaussianTarget,
    LogisticDataset,
    LogisticTarget,
    MixtureTarget,
    ScaledTarget,
    Target,
    generate_logistic_data,
    laplace_approx,
    load_logistic_dataset,
    save_logistic_dataset,
)
from .wfr_flow import WfrState, integrate_wfr_flow, wfr_rhs

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
