"""Stochastic gradient descent on Gaussians in the transport geometry.

Each iteration draws one sample X from the current Gaussian, takes a step

    m'      = m - h grad V(X)
    M       = I - h (hess V(X) - Sigma^{-1})
    Sigma'  = clip( M Sigma M )

and truncates the covariance eigenvalues at 1/alpha.  Under an
alpha-strongly-convex, 1-smooth potential and h <= alpha^2 / 60 the
iterates contract in expectation toward the best Gaussian fit, up to a
noise floor of 36 d h / alpha^2; the sweep helper here exists to check
that bound empirically across seeds.
"""

from __future__ import annotations

import dataclasses
import logging
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DegeneracyError, DomainError
from .gaussian_flow import FlowTrace
from .geometry import GaussianParam, clip_eigenvalues, symmetrize, w2_distance_sq
from .quadrature import unnormalized_kl_cubature
from .targets import Target

logger = logging.getLogger(__name__)


@dataclass
class SgdConfig:
    """Parameters of the stochastic descent loop.

    clip_threshold defaults to 1/alpha.  Step sizes above alpha^2/60 are
    rejected unless allow_large_step is set, in which case a warning is
    emitted instead; clipping can be switched off to observe the raw
    update.
    """

    alpha: float
    step_size: float
    iterations: int
    seed: int = 0
    clip_threshold: float | None = None
    record_every: int = 1
    log_z: float = 0.0
    clip: bool = True
    allow_large_step: bool = False

    def __post_init__(self):
        if self.alpha <= 0:
            raise DomainError(f"alpha must be positive, got {self.alpha}")
        # h = 0 is allowed as a degenerate identity update at the step level.
        if self.step_size < 0:
            raise DomainError(f"step size must be nonnegative, got {self.step_size}")
        if self.iterations < 0:
            raise DomainError("iterations must be >= 0")
        if self.record_every < 1:
            raise DomainError("record_every must be >= 1")
        bound = self.alpha**2 / 60.0
        if self.step_size > bound * (1.0 + 1e-12):
            if not self.allow_large_step:
                raise DomainError(
                    f"step size {self.step_size} exceeds alpha^2/60 = {bound:.3e}; "
                    "set allow_large_step=True to override"
                )
            warnings.warn(
                f"step size {self.step_size} exceeds alpha^2/60 = {bound:.3e}; "
                "the contraction guarantee no longer applies",
                stacklevel=2,
            )
        if self.clip_threshold is None:
            self.clip_threshold = 1.0 / self.alpha
        elif self.clip_threshold <= 0:
            raise DomainError("clip threshold must be positive")


def bw_sgd_step(
    p: GaussianParam, target: Target, cfg: SgdConfig, rng: np.random.Generator
) -> GaussianParam:
    """One stochastic update from p, consuming one sample from rng."""
    chol = np.linalg.cholesky(p.cov)
    x_hat = p.mean + chol @ rng.standard_normal(p.dim)
    new_mean = p.mean - cfg.step_size * np.asarray(target.grad(x_hat), dtype=float)
    precision = np.linalg.inv(p.cov)
    m = np.eye(p.dim) - cfg.step_size * (target.hess(x_hat) - precision)
    cov_plus = symmetrize(m @ p.cov @ m)
    if np.linalg.eigvalsh(cov_plus)[0] <= 0.0:
        raise DegeneracyError(
            f"covariance lost positive definiteness (step size h={cfg.step_size})"
        )
    if cfg.clip:
        cov_plus = clip_eigenvalues(cov_plus, cfg.clip_threshold)
    return GaussianParam(new_mean, cov_plus)


def run_bw_sgd(
    p0: GaussianParam,
    target: Target,
    cfg: SgdConfig,
    reference: GaussianParam | None = None,
) -> FlowTrace:
    """Run cfg.iterations steps from p0, recording a trace.

    Every snapshot stores the cubature KL estimate; when a reference
    Gaussian is supplied the squared transport distance to it is recorded
    as well.  The trace is a pure function of (p0, target, cfg).
    """
    if not target.has_hessian:
        raise DomainError("the stochastic update needs gradient and Hessian oracles")
    if cfg.step_size == 0.0 and cfg.iterations > 0:
        raise DomainError("zero step size cannot advance a run")
    eigs0 = np.linalg.eigvalsh(p0.cov)
    lo, hi = cfg.alpha / 9.0, 1.0 / cfg.alpha
    if eigs0[0] < lo * (1.0 - 1e-12) or eigs0[-1] > hi * (1.0 + 1e-12):
        warnings.warn(
            f"initial covariance eigenvalues [{eigs0[0]:.3e}, {eigs0[-1]:.3e}] fall "
            f"outside [alpha/9, 1/alpha] = [{lo:.3e}, {hi:.3e}]; the contraction "
            "guarantee assumes that range",
            stacklevel=2,
        )
    rng = np.random.default_rng(cfg.seed)
    trace = FlowTrace()

    floor_logged = False

    def record(k: int, p: GaussianParam):
        w2sq = w2_distance_sq(p, reference) if reference is not None else None
        trace.append(
            k * cfg.step_size if k > 0 else 0.0,
            p,
            unnormalized_kl_cubature(p, target, cfg.log_z),
            w2sq,
        )

    p = p0
    record(0, p)
    for k in range(1, cfg.iterations + 1):
        try:
            p = bw_sgd_step(p, target, cfg, rng)
        except DegeneracyError as exc:
            raise DegeneracyError(f"iteration {k}: {exc}") from exc
        if not floor_logged and np.linalg.eigvalsh(p.cov)[0] < lo * (1.0 - 1e-9):
            logger.warning(
                "iteration %d: smallest covariance eigenvalue fell below alpha/9", k
            )
            floor_logged = True
        if k % cfg.record_every == 0 or k == cfg.iterations:
            record(k, p)
    return trace


def run_seed_sweep(
    p0: GaussianParam,
    target: Target,
    cfg: SgdConfig,
    seeds: list[int],
    reference: GaussianParam,
) -> dict:
    """Run one trace per seed and aggregate W2^2 to the reference.

    Seeds are processed (and results merged) in the given order, so the
    output is deterministic.  Returns per-snapshot iteration indices,
    times, and the mean and variance of the squared distance across seeds.
    """
    if not seeds:
        raise DomainError("need at least one seed")
    all_w2: list[np.ndarray] = []
    times = None
    for seed in seeds:
        trace = run_bw_sgd(p0, target, dataclasses.replace(cfg, seed=seed), reference)
        all_w2.append(np.asarray(trace.w2sq_to_ref))
        if times is None:
            times = np.asarray(trace.times)
    stacked = np.stack(all_w2)
    iterations = np.rint(times / cfg.step_size).astype(int)
    return {
        "iterations": iterations.tolist(),
        "times": times.tolist(),
        "n_seeds": len(seeds),
        "mean_w2sq": np.mean(stacked, axis=0).tolist(),
        "var_w2sq": np.var(stacked, axis=0, ddof=1).tolist() if len(seeds) > 1 else [0.0] * stacked.shape[1],
    }
