"""Mixture flow with evolving weights (unbalanced-transport geometry).

Weights are carried as square roots r_i = sqrt(w_i) so that the simplex
constraint becomes the sphere constraint sum r_i^2 = 1.  Means and
covariances move exactly as in the fixed-weight particle flow (with
responsibilities computed from the current weights), while each r_i
reacts to how poorly its component fits:

    dr_i/dt = -(F_i - Fbar) r_i,   F_i = E_{Y ~ p_i}[ln(q / pi)(Y)]

The baseline Fbar defaults to the weighted average sum_j w_j F_j, the
only choice that conserves total mass exactly; the plain average over
components is available behind a flag for comparison.  RK4 does not
preserve the sphere constraint exactly, so r is renormalized after every
full step.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import DegeneracyError, DomainError, ShapeError
from .gaussian_flow import FlowConfig, pack_lower_triangle, rk4_step, sqrt_cov_rhs, unpack_lower_triangle
from .geometry import GaussianParam
from .mixture_flow import (
    MixtureState,
    MixtureTrace,
    _component_updates,
    _MixtureDensity,
)
from .quadrature import CubatureRule, mc_kl_mixture
from .targets import Target

logger = logging.getLogger(__name__)

# Below this square-root weight a component is declared extinct and frozen.
EXTINCT_THRESHOLD = 1e-8


@dataclass
class WfrState:
    """Components carrying square-root weights r_i > 0 with sum r_i^2 = 1."""

    sqrt_weights: np.ndarray
    params: list[GaussianParam]

    def __post_init__(self):
        self.sqrt_weights = np.asarray(self.sqrt_weights, dtype=float)
        if self.sqrt_weights.ndim != 1 or len(self.params) != self.sqrt_weights.size:
            raise ShapeError("one square-root weight per component required")
        if np.any(self.sqrt_weights <= 0):
            raise DomainError("square-root weights must be positive")
        if abs(np.sum(self.sqrt_weights**2) - 1.0) > 1e-9:
            raise DomainError("squared weights must sum to 1")

    @classmethod
    def equal_weights(cls, params: list[GaussianParam]) -> "WfrState":
        n = len(params)
        return cls(np.full(n, np.sqrt(1.0 / n)), list(params))

    def to_mixture(self) -> MixtureState:
        w = self.sqrt_weights**2
        return MixtureState(w / w.sum(), list(self.params))

    @property
    def dim(self) -> int:
        return self.params[0].dim

    @property
    def n_components(self) -> int:
        return len(self.params)


def _fit_gaps(density: _MixtureDensity, target: Target, points_cache) -> np.ndarray:
    """F_i = E_{p_i}[ln q + V] per component, by cubature at cached points."""
    gaps = np.zeros(len(points_cache))
    for i, (weights, points) in enumerate(points_cache):
        values = density.logpdf(points) + np.asarray(target.potential(points), dtype=float)
        gaps[i] = weights @ values
    return gaps


def wfr_rhs(
    state: WfrState,
    target: Target,
    rule: CubatureRule | None = None,
    weighted_baseline: bool = True,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Time derivatives (dmeans, dcovs, dsqrt_weights) of all components."""
    mix = state.to_mixture()
    density = _MixtureDensity(mix)
    dmeans, dcovs, points_cache = _component_updates(density, mix, target, rule)
    gaps = _fit_gaps(density, target, points_cache)
    baseline = float(mix.weights @ gaps) if weighted_baseline else float(np.mean(gaps))
    dr = -(gaps - baseline) * state.sqrt_weights
    return dmeans, dcovs, dr


def integrate_wfr_flow(
    state0: WfrState,
    target: Target,
    cfg: FlowConfig,
    rule: CubatureRule | None = None,
    weighted_baseline: bool = True,
    evolve_weights: bool = True,
    mc_samples: int = 50_000,
) -> MixtureTrace:
    """RK4-integrate means, factors and square-root weights jointly.

    After every full step the square-root weights are renormalized onto
    the unit sphere.  A component whose square-root weight falls below
    EXTINCT_THRESHOLD is flagged extinct and frozen (all its derivatives
    zeroed) while the run continues.  With evolve_weights=False the
    weight equation is switched off, reducing to the fixed-weight flow.
    Snapshots record weights as r^2 alongside a Monte Carlo KL estimate.
    """
    k, d = state0.n_components, state0.dim
    block = d * (d + 1) // 2
    extinct = np.zeros(k, dtype=bool)

    def split(x: np.ndarray):
        means = x[: k * d].reshape(k, d)
        chols = np.stack(
            [unpack_lower_triangle(x[k * d + i * block : k * d + (i + 1) * block], d) for i in range(k)]
        )
        r = x[k * d + k * block :]
        return means, chols, r

    def join(means, chols, r):
        return np.concatenate([means.ravel()] + [pack_lower_triangle(c) for c in chols] + [r])

    def rebuild(x: np.ndarray) -> tuple[MixtureState, np.ndarray, np.ndarray]:
        means, chols, r = split(x)
        params = []
        for i in range(k):
            if np.min(np.diag(chols[i])) < 1e-12:
                raise DegeneracyError(f"component {i}: covariance factor singular")
            try:
                params.append(GaussianParam(means[i], chols[i] @ chols[i].T))
            except DomainError as exc:
                raise DegeneracyError(f"component {i}: {exc}") from exc
        w = r**2
        return MixtureState(w / w.sum(), params), chols, r

    def rhs(x: np.ndarray) -> np.ndarray:
        mix, chols, r = rebuild(x)
        density = _MixtureDensity(mix)
        dmeans, dcovs, points_cache = _component_updates(density, mix, target, rule)
        if evolve_weights:
            gaps = _fit_gaps(density, target, points_cache)
            baseline = float(mix.weights @ gaps) if weighted_baseline else float(np.mean(gaps))
            dr = -(gaps - baseline) * r
        else:
            dr = np.zeros(k)
        dchols = np.stack([sqrt_cov_rhs(chols[i], dcovs[i]) for i in range(k)])
        dmeans[extinct] = 0.0
        dchols[extinct] = 0.0
        dr[extinct] = 0.0
        return join(dmeans, dchols, dr)

    x = join(
        np.stack([p.mean for p in state0.params]),
        np.stack([np.linalg.cholesky(p.cov) for p in state0.params]),
        state0.sqrt_weights.copy(),
    )
    trace = MixtureTrace()

    def record(step: int, xv: np.ndarray):
        mix, _, _ = rebuild(xv)
        kl, stderr = mc_kl_mixture(
            mix, target, mc_samples, seed=cfg.seed, log_z=cfg.log_z, return_stderr=True
        )
        trace.append(step * cfg.step_size, mix, kl, stderr)

    record(0, x)
    n = cfg.n_steps
    for step in range(1, n + 1):
        try:
            x = rk4_step(x, rhs, cfg.step_size)
        except DegeneracyError as exc:
            raise DegeneracyError(f"integration failed at step {step}: {exc}") from exc
        means, chols, r = split(x)
        if evolve_weights:
            r = r / np.sqrt(np.sum(r**2))
        newly_extinct = (np.abs(r) < EXTINCT_THRESHOLD) & ~extinct
        for i in np.nonzero(newly_extinct)[0]:
            logger.warning("component %d extinct at step %d; freezing it", i, step)
            extinct[i] = True
        # Keep extinct factors at their last healthy value; weights pinned tiny.
        r = np.where(extinct, np.maximum(np.abs(r), EXTINCT_THRESHOLD * 1e-3), r)
        x = join(means, chols, r)
        if step % cfg.record_every == 0 or step == n:
            record(step, x)
    return trace
