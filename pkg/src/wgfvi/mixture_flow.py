"""Interacting Gaussian-particle flow for mixture-of-Gaussians inference.

Each mixture component (m_i, Sigma_i) is a particle.  With the mixture
density q and the score difference g = grad ln(q / pi), every component
follows

    dm_i/dt     = -E[g(Y_i)]
    dSigma_i/dt = -E[g(Y_i) (Y_i - m_i)^T] - E[(Y_i - m_i) g(Y_i)^T]

with Y_i drawn from component i (expectations by cubature).  Components
interact only through the mixture score evaluated at each other's sigma
points.  Weights stay fixed; the joint system is integrated by RK4 with
every covariance in square-root form.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import logsumexp

from .errors import DegeneracyError, DomainError, ShapeError
from .gaussian_flow import (
    FlowConfig,
    pack_lower_triangle,
    rk4_step,
    sqrt_cov_rhs,
    unpack_lower_triangle,
)
from .geometry import GaussianParam
from .quadrature import LOG_2PI, CubatureRule, gaussian_neg_entropy, mc_kl_mixture, sigma_points
from .targets import Target


@dataclass
class MixtureState:
    """A weighted finite collection of Gaussians (the mixing measure).

    Weights must be positive and sum to one.  The particle flow keeps
    them fixed (and constructs them equal); the weight-evolving flow
    reuses this container with arbitrary weights.
    """

    weights: np.ndarray
    params: list[GaussianParam]

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        if self.weights.ndim != 1 or len(self.params) != self.weights.size:
            raise ShapeError("one weight per component required")
        if np.any(self.weights <= 0):
            raise DomainError("mixture weights must be positive")
        if abs(self.weights.sum() - 1.0) > 1e-12:
            raise DomainError("mixture weights must sum to 1")
        dims = {p.dim for p in self.params}
        if len(dims) != 1:
            raise ShapeError("components must share one dimension")

    @classmethod
    def equal_weights(cls, params: list[GaussianParam]) -> "MixtureState":
        n = len(params)
        return cls(np.full(n, 1.0 / n), list(params))

    @property
    def dim(self) -> int:
        return self.params[0].dim

    @property
    def n_components(self) -> int:
        return len(self.params)


class _MixtureDensity:
    """Cached per-component factors for repeated density/score evaluation."""

    def __init__(self, state: MixtureState):
        self.means = np.stack([p.mean for p in state.params])
        self.precisions = np.stack([np.linalg.inv(p.cov) for p in state.params])
        chols = np.stack([np.linalg.cholesky(p.cov) for p in state.params])
        logdets = 2.0 * np.sum(np.log(np.diagonal(chols, axis1=1, axis2=2)), axis=1)
        d = self.means.shape[1]
        self.log_norms = -0.5 * (d * LOG_2PI + logdets)
        self.log_weights = np.log(state.weights)

    def _weighted_logpdfs(self, x: np.ndarray) -> np.ndarray:
        diff = x[:, None, :] - self.means[None, :, :]
        quad = np.einsum("nki,kij,nkj->nk", diff, self.precisions, diff)
        return self.log_weights[None, :] - 0.5 * quad + self.log_norms[None, :]

    def logpdf(self, x: np.ndarray) -> np.ndarray:
        return logsumexp(self._weighted_logpdfs(np.atleast_2d(x)), axis=1)

    def score(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        log_terms = self._weighted_logpdfs(x)
        log_terms -= logsumexp(log_terms, axis=1, keepdims=True)
        resp = np.exp(log_terms)
        pulls = np.einsum("kij,nkj->nki", self.precisions, self.means[None, :, :] - x[:, None, :])
        return np.einsum("nk,nki->ni", resp, pulls)


def mixture_logdensity(mu: MixtureState, x: np.ndarray):
    """ln q(x) for the mixture q; accepts a point (d,) or a batch (n, d)."""
    single = np.asarray(x).ndim == 1
    out = _MixtureDensity(mu).logpdf(np.asarray(x, dtype=float))
    return float(out[0]) if single else out


def mixture_score(mu: MixtureState, x: np.ndarray):
    """grad_x ln q(x): responsibility-weighted sum of component scores."""
    single = np.asarray(x).ndim == 1
    out = _MixtureDensity(mu).score(np.asarray(x, dtype=float))
    return out[0] if single else out


def _component_updates(
    density: _MixtureDensity,
    state: MixtureState,
    target: Target,
    rule: CubatureRule | None,
) -> tuple[np.ndarray, np.ndarray, list[tuple[np.ndarray, np.ndarray]]]:
    """Per-component (dmean, dcov) plus each component's sigma points."""
    k, d = state.n_components, state.dim
    dmeans = np.zeros((k, d))
    dcovs = np.zeros((k, d, d))
    points_cache = []
    for i, p in enumerate(state.params):
        weights, points = sigma_points(p, rule)
        g = density.score(points) + np.asarray(target.grad(points), dtype=float)
        dmeans[i] = -weights @ g
        cross = (g * weights[:, None]).T @ (points - p.mean)
        dcovs[i] = -cross - cross.T
        points_cache.append((weights, points))
    return dmeans, dcovs, points_cache


def mixture_rhs(
    mu: MixtureState, target: Target, rule: CubatureRule | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Stacked time derivatives (dmeans (K,d), dcovs (K,d,d)) of all particles."""
    dmeans, dcovs, _ = _component_updates(_MixtureDensity(mu), mu, target, rule)
    return dmeans, dcovs


@dataclass
class MixtureTrace:
    """Recorded mixture snapshots with Monte Carlo KL estimates."""

    times: list[float] = field(default_factory=list)
    states: list[MixtureState] = field(default_factory=list)
    kl_values: list[float] = field(default_factory=list)
    kl_stderrs: list[float] = field(default_factory=list)

    def append(self, t: float, state: MixtureState, kl: float, stderr: float):
        if self.times and t <= self.times[-1]:
            raise DomainError("trace times must be strictly increasing")
        self.times.append(t)
        self.states.append(state)
        self.kl_values.append(kl)
        self.kl_stderrs.append(stderr)

    @property
    def final(self) -> MixtureState:
        return self.states[-1]


def _flatten_mixture(means: np.ndarray, chols: np.ndarray) -> np.ndarray:
    # All means first, then every factor's packed lower triangle.
    return np.concatenate([means.ravel()] + [pack_lower_triangle(c) for c in chols])


def _unflatten_mixture(x: np.ndarray, k: int, d: int) -> tuple[np.ndarray, np.ndarray]:
    means = x[: k * d].reshape(k, d)
    block = d * (d + 1) // 2
    chols = np.stack(
        [
            unpack_lower_triangle(x[k * d + i * block : k * d + (i + 1) * block], d)
            for i in range(k)
        ]
    )
    return means, chols


def integrate_mixture_flow(
    mu0: MixtureState,
    target: Target,
    cfg: FlowConfig,
    rule: CubatureRule | None = None,
    mc_samples: int = 50_000,
) -> MixtureTrace:
    """RK4-integrate the particle system from mu0 over cfg.total_time.

    All component states are stacked into one flat vector (means first,
    then each covariance factor's lower triangle) and stepped jointly.
    Weights never change.  Snapshots carry a seeded Monte Carlo estimate
    of KL(q || target) offset by cfg.log_z.  Degeneracy of a component's
    factor raises DegeneracyError naming the component and step.
    """
    k, d = mu0.n_components, mu0.dim
    weights = mu0.weights.copy()

    def rebuild(x: np.ndarray) -> tuple[MixtureState, np.ndarray]:
        means, chols = _unflatten_mixture(x, k, d)
        params = []
        for i in range(k):
            if np.min(np.diag(chols[i])) < 1e-12:
                raise DegeneracyError(f"component {i}: covariance factor singular")
            try:
                params.append(GaussianParam(means[i], chols[i] @ chols[i].T))
            except DomainError as exc:
                raise DegeneracyError(f"component {i}: {exc}") from exc
        return MixtureState(weights, params), chols

    def rhs(x: np.ndarray) -> np.ndarray:
        state, chols = rebuild(x)
        dmeans, dcovs, _ = _component_updates(_MixtureDensity(state), state, target, rule)
        dchols = np.stack([sqrt_cov_rhs(chols[i], dcovs[i]) for i in range(k)])
        return _flatten_mixture(dmeans, dchols)

    x = _flatten_mixture(
        np.stack([p.mean for p in mu0.params]),
        np.stack([np.linalg.cholesky(p.cov) for p in mu0.params]),
    )
    trace = MixtureTrace()

    def record(step: int, xv: np.ndarray):
        state, _ = rebuild(xv)
        kl, stderr = mc_kl_mixture(
            state, target, mc_samples, seed=cfg.seed, log_z=cfg.log_z, return_stderr=True
        )
        trace.append(step * cfg.step_size, state, kl, stderr)

    record(0, x)
    n = cfg.n_steps
    for step in range(1, n + 1):
        try:
            x = rk4_step(x, rhs, cfg.step_size)
            if step % cfg.record_every == 0 or step == n:
                record(step, x)
        except DegeneracyError as exc:
            raise DegeneracyError(f"integration failed at step {step}: {exc}") from exc
    return trace


def init_particles(
    n: int, radius: float, base_cov: np.ndarray, seed: int
) -> MixtureState:
    """Equal-weight particles with means uniform in a centered ball.

    Every component gets covariance base_cov.  Deterministic given seed.
    """
    if n < 1:
        raise DomainError(f"need at least one particle, got {n}")
    if radius <= 0:
        raise DomainError(f"radius must be positive, got {radius}")
    base_cov = np.asarray(base_cov, dtype=float)
    d = base_cov.shape[0]
    rng = np.random.default_rng(seed)
    directions = rng.standard_normal((n, d))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    radii = radius * rng.random(n) ** (1.0 / d)
    means = directions * radii[:, None]
    return MixtureState.equal_weights([GaussianParam(m, base_cov) for m in means])


def gaussian_mean_mixture_neg_entropy(
    mixing: GaussianParam, component_cov: np.ndarray
) -> float:
    """Negative entropy of the mixture of N(., component_cov) over Gaussian means.

    Mixing N(m, C) over m ~ N(mu, S) is the convolution N(mu, S + C), so
    the value is available in closed form.
    """
    return gaussian_neg_entropy(
        GaussianParam(mixing.mean, mixing.cov + np.asarray(component_cov, dtype=float))
    )


def write_trace_jsonl(trace: MixtureTrace, path: str | Path) -> None:
    """One JSON record per snapshot: t, kl, and per-component w / m / sigma."""
    with open(Path(path), "w") as fh:
        for t, state, kl, stderr in zip(
            trace.times, trace.states, trace.kl_values, trace.kl_stderrs
        ):
            record = {
                "t": t,
                "kl": kl,
                "kl_stderr": stderr,
                "components": [
                    {"w": float(w), "m": p.mean.tolist(), "sigma": p.cov.tolist()}
                    for w, p in zip(state.weights, state.params)
                ],
            }
            fh.write(json.dumps(record) + "\n")
