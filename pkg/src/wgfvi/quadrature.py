"""Deterministic sigma-point quadrature for Gaussian expectations, plus
KL-divergence estimators (cubature for a single Gaussian, Monte Carlo for
mixtures).

The rule places 2d points at m +/- sqrt(d) * (columns of R), R being the
lower-triangular Cholesky factor of the covariance, each with weight
1/(2d).  It integrates every polynomial of total degree <= 3 exactly.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING, Callable

import numpy as np

from .errors import DomainError
from .geometry import GaussianParam

if TYPE_CHECKING:
    from .mixture_flow import MixtureState
    from .targets import Target

LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass
class CubatureRule:
    """Weights and radial scales of the 2d-point degree-3 rule."""

    weights: np.ndarray
    scales: np.ndarray
    count: int

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        self.scales = np.asarray(self.scales, dtype=float)
        if self.weights.shape != (self.count,) or self.scales.shape != (self.count,):
            raise DomainError("weights and scales must both have length `count`")
        if self.count % 2 != 0:
            raise DomainError("point count must be 2 * dimension")
        if abs(self.weights.sum() - 1.0) > 1e-12:
            raise DomainError("cubature weights must sum to 1")

    @classmethod
    def for_dimension(cls, d: int) -> "CubatureRule":
        """The standard rule: 2d points, weights 1/(2d), scales sqrt(d)."""
        if d < 1:
            raise DomainError(f"dimension must be >= 1, got {d}")
        k = 2 * d
        return cls(np.full(k, 1.0 / k), np.full(k, np.sqrt(float(d))), k)


def sigma_points(
    p: GaussianParam, rule: CubatureRule | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Sigma points of a Gaussian: weights (2d,) and points (2d, d).

    Point n is m + c_n R e_n for n < d and m - c_n R e_{n-d} afterwards,
    with R the lower-triangular Cholesky factor of the covariance.
    """
    d = p.dim
    if rule is None:
        rule = CubatureRule.for_dimension(d)
    if rule.count != 2 * d:
        raise DomainError(f"rule has {rule.count} points, expected {2 * d}")
    try:
        chol = np.linalg.cholesky(p.cov)
    except np.linalg.LinAlgError:
        raise DomainError("covariance factorization failed (not SPD)") from None
    # chol.T rows are the columns R e_n.
    offsets = np.vstack([chol.T, -chol.T]) * rule.scales[:, None]
    return rule.weights.copy(), p.mean[None, :] + offsets


def _expect(p: GaussianParam, f: Callable, rule: CubatureRule | None) -> np.ndarray:
    weights, points = sigma_points(p, rule)
    values = np.stack([np.asarray(f(x), dtype=float) for x in points])
    return np.tensordot(weights, values, axes=1)


def gauss_expect_vec(
    p: GaussianParam, f: Callable[[np.ndarray], np.ndarray], rule: CubatureRule | None = None
) -> np.ndarray:
    """Cubature approximation of E[f(Y)], Y ~ p, for vector-valued f."""
    return _expect(p, f, rule)


def gauss_expect_mat(
    p: GaussianParam, f: Callable[[np.ndarray], np.ndarray], rule: CubatureRule | None = None
) -> np.ndarray:
    """Cubature approximation of E[f(Y)] for matrix-valued f."""
    return _expect(p, f, rule)


def gauss_expect_scalar(
    p: GaussianParam, f: Callable[[np.ndarray], float], rule: CubatureRule | None = None
) -> float:
    """Cubature approximation of E[f(Y)] for scalar f."""
    return float(_expect(p, f, rule))


def gaussian_neg_entropy(p: GaussianParam) -> float:
    """Negative entropy of a Gaussian: -(d/2) ln(2 pi e) - (1/2) ln det cov."""
    sign, logdet = np.linalg.slogdet(p.cov)
    if sign <= 0:
        raise DomainError("covariance has non-positive determinant")
    return -0.5 * p.dim * (LOG_2PI + 1.0) - 0.5 * float(logdet)


def unnormalized_kl_cubature(p: GaussianParam, target: "Target", log_z: float = 0.0) -> float:
    """KL(p || target) up to the target's log-normalizer.

    Computes E_p[V] by cubature plus the closed-form Gaussian negative
    entropy, shifted by the supplied log normalization constant.  Exact
    KL is recovered by passing log_z = ln integral exp(-V).
    """
    weights, points = sigma_points(p)
    expected_potential = float(weights @ np.asarray(target.potential(points), dtype=float))
    return expected_potential + gaussian_neg_entropy(p) + log_z


def mc_kl_mixture(
    q: "MixtureState",
    target: "Target",
    n_samples: int = 50_000,
    seed: int = 0,
    log_z: float = 0.0,
    return_stderr: bool = False,
):
    """Monte Carlo estimate of KL(q || target) for a Gaussian mixture q.

    Averages ln q(X) + V(X) over n_samples draws X ~ q from a generator
    seeded per call, then adds log_z.  Deterministic for a fixed seed.
    With return_stderr=True also returns the standard error of the mean.
    """
    from .mixture_flow import mixture_logdensity

    if n_samples < 1:
        raise DomainError(f"n_samples must be >= 1, got {n_samples}")
    rng = np.random.default_rng(seed)
    means = np.stack([c.mean for c in q.params])
    chols = np.stack([np.linalg.cholesky(c.cov) for c in q.params])
    idx = rng.choice(len(q.params), size=n_samples, p=q.weights)
    z = rng.standard_normal((n_samples, means.shape[1]))
    samples = means[idx] + np.einsum("nij,nj->ni", chols[idx], z)

    terms = mixture_logdensity(q, samples) + np.asarray(target.potential(samples), dtype=float)
    estimate = float(np.mean(terms)) + log_z
    if not return_stderr:
        return estimate
    stderr = float(np.std(terms, ddof=1) / np.sqrt(n_samples)) if n_samples > 1 else np.inf
    return estimate, stderr
