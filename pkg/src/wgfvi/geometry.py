"""Closed-form transport geometry on Gaussian distributions.

A non-degenerate Gaussian is identified with its (mean, covariance) pair;
the squared 2-Wasserstein distance between two Gaussians splits into the
Euclidean mean gap plus the squared Bures metric between the covariances.
This module provides the distance, the optimal transport map between
covariances, exponential/logarithm maps and geodesics in this geometry,
and spectral eigenvalue clipping.

All matrix square roots go through symmetric eigendecomposition: the
dimensions here are small, and exactness matters more than speed.  Every
matrix-valued result is symmetrized before it is returned so that roundoff
cannot break the SPD invariants downstream.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, ShapeError

# Eigenvalues of a nominally-PSD matrix below this are treated as roundoff
# noise and clamped to zero; anything more negative is a real domain error.
_EIG_ROUNDOFF = 1e-10

_SYM_TOL = 1e-10


def symmetrize(a: np.ndarray) -> np.ndarray:
    """(A + A^T) / 2."""
    return 0.5 * (a + a.T)


def _as_spd(s: np.ndarray, name: str = "matrix") -> np.ndarray:
    """Validate a square SPD matrix, returning its symmetrized copy."""
    s = np.asarray(s, dtype=float)
    if s.ndim != 2 or s.shape[0] != s.shape[1]:
        raise ShapeError(f"{name} must be square, got shape {s.shape}")
    if np.max(np.abs(s - s.T)) > _SYM_TOL:
        raise DomainError(f"{name} is not symmetric within {_SYM_TOL}")
    s = symmetrize(s)
    # Cholesky succeeds iff the smallest eigenvalue is strictly positive.
    try:
        np.linalg.cholesky(s)
    except np.linalg.LinAlgError:
        raise DomainError(f"{name} is not positive definite") from None
    return s


def sqrtm_spd(s: np.ndarray) -> np.ndarray:
    """Symmetric square root of an SPD (or roundoff-PSD) matrix via eigh."""
    vals, vecs = np.linalg.eigh(symmetrize(np.asarray(s, dtype=float)))
    if vals[0] < -_EIG_ROUNDOFF:
        raise DomainError(f"matrix has negative eigenvalue {vals[0]:.3e}")
    vals = np.clip(vals, 0.0, None)
    return symmetrize((vecs * np.sqrt(vals)) @ vecs.T)


def _sqrt_and_invsqrt(s: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """S^{1/2} and S^{-1/2} from a single eigendecomposition (S must be SPD)."""
    vals, vecs = np.linalg.eigh(s)
    if vals[0] <= 0.0:
        raise DomainError(f"matrix is not positive definite (min eig {vals[0]:.3e})")
    root = np.sqrt(vals)
    return (
        symmetrize((vecs * root) @ vecs.T),
        symmetrize((vecs / root) @ vecs.T),
    )


@dataclass
class GaussianParam:
    """A Gaussian distribution as a point (mean, covariance).

    The covariance is symmetrized on construction and must be strictly
    positive definite.
    """

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        self.mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        if self.mean.ndim != 1:
            raise ShapeError(f"mean must be a vector, got shape {self.mean.shape}")
        cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
        if cov.shape != (self.mean.size, self.mean.size):
            raise ShapeError(
                f"covariance shape {cov.shape} does not match mean length {self.mean.size}"
            )
        self.cov = _as_spd(cov, "covariance")

    @property
    def dim(self) -> int:
        return self.mean.size


@dataclass
class BWTangent:
    """Tangent vector (a, S): a mean displacement and a symmetric matrix."""

    a: np.ndarray
    S: np.ndarray

    def __post_init__(self):
        self.a = np.atleast_1d(np.asarray(self.a, dtype=float))
        S = np.atleast_2d(np.asarray(self.S, dtype=float))
        if S.shape != (self.a.size, self.a.size):
            raise ShapeError(f"S shape {S.shape} does not match a length {self.a.size}")
        if np.max(np.abs(S - S.T)) > _SYM_TOL:
            raise DomainError(f"S is not symmetric within {_SYM_TOL}")
        self.S = symmetrize(S)


def bures_metric_sq(s0: np.ndarray, s1: np.ndarray) -> float:
    """Squared Bures metric tr(S0 + S1 - 2 (S0^{1/2} S1 S0^{1/2})^{1/2}).

    Clamped at zero: roundoff can produce tiny negative values for nearly
    identical matrices.
    """
    s0 = _as_spd(s0, "S0")
    s1 = _as_spd(s1, "S1")
    if s0.shape != s1.shape:
        raise ShapeError(f"dimension mismatch: {s0.shape} vs {s1.shape}")
    root0 = sqrtm_spd(s0)
    inner = symmetrize(root0 @ s1 @ root0)
    cross_eigs = np.clip(np.linalg.eigvalsh(inner), 0.0, None)
    value = float(np.trace(s0) + np.trace(s1) - 2.0 * np.sum(np.sqrt(cross_eigs)))
    return max(value, 0.0)


def w2_distance_sq(p0: GaussianParam, p1: GaussianParam) -> float:
    """Squared 2-Wasserstein distance: ||m0 - m1||^2 + Bures^2(cov0, cov1)."""
    if p0.dim != p1.dim:
        raise ShapeError(f"dimension mismatch: {p0.dim} vs {p1.dim}")
    dm = p0.mean - p1.mean
    return float(dm @ dm) + bures_metric_sq(p0.cov, p1.cov)


def ot_map(s_from: np.ndarray, s_to: np.ndarray) -> np.ndarray:
    """Optimal transport matrix T with T S_from T = S_to.

    T = S_from^{-1/2} (S_from^{1/2} S_to S_from^{1/2})^{1/2} S_from^{-1/2}.
    """
    s_from = _as_spd(s_from, "S_from")
    s_to = _as_spd(s_to, "S_to")
    if s_from.shape != s_to.shape:
        raise ShapeError(f"dimension mismatch: {s_from.shape} vs {s_to.shape}")
    root, invroot = _sqrt_and_invsqrt(s_from)
    middle = sqrtm_spd(root @ s_to @ root)
    return symmetrize(invroot @ middle @ invroot)


def bw_exp(p: GaussianParam, v: BWTangent) -> GaussianParam:
    """Exponential map: (m, Sigma), (a, S) -> N(m + a, (S+I) Sigma (S+I)).

    Defined only while S + I stays positive definite.
    """
    if v.a.size != p.dim:
        raise ShapeError(f"tangent dimension {v.a.size} does not match point {p.dim}")
    scale = v.S + np.eye(p.dim)
    if np.linalg.eigvalsh(scale)[0] <= 0.0:
        raise DomainError("outside injectivity domain: S + I is not positive definite")
    return GaussianParam(p.mean + v.a, symmetrize(scale @ p.cov @ scale))


def bw_log(p: GaussianParam, q: GaussianParam) -> BWTangent:
    """Logarithm map, the inverse of :func:`bw_exp`: returns (m_q - m_p, T - I)."""
    if p.dim != q.dim:
        raise ShapeError(f"dimension mismatch: {p.dim} vs {q.dim}")
    t = ot_map(p.cov, q.cov)
    return BWTangent(q.mean - p.mean, symmetrize(t - np.eye(p.dim)))


def geodesic_point(p0: GaussianParam, p1: GaussianParam, t: float) -> GaussianParam:
    """Point at parameter t on the constant-speed geodesic from p0 to p1."""
    if not 0.0 <= t <= 1.0:
        raise DomainError(f"geodesic parameter must lie in [0, 1], got {t}")
    v = bw_log(p0, p1)
    return bw_exp(p0, BWTangent(t * v.a, t * v.S))


def clip_eigenvalues(s: np.ndarray, tau: float) -> np.ndarray:
    """Truncate eigenvalues of an SPD matrix at tau, keeping eigenvectors.

    Returns the (symmetrized) input untouched when no eigenvalue exceeds
    tau, which makes the operation bitwise idempotent.
    """
    if tau <= 0.0:
        raise DomainError(f"clip threshold must be positive, got {tau}")
    s = _as_spd(s, "matrix")
    vals, vecs = np.linalg.eigh(s)
    # Slack absorbs recomposition roundoff so clip(clip(S)) == clip(S) exactly.
    if vals[-1] <= tau * (1.0 + 1e-12):
        return s
    clipped = np.minimum(vals, tau)
    return symmetrize((vecs * clipped) @ vecs.T)
