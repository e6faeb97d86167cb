"""Target distributions pi proportional to exp(-V).

Each target exposes the potential V (up to an additive constant), its
gradient, and optionally its Hessian.  Vector arguments may be a single
point of shape (d,) or a batch of shape (n, d); outputs follow suit.

Includes Gaussian and Gaussian-mixture targets, the flat-prior Bayesian
logistic posterior with a synthetic-data generator, a Laplace-approximation
baseline, and a change-of-variables wrapper used to normalize Hessian
bounds.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import expit, log_expit, logsumexp

from .errors import ConvergenceError, DomainError, ShapeError
from .geometry import GaussianParam, symmetrize
from .quadrature import LOG_2PI


class Target:
    """Base class for potential oracles.

    Subclasses must set ``dim`` and implement ``potential`` and ``grad``;
    those with second-order information implement ``hess`` and set
    ``has_hessian = True``.
    """

    dim: int
    has_hessian = False

    def potential(self, x: np.ndarray):
        raise NotImplementedError

    def grad(self, x: np.ndarray):
        raise NotImplementedError

    def hess(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError(f"{type(self).__name__} has no Hessian oracle")


class GaussianTarget(Target):
    """Quadratic potential V = (x - m)^T P (x - m) / 2 of a Gaussian N(m, S)."""

    has_hessian = True

    def __init__(self, mean, cov):
        self.param = GaussianParam(mean, cov)
        self.dim = self.param.dim
        self.precision = np.linalg.inv(self.param.cov)
        sign, logdet = np.linalg.slogdet(self.param.cov)
        self.log_partition = 0.5 * self.dim * LOG_2PI + 0.5 * float(logdet)

    def potential(self, x):
        diff = np.asarray(x, dtype=float) - self.param.mean
        return 0.5 * np.einsum("...i,ij,...j->...", diff, self.precision, diff)

    def grad(self, x):
        diff = np.asarray(x, dtype=float) - self.param.mean
        return diff @ self.precision

    def hess(self, x):
        return self.precision.copy()


class MixtureTarget(Target):
    """Finite Gaussian mixture sum_i w_i N(m_i, S_i) as a (normalized) target.

    Densities and responsibilities are evaluated in log space so that
    well-separated components cannot underflow.
    """

    def __init__(self, weights, means, covs):
        self.weights = np.asarray(weights, dtype=float)
        if np.any(self.weights <= 0):
            raise DomainError("mixture weights must be positive")
        if abs(self.weights.sum() - 1.0) > 1e-12:
            raise DomainError("mixture weights must sum to 1")
        self.means = np.asarray(means, dtype=float)
        self.covs = np.asarray(covs, dtype=float)
        m, d = self.means.shape
        if self.weights.shape != (m,) or self.covs.shape != (m, d, d):
            raise ShapeError("inconsistent mixture component shapes")
        self.dim = d
        self._chols = np.stack([np.linalg.cholesky(c) for c in self.covs])
        self._precisions = np.stack([np.linalg.inv(c) for c in self.covs])
        logdets = 2.0 * np.sum(np.log(np.diagonal(self._chols, axis1=1, axis2=2)), axis=1)
        self._log_norms = -0.5 * (d * LOG_2PI + logdets)
        self._log_weights = np.log(self.weights)

    def _component_logpdfs(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        diff = x[:, None, :] - self.means[None, :, :]  # (n, M, d)
        quad = np.einsum("nmi,mij,nmj->nm", diff, self._precisions, diff)
        return -0.5 * quad + self._log_norms[None, :]

    def log_density(self, x):
        """ln pi(x) of the normalized mixture."""
        lp = logsumexp(self._log_weights[None, :] + self._component_logpdfs(x), axis=1)
        return lp if np.asarray(x).ndim > 1 else float(lp[0])

    def score(self, x):
        """Gradient of ln pi: responsibility-weighted component scores."""
        single = np.asarray(x).ndim == 1
        x2 = np.atleast_2d(np.asarray(x, dtype=float))
        log_terms = self._log_weights[None, :] + self._component_logpdfs(x2)
        log_terms -= logsumexp(log_terms, axis=1, keepdims=True)
        resp = np.exp(log_terms)  # (n, M)
        pulls = np.einsum("mij,nmj->nmi", self._precisions, self.means[None, :, :] - x2[:, None, :])
        out = np.einsum("nm,nmi->ni", resp, pulls)
        return out[0] if single else out

    def potential(self, x):
        return -self.log_density(x)

    def grad(self, x):
        return -self.score(x)

    def support_radius(self) -> float:
        """Radius of a centered ball holding most of the mixture's mass."""
        spreads = [np.sqrt(np.linalg.eigvalsh(c)[-1]) for c in self.covs]
        return float(max(np.linalg.norm(m) + 2.0 * s for m, s in zip(self.means, spreads)))


@dataclass
class LogisticDataset:
    """Synthetic two-class dataset with its generating parameters."""

    x: np.ndarray
    y: np.ndarray
    m_star: np.ndarray
    sigma_star: np.ndarray
    s: float
    seed: int

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.y = np.asarray(self.y, dtype=int)
        self.m_star = np.asarray(self.m_star, dtype=float)
        self.sigma_star = np.asarray(self.sigma_star, dtype=float)
        if self.x.ndim != 2 or self.y.shape != (self.x.shape[0],):
            raise ShapeError("covariates must be (n, d) with one label per row")
        if not np.all((self.y == 0) | (self.y == 1)):
            raise DomainError("labels must be binary")
        if self.m_star.shape != (self.x.shape[1],):
            raise ShapeError("m_star dimension does not match covariates")

    @property
    def dim(self) -> int:
        return self.x.shape[1]

    @property
    def fisher_direction(self) -> np.ndarray:
        """Fisher's linear discriminant 2 * sigma_star^{-1} m_star."""
        return 2.0 * np.linalg.solve(self.sigma_star, self.m_star)


def default_class_covariance(d: int) -> np.ndarray:
    """Generating covariance: (1/d) I, except anisotropic diag(0.5, 0.17) in d=2."""
    if d == 2:
        return np.diag([0.5, 0.17])
    return np.eye(d) / float(d)


def generate_logistic_data(
    d: int, n: int, s: float, seed: int, sigma_star: np.ndarray | None = None
) -> LogisticDataset:
    """Draw a two-class dataset with class means +/- m_star, ||2 m_star|| = s.

    Labels are uniform on {0, 1}; covariates are Gaussian around the class
    mean with shared covariance sigma_star.  Deterministic given the seed.
    """
    if d < 1 or n < 1:
        raise DomainError(f"need d, n >= 1, got d={d}, n={n}")
    if s <= 0:
        raise DomainError(f"separation must be positive, got {s}")
    sigma_star = default_class_covariance(d) if sigma_star is None else np.asarray(sigma_star, float)
    rng = np.random.default_rng(seed)
    direction = rng.standard_normal(d)
    direction /= np.linalg.norm(direction)
    m_star = 0.5 * s * direction
    y = rng.integers(0, 2, size=n)
    class_means = np.where(y[:, None] == 1, m_star[None, :], -m_star[None, :])
    chol = np.linalg.cholesky(sigma_star)
    x = class_means + rng.standard_normal((n, d)) @ chol.T
    return LogisticDataset(x, y, m_star, sigma_star, float(s), seed)


class LogisticTarget(Target):
    """Flat-prior posterior of Bayesian logistic regression.

    V(z) = -sum_i [y_i ln s(x_i^T z) + (1 - y_i) ln(1 - s(x_i^T z))] with
    s the logistic function, evaluated through log_expit for stability.
    An optional Gaussian prior N(0, prior_cov) can be switched on; it is
    off by default.
    """

    has_hessian = True

    def __init__(self, dataset: LogisticDataset, prior_cov: np.ndarray | None = None):
        self.dataset = dataset
        self.dim = dataset.dim
        self._prior_precision = None
        if prior_cov is not None:
            self._prior_precision = np.linalg.inv(np.asarray(prior_cov, dtype=float))

    def potential(self, z):
        z = np.asarray(z, dtype=float)
        logits = z @ self.dataset.x.T  # (..., n)
        y = self.dataset.y
        loglik = y * log_expit(logits) + (1 - y) * log_expit(-logits)
        value = -np.sum(loglik, axis=-1)
        if self._prior_precision is not None:
            value = value + 0.5 * np.einsum("...i,ij,...j->...", z, self._prior_precision, z)
        return value

    def grad(self, z):
        z = np.asarray(z, dtype=float)
        probs = expit(z @ self.dataset.x.T)
        out = (probs - self.dataset.y) @ self.dataset.x
        if self._prior_precision is not None:
            out = out + z @ self._prior_precision
        return out

    def hess(self, z):
        z = np.asarray(z, dtype=float)
        probs = expit(self.dataset.x @ z)
        w = probs * (1.0 - probs)
        h = (self.dataset.x * w[:, None]).T @ self.dataset.x
        if self._prior_precision is not None:
            h = h + self._prior_precision
        return symmetrize(h)


class ScaledTarget(Target):
    """Target of sqrt(beta) * X for X ~ base: V'(x) = V(x / sqrt(beta)).

    Dividing the Hessian by beta, this brings a beta-log-smooth target
    under the unit Hessian bound required by the stochastic-descent
    analysis.
    """

    def __init__(self, base: Target, beta: float):
        if beta <= 0:
            raise DomainError(f"beta must be positive, got {beta}")
        self.base = base
        self.beta = float(beta)
        self.dim = base.dim
        self.has_hessian = base.has_hessian
        self._root = np.sqrt(self.beta)

    def potential(self, x):
        return self.base.potential(np.asarray(x, dtype=float) / self._root)

    def grad(self, x):
        return self.base.grad(np.asarray(x, dtype=float) / self._root) / self._root

    def hess(self, x):
        return self.base.hess(np.asarray(x, dtype=float) / self._root) / self.beta

    def push(self, p: GaussianParam) -> GaussianParam:
        """Map a Gaussian on the base space to the scaled space."""
        return GaussianParam(self._root * p.mean, self.beta * p.cov)

    def pull(self, p: GaussianParam) -> GaussianParam:
        """Inverse of :meth:`push`."""
        return GaussianParam(p.mean / self._root, p.cov / self.beta)


def laplace_approx(
    target: Target, init: np.ndarray, tol: float = 1e-8, max_iter: int = 100
) -> GaussianParam:
    """Gaussian N(z0, H^{-1}) at a mode z0 of the potential.

    The mode is located by damped Newton iteration with backtracking line
    search on V, using the target's exact Hessian.  Raises
    ConvergenceError if the gradient norm does not reach tol within
    max_iter iterations, DomainError if the Hessian is singular or not
    positive definite at the mode.
    """
    if not target.has_hessian:
        raise DomainError("Laplace approximation needs a Hessian oracle")
    z = np.asarray(init, dtype=float).copy()
    if z.shape != (target.dim,):
        raise ShapeError(f"init must have shape ({target.dim},)")
    for _ in range(max_iter):
        g = np.asarray(target.grad(z), dtype=float)
        if np.linalg.norm(g) <= tol:
            break
        h = target.hess(z)
        try:
            step = np.linalg.solve(h, -g)
        except np.linalg.LinAlgError:
            raise DomainError("singular Hessian during mode search") from None
        v0 = float(target.potential(z))
        slope = float(g @ step)
        t = 1.0
        while float(target.potential(z + t * step)) > v0 + 1e-4 * t * slope:
            t *= 0.5
            if t < 1e-12:
                raise ConvergenceError("line search failed in mode search")
        z = z + t * step
    else:
        raise ConvergenceError(
            f"mode search did not reach gradient norm {tol} in {max_iter} iterations"
        )
    hess_at_mode = target.hess(z)
    try:
        cov = np.linalg.inv(hess_at_mode)
    except np.linalg.LinAlgError:
        raise DomainError("singular Hessian at the mode") from None
    return GaussianParam(z, symmetrize(cov))


def save_logistic_dataset(dataset: LogisticDataset, path: str | Path) -> None:
    """Write covariates/labels as CSV plus a JSON sidecar of the parameters."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["y"] + [f"x{i + 1}" for i in range(dataset.dim)])
        for yi, xi in zip(dataset.y, dataset.x):
            writer.writerow([int(yi)] + [f"{v:.17g}" for v in xi])
    sidecar = {
        "m_star": dataset.m_star.tolist(),
        "sigma_star": dataset.sigma_star.tolist(),
        "s": dataset.s,
        "seed": dataset.seed,
    }
    path.with_suffix(".json").write_text(json.dumps(sidecar, indent=2) + "\n")


def load_logistic_dataset(path: str | Path) -> LogisticDataset:
    """Inverse of :func:`save_logistic_dataset`."""
    path = Path(path)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    if header[0] != "y":
        raise DomainError(f"unexpected dataset header {header!r}")
    y = np.array([int(r[0]) for r in body])
    x = np.array([[float(v) for v in r[1:]] for r in body])
    sidecar = json.loads(path.with_suffix(".json").read_text())
    return LogisticDataset(
        x, y, np.array(sidecar["m_star"]), np.array(sidecar["sigma_star"]),
        float(sidecar["s"]), int(sidecar["seed"]),
    )
