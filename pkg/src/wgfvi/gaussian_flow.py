"""Gradient flow of KL(. || pi) over single Gaussians.

The mean and covariance obey the coupled ODEs

    dm/dt     = -E[grad V(Y)]
    dSigma/dt = 2 I - E[grad V(Y) (Y-m)^T] - E[(Y-m) grad V(Y)^T]

with Y ~ N(m, Sigma) and expectations computed by sigma-point cubature.
The covariance is integrated in square-root form (an ODE for its
lower-triangular Cholesky factor) so that symmetry and positive
definiteness survive the time discretization; a full-covariance form is
kept for cross-checking.  Time stepping is classical fourth-order
Runge-Kutta.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.linalg import solve_triangular

from .errors import DegeneracyError, DomainError, ShapeError
from .geometry import GaussianParam, symmetrize
from .quadrature import CubatureRule, sigma_points, unnormalized_kl_cubature
from .targets import Target

# Cholesky factors with a diagonal entry below this are treated as singular.
_DIAG_FLOOR = 1e-12


@dataclass
class SqrtGaussianState:
    """Gaussian state (mean, R) with covariance R R^T, R lower-triangular."""

    mean: np.ndarray
    chol: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=float)
        self.chol = np.asarray(self.chol, dtype=float)
        d = self.mean.size
        if self.chol.shape != (d, d):
            raise ShapeError(f"factor shape {self.chol.shape} does not match mean length {d}")
        if np.max(np.abs(np.triu(self.chol, 1))) > 0.0:
            raise DomainError("factor must be lower-triangular")
        if np.any(np.diag(self.chol) <= 0.0):
            raise DomainError("factor must have a strictly positive diagonal")

    @classmethod
    def from_param(cls, p: GaussianParam) -> "SqrtGaussianState":
        return cls(p.mean.copy(), np.linalg.cholesky(p.cov))

    def to_param(self) -> GaussianParam:
        return GaussianParam(self.mean, self.chol @ self.chol.T)


@dataclass
class FlowConfig:
    """Step size, horizon, and bookkeeping knobs shared by the integrators."""

    step_size: float = 0.1
    total_time: float = 30.0
    record_every: int = 1
    log_z: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not self.step_size > 0:
            raise DomainError(f"step size must be positive, got {self.step_size}")
        if self.total_time < self.step_size:
            raise DomainError("total time must be at least one step")
        if self.record_every < 1:
            raise DomainError("record_every must be >= 1")

    @property
    def n_steps(self) -> int:
        return int(round(self.total_time / self.step_size))


@dataclass
class FlowTrace:
    """Recorded snapshots of a run: times, states and KL estimates."""

    times: list[float] = field(default_factory=list)
    states: list[GaussianParam] = field(default_factory=list)
    kl_values: list[float] = field(default_factory=list)
    w2sq_to_ref: list[float] | None = None

    def append(self, t: float, state: GaussianParam, kl: float, w2sq: float | None = None):
        if self.times and t <= self.times[-1]:
            raise DomainError("trace times must be strictly increasing")
        self.times.append(t)
        self.states.append(state)
        self.kl_values.append(kl)
        if w2sq is not None:
            if self.w2sq_to_ref is None:
                self.w2sq_to_ref = []
            self.w2sq_to_ref.append(w2sq)

    @property
    def final(self) -> GaussianParam:
        return self.states[-1]


def gaussian_flow_rhs(
    p: GaussianParam,
    target: Target,
    rule: CubatureRule | None = None,
    use_hessian: bool = False,
) -> tuple[np.ndarray, np.ndarray]:
    """Time derivative (dmean, dcov) of the KL gradient flow at p.

    The default covariance update needs only the gradient of V; with
    use_hessian=True it is computed as 2I - Sigma E[hess V] - E[hess V] Sigma
    instead, which matches the gradient form exactly for quadratic V.
    """
    weights, points = sigma_points(p, rule)
    grads = np.asarray(target.grad(points), dtype=float)
    dmean = -weights @ grads
    if use_hessian:
        mean_hess = np.tensordot(weights, np.stack([target.hess(x) for x in points]), axes=1)
        dcov = 2.0 * np.eye(p.dim) - p.cov @ mean_hess - mean_hess @ p.cov
    else:
        cross = (grads * weights[:, None]).T @ (points - p.mean)
        dcov = 2.0 * np.eye(p.dim) - cross - cross.T
    return dmean, symmetrize(dcov)


def tril_half_diag(a: np.ndarray) -> np.ndarray:
    """Lower-triangular L with L + L^T = A for symmetric A.

    Keeps the strict lower triangle, halves the diagonal, zeroes the rest.
    """
    a = np.asarray(a, dtype=float)
    return np.tril(a, -1) + np.diag(0.5 * np.diag(a))


def sqrt_cov_rhs(chol: np.ndarray, dcov: np.ndarray) -> np.ndarray:
    """Factor derivative dR = R L(R^{-1} dSigma R^{-T}) from a covariance derivative.

    L is :func:`tril_half_diag`; the result satisfies
    dR R^T + R dR^T = dSigma.
    """
    if np.min(np.diag(chol)) < _DIAG_FLOOR:
        raise DegeneracyError("covariance factor is numerically singular")
    half = solve_triangular(chol, dcov, lower=True)
    inner = solve_triangular(chol, half.T, lower=True).T
    return chol @ tril_half_diag(inner)


def rk4_step(x: np.ndarray, rhs: Callable[[np.ndarray], np.ndarray], h: float) -> np.ndarray:
    """One classical fourth-order Runge-Kutta step of size h."""
    k1 = rhs(x)
    k2 = rhs(x + 0.5 * h * k1)
    k3 = rhs(x + 0.5 * h * k2)
    k4 = rhs(x + h * k3)
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def pack_lower_triangle(chol: np.ndarray) -> np.ndarray:
    """Lower-triangle entries in column-major order.

    Stored via the transpose trick: R.T[triu] walks the columns of R top
    to bottom.
    """
    return chol.T[np.triu_indices(chol.shape[0])]


def unpack_lower_triangle(flat: np.ndarray, d: int) -> np.ndarray:
    """Inverse of :func:`pack_lower_triangle`."""
    rt = np.zeros((d, d))
    rt[np.triu_indices(d)] = flat
    return rt.T


def flatten_state(mean: np.ndarray, chol: np.ndarray) -> np.ndarray:
    """Pack (mean, R) as [mean, lower-triangle of R in column-major order]."""
    return np.concatenate([mean, pack_lower_triangle(chol)])


def unflatten_state(x: np.ndarray, d: int) -> tuple[np.ndarray, np.ndarray]:
    """Inverse of :func:`flatten_state`."""
    return x[:d], unpack_lower_triangle(x[d:], d)


def integrate_gaussian_flow(
    p0: GaussianParam,
    target: Target,
    cfg: FlowConfig,
    rule: CubatureRule | None = None,
    use_hessian: bool = False,
    form: str = "sqrt",
) -> FlowTrace:
    """Integrate the flow from p0 for cfg.total_time, recording snapshots.

    form="sqrt" (default) integrates the Cholesky factor; form="full"
    integrates the covariance entries directly and exists to cross-check
    the square-root path.  Snapshots (state plus cubature KL at
    cfg.log_z) are taken every record_every steps and always at the final
    time.  A singular factor raises DegeneracyError tagged with the step.
    """
    if form not in ("sqrt", "full"):
        raise DomainError(f"unknown integration form {form!r}")
    d = p0.dim
    if cfg.step_size >= 1.0 and d > 2:
        warnings.warn(
            "step sizes >= 1 are known to drive covariance factors singular "
            "in higher dimensions; prefer 0.1",
            stacklevel=2,
        )

    if form == "sqrt":
        def rebuild(x: np.ndarray) -> GaussianParam:
            mean, chol = unflatten_state(x, d)
            if np.min(np.diag(chol)) < _DIAG_FLOOR:
                raise DegeneracyError("covariance factor is numerically singular")
            return GaussianParam(mean, chol @ chol.T)

        def rhs(x: np.ndarray) -> np.ndarray:
            mean, chol = unflatten_state(x, d)
            p = rebuild(x)
            dmean, dcov = gaussian_flow_rhs(p, target, rule, use_hessian)
            return flatten_state(dmean, sqrt_cov_rhs(chol, dcov))

        state = flatten_state(p0.mean, np.linalg.cholesky(p0.cov))
    else:
        def rebuild(x: np.ndarray) -> GaussianParam:
            return GaussianParam(x[:d], symmetrize(x[d:].reshape(d, d)))

        def rhs(x: np.ndarray) -> np.ndarray:
            p = rebuild(x)
            dmean, dcov = gaussian_flow_rhs(p, target, rule, use_hessian)
            return np.concatenate([dmean, dcov.ravel()])

        state = np.concatenate([p0.mean, p0.cov.ravel()])

    trace = FlowTrace()

    def record(step: int, x: np.ndarray):
        p = rebuild(x)
        trace.append(step * cfg.step_size, p, unnormalized_kl_cubature(p, target, cfg.log_z))

    record(0, state)
    n = cfg.n_steps
    for k in range(1, n + 1):
        try:
            state = rk4_step(state, rhs, cfg.step_size)
            if k % cfg.record_every == 0 or k == n:
                record(k, state)
        except (DegeneracyError, DomainError) as exc:
            raise DegeneracyError(f"integration failed at step {k}: {exc}") from exc
    return trace


def write_trace_csv(trace: FlowTrace, path: str | Path) -> None:
    """Write a trace as CSV: t, kl, mean entries, covariance row-major.

    An extra ``w2sq_to_ref`` column is appended when the trace carries
    squared distances to a reference.
    """
    d = trace.states[0].dim
    header = (
        ["t", "kl"]
        + [f"m_{i + 1}" for i in range(d)]
        + [f"sigma_{i + 1}{j + 1}" for i in range(d) for j in range(d)]
    )
    with_ref = trace.w2sq_to_ref is not None
    if with_ref:
        header.append("w2sq_to_ref")
    with open(Path(path), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i, (t, p, kl) in enumerate(zip(trace.times, trace.states, trace.kl_values)):
            row = [f"{t:.17g}", f"{kl:.17g}"]
            row += [f"{v:.17g}" for v in p.mean]
            row += [f"{v:.17g}" for v in p.cov.ravel()]
            if with_ref:
                row.append(f"{trace.w2sq_to_ref[i]:.17g}")
            writer.writerow(row)
