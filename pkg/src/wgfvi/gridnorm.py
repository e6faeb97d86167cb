"""Grid-based normalization of two-dimensional targets.

Integrates exp(-V) over a regular grid to recover the log normalization
constant, so that KL divergences in d=2 can be reported against the
normalized density.  Bounds can be fixed or auto-expanded until the
boundary carries a negligible share of the mass.
"""

from __future__ import annotations

import numpy as np
from scipy.special import logsumexp

from .errors import ConvergenceError, DomainError
from .targets import Target

Bounds = tuple[tuple[float, float], tuple[float, float]]

# Required upper bound on the boundary cells' share of the total mass.
_BOUNDARY_SHARE = 1e-12


def _check_2d(target: Target):
    if target.dim != 2:
        raise DomainError(f"grid normalization supports only d=2, got d={target.dim}")


def grid_cells_2d(bounds: Bounds, resolution: int) -> tuple[np.ndarray, np.ndarray, float]:
    """Cell-center coordinate axes and the cell area for a regular grid."""
    (x0, x1), (y0, y1) = bounds
    if not (x1 > x0 and y1 > y0):
        raise DomainError(f"empty grid bounds {bounds}")
    xs = x0 + (np.arange(resolution) + 0.5) * (x1 - x0) / resolution
    ys = y0 + (np.arange(resolution) + 0.5) * (y1 - y0) / resolution
    area = (x1 - x0) * (y1 - y0) / resolution**2
    return xs, ys, area


def grid_log_unnormalized(
    target: Target, bounds: Bounds, resolution: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Axes (xs, ys) and the grid of -V values, ys varying along axis 0."""
    _check_2d(target)
    xs, ys, _ = grid_cells_2d(bounds, resolution)
    gx, gy = np.meshgrid(xs, ys)
    points = np.column_stack([gx.ravel(), gy.ravel()])
    logvals = -np.asarray(target.potential(points), dtype=float).reshape(resolution, resolution)
    return xs, ys, logvals


def grid_normalize_2d(
    target: Target, bounds: Bounds | None = None, resolution: int = 100
) -> float:
    """log integral exp(-V) approximated by a resolution^2 cell sum.

    With bounds=None the grid is auto-expanded (see :func:`auto_bounds_2d`).
    """
    _check_2d(target)
    if bounds is None:
        bounds = auto_bounds_2d(target, resolution)
    _, _, logvals = grid_log_unnormalized(target, bounds, resolution)
    (x0, x1), (y0, y1) = bounds
    log_area = np.log((x1 - x0) / resolution) + np.log((y1 - y0) / resolution)
    return float(logsumexp(logvals) + log_area)


def auto_bounds_2d(target: Target, resolution: int = 100, max_rounds: int = 12) -> Bounds:
    """Square bounds holding essentially all the mass of exp(-V).

    Starting from an origin-centered box, the grid is recentered on its
    densest cell and doubled until the boundary cells contribute less
    than 1e-12 of the total.
    """
    _check_2d(target)
    center = np.zeros(2)
    half_width = 4.0
    for _ in range(max_rounds):
        bounds: Bounds = (
            (center[0] - half_width, center[0] + half_width),
            (center[1] - half_width, center[1] + half_width),
        )
        xs, ys, logvals = grid_log_unnormalized(target, bounds, resolution)
        edge = np.concatenate(
            [logvals[0, :], logvals[-1, :], logvals[1:-1, 0], logvals[1:-1, -1]]
        )
        if logsumexp(edge) - logsumexp(logvals) < np.log(_BOUNDARY_SHARE):
            return bounds
        peak = np.unravel_index(np.argmax(logvals), logvals.shape)
        center = np.array([xs[peak[1]], ys[peak[0]]])
        half_width *= 2.0
    raise ConvergenceError("grid bounds did not stabilize; is the target integrable?")
