"""Rendering of run artifacts: covariance-ellipse SVG, plot-data CSV, and
matplotlib report figures.

The SVG writer is deliberately plain string assembly so its output is a
pure function of the snapshot.  Heavier report figures (KL curves,
density snapshots) go through matplotlib and are written alongside the
delimited trace output.
"""

from __future__ import annotations

import csv
import threading
from pathlib import Path

import matplotlib
import numpy as np
from contourpy import contour_generator

from .errors import DomainError
from .geometry import GaussianParam
from .gridnorm import Bounds, grid_log_unnormalized
from .mixture_flow import MixtureState
from .targets import Target

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  (backend must be fixed first)

# pyplot and the mathtext parser are not thread-safe; experiment runs may
# render concurrently under the CLI's --parallel flag.
_RENDER_LOCK = threading.Lock()


def as_mixture(state: MixtureState | GaussianParam) -> MixtureState:
    if isinstance(state, GaussianParam):
        return MixtureState(np.array([1.0]), [state])
    return state


def ellipse_points(p: GaussianParam, nsig: float = 2.0, n: int = 64) -> np.ndarray:
    """Closed polyline of the nsig-sigma covariance ellipse, shape (n+1, 2).

    Semi-axes are nsig * sqrt(eigenvalue) along the covariance
    eigenvectors.
    """
    if p.dim != 2:
        raise DomainError("covariance ellipses are only defined in d=2")
    vals, vecs = np.linalg.eigh(p.cov)
    angles = np.linspace(0.0, 2.0 * np.pi, n + 1)
    circle = np.column_stack([np.cos(angles), np.sin(angles)])
    return p.mean[None, :] + circle * (nsig * np.sqrt(vals))[None, :] @ vecs.T


def target_contours_2d(
    target: Target,
    bounds: Bounds,
    resolution: int = 100,
    n_levels: int = 8,
) -> list[np.ndarray]:
    """Contour polylines of exp(-V) at fractions of its grid peak."""
    xs, ys, logvals = grid_log_unnormalized(target, bounds, resolution)
    z = np.exp(logvals - logvals.max())
    gen = contour_generator(x=xs, y=ys, z=z)
    fractions = np.geomspace(0.03, 0.9, n_levels)
    lines: list[np.ndarray] = []
    for frac in fractions:
        lines.extend(np.asarray(seg) for seg in gen.lines(float(frac)))
    return lines


def _fmt(v: float) -> str:
    return f"{v:.6g}"


def emit_ellipse_svg(
    state: MixtureState | GaussianParam,
    contours: list[np.ndarray] | None = None,
    bounds: Bounds | None = None,
    size: int = 480,
    nsig: float = 2.0,
) -> str:
    """Standalone SVG with one nsig-sigma ellipse per mixture component.

    Optional contour polylines (e.g. from :func:`target_contours_2d`) are
    drawn underneath.  Output is deterministic for a given snapshot.
    """
    mix = as_mixture(state)
    if mix.dim != 2:
        raise DomainError("SVG snapshots are only defined in d=2")
    ellipses = [ellipse_points(p, nsig) for p in mix.params]
    contours = contours or []

    if bounds is None:
        pts = np.vstack(ellipses + list(contours))
        lo, hi = pts.min(axis=0), pts.max(axis=0)
        pad = 0.1 * max(float(np.max(hi - lo)), 1e-6)
        bounds = ((lo[0] - pad, hi[0] + pad), (lo[1] - pad, hi[1] + pad))
    (x0, x1), (y0, y1) = bounds
    scale = size / max(x1 - x0, y1 - y0)

    def to_px(xy: np.ndarray) -> np.ndarray:
        # SVG y grows downward.
        return np.column_stack([(xy[:, 0] - x0) * scale, (y1 - xy[:, 1]) * scale])

    def polyline(xy: np.ndarray, color: str, width: str) -> str:
        pts = " ".join(f"{_fmt(px)},{_fmt(py)}" for px, py in to_px(xy))
        return (
            f'<polyline fill="none" stroke="{color}" stroke-width="{width}" '
            f'points="{pts}"/>'
        )

    w = _fmt((x1 - x0) * scale)
    h = _fmt((y1 - y0) * scale)
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" '
        f'viewBox="0 0 {w} {h}">',
        f'<rect width="{w}" height="{h}" fill="white"/>',
    ]
    parts += [polyline(line, "#808080", "1") for line in contours]
    parts += [polyline(e, "#c03030", "1.5") for e in ellipses]
    for p in mix.params:
        cx, cy = to_px(p.mean[None, :])[0]
        parts.append(f'<circle cx="{_fmt(cx)}" cy="{_fmt(cy)}" r="2" fill="#c03030"/>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def write_ellipse_csv(
    state: MixtureState | GaussianParam, path: str | Path, nsig: float = 2.0
) -> None:
    """Plot data: per component, its mean row then the ellipse polyline rows."""
    mix = as_mixture(state)
    with open(Path(path), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["component", "kind", "x", "y"])
        for i, p in enumerate(mix.params):
            writer.writerow([i, "mean", f"{p.mean[0]:.17g}", f"{p.mean[1]:.17g}"])
            for x, y in ellipse_points(p, nsig):
                writer.writerow([i, "ellipse", f"{x:.17g}", f"{y:.17g}"])


def render_kl_figure(
    times,
    kl_values,
    path: str | Path,
    baseline: float | None = None,
    baseline_label: str = "Laplace",
    ylabel: str = "KL divergence",
) -> None:
    """KL trace over time; a horizontal baseline marks a reference method."""
    with _RENDER_LOCK:
        fig, ax = plt.subplots(figsize=(5, 3.5))
        ax.plot(times, kl_values, color="#c03030", label="gradient flow")
        if baseline is not None:
            ax.axhline(baseline, color="#3060c0", linestyle="--", label=baseline_label)
        if min(kl_values) > 0 and (baseline is None or baseline > 0):
            ax.set_yscale("log")
        ax.set_xlabel("time")
        ax.set_ylabel(ylabel)
        ax.legend()
        fig.tight_layout()
        fig.savefig(Path(path), dpi=120)
        plt.close(fig)


def render_snapshot_figure(
    state: MixtureState | GaussianParam,
    target: Target | None,
    bounds: Bounds,
    path: str | Path,
    resolution: int = 100,
    nsig: float = 2.0,
) -> None:
    """Target density heatmap with component ellipses overlaid (d=2 only)."""
    mix = as_mixture(state)
    if mix.dim != 2:
        raise DomainError("snapshot figures are only defined in d=2")
    with _RENDER_LOCK:
        fig, ax = plt.subplots(figsize=(5, 5))
        if target is not None:
            xs, ys, logvals = grid_log_unnormalized(target, bounds, resolution)
            z = np.exp(logvals - logvals.max())
            ax.contour(xs, ys, z, levels=8, colors="gray", linewidths=0.8)
        for p in mix.params:
            pts = ellipse_points(p, nsig)
            ax.plot(pts[:, 0], pts[:, 1], color="#c03030", lw=1.2)
            ax.plot(*p.mean, marker=".", color="#c03030", ms=4)
        ax.set_xlim(*bounds[0])
        ax.set_ylim(*bounds[1])
        ax.set_aspect("equal")
        fig.tight_layout()
        fig.savefig(Path(path), dpi=120)
        plt.close(fig)
