"""Experiment orchestration: validated JSON configs in, artifacts out.

Every experiment writes into its own output directory:

* ``config.echo.json`` -- the fully resolved configuration (re-running it
  reproduces the artifacts),
* ``trace.csv`` or ``trace.jsonl`` -- the recorded flow,
* ``summary.json`` -- final figures of merit (each KL value labeled with
  its normalization mode),
* figures: ``ellipses.svg``, ``plot_data.csv``, and matplotlib renderings
  (``kl_trace.png``, ``snapshot.png``) where the dimension allows.

Configuration errors are raised as ConfigError before any artifact is
written.
"""

from __future__ import annotations

import dataclasses
import json
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .bw_sgd import SgdConfig, run_bw_sgd, run_seed_sweep
from .errors import ConfigError, ConvergenceError, DomainError, ShapeError
from .gaussian_flow import FlowConfig, integrate_gaussian_flow, write_trace_csv
from .geometry import GaussianParam
from .gridnorm import auto_bounds_2d, grid_normalize_2d
from .mixture_flow import (
    MixtureState,
    init_particles,
    integrate_mixture_flow,
    write_trace_jsonl,
)
from .quadrature import unnormalized_kl_cubature
from .report import (
    emit_ellipse_svg,
    render_kl_figure,
    render_snapshot_figure,
    target_contours_2d,
    write_ellipse_csv,
)
from .targets import (
    GaussianTarget,
    LogisticTarget,
    MixtureTarget,
    ScaledTarget,
    Target,
    generate_logistic_data,
    laplace_approx,
    load_logistic_dataset,
    save_logistic_dataset,
)
from .wfr_flow import WfrState, integrate_wfr_flow

EXPERIMENT_KINDS = ("gaussian-vi", "mixture-vi", "wfr-vi", "bw-sgd", "laplace", "kl-grid")

_OPTION_DEFAULTS: dict[str, dict] = {
    "gaussian-vi": {
        "compare_laplace": False,
        "normalize": None,  # "grid" | "none"; default grid in d=2
        "grid_resolution": 100,
        "grid_bounds": None,
        "use_hessian": False,
        "form": "sqrt",
        "laplace_tol": 1e-8,
        "laplace_max_iter": 200,
    },
    "laplace": {
        "normalize": None,
        "grid_resolution": 100,
        "grid_bounds": None,
        "tol": 1e-8,
        "max_iter": 200,
        "mode_init": None,
    },
    "kl-grid": {"grid_resolution": 100, "grid_bounds": None},
    "mixture-vi": {
        "mc_samples": 50_000,
        "normalize": None,
        "grid_resolution": 100,
        "grid_bounds": None,
    },
    "wfr-vi": {
        "mc_samples": 50_000,
        "weighted_baseline": True,
        "normalize": None,
        "grid_resolution": 100,
        "grid_bounds": None,
    },
    "bw-sgd": {
        "seeds": None,  # int count or explicit list; default [seed]
        "alpha": None,
        "beta": None,
        "reference": None,  # "exact" | "ode"
        "ref_step_size": 0.1,
        "ref_total_time": 30.0,
    },
}


@dataclass
class ExperimentConfig:
    """A validated experiment description; ``echo`` round-trips through JSON."""

    kind: str
    seed: int
    out_dir: str
    target: dict
    init: dict
    flow: dict
    sgd: dict
    options: dict

    def echo(self) -> dict:
        return {
            "kind": self.kind,
            "seed": self.seed,
            "out_dir": self.out_dir,
            "target": self.target,
            "init": self.init,
            "flow": self.flow,
            "sgd": self.sgd,
            "options": self.options,
        }


def _expect_type(value, types, path: str):
    if not isinstance(value, types):
        names = types.__name__ if isinstance(types, type) else "/".join(t.__name__ for t in types)
        raise ConfigError(f"{path}: expected {names}, got {type(value).__name__}")
    return value


def _number(value, path: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{path}: expected a number, got {type(value).__name__}")
    return float(value)


def _validate_target(spec, path: str = "target") -> dict:
    spec = dict(_expect_type(spec, dict, path))
    kind = spec.get("kind")
    if kind == "gaussian":
        allowed = {"kind", "mean", "cov"}
        for key in ("mean", "cov"):
            if key not in spec:
                raise ConfigError(f"{path}.{key}: required for a gaussian target")
    elif kind == "mixture":
        allowed = {"kind", "weights", "means", "covs"}
        for key in ("weights", "means", "covs"):
            if key not in spec:
                raise ConfigError(f"{path}.{key}: required for a mixture target")
    elif kind == "logistic":
        allowed = {"kind", "d", "n", "s", "data_seed", "sigma_star", "dataset_csv"}
        if "dataset_csv" not in spec:
            for key in ("d", "n", "s"):
                if key not in spec:
                    raise ConfigError(f"{path}.{key}: required to generate a logistic target")
        spec.setdefault("data_seed", 0)
    else:
        raise ConfigError(f"{path}.kind: must be gaussian, mixture or logistic, got {kind!r}")
    unknown = set(spec) - allowed
    if unknown:
        raise ConfigError(f"{path}: unknown fields {sorted(unknown)}")
    return spec


def build_target(spec: dict) -> tuple[Target, dict]:
    """Construct the configured target; returns it with the resolved spec."""
    kind = spec["kind"]
    try:
        if kind == "gaussian":
            target = GaussianTarget(np.array(spec["mean"], float), np.array(spec["cov"], float))
            resolved = {
                "kind": kind,
                "mean": target.param.mean.tolist(),
                "cov": target.param.cov.tolist(),
            }
            return target, resolved
        if kind == "mixture":
            target = MixtureTarget(spec["weights"], spec["means"], spec["covs"])
            resolved = {
                "kind": kind,
                "weights": target.weights.tolist(),
                "means": target.means.tolist(),
                "covs": target.covs.tolist(),
            }
            return target, resolved
        if spec.get("dataset_csv"):
            dataset = load_logistic_dataset(spec["dataset_csv"])
        else:
            sigma = np.array(spec["sigma_star"], float) if spec.get("sigma_star") else None
            dataset = generate_logistic_data(
                int(spec["d"]), int(spec["n"]), float(spec["s"]), int(spec["data_seed"]), sigma
            )
        resolved = {
            "kind": "logistic",
            "d": dataset.dim,
            "n": dataset.x.shape[0],
            "s": dataset.s,
            "data_seed": dataset.seed,
            "sigma_star": dataset.sigma_star.tolist(),
        }
        return LogisticTarget(dataset), resolved
    except (DomainError, ShapeError, ValueError, OSError) as exc:
        raise ConfigError(f"target: {exc}") from exc


def parse_config(
    raw: dict,
    kind: str | None = None,
    seed: int | None = None,
    out_dir: str | None = None,
) -> ExperimentConfig:
    """Validate a raw JSON object, applying CLI overrides and defaults."""
    raw = dict(_expect_type(raw, dict, "config"))
    unknown = set(raw) - {"kind", "seed", "out_dir", "target", "init", "flow", "sgd", "options"}
    if unknown:
        raise ConfigError(f"config: unknown fields {sorted(unknown)}")

    cfg_kind = raw.get("kind", kind)
    if cfg_kind is None:
        raise ConfigError("config.kind: missing (supply in the file or on the command line)")
    if kind is not None and cfg_kind != kind:
        raise ConfigError(f"config.kind: file says {cfg_kind!r} but command line says {kind!r}")
    if cfg_kind not in EXPERIMENT_KINDS:
        raise ConfigError(f"config.kind: unknown kind {cfg_kind!r}; expected one of {EXPERIMENT_KINDS}")

    cfg_seed = seed if seed is not None else raw.get("seed", 0)
    if isinstance(cfg_seed, bool) or not isinstance(cfg_seed, int):
        raise ConfigError("config.seed: expected an integer")

    cfg_out = out_dir if out_dir is not None else raw.get("out_dir", f"out/{cfg_kind}")
    _expect_type(cfg_out, str, "config.out_dir")

    if "target" not in raw:
        raise ConfigError("config.target: required")
    target = _validate_target(raw["target"])

    init = dict(_expect_type(raw.get("init", {}), dict, "config.init"))

    flow = dict(_expect_type(raw.get("flow", {}), dict, "config.flow"))
    allowed_flow = {"step_size", "total_time", "record_every", "log_z"}
    unknown = set(flow) - allowed_flow
    if unknown:
        raise ConfigError(f"config.flow: unknown fields {sorted(unknown)}")
    try:
        FlowConfig(**{**flow, "seed": 0})
    except (DomainError, TypeError) as exc:
        raise ConfigError(f"config.flow: {exc}") from exc

    sgd = dict(_expect_type(raw.get("sgd", {}), dict, "config.sgd"))
    allowed_sgd = {
        "step_size",
        "iterations",
        "record_every",
        "clip",
        "clip_threshold",
        "allow_large_step",
        "log_z",
    }
    unknown = set(sgd) - allowed_sgd
    if unknown:
        raise ConfigError(f"config.sgd: unknown fields {sorted(unknown)}")

    defaults = _OPTION_DEFAULTS[cfg_kind]
    options = dict(_expect_type(raw.get("options", {}), dict, "config.options"))
    unknown = set(options) - set(defaults)
    if unknown:
        raise ConfigError(f"config.options: unknown fields {sorted(unknown)} for kind {cfg_kind}")
    for key, default in defaults.items():
        options.setdefault(key, default)

    return ExperimentConfig(cfg_kind, cfg_seed, cfg_out, target, init, flow, sgd, options)


def _build_gaussian_init(init: dict, d: int) -> tuple[GaussianParam, dict]:
    unknown = set(init) - {"mean", "cov", "cov_scale"}
    if unknown:
        raise ConfigError(f"config.init: unknown fields {sorted(unknown)}")
    mean = np.array(init.get("mean", np.zeros(d)), dtype=float)
    if "cov" in init:
        cov = np.array(init["cov"], dtype=float)
    else:
        # Wide initialization covers low-density regions in higher dimension.
        scale = float(init.get("cov_scale", 100.0 if d > 2 else 1.0))
        cov = scale * np.eye(d)
    try:
        p0 = GaussianParam(mean, cov)
    except (DomainError, ShapeError) as exc:
        raise ConfigError(f"config.init: {exc}") from exc
    return p0, {"mean": p0.mean.tolist(), "cov": p0.cov.tolist()}


def _build_particle_init(
    init: dict, target: Target, seed: int
) -> tuple[list[GaussianParam], np.ndarray, dict]:
    """Returns (params, weights, resolved spec) for mixture/wfr initialization."""
    if "components" in init:
        unknown = set(init) - {"components"}
        if unknown:
            raise ConfigError(f"config.init: unknown fields {sorted(unknown)}")
        comps = init["components"]
        _expect_type(comps, list, "config.init.components")
        if not comps:
            raise ConfigError("config.init.components: must not be empty")
        params, weights = [], []
        for i, comp in enumerate(comps):
            _expect_type(comp, dict, f"config.init.components[{i}]")
            try:
                params.append(GaussianParam(np.array(comp["m"], float), np.array(comp["sigma"], float)))
            except (KeyError, DomainError, ShapeError) as exc:
                raise ConfigError(f"config.init.components[{i}]: {exc}") from exc
            weights.append(float(comp.get("w", 1.0 / len(comps))))
        weights = np.asarray(weights)
        if np.any(weights <= 0):
            raise ConfigError("config.init.components: weights must be positive")
        if abs(weights.sum() - 1.0) > 1e-6:
            raise ConfigError("config.init.components: weights must sum to 1")
        weights = weights / weights.sum()
        resolved = {
            "components": [
                {"w": float(w), "m": p.mean.tolist(), "sigma": p.cov.tolist()}
                for w, p in zip(weights, params)
            ]
        }
        return params, weights, resolved

    unknown = set(init) - {"n_particles", "radius", "base_cov", "particle_seed"}
    if unknown:
        raise ConfigError(f"config.init: unknown fields {sorted(unknown)}")
    if "n_particles" not in init:
        raise ConfigError("config.init.n_particles: required (or give explicit components)")
    n = int(init["n_particles"])
    radius = init.get("radius")
    if radius is None:
        if not isinstance(target, MixtureTarget):
            raise ConfigError(
                "config.init.radius: required (no default support radius for this target)"
            )
        radius = 1.5 * target.support_radius()
    radius = float(radius)
    base_cov = np.array(init.get("base_cov", np.eye(target.dim)), dtype=float)
    particle_seed = int(init.get("particle_seed", seed))
    try:
        state = init_particles(n, radius, base_cov, particle_seed)
    except (DomainError, ShapeError) as exc:
        raise ConfigError(f"config.init: {exc}") from exc
    resolved = {
        "n_particles": n,
        "radius": radius,
        "base_cov": base_cov.tolist(),
        "particle_seed": particle_seed,
    }
    return list(state.params), state.weights, resolved


def _resolve_normalization(cfg: ExperimentConfig, target: Target) -> tuple[float, str]:
    """Pick the KL offset: grid normalization in d=2 unless disabled."""
    mode = cfg.options.get("normalize")
    if mode is None:
        mode = "grid" if target.dim == 2 else "none"
    if mode not in ("grid", "none"):
        raise ConfigError(f"config.options.normalize: expected 'grid' or 'none', got {mode!r}")
    cfg.options["normalize"] = mode
    if mode == "grid":
        if target.dim != 2:
            raise ConfigError("config.options.normalize: grid normalization needs a d=2 target")
        resolution = int(cfg.options["grid_resolution"])
        bounds = cfg.options.get("grid_bounds")
        try:
            if bounds is None:
                bounds = auto_bounds_2d(target, resolution)
                cfg.options["grid_bounds"] = [list(bounds[0]), list(bounds[1])]
            else:
                bounds = (tuple(bounds[0]), tuple(bounds[1]))
            log_z = grid_normalize_2d(target, bounds, resolution)
        except ConvergenceError as exc:
            raise ConfigError(
                f"target cannot be grid-normalized ({exc}); for nearly separable "
                "logistic data the posterior may be improper - pick another data_seed"
            ) from exc
        return log_z, "grid-normalized"
    log_z = float(cfg.flow.get("log_z", 0.0))
    return log_z, f"unnormalized(log_z={log_z:g})"


def _flow_config(cfg: ExperimentConfig, log_z: float) -> FlowConfig:
    return FlowConfig(**{**cfg.flow, "log_z": log_z, "seed": cfg.seed})


def _snapshot_bounds(cfg: ExperimentConfig, target: Target):
    bounds = cfg.options.get("grid_bounds")
    if bounds is not None:
        return (tuple(bounds[0]), tuple(bounds[1]))
    return auto_bounds_2d(target, int(cfg.options.get("grid_resolution", 100)))


def _write_json(path: Path, payload: dict) -> None:
    # Creating directories lazily keeps malformed configs artifact-free:
    # every runner validates before its first write.
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _maybe_save_dataset(target: Target, out: Path) -> None:
    if isinstance(target, LogisticTarget):
        save_logistic_dataset(target.dataset, out / "dataset.csv")


def _render_2d_artifacts(cfg, target, state, out: Path) -> None:
    if target.dim != 2:
        return
    bounds = _snapshot_bounds(cfg, target)
    contours = target_contours_2d(target, bounds, int(cfg.options.get("grid_resolution", 100)))
    (out / "ellipses.svg").write_text(emit_ellipse_svg(state, contours, bounds))
    write_ellipse_csv(state, out / "plot_data.csv")
    render_snapshot_figure(state, target, bounds, out / "snapshot.png")


def _run_gaussian_vi(cfg: ExperimentConfig, out: Path) -> dict:
    target, cfg.target = build_target(cfg.target)
    log_z, kl_mode = _resolve_normalization(cfg, target)
    p0, cfg.init = _build_gaussian_init(cfg.init, target.dim)
    flow_cfg = _flow_config(cfg, log_z)
    _write_json(out / "config.echo.json", cfg.echo())
    _maybe_save_dataset(target, out)

    trace = integrate_gaussian_flow(
        p0,
        target,
        flow_cfg,
        use_hessian=bool(cfg.options["use_hessian"]),
        form=str(cfg.options["form"]),
    )
    write_trace_csv(trace, out / "trace.csv")

    summary = {
        "kind": cfg.kind,
        "iterations": flow_cfg.n_steps,
        "kl_mode": kl_mode,
        "vi_kl": trace.kl_values[-1],
        "final_mean": trace.final.mean.tolist(),
        "final_cov": trace.final.cov.tolist(),
    }
    laplace_kl = None
    if cfg.options["compare_laplace"]:
        lap = laplace_approx(
            target,
            np.zeros(target.dim),
            tol=float(cfg.options["laplace_tol"]),
            max_iter=int(cfg.options["laplace_max_iter"]),
        )
        laplace_kl = unnormalized_kl_cubature(lap, target, log_z)
        summary["laplace_kl"] = laplace_kl
        summary["laplace_mean"] = lap.mean.tolist()
        summary["laplace_cov"] = lap.cov.tolist()
        summary["vi_beats_laplace"] = bool(trace.kl_values[-1] < laplace_kl)

    render_kl_figure(trace.times, trace.kl_values, out / "kl_trace.png", baseline=laplace_kl)
    _render_2d_artifacts(cfg, target, trace.final, out)
    return summary


def _run_laplace(cfg: ExperimentConfig, out: Path) -> dict:
    target, cfg.target = build_target(cfg.target)
    log_z, kl_mode = _resolve_normalization(cfg, target)
    _write_json(out / "config.echo.json", cfg.echo())
    _maybe_save_dataset(target, out)
    init = np.array(cfg.options.get("mode_init") or np.zeros(target.dim), dtype=float)
    lap = laplace_approx(
        target, init, tol=float(cfg.options["tol"]), max_iter=int(cfg.options["max_iter"])
    )
    _render_2d_artifacts(cfg, target, lap, out)
    return {
        "kind": cfg.kind,
        "kl_mode": kl_mode,
        "laplace_kl": unnormalized_kl_cubature(lap, target, log_z),
        "mode": lap.mean.tolist(),
        "cov": lap.cov.tolist(),
        "iterations": int(cfg.options["max_iter"]),
    }


def _run_kl_grid(cfg: ExperimentConfig, out: Path) -> dict:
    target, cfg.target = build_target(cfg.target)
    if target.dim != 2:
        raise ConfigError("kl-grid requires a d=2 target")
    resolution = int(cfg.options["grid_resolution"])
    bounds = cfg.options.get("grid_bounds")
    if bounds is None:
        bounds = auto_bounds_2d(target, resolution)
        cfg.options["grid_bounds"] = [list(bounds[0]), list(bounds[1])]
    else:
        bounds = (tuple(bounds[0]), tuple(bounds[1]))
    _write_json(out / "config.echo.json", cfg.echo())
    log_z = grid_normalize_2d(target, bounds, resolution)
    return {
        "kind": cfg.kind,
        "log_z": log_z,
        "grid_bounds": [list(bounds[0]), list(bounds[1])],
        "grid_resolution": resolution,
        "iterations": 0,
    }


def _run_mixture_vi(cfg: ExperimentConfig, out: Path) -> dict:
    target, cfg.target = build_target(cfg.target)
    log_z, kl_mode = _resolve_normalization(cfg, target)
    params, weights, cfg.init = _build_particle_init(cfg.init, target, cfg.seed)
    state0 = MixtureState(weights, params)
    flow_cfg = _flow_config(cfg, log_z)
    _write_json(out / "config.echo.json", cfg.echo())
    _maybe_save_dataset(target, out)

    trace = integrate_mixture_flow(
        state0, target, flow_cfg, mc_samples=int(cfg.options["mc_samples"])
    )
    write_trace_jsonl(trace, out / "trace.jsonl")
    render_kl_figure(trace.times, trace.kl_values, out / "kl_trace.png")
    _render_2d_artifacts(cfg, target, trace.final, out)
    return {
        "kind": cfg.kind,
        "iterations": flow_cfg.n_steps,
        "kl_mode": kl_mode,
        "n_components": state0.n_components,
        "initial_kl": trace.kl_values[0],
        "final_kl": trace.kl_values[-1],
        "final_kl_stderr": trace.kl_stderrs[-1],
    }


def _run_wfr_vi(cfg: ExperimentConfig, out: Path) -> dict:
    target, cfg.target = build_target(cfg.target)
    log_z, kl_mode = _resolve_normalization(cfg, target)
    params, weights, cfg.init = _build_particle_init(cfg.init, target, cfg.seed)
    weights = weights / weights.sum()
    state0 = WfrState(np.sqrt(weights), params)
    flow_cfg = _flow_config(cfg, log_z)
    _write_json(out / "config.echo.json", cfg.echo())
    _maybe_save_dataset(target, out)

    trace = integrate_wfr_flow(
        state0,
        target,
        flow_cfg,
        weighted_baseline=bool(cfg.options["weighted_baseline"]),
        mc_samples=int(cfg.options["mc_samples"]),
    )
    write_trace_jsonl(trace, out / "trace.jsonl")
    render_kl_figure(trace.times, trace.kl_values, out / "kl_trace.png")
    _render_2d_artifacts(cfg, target, trace.final, out)
    final_weights = trace.final.weights
    return {
        "kind": cfg.kind,
        "iterations": flow_cfg.n_steps,
        "kl_mode": kl_mode,
        "n_components": state0.n_components,
        "weighted_baseline": bool(cfg.options["weighted_baseline"]),
        "initial_kl": trace.kl_values[0],
        "final_kl": trace.kl_values[-1],
        "final_kl_stderr": trace.kl_stderrs[-1],
        "final_weights": final_weights.tolist(),
    }


def _run_bw_sgd(cfg: ExperimentConfig, out: Path) -> dict:
    base_target, cfg.target = build_target(cfg.target)
    if not base_target.has_hessian:
        raise ConfigError("bw-sgd requires a target with a Hessian oracle")

    beta = cfg.options.get("beta")
    if beta is None:
        if isinstance(base_target, GaussianTarget):
            beta = float(np.linalg.eigvalsh(base_target.precision)[-1])
        elif isinstance(base_target, LogisticTarget):
            x = base_target.dataset.x
            beta = 0.25 * float(np.linalg.eigvalsh(x.T @ x)[-1])
        else:
            raise ConfigError("config.options.beta: required for this target kind")
    beta = float(beta)
    cfg.options["beta"] = beta

    alpha = cfg.options.get("alpha")
    if alpha is None:
        if isinstance(base_target, GaussianTarget):
            alpha = float(np.linalg.eigvalsh(base_target.precision)[0])
        else:
            raise ConfigError("config.options.alpha: required for non-Gaussian targets")
    alpha = float(alpha)
    cfg.options["alpha"] = alpha

    # Work in coordinates where the Hessian bound is at most one.
    if beta > 1.0:
        working: Target = ScaledTarget(base_target, beta)
        alpha_work = alpha / beta
    else:
        working = base_target
        beta = 1.0
        alpha_work = alpha
        cfg.options["beta"] = 1.0

    seeds = cfg.options.get("seeds")
    if seeds is None:
        seeds = [cfg.seed]
    elif isinstance(seeds, int):
        seeds = list(range(seeds))
    elif isinstance(seeds, list):
        seeds = [int(s) for s in seeds]
    else:
        raise ConfigError("config.options.seeds: expected an integer count or a list")
    cfg.options["seeds"] = seeds

    sgd_fields = dict(cfg.sgd)
    sgd_fields.setdefault("step_size", alpha_work**2 / 60.0)
    sgd_fields.setdefault("iterations", 1000)
    try:
        sgd_cfg = SgdConfig(alpha=alpha_work, seed=seeds[0], **sgd_fields)
    except (DomainError, TypeError) as exc:
        raise ConfigError(f"config.sgd: {exc}") from exc
    cfg.sgd = {
        "step_size": sgd_cfg.step_size,
        "iterations": sgd_cfg.iterations,
        "record_every": sgd_cfg.record_every,
        "clip": sgd_cfg.clip,
        "clip_threshold": sgd_cfg.clip_threshold,
        "allow_large_step": sgd_cfg.allow_large_step,
        "log_z": sgd_cfg.log_z,
    }

    if cfg.init:
        p0_base, cfg.init = _build_gaussian_init(cfg.init, base_target.dim)
        p0 = working.push(p0_base) if isinstance(working, ScaledTarget) else p0_base
    else:
        p0 = GaussianParam(np.zeros(working.dim), np.eye(working.dim))
        cfg.init = {"mean": p0.mean.tolist(), "cov": p0.cov.tolist(), "space": "working"}

    reference_mode = cfg.options.get("reference")
    if reference_mode is None:
        reference_mode = "exact" if isinstance(base_target, GaussianTarget) else "ode"
    cfg.options["reference"] = reference_mode
    if reference_mode == "exact":
        if not isinstance(base_target, GaussianTarget):
            raise ConfigError("config.options.reference: 'exact' needs a gaussian target")
        reference = working.push(base_target.param) if isinstance(working, ScaledTarget) else base_target.param
    elif reference_mode == "ode":
        ref_cfg = FlowConfig(
            step_size=float(cfg.options["ref_step_size"]),
            total_time=float(cfg.options["ref_total_time"]),
            record_every=10_000_000,
        )
        reference = integrate_gaussian_flow(p0, working, ref_cfg).final
    else:
        raise ConfigError("config.options.reference: expected 'exact' or 'ode'")

    _write_json(out / "config.echo.json", cfg.echo())
    _maybe_save_dataset(base_target, out)

    first_trace = run_bw_sgd(p0, working, dataclasses.replace(sgd_cfg, seed=seeds[0]), reference)
    write_trace_csv(first_trace, out / "trace.csv")
    render_kl_figure(
        first_trace.times,
        first_trace.w2sq_to_ref,
        out / "kl_trace.png",
        ylabel="squared W2 to reference",
    )

    summary = {
        "kind": cfg.kind,
        "iterations": sgd_cfg.iterations,
        "alpha": alpha,
        "alpha_working": alpha_work,
        "hessian_rescale_beta": beta,
        "step_size": sgd_cfg.step_size,
        "reference_mode": reference_mode,
        "n_seeds": len(seeds),
        "noise_floor": 36.0 * working.dim * sgd_cfg.step_size / alpha_work**2,
        "final_w2sq_first_seed": first_trace.w2sq_to_ref[-1],
    }
    if len(seeds) > 1:
        sweep = run_seed_sweep(p0, working, sgd_cfg, seeds, reference)
        _write_json(out / "sweep.json", sweep)
        summary["final_mean_w2sq"] = sweep["mean_w2sq"][-1]
    return summary


_RUNNERS = {
    "gaussian-vi": _run_gaussian_vi,
    "laplace": _run_laplace,
    "kl-grid": _run_kl_grid,
    "mixture-vi": _run_mixture_vi,
    "wfr-vi": _run_wfr_vi,
    "bw-sgd": _run_bw_sgd,
}


def run_experiment(cfg: ExperimentConfig) -> dict:
    """Run one experiment, writing all artifacts under cfg.out_dir.

    Returns the summary dictionary (also written as summary.json).
    Configuration problems raise ConfigError before artifacts appear;
    numerical degeneracy propagates as DegeneracyError.
    """
    out = Path(cfg.out_dir)
    started = time.perf_counter()
    summary = _RUNNERS[cfg.kind](cfg, out)
    # Wall time is informational and excluded from determinism guarantees.
    summary["wall_time_sec"] = time.perf_counter() - started
    _write_json(out / "summary.json", summary)
    return summary
