import dataclasses

import numpy as np
import pytest
from helpers import rand_gaussian

from wgfvi import (
    DegeneracyError,
    DomainError,
    GaussianParam,
    GaussianTarget,
    SgdConfig,
    bw_sgd_step,
    run_bw_sgd,
    run_seed_sweep,
    w2_distance_sq,
)


def _quadratic(alpha=0.5):
    # Precision eigenvalues {alpha, 1}: alpha-strongly-convex, 1-smooth.
    return GaussianTarget([1.0, -1.0], np.diag([1.0 / alpha, 1.0]))


def _config(alpha=0.5, **kw):
    kw.setdefault("step_size", alpha**2 / 60.0)
    kw.setdefault("iterations", 50)
    return SgdConfig(alpha=alpha, **kw)


class TestConfig:
    def test_step_bound_enforced(self):
        with pytest.raises(DomainError, match="alpha"):
            SgdConfig(alpha=0.5, step_size=0.1, iterations=10)

    def test_step_bound_overridable_with_warning(self):
        with pytest.warns(UserWarning, match="contraction"):
            SgdConfig(alpha=0.5, step_size=0.1, iterations=10, allow_large_step=True)

    def test_clip_threshold_defaults_to_inverse_alpha(self):
        assert _config(alpha=0.25).clip_threshold == pytest.approx(4.0)

    def test_invalid_parameters_rejected(self):
        with pytest.raises(DomainError):
            SgdConfig(alpha=-1.0, step_size=0.001, iterations=1)
        with pytest.raises(DomainError):
            SgdConfig(alpha=0.5, step_size=-0.001, iterations=1)


class TestStep:
    def test_zero_step_is_identity(self):
        cfg = SgdConfig(alpha=0.5, step_size=0.0, iterations=0)
        p = GaussianParam([1.0, 2.0], np.eye(2))  # spectrum within [alpha/9, 1/alpha]
        out = bw_sgd_step(p, _quadratic(), cfg, np.random.default_rng(0))
        np.testing.assert_array_equal(out.mean, p.mean)
        np.testing.assert_allclose(out.cov, p.cov, atol=1e-15)

    def test_isotropic_quadratic_hand_evaluation(self):
        # V = ||x - m*||^2 / 2: hess = I, so with Sigma = I the covariance
        # update multiplier is exactly I and only the mean moves.
        target = GaussianTarget([2.0, 0.0], np.eye(2))
        cfg = SgdConfig(alpha=1.0, step_size=1.0 / 60.0, iterations=0)
        p = GaussianParam([0.0, 0.0], np.eye(2))
        rng = np.random.default_rng(7)
        sample = p.mean + np.linalg.cholesky(p.cov) @ np.random.default_rng(7).standard_normal(2)
        out = bw_sgd_step(p, target, cfg, rng)
        np.testing.assert_allclose(
            out.mean, p.mean - cfg.step_size * (sample - target.param.mean), atol=1e-14
        )
        np.testing.assert_allclose(out.cov, np.eye(2), atol=1e-12)

    def test_clip_bounds_top_eigenvalue(self):
        rng = np.random.default_rng(1)
        target = _quadratic()
        cfg = _config()
        p = GaussianParam([0.0, 0.0], np.diag([1.9, 0.3]))
        for _ in range(25):
            p = bw_sgd_step(p, target, cfg, rng)
            assert np.linalg.eigvalsh(p.cov)[-1] <= 1.0 / cfg.alpha + 1e-12

    def test_exact_degeneracy_detected(self):
        # hess = diag(2, 1), Sigma = I, h = 1: the multiplier is diag(0, 1).
        target = GaussianTarget([0.0, 0.0], np.diag([0.5, 1.0]))
        with pytest.warns(UserWarning):
            cfg = SgdConfig(alpha=0.5, step_size=1.0, iterations=1, allow_large_step=True)
        with pytest.raises(DegeneracyError, match="h="):
            bw_sgd_step(
                GaussianParam([0.0, 0.0], np.eye(2)), target, cfg, np.random.default_rng(0)
            )


class TestRun:
    def test_zero_iterations_records_initial_state_only(self):
        trace = run_bw_sgd(
            GaussianParam([0.0, 0.0], np.eye(2)), _quadratic(), _config(iterations=0)
        )
        assert len(trace.states) == 1
        assert trace.times == [0.0]

    def test_same_seed_gives_identical_trace(self):
        p0 = GaussianParam([2.0, 2.0], np.eye(2))
        a = run_bw_sgd(p0, _quadratic(), _config(seed=5))
        b = run_bw_sgd(p0, _quadratic(), _config(seed=5))
        for pa, pb in zip(a.states, b.states):
            np.testing.assert_array_equal(pa.mean, pb.mean)
            np.testing.assert_array_equal(pa.cov, pb.cov)
        assert a.kl_values == b.kl_values

    def test_initialization_outside_hypothesis_warns(self):
        with pytest.warns(UserWarning, match="initial covariance"):
            run_bw_sgd(
                GaussianParam([0.0, 0.0], 10.0 * np.eye(2)),
                _quadratic(),
                _config(iterations=1),
            )

    def test_contracts_toward_target(self):
        target = _quadratic()
        p0 = GaussianParam([3.0, 3.0], np.eye(2))
        trace = run_bw_sgd(p0, target, _config(iterations=2000, seed=3), reference=target.param)
        assert trace.w2sq_to_ref[-1] < 0.1 * trace.w2sq_to_ref[0]

    def test_mean_iterates_unbiased_at_stationarity(self):
        target = _quadratic()
        finals = []
        for seed in range(60):
            trace = run_bw_sgd(
                GaussianParam([1.0, -1.0], np.eye(2)),
                target,
                _config(iterations=200, seed=seed, record_every=200),
            )
            finals.append(trace.final.mean)
        finals = np.stack(finals)
        stderr = finals.std(axis=0, ddof=1) / np.sqrt(len(finals))
        assert np.all(np.abs(finals.mean(axis=0) - target.param.mean) <= 3.0 * stderr + 1e-9)


class TestSweep:
    def test_deterministic_merge(self):
        target = _quadratic()
        p0 = GaussianParam([2.0, 0.0], np.eye(2))
        cfg = _config(iterations=40, record_every=10)
        a = run_seed_sweep(p0, target, cfg, [3, 1, 2], target.param)
        b = run_seed_sweep(p0, target, cfg, [3, 1, 2], target.param)
        assert a == b
        assert a["n_seeds"] == 3
        assert len(a["mean_w2sq"]) == len(a["iterations"])

    def test_initial_distance_is_exact(self):
        target = _quadratic()
        p0 = GaussianParam([2.0, 0.0], np.eye(2))
        sweep = run_seed_sweep(p0, target, _config(iterations=10), [0, 1], target.param)
        assert sweep["mean_w2sq"][0] == pytest.approx(w2_distance_sq(p0, target.param))
        assert sweep["var_w2sq"][0] == pytest.approx(0.0, abs=1e-20)

    def test_empty_seed_list_rejected(self):
        with pytest.raises(DomainError):
            run_seed_sweep(
                rand_gaussian(np.random.default_rng(0), 2),
                _quadratic(),
                _config(),
                [],
                _quadratic().param,
            )


def test_replace_preserves_validation():
    cfg = _config()
    with pytest.raises(DomainError):
        dataclasses.replace(cfg, step_size=1.0)
