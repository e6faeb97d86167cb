import numpy as np
import pytest
from helpers import finite_diff_grad, finite_diff_jac, rand_spd

from wgfvi import (
    ConvergenceError,
    DomainError,
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


def _bimodal(d=2):
    return MixtureTarget(
        [0.5, 0.5],
        [[-2.0] + [0.0] * (d - 1), [2.0] + [0.0] * (d - 1)],
        [0.5 * np.eye(d), 0.5 * np.eye(d)],
    )


class TestMixtureTarget:
    def test_single_component_score_is_gaussian_score(self):
        rng = np.random.default_rng(0)
        cov = rand_spd(rng, 3, (-0.5, 0.5))
        mean = rng.standard_normal(3)
        t = MixtureTarget([1.0], [mean], [cov])
        x = rng.standard_normal(3)
        np.testing.assert_allclose(t.score(x), np.linalg.solve(cov, mean - x), atol=1e-12)

    def test_symmetric_mixture_score_vanishes_at_midpoint(self):
        np.testing.assert_allclose(_bimodal().score(np.zeros(2)), 0.0, atol=1e-12)

    def test_score_matches_finite_differences(self):
        rng = np.random.default_rng(1)
        t = MixtureTarget(
            [0.3, 0.5, 0.2],
            rng.standard_normal((3, 2)) * 2.0,
            [rand_spd(rng, 2, (-0.5, 0.5)) for _ in range(3)],
        )
        for _ in range(100):
            x = 3.0 * rng.standard_normal(2)
            fd = finite_diff_grad(lambda v: t.log_density(v), x)
            assert np.linalg.norm(t.score(x) - fd) <= 1e-6 * (1.0 + np.linalg.norm(fd))

    def test_translation_equivariance(self):
        rng = np.random.default_rng(2)
        means = rng.standard_normal((2, 2))
        covs = [rand_spd(rng, 2, (-0.3, 0.3)) for _ in range(2)]
        shift = np.array([3.0, -1.0])
        t0 = MixtureTarget([0.4, 0.6], means, covs)
        t1 = MixtureTarget([0.4, 0.6], means + shift, covs)
        x = rng.standard_normal(2)
        np.testing.assert_allclose(t0.score(x), t1.score(x + shift), atol=1e-12)

    def test_no_underflow_for_separated_components(self):
        d = 10
        t = MixtureTarget(
            [0.5, 0.5], [np.full(d, 30.0), np.full(d, -30.0)], [np.eye(d), np.eye(d)]
        )
        x = np.zeros(d)
        assert np.isfinite(t.log_density(x))
        assert np.all(np.isfinite(t.score(x)))

    def test_batched_evaluation_matches_loop(self):
        rng = np.random.default_rng(3)
        t = _bimodal()
        xs = rng.standard_normal((5, 2))
        np.testing.assert_allclose(
            t.log_density(xs), [t.log_density(x) for x in xs], atol=1e-13
        )
        np.testing.assert_allclose(t.score(xs), [t.score(x) for x in xs], atol=1e-13)

    def test_invalid_weights_rejected(self):
        with pytest.raises(DomainError):
            MixtureTarget([0.5, 0.6], np.zeros((2, 1)), [np.eye(1), np.eye(1)])


class TestLogisticTarget:
    def _target(self, d=2, n=10, s=2.0, seed=25):
        return LogisticTarget(generate_logistic_data(d, n, s, seed))

    def test_gradient_at_origin(self):
        t = self._target()
        ds = t.dataset
        expected = -np.sum((ds.y - 0.5)[:, None] * ds.x, axis=0)
        np.testing.assert_allclose(t.grad(np.zeros(2)), expected, atol=1e-12)

    def test_hessian_positive_semidefinite(self):
        rng = np.random.default_rng(4)
        t = self._target()
        for _ in range(100):
            z = 3.0 * rng.standard_normal(2)
            assert np.linalg.eigvalsh(t.hess(z))[0] >= -1e-12

    def test_hessian_eigenvalue_upper_bound(self):
        rng = np.random.default_rng(5)
        t = self._target()
        bound = 0.25 * np.linalg.eigvalsh(t.dataset.x.T @ t.dataset.x)[-1]
        for _ in range(50):
            z = 3.0 * rng.standard_normal(2)
            assert np.linalg.eigvalsh(t.hess(z))[-1] <= bound + 1e-12

    def test_derivatives_match_finite_differences(self):
        rng = np.random.default_rng(6)
        t = self._target()
        for _ in range(20):
            z = 2.0 * rng.standard_normal(2)
            fd_grad = finite_diff_grad(lambda v: float(t.potential(v)), z)
            rel = np.linalg.norm(t.grad(z) - fd_grad) / (1.0 + np.linalg.norm(fd_grad))
            assert rel <= 1e-5
            fd_hess = finite_diff_jac(t.grad, z)
            rel = np.linalg.norm(t.hess(z) - fd_hess) / (1.0 + np.linalg.norm(fd_hess))
            assert rel <= 1e-4

    def test_stable_for_extreme_logits(self):
        t = self._target()
        z = np.array([1e4, -1e4])
        assert np.isfinite(t.potential(z))
        assert np.all(np.isfinite(t.grad(z)))

    def test_gaussian_prior_changes_potential(self):
        ds = generate_logistic_data(2, 10, 2.0, 25)
        flat = LogisticTarget(ds)
        ridged = LogisticTarget(ds, prior_cov=np.eye(2))
        z = np.array([1.0, 2.0])
        assert ridged.potential(z) == pytest.approx(
            float(flat.potential(z)) + 0.5 * float(z @ z)
        )


class TestDataGeneration:
    def test_separation_is_exact(self):
        for s in (0.5, 1.5, 2.0):
            ds = generate_logistic_data(3, 20, s, seed=0)
            assert np.linalg.norm(2.0 * ds.m_star) == pytest.approx(s, rel=1e-12)

    def test_deterministic_given_seed(self):
        a = generate_logistic_data(2, 15, 1.0, seed=7)
        b = generate_logistic_data(2, 15, 1.0, seed=7)
        np.testing.assert_array_equal(a.x, b.x)
        np.testing.assert_array_equal(a.y, b.y)

    def test_class_conditional_means(self):
        ds = generate_logistic_data(3, 4000, 1.5, seed=8)
        for label, sign in ((1, 1.0), (0, -1.0)):
            emp = ds.x[ds.y == label].mean(axis=0)
            assert np.linalg.norm(emp - sign * ds.m_star) <= 5.0 / np.sqrt(
                np.sum(ds.y == label)
            )

    def test_default_covariance_by_dimension(self):
        np.testing.assert_allclose(
            generate_logistic_data(2, 5, 1.0, 0).sigma_star, np.diag([0.5, 0.17])
        )
        np.testing.assert_allclose(
            generate_logistic_data(5, 5, 1.0, 0).sigma_star, np.eye(5) / 5.0
        )

    def test_invalid_sizes_rejected(self):
        with pytest.raises(DomainError):
            generate_logistic_data(0, 5, 1.0, 0)
        with pytest.raises(DomainError):
            generate_logistic_data(2, 5, -1.0, 0)

    def test_fisher_direction(self):
        ds = generate_logistic_data(2, 5, 1.0, 0)
        np.testing.assert_allclose(
            ds.fisher_direction, 2.0 * np.linalg.solve(ds.sigma_star, ds.m_star)
        )

    def test_csv_round_trip(self, tmp_path):
        ds = generate_logistic_data(3, 12, 1.5, seed=9)
        save_logistic_dataset(ds, tmp_path / "data.csv")
        back = load_logistic_dataset(tmp_path / "data.csv")
        np.testing.assert_array_equal(back.x, ds.x)
        np.testing.assert_array_equal(back.y, ds.y)
        np.testing.assert_array_equal(back.sigma_star, ds.sigma_star)
        assert back.s == ds.s and back.seed == ds.seed


class _ShiftedTarget(Target):
    """V + constant; the mode must not move."""

    def __init__(self, base, c):
        self.base, self.c = base, c
        self.dim = base.dim
        self.has_hessian = base.has_hessian

    def potential(self, x):
        return self.base.potential(x) + self.c

    def grad(self, x):
        return self.base.grad(x)

    def hess(self, x):
        return self.base.hess(x)


class TestLaplace:
    def test_exact_for_gaussian_target(self):
        rng = np.random.default_rng(10)
        cov = rand_spd(rng, 3, (-0.5, 0.5))
        target = GaussianTarget(rng.standard_normal(3), cov)
        lap = laplace_approx(target, np.zeros(3), tol=1e-10, max_iter=50)
        np.testing.assert_allclose(lap.mean, target.param.mean, atol=1e-9)
        np.testing.assert_allclose(lap.cov, target.param.cov, atol=1e-9)

    def test_logistic_mode_gradient_small(self):
        target = LogisticTarget(generate_logistic_data(2, 10, 2.0, 25))
        lap = laplace_approx(target, np.zeros(2), tol=1e-8, max_iter=100)
        assert np.linalg.norm(target.grad(lap.mean)) <= 1e-8

    def test_additive_constant_invariance(self):
        target = LogisticTarget(generate_logistic_data(2, 10, 1.5, 25))
        lap0 = laplace_approx(target, np.zeros(2))
        lap1 = laplace_approx(_ShiftedTarget(target, 17.0), np.zeros(2))
        np.testing.assert_allclose(lap1.mean, lap0.mean, atol=1e-10)
        np.testing.assert_allclose(lap1.cov, lap0.cov, atol=1e-10)

    def test_budget_exhaustion_raises(self):
        target = LogisticTarget(generate_logistic_data(2, 10, 2.0, 25))
        with pytest.raises(ConvergenceError):
            laplace_approx(target, np.array([50.0, 50.0]), tol=1e-14, max_iter=1)

    def test_requires_hessian(self):
        with pytest.raises(DomainError):
            laplace_approx(_bimodal(), np.zeros(2))


class TestScaledTarget:
    def test_hessian_bound_normalized(self):
        base = GaussianTarget(np.zeros(2), np.diag([0.1, 0.5]))  # precision eigs 10, 2
        beta = np.linalg.eigvalsh(base.precision)[-1]
        scaled = ScaledTarget(base, beta)
        assert np.linalg.eigvalsh(scaled.hess(np.zeros(2)))[-1] == pytest.approx(1.0)

    def test_push_pull_round_trip(self):
        rng = np.random.default_rng(11)
        base = GaussianTarget(np.zeros(2), np.eye(2))
        scaled = ScaledTarget(base, 4.0)
        from wgfvi import GaussianParam

        p = GaussianParam(rng.standard_normal(2), rand_spd(rng, 2, (-0.3, 0.3)))
        back = scaled.pull(scaled.push(p))
        np.testing.assert_allclose(back.mean, p.mean, atol=1e-14)
        np.testing.assert_allclose(back.cov, p.cov, atol=1e-14)

    def test_scaled_potential_is_change_of_variables(self):
        base = GaussianTarget([1.0], [[1.0]])
        scaled = ScaledTarget(base, 4.0)
        x = np.array([3.0])
        assert scaled.potential(x) == pytest.approx(float(base.potential(x / 2.0)))
