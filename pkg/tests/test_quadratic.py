import math

import numpy as np
import pytest

from fedsde.quadratic import (QuadraticCase1D, analytic_curve_csv_text,
                              analytic_mean, analytic_variance,
                              analytic_variance_alt, local_update_distribution,
                              long_run_mean, ou_coefficients, simulate_paths,
                              stationary_limit)


def single_case(curvature=1.0, center=0.0, noise_var=0.0, eta=0.1, local_steps=1,
                w_init=1.0):
    return QuadraticCase1D(weights=[1.0], curvatures=[curvature], centers=[center],
                           noise_vars=[noise_var], eta=eta, local_steps=local_steps,
                           w_init=w_init)


def benchmark_case(local_steps, noise_var=0.01, eta=0.05, w_init=1.0):
    return QuadraticCase1D(weights=[0.5, 0.5], curvatures=[1.0, 3.0],
                           centers=[0.0, 4.0], noise_vars=[noise_var, noise_var],
                           eta=eta, local_steps=local_steps, w_init=w_init)


def simulate_local_updates(gen, curvature, center, noise_var, eta, local_steps, w0, n):
    """Brute-force oracle: roll the scalar recursion n times."""
    w = np.full(n, float(w0))
    sd = math.sqrt(noise_var)
    for _ in range(local_steps):
        grad = curvature * (w - center)
        w = w - eta * (grad + sd * gen.standard_normal(n))
    return w


class TestLocalUpdateDistribution:
    def test_noiseless_two_steps(self):
        mean, cov = local_update_distribution(1.0, 0.0, 0.0, 0.1, 2, 1.0)
        assert mean[0] == pytest.approx(0.81, abs=1e-15)
        assert cov[0, 0] == 0.0

    def test_single_step_modes_coincide(self):
        for mode in ("exact", "additive"):
            mean, cov = local_update_distribution(2.0, 0.5, 0.36, 0.1, 1, 1.5, mode=mode)
            assert mean[0] == pytest.approx(1.5 - 0.1 * 2.0 * 1.0)
            assert cov[0, 0] == pytest.approx(0.01 * 0.36, abs=1e-15)

    def test_center_is_fixed_point(self):
        for steps in (1, 2, 5):
            mean, _ = local_update_distribution(1.7, 0.4, 0.0, 0.2, steps, 0.4)
            assert mean[0] == pytest.approx(0.4, abs=1e-15)

    def test_exact_covariance_matches_brute_force(self):
        gen = np.random.default_rng(99)
        n = 1_000_000
        for _ in range(20):
            curvature = float(gen.uniform(0.5, 2.0))
            center = float(gen.uniform(-1, 1))
            noise_var = float(gen.uniform(0.01, 0.5))
            eta = float(gen.uniform(0.05, 0.3))
            steps = int(gen.integers(1, 5))
            w0 = float(gen.uniform(-2, 2))
            sims = simulate_local_updates(gen, curvature, center, noise_var, eta,
                                          steps, w0, n)
            mean, cov = local_update_distribution(curvature, center, noise_var, eta,
                                                  steps, w0, mode="exact")
            se_mean = math.sqrt(cov[0, 0] / n)
            assert abs(sims.mean() - mean[0]) <= 3 * se_mean
            se_var = cov[0, 0] * math.sqrt(2.0 / (n - 1))
            assert abs(sims.var(ddof=1) - cov[0, 0]) <= 4 * se_var

    def test_additive_mode_is_not_the_propagated_covariance(self):
        _, exact = local_update_distribution(1.0, 0.0, 1.0, 0.1, 2, 1.0, mode="exact")
        _, additive = local_update_distribution(1.0, 0.0, 1.0, 0.1, 2, 1.0,
                                                mode="additive")
        # additive composition: (eta * U * sd + 2 eta * sd)^2 with U = sd = 1
        assert additive[0, 0] == pytest.approx((0.1 * 1.0 + 0.2) ** 2)
        assert exact[0, 0] == pytest.approx(0.01 * (0.81 + 1.0))
        assert additive[0, 0] > exact[0, 0]

    def test_matrix_inputs(self):
        curvature = np.diag([1.0, 2.0])
        cov_in = np.diag([0.04, 0.09])
        mean, cov = local_update_distribution(curvature, np.zeros(2), cov_in, 0.1, 3,
                                              np.array([1.0, 1.0]), mode="exact")
        m1, c1 = local_update_distribution(1.0, 0.0, 0.04, 0.1, 3, 1.0, mode="exact")
        m2, c2 = local_update_distribution(2.0, 0.0, 0.09, 0.1, 3, 1.0, mode="exact")
        np.testing.assert_allclose(mean, [m1[0], m2[0]], atol=1e-14)
        np.testing.assert_allclose(np.diag(cov), [c1[0, 0], c2[0, 0]], atol=1e-14)


class TestOuCoefficients:
    def test_two_step_drift_rate(self):
        rate, scale = ou_coefficients(single_case(local_steps=2))
        assert rate == pytest.approx(1.9, abs=1e-15)
        assert scale == pytest.approx(2.0)  # bracket is empty at zero noise

    def test_single_step_bracket_reduces_to_step_count(self):
        rate, scale = ou_coefficients(single_case(noise_var=0.5))
        assert scale == 1.0

    def test_long_run_mean_single_client(self):
        for steps in (1, 2, 4):
            case = single_case(center=1.7, local_steps=steps)
            assert long_run_mean(case) == pytest.approx(1.7)

    def test_exact_mode_matches_discrete_stationary_variance(self):
        # AR(1) stationary variance eta^2 s / (1 - (1 - eta U)^2) for one step
        eta, curvature, noise_var = 0.1, 1.0, 0.5
        case = single_case(curvature=curvature, noise_var=noise_var, eta=eta)
        _, variance = stationary_limit(case, mode="exact")
        ar1 = eta ** 2 * noise_var / (1.0 - (1.0 - eta * curvature) ** 2)
        assert variance == pytest.approx(ar1 * (2 - eta * curvature) / 2, rel=1e-12)
        # and to leading order in eta they agree
        assert variance == pytest.approx(ar1, rel=eta)


class TestAnalyticSolution:
    def test_mean_at_unit_time(self):
        assert analytic_mean(single_case(), 1.0) == pytest.approx(math.exp(-1.0))

    def test_mean_at_zero_and_infinity(self):
        case = benchmark_case(2)
        assert analytic_mean(case, 0.0) == pytest.approx(case.w_init)
        assert analytic_mean(case, 400.0) == pytest.approx(long_run_mean(case))

    def test_mean_solves_relaxation_equation(self):
        # Grid kept inside the transient; once the offset has decayed to the
        # roundoff floor the centered difference is pure cancellation noise.
        case = benchmark_case(3)
        rate, _ = ou_coefficients(case)
        target = long_run_mean(case)
        h = 1e-5
        for t in np.linspace(0.05, 2.0, 25):
            slope = (analytic_mean(case, t + h) - analytic_mean(case, t - h)) / (2 * h)
            expected = -rate * (analytic_mean(case, t) - target)
            assert slope == pytest.approx(expected, rel=1e-6)

    def test_stationary_variance_value(self):
        assert stationary_limit(single_case())[1] == pytest.approx(0.05)

    def test_variance_zero_at_start_and_monotone(self):
        case = benchmark_case(4)
        grid = np.linspace(0.0, 6.0, 200)
        values = analytic_variance(case, grid)
        assert values[0] == 0.0
        assert np.all(np.diff(values) >= -1e-16)
        assert np.all(values >= 0.0)

    def test_alt_variance_relaxes_slower_but_same_limit(self):
        case = benchmark_case(2)
        ode = analytic_variance(case, 1.0)
        alt = analytic_variance_alt(case, 1.0)
        assert alt <= ode
        assert analytic_variance(case, 500.0) == pytest.approx(
            analytic_variance_alt(case, 500.0), rel=1e-12)

    def test_noiseless_bracket_keeps_step_count_diffusion(self):
        # With zero per-client noise the diffusion bracket still carries the
        # local-step count, so the ensemble variance does not vanish.
        case = single_case(noise_var=0.0, local_steps=1)
        rate, scale = ou_coefficients(case)
        assert scale == 1.0
        _, paths = simulate_paths(case, horizon=3.0, step=0.01, n_paths=10_000, seed=44)
        v_pred = analytic_variance(case, 3.0)
        v_mc = paths[:, -1].var(ddof=1)
        assert abs(v_mc - v_pred) / v_pred <= 0.06

    def test_short_time_variance_scales_with_step_count_squared(self):
        # v(t) ~ eta * B^2 * t for small t and B equals the step count at
        # zero noise, so doubling the local steps quadruples the variance.
        t = 1e-4
        v1 = analytic_variance(single_case(noise_var=0.0, local_steps=2), t)
        v2 = analytic_variance(single_case(noise_var=0.0, local_steps=4), t)
        assert v2 / v1 == pytest.approx(4.0, rel=0.01)

    def test_long_run_mean_approaches_global_minimizer_as_eta_vanishes(self):
        from fedsde.model import Client, ClientLoss, Problem, quadratic_global_minimizer
        clients = (
            Client(0.5, ClientLoss(np.array([[1.0]]), np.array([0.0])), np.zeros((1, 1))),
            Client(0.5, ClientLoss(np.array([[3.0]]), np.array([4.0])), np.zeros((1, 1))),
        )
        target = quadratic_global_minimizer(Problem(clients))[0]
        errors = []
        for eta in (1e-2, 1e-3, 1e-4):
            case = benchmark_case(3, eta=eta)
            errors.append(abs(long_run_mean(case) - target))
        assert errors[0] > errors[1] > errors[2]
        assert errors[2] < 1e-3

    def test_stationary_variance_linear_in_eta(self):
        v_small = stationary_limit(single_case(noise_var=0.0, eta=0.01))[1]
        v_tiny = stationary_limit(single_case(noise_var=0.0, eta=0.001))[1]
        assert v_tiny / v_small == pytest.approx(0.1, rel=1e-12)


class TestSimulatePaths:
    def test_deterministic_per_seed_and_chunk_invariant(self):
        case = benchmark_case(1)
        _, a = simulate_paths(case, 1.0, 0.1, 7, seed=12)
        _, b = simulate_paths(case, 1.0, 0.1, 500, seed=12)
        np.testing.assert_array_equal(a, b[:7])

    def test_ensemble_tracks_mean(self):
        case = benchmark_case(2)
        times, paths = simulate_paths(case, 2.0, 0.01, 4000, seed=9)
        i = int(round(2.0 / 0.01))
        se = paths[:, i].std(ddof=1) / math.sqrt(4000)
        assert abs(paths[:, i].mean() - analytic_mean(case, 2.0)) <= 3 * se + 0.02


class TestCaseValidation:
    def test_weights_must_sum(self):
        with pytest.raises(ValueError):
            QuadraticCase1D(weights=[0.7, 0.7], curvatures=[1, 1], centers=[0, 0],
                            noise_vars=[0, 0], eta=0.1, local_steps=1, w_init=0.0)

    def test_contraction_warning(self):
        with pytest.warns(UserWarning, match="contraction"):
            single_case(curvature=25.0, eta=0.1)

    def test_mode_rejected(self):
        with pytest.raises(ValueError, match="mode"):
            ou_coefficients(single_case(), mode="verbatim")


def test_curve_csv():
    text = analytic_curve_csv_text(benchmark_case(1), [0.0, 1.0, 2.0])
    lines = text.strip().split("\n")
    assert lines[0] == "t,mean,var_ode,var_alt"
    assert len(lines) == 4
