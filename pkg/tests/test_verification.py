import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sfpe.errors import HorizonError
from sfpe.picard import PicardConfig
from sfpe.presets import brownian, constant_coeffs, heat, manufactured, ou_linear
from sfpe.problem import CoefficientField, LyapunovVq, ProblemSpec, manufactured_problem
from sfpe.verification import (SUITE_COLUMNS, convergence_study, gradient_crosscheck,
                               loglog_slope, moment_certificates, pde_residual,
                               verification_suite)


def _zero_f(t, x, a, w):
    return np.zeros(len(x))


def _gauss_g(x):
    return np.exp(-0.5 * np.sum(np.asarray(x) ** 2, axis=-1))


class TestPdeResidual:
    def test_time_shift_shows_up_as_residual(self):
        spec, sol = manufactured_problem(2, lam=0.0, kappa=np.zeros(2))
        eps = 1e-2

        def shifted(t, x):
            out = sol(t, x).copy()
            out[:, 0] += eps * t
            return out

        rep = pde_residual(spec, shifted, [(0.1, [0.3, 0.2]), (0.0, [-0.4, 0.5])])
        np.testing.assert_allclose(rep.residuals[:, 0], eps, atol=1e-6)
        assert not rep.all_passed

    def test_second_order_in_the_step(self):
        spec = heat(2)
        value_only = lambda t, x: spec.solution(t, x)[:, 0]
        probe = [(0.3, [0.4, -0.2])]
        coarse = pde_residual(spec, value_only, probe, fd_steps=(1e-2, 1e-1)).residuals[0, 0]
        fine = pde_residual(spec, value_only, probe, fd_steps=(5e-3, 5e-2)).residuals[0, 0]
        assert 3.0 <= coarse / fine <= 5.0

    def test_one_sided_at_the_start(self):
        spec = heat(1)
        rep = pde_residual(spec, spec.solution, [(0.0, [0.2])])
        assert rep.all_passed

    def test_probe_too_close_to_terminal_time(self):
        spec = heat(1)
        with pytest.raises(HorizonError):
            pde_residual(spec, spec.solution, [(spec.T - 1e-5, [0.0])])

    def test_vacuous_monte_carlo_check_refused(self):
        spec = heat(1)
        with pytest.raises(ValueError):
            pde_residual(spec, spec.solution, [(0.3, [0.0])], candidate_stderr=1e-3)


class TestGradientCrosscheck:
    @pytest.mark.parametrize("spec", [heat(2), ou_linear(1), manufactured(2)],
                             ids=lambda s: s.name)
    def test_consistent_problems_pass(self, spec):
        rep = gradient_crosscheck(spec, 0.0, np.full(spec.d, 0.3), n_paths=20_000, rng=1)
        assert rep.passed, (rep.gap, rep.tolerance)
        assert len(list(rep.csv_rows())) == spec.d

    def test_heat_example_with_gaussian_oracle(self):
        spec = heat(2)
        x = np.array([0.5, -0.3])
        oracle = spec.solution(np.array([0.0]), x[None])[0, 1:]
        rep = gradient_crosscheck(spec, 0.0, x, n_paths=50_000, rng=3, oracle=oracle)
        assert rep.passed
        np.testing.assert_allclose(rep.scale, np.linalg.norm(oracle))

    def test_wrong_drift_jacobian_is_caught(self):
        coeffs = constant_coeffs(1, -1.0, 1.0)
        broken = CoefficientField(mu=coeffs.mu, sigma=coeffs.sigma,
                                  jac_mu=lambda s, x: np.zeros(np.shape(x) + (1,)),
                                  constant_sigma=True)
        spec = ProblemSpec(d=1, T=1.0, coeffs=broken, f=_zero_f, g=_gauss_g, c=0.0, alpha=1.0,
                           lipschitz_L=1.0, growth_p=1.0, validate=False)
        rep = gradient_crosscheck(spec, 0.0, [0.8], n_paths=20_000, rng=1, payoff=lambda y: y[:, 0])
        assert not rep.passed

    def test_oracle_sets_the_scale(self):
        rep = gradient_crosscheck(heat(1), 0.0, [0.5], n_paths=2000, rng=0, oracle=[10.0])
        assert rep.scale == 10.0


class TestConvergence:
    @given(st.floats(-3, 3), st.floats(0.1, 10))
    @settings(max_examples=30)
    def test_loglog_slope_of_power_law(self, p, a):
        xs = np.array([1.0, 2.0, 4.0, 8.0])
        np.testing.assert_allclose(loglog_slope(xs, a * xs ** p), p, atol=1e-9)

    def test_loglog_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            loglog_slope([1, 2], [0.0, 1.0])

    def test_n_paths_slope(self):
        table = convergence_study(heat(1), 0.0, [0.3], "n_paths", [500, 2000, 8000, 32000],
                                  rng=2, base=PicardConfig(1, (1,), 10))
        assert -0.6 <= table.slope("stderr") <= -0.4
        assert len(list(table.csv_rows())) == 8

    def test_grid_steps_axis_is_flat_for_constant_coefficients(self):
        table = convergence_study(heat(1), 0.0, [0.3], "grid_steps", [5, 10, 20],
                                  rng=2, base=PicardConfig(1, (20_000,), 10))
        err = table.column("error")
        se = table.column("stderr")
        assert np.all(err <= 4 * se)

    def test_depth_axis(self):
        table = convergence_study(manufactured(1), 0.1, [0.2], "depth", [1, 2],
                                  rng=2, base=PicardConfig(2, (3, 400), 8))
        cost = table.column("cost")
        assert cost[0] < cost[1]

    @pytest.mark.parametrize("axis,values", [("seed", [1, 2]), ("n_paths", [4, 2])])
    def test_rejections(self, axis, values):
        with pytest.raises(ValueError):
            convergence_study(heat(1), 0.0, [0.0], axis, values)


class TestMomentCertificates:
    def test_frozen_dynamics_hold_with_equality(self):
        spec = ProblemSpec(d=2, T=1.0, coeffs=constant_coeffs(2, 0.0, 0.0), f=_zero_f,
                           g=_gauss_g, c=0.0, alpha=0.0, lipschitz_L=1.0, growth_p=1.0)
        certs = moment_certificates(spec, 2.0, 0.0, 0.0, [0.5, 1.0], [0.5, 1.0], n_paths=100)
        for c in certs:
            np.testing.assert_allclose(c.mean, c.bound)
            assert c.passed

    def test_ornstein_uhlenbeck_with_unit_rate(self):
        certs = moment_certificates(ou_linear(1), LyapunovVq(2.0), 1.0, 0.0, [0.0],
                                    [0.1, 0.5, 1.0], n_paths=20_000, rng=3)
        assert all(c.passed for c in certs)
        assert len(certs[0].csv_row()) == len(certs[0].CSV_COLUMNS)

    def test_zero_rate_fails_for_brownian(self):
        certs = moment_certificates(brownian(2), 2.0, 0.0, 0.0, [0.0, 0.0], [1.0],
                                    n_paths=10_000, rng=1)
        assert not certs[0].passed

    def test_horizon_checked(self):
        with pytest.raises(HorizonError):
            moment_certificates(heat(1), 2.0, 1.0, 0.5, [0.0], [0.4], n_paths=10)


class TestSuite:
    def test_heat_suite_passes(self):
        result = verification_suite(heat(1), rng=1, n_paths=20_000, n_probes=3)
        assert result.passed, [r for r in result.rows if not r[-1]]
        assert all(len(r) == len(SUITE_COLUMNS) for r in result.rows)
        names = {r[0] for r in result.rows}
        assert {"pde_residual", "gradient_crosscheck", "moment_certificate",
                "fixed_point_residual"} <= names
