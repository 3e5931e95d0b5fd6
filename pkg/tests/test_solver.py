import math

import numpy as np
import pytest

from capmink import (
    ApplicabilityError,
    ConfigError,
    ConvexityError,
    DomainError,
    ProblemSpec,
    ScalarField,
    SolverConfig,
    build_grid,
    continuation_solve,
    ell_bump_f_exact,
    ell_bump_field,
    ell_field,
    ell_grad_sq,
    manufactured_f,
    newton_solve,
    pq_limit_solve,
    pq_residual,
    residual_h,
    residual_u,
    uniqueness_probe,
)
from capmink.solver import _jacobian, _residual_u_vec

from conftest import neumann_bump


def ell_power_density(geom, c=1.0, alpha=0.0, beta=0.0):
    ell = ell_field(geom).values
    w0 = ell**2 + ell_grad_sq(geom)
    return ScalarField(geom, c * ell**alpha * w0**beta)


class TestProblemSpec:
    def test_supported_branches(self, geom_pi3):
        f = ell_power_density(geom_pi3)
        for p, q in [(1.5, 2.5), (2.5, 1.5), (2.0, 2.0), (4.0, 3.0)]:
            ProblemSpec(p=p, q=q, theta=geom_pi3.theta, f=f, even=True)

    @pytest.mark.parametrize("p,q", [(2.0, 3.5), (0.5, 2.0), (1.0, 1.0)])
    def test_unsupported_branches_rejected(self, geom_pi3, p, q):
        f = ell_power_density(geom_pi3)
        with pytest.raises(ConfigError):
            ProblemSpec(p=p, q=q, theta=geom_pi3.theta, f=f, even=True)

    def test_unsupported_allowed_with_flag(self, geom_pi3):
        f = ell_power_density(geom_pi3)
        ProblemSpec(p=2.0, q=3.5, theta=geom_pi3.theta, f=f, even=True,
                    allow_unsupported=True)

    def test_p_less_q_requires_even(self, geom_pi3):
        f = ell_power_density(geom_pi3)
        with pytest.raises(ConfigError):
            ProblemSpec(p=1.5, q=2.5, theta=geom_pi3.theta, f=f, even=False)

    def test_odd_f_with_even_flag_rejected(self, geom_pi3):
        g = geom_pi3
        f = ScalarField.from_function(
            g, lambda phi, psi: 1.0 + 0.3 * np.cos(psi) * np.sin(phi)
        )
        with pytest.raises(ConfigError):
            ProblemSpec(p=2.0, q=1.5, theta=g.theta, f=f, even=True)

    def test_nonpositive_f_rejected(self, geom_pi3):
        with pytest.raises(DomainError):
            ProblemSpec(
                p=2.0, q=1.5, theta=geom_pi3.theta,
                f=ScalarField(geom_pi3, np.zeros(geom_pi3.shape)),
            )


class TestResiduals:
    def test_ell_solves_base_problem(self, geom_pi3):
        """h = ell satisfies the equation with the base density exactly to O(grid^2)."""
        g = geom_pi3
        p, q = 2.0, 1.5
        f = ell_power_density(g, alpha=1.0 - p, beta=(q - 3.0) / 2.0)
        spec = ProblemSpec(p=p, q=q, theta=g.theta, f=f, even=True)
        res = residual_h(spec, g, ell_field(g))
        assert np.max(np.abs(res.values)) < 20.0 * g.grid_eps()

    def test_u_and_h_residuals_agree_at_truncation(self, geom_pi3):
        g = geom_pi3
        p, q = 2.0, 1.5
        f = ell_power_density(g, alpha=1.0 - p, beta=(q - 3.0) / 2.0)
        spec = ProblemSpec(p=p, q=q, theta=g.theta, f=f, even=True)
        u = neumann_bump(g, eps=0.02)
        h = ScalarField(g, ell_field(g).values * u.values)
        ru = residual_u(spec, g, u)
        rh = residual_h(spec, g, h)
        assert np.max(np.abs(ru.values - rh.values)) < 50.0 * g.grid_eps()

    def test_u_one_is_exact_base_solution(self, geom_pi3):
        """At s = 0 the homotopy base density makes u = 1 exact: 0 iterations."""
        g = geom_pi3
        f = ell_power_density(g, alpha=-1.0)
        spec = ProblemSpec(p=2.0, q=3.0, theta=g.theta, f=f, even=True)
        result = newton_solve(spec, g, 0.0, ScalarField(g, np.ones(g.shape)))
        assert result.converged
        assert result.newton_trace[0].iterations == 0
        assert result.newton_trace[0].residuals[0] < 1e-13

    def test_jacobian_matches_finite_differences(self):
        g = build_grid(1.0, 8, 8)
        p, q = 2.2, 1.7
        fvals = ell_power_density(g, alpha=-0.5).values
        rng = np.random.default_rng(3)
        uvec = 1.0 + 0.05 * rng.standard_normal(g.size)
        res0, parts = _residual_u_vec(g, fvals, p, q, uvec)
        J = _jacobian(g, fvals, p, q, uvec, parts)
        eps = 1e-7
        cols = rng.choice(g.size, size=12, replace=False)
        for k in cols:
            du = np.zeros(g.size)
            du[k] = eps
            res1, _ = _residual_u_vec(g, fvals, p, q, uvec + du)
            fd = (res1 - res0) / eps
            exact = np.asarray(J[:, k].todense()).ravel()
            assert np.max(np.abs(fd - exact)) < 1e-5 * max(
                1.0, np.max(np.abs(exact))
            )


class TestNewton:
    def test_base_point_converges_fast(self, geom_pi3):
        g = geom_pi3
        f = ell_power_density(g, alpha=-1.0)
        spec = ProblemSpec(p=2.0, q=3.0, theta=g.theta, f=f, even=True)
        u0 = neumann_bump(g, eps=0.1)
        result = newton_solve(spec, g, 0.0, u0)
        assert result.converged
        assert result.newton_trace[0].iterations <= 10
        assert np.max(np.abs(result.u.values - 1.0)) < 1e-8

    def test_quadratic_contraction(self, geom_pi3):
        g = geom_pi3
        f = ell_power_density(g, alpha=-1.0)
        spec = ProblemSpec(p=2.0, q=3.0, theta=g.theta, f=f, even=True)
        result = newton_solve(spec, g, 0.0, neumann_bump(g, eps=0.1))
        res = result.newton_trace[0].residuals
        # each Newton step at least squares the residual (up to a constant)
        for a, b in zip(res[:-1], res[1:]):
            assert b < 10.0 * a**2 + 1e-10

    def test_nonpositive_start_rejected(self, geom_pi3):
        f = ell_power_density(geom_pi3, alpha=-1.0)
        spec = ProblemSpec(p=2.0, q=3.0, theta=geom_pi3.theta, f=f, even=True)
        bad = ScalarField(geom_pi3, np.full(geom_pi3.shape, -1.0) + 1.0 + 1e-30)
        with pytest.raises((DomainError, ConvexityError)):
            newton_solve(spec, geom_pi3, 0.0, ScalarField(
                geom_pi3, np.where(np.arange(geom_pi3.size).reshape(geom_pi3.shape) == 0,
                                   -1.0, 1.0)))

    def test_p_equals_q_refused(self, geom_pi3):
        f = ell_power_density(geom_pi3)
        spec = ProblemSpec(p=2.0, q=2.0, theta=geom_pi3.theta, f=f, even=True)
        with pytest.raises(ApplicabilityError):
            newton_solve(spec, geom_pi3, 0.0,
                         ScalarField(geom_pi3, np.ones(geom_pi3.shape)))

    def test_solver_config_validation(self):
        with pytest.raises(ConfigError):
            SolverConfig(newton_tol=-1.0)


class TestContinuation:
    def test_hemisphere_constant_density(self, geom_pi2):
        g = geom_pi2
        f = ScalarField(g, np.ones(g.shape))
        spec = ProblemSpec(p=3.0, q=1.0, theta=g.theta, f=f, even=True)
        result = continuation_solve(spec, g)
        assert result.converged
        assert result.s_reached == 1.0
        assert np.max(np.abs(result.h.values - 1.0)) < 1e-8

    def test_result_fields_consistent(self, geom_pi3):
        g = geom_pi3
        f = ell_power_density(g, alpha=-1.2, beta=-0.1)
        spec = ProblemSpec(p=2.0, q=1.5, theta=g.theta, f=f, even=True)
        result = continuation_solve(spec, g)
        assert result.converged
        assert result.b_eigen_range[0] > 0.0
        assert result.robin_defect_sup < 50.0 * g.grid_eps()
        assert result.residual_floor > 0.0
        res = residual_u(spec, g, result.u)
        assert np.max(np.abs(res.values)) == pytest.approx(
            result.residual_sup, rel=1e-6
        )

    def test_solution_is_even(self, geom_pi3):
        from capmink import evenness_defect

        g = geom_pi3
        f = ell_power_density(g, alpha=-1.2)
        spec = ProblemSpec(p=1.8, q=2.4, theta=g.theta, f=f, even=True)
        result = continuation_solve(spec, g)
        assert result.converged
        assert evenness_defect(g, result.h.values) < 1e-12

    def test_to_json_dict_round_trips(self, geom_pi3):
        import json

        g = geom_pi3
        f = ell_power_density(g, alpha=-1.0)
        spec = ProblemSpec(p=2.0, q=3.0, theta=g.theta, f=f, even=True)
        result = continuation_solve(spec, g)
        doc = json.loads(json.dumps(result.to_json_dict()))
        assert doc["converged"] is True
        assert doc["s_reached"] == 1.0
        assert doc["newton_trace"][0]["s"] == 0.0


class TestManufactured:
    def test_density_of_ell_is_base_density(self, geom_pi3):
        g = geom_pi3
        p, q = 2.0, 1.5
        f = manufactured_f(g, ell_field(g), p, q)
        base = ell_power_density(g, alpha=1.0 - p, beta=(q - 3.0) / 2.0)
        assert np.max(np.abs(f.values - base.values)) < 30.0 * g.grid_eps()

    def test_exact_bump_density_matches_discrete(self):
        g = build_grid(math.pi / 3, 64, 128)
        h = ell_bump_field(g, eps=0.05, k=2)
        fd = manufactured_f(g, h, 2.0, 1.5)
        fx = ell_bump_f_exact(g, 2.0, 1.5, eps=0.05, k=2)
        assert np.max(np.abs(fd.values - fx.values)) < 100.0 * g.grid_eps()

    def test_recovery_is_second_order(self):
        theta = math.pi / 3
        errs = []
        for N in (16, 32):
            g = build_grid(theta, N, 2 * N)
            hstar = ell_bump_field(g, eps=0.05, k=2)
            f = ell_bump_f_exact(g, p=2.0, q=1.5, eps=0.05, k=2)
            spec = ProblemSpec(p=2.0, q=1.5, theta=theta, f=f, even=True)
            result = continuation_solve(spec, g)
            assert result.converged
            errs.append(float(np.max(np.abs(result.h.values - hstar.values))))
        assert errs[0] / errs[1] > 3.5

    def test_non_robin_h_star_rejected(self, geom_pi3):
        g = geom_pi3
        bad = ScalarField(g, np.broadcast_to(
            1.0 + g.phi_nodes[:, None] ** 2, g.shape).copy())
        with pytest.raises(ApplicabilityError):
            manufactured_f(g, bad, 2.0, 1.5)


class TestPqLimit:
    def test_hemisphere_constant(self, geom_pi2):
        g = geom_pi2
        f = ScalarField(g, np.ones(g.shape))
        spec = ProblemSpec(p=2.0, q=2.0, theta=g.theta, f=f, even=True)
        out = pq_limit_solve(spec, g)
        assert out.C_star == pytest.approx(1.0, abs=1e-10)
        assert np.max(np.abs(out.h_bar.values - 1.0)) < 1e-8
        assert out.residual_sup < 1e-10

    def test_normalization_min_h_is_one(self):
        g = build_grid(1.5, 24, 48)
        f = ell_power_density(g, alpha=-1.0, beta=-0.25)
        spec = ProblemSpec(p=2.0, q=2.0, theta=g.theta, f=f, even=True)
        out = pq_limit_solve(spec, g)
        assert float(np.min(out.h_bar.values)) == pytest.approx(1.0, abs=1e-8)

    def test_dilation_family_shares_C(self):
        """C* is invariant under scaling f, h adjusting accordingly."""
        g = build_grid(1.5, 24, 48)
        f = ell_power_density(g, alpha=-1.0, beta=-0.25)
        spec = ProblemSpec(p=2.0, q=2.0, theta=g.theta, f=f, even=True)
        out = pq_limit_solve(spec, g)
        res = pq_residual(g, f, 2.0, out.h_bar, out.C_star)
        assert np.max(np.abs(res.values)) < 100.0 * g.grid_eps()

    def test_p_not_equal_q_rejected(self, geom_pi3):
        f = ell_power_density(geom_pi3)
        spec = ProblemSpec(p=2.5, q=2.0, theta=geom_pi3.theta, f=f, even=True)
        with pytest.raises(ApplicabilityError):
            pq_limit_solve(spec, geom_pi3)

    def test_bad_schedule_rejected(self, geom_pi2):
        f = ScalarField(geom_pi2, np.ones(geom_pi2.shape))
        spec = ProblemSpec(p=2.0, q=2.0, theta=geom_pi2.theta, f=f, even=True)
        with pytest.raises(ConfigError):
            pq_limit_solve(spec, geom_pi2, eps_schedule=(0.05, 0.1))


class TestUniqueness:
    def test_probe_requires_p_greater_q(self, geom_pi3):
        f = ell_power_density(geom_pi3)
        spec = ProblemSpec(p=1.5, q=2.5, theta=geom_pi3.theta, f=f, even=True)
        with pytest.raises(ApplicabilityError):
            uniqueness_probe(spec, geom_pi3, starts=[
                ScalarField(geom_pi3, np.ones(geom_pi3.shape)),
                ScalarField(geom_pi3, 2.0 * np.ones(geom_pi3.shape)),
            ])

    def test_probe_requires_two_starts(self, geom_pi3):
        f = ell_power_density(geom_pi3)
        spec = ProblemSpec(p=2.5, q=1.5, theta=geom_pi3.theta, f=f, even=True)
        with pytest.raises(ConfigError):
            uniqueness_probe(spec, geom_pi3, starts=[
                ScalarField(geom_pi3, np.ones(geom_pi3.shape))
            ])

    def test_probe_passes_on_benign_data(self, geom_pi3):
        g = geom_pi3
        f = ell_power_density(g, c=1.3, alpha=-1.3, beta=-0.2)
        spec = ProblemSpec(p=2.3, q=1.6, theta=g.theta, f=f, even=True)
        starts = [ScalarField(g, c * np.ones(g.shape)) for c in (0.5, 1.0, 2.0)]
        spread, ok = uniqueness_probe(spec, g, starts=starts)
        assert ok
        assert spread <= 1e-8
