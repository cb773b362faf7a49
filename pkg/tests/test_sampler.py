import numpy as np
import pytest

from fdslab.errors import ConfigError, IntegrationError, RefinementError
from fdslab.oracle import OracleField
from fdslab.sampler import (
    FdsConfig,
    euler_step,
    heun_step,
    refine,
    run_pipeline,
    uniform_grid,
)
from fdslab.schedules import LinearSchedule, SigmaSchedule
from fdslab.targets import EmpiricalTarget, SinglePointTarget


class ConstantField:
    def __init__(self, c):
        self.c = np.asarray(c, dtype=float)
        self.dim = len(self.c)

    def velocity(self, x, t):
        return np.broadcast_to(self.c, np.atleast_2d(x).shape)


class ExponentialField:
    """u(x, t) = x: flow x(t) = x0 e^t."""

    dim = 1

    def velocity(self, x, t):
        return np.atleast_2d(x)


class TimeField:
    """u(x, t) = t: flow x(t) = x0 + t^2/2."""

    dim = 1

    def velocity(self, x, t):
        return np.full_like(np.atleast_2d(x), float(t))


class CubicField:
    """1-D u(x) = -x^3 with divergence -3x^2 (maximal at the origin)."""

    dim = 1

    def velocity(self, x, t):
        x = np.atleast_2d(x)
        return -x**3

    def divergence(self, x, t):
        x = np.atleast_2d(x)
        return -3.0 * x[:, 0] ** 2


class TestGrid:
    def test_uniform(self):
        g = uniform_grid(4)
        np.testing.assert_allclose(g, [0.0, 0.25, 0.5, 0.75, 1.0])

    def test_validation(self):
        with pytest.raises(ConfigError):
            uniform_grid(0)


class TestSteps:
    def test_euler_constant(self):
        f = ConstantField([2.0, -1.0])
        out = euler_step(f, np.zeros((1, 2)), 0.0, 0.1)
        np.testing.assert_allclose(out, [[0.2, -0.1]])

    def test_euler_growth(self):
        out = euler_step(ExponentialField(), np.array([[1.0]]), 0.0, 0.1)
        assert out[0, 0] == pytest.approx(1.1)

    def test_heun_equals_euler_on_constant_field(self):
        f = ConstantField([1.0, 1.0])
        x = np.array([[0.3, -0.4]])
        np.testing.assert_array_equal(euler_step(f, x, 0.2, 0.4),
                                      heun_step(f, x, 0.2, 0.4))

    def test_heun_exact_on_linear_time_field(self):
        x = np.array([[0.0]])
        for grid in (uniform_grid(1), uniform_grid(7)):
            y = x
            for k in range(len(grid) - 1):
                y = heun_step(TimeField(), y, grid[k], grid[k + 1])
            assert y[0, 0] == pytest.approx(0.5, rel=1e-14)

    def test_order_of_convergence(self):
        # Global error vs e^1 on u = x: Euler slope 1, Heun slope 2.
        def run(stepper, steps):
            g = uniform_grid(steps)
            y = np.array([[1.0]])
            for k in range(steps):
                y = stepper(ExponentialField(), y, g[k], g[k + 1])
            return abs(y[0, 0] - np.e)

        ns = [8, 16, 32, 64, 128]
        for stepper, order in ((euler_step, 1.0), (heun_step, 2.0)):
            errs = [run(stepper, n) for n in ns]
            slope = -np.polyfit(np.log(ns), np.log(errs), 1)[0]
            assert slope == pytest.approx(order, abs=0.1)

    def test_bad_interval(self):
        with pytest.raises(ConfigError):
            euler_step(ConstantField([0.0]), np.zeros((1, 1)), 0.5, 0.5)

    def test_nonfinite_field_output(self):
        class BadField:
            dim = 1

            def velocity(self, x, t):
                return np.full_like(np.atleast_2d(x), np.nan)

        with pytest.raises(IntegrationError):
            euler_step(BadField(), np.zeros((1, 1)), 0.0, 0.5)

    def test_single_point_oracle_exact_transport(self):
        # Euler integrates the straight-line flow to the point mass exactly.
        tgt = EmpiricalTarget.from_spec(SinglePointTarget(point=(1.0, -1.0)), n=1, seed=0)
        f = OracleField(tgt, LinearSchedule())
        g = uniform_grid(20)
        x = np.array([[1.7, 0.4], [-0.2, -1.3]])
        for k in range(20):
            x = euler_step(f, x, g[k], g[k + 1])
        np.testing.assert_allclose(x, [[1.0, -1.0], [1.0, -1.0]], atol=1e-10)


class TestRefine:
    def test_disabled_is_identity(self):
        x = np.random.default_rng(0).normal(size=(5, 1))
        for cfg in (FdsConfig(m=0, n=0), FdsConfig.disabled(),
                    FdsConfig(m=1, n=1, sigma=SigmaSchedule("constant", 0.0))):
            out, diag = refine(CubicField(), x, 0.2, cfg)
            np.testing.assert_array_equal(out, x)
            assert diag["field_evals"] == 0

    def test_truncation_blocks_refinement(self):
        x = np.random.default_rng(0).normal(size=(5, 1))
        cfg = FdsConfig(m=4, n=2, sigma=SigmaSchedule("cosine", 0.5), t_trunc=0.5)
        out, diag = refine(CubicField(), x, 0.7, cfg)
        np.testing.assert_array_equal(out, x)
        assert diag["field_evals"] == 0

    def test_moves_downhill_from_divergence_maximum(self):
        # From x = 0 (divergence maximum of -3x^2) any perturbation improves.
        cfg = FdsConfig(m=16, n=1, sigma=SigmaSchedule("constant", 0.5), t_trunc=1.0)
        out, diag = refine(CubicField(), np.zeros((1, 1)), 0.2, cfg, seed=0)
        assert abs(out[0, 0]) > 0.0
        f = CubicField()
        assert f.divergence(out, 0.2)[0] < f.divergence(np.zeros((1, 1)), 0.2)[0]

    def test_monotone_selection(self):
        # The chosen candidate's divergence never exceeds the incumbent's.
        cfg = FdsConfig(m=3, n=4, sigma=SigmaSchedule("constant", 0.4), t_trunc=1.0)
        x = np.random.default_rng(3).normal(size=(20, 1))
        _, diag = refine(CubicField(), x, 0.1, cfg, seed=1)
        table = diag["divergences"]  # [N x (M+1) x n]
        for it in range(table.shape[0]):
            chosen = table[it][diag["chosen"][it], np.arange(table.shape[2])]
            assert np.all(chosen <= table[it, 0] + 1e-15)

    def test_field_eval_accounting(self):
        cfg = FdsConfig(m=3, n=2, sigma=SigmaSchedule("constant", 0.1), t_trunc=1.0)
        _, diag = refine(CubicField(), np.zeros((4, 1)), 0.2, cfg, seed=0)
        assert diag["field_evals"] == 2 * (3 + 1) * 1  # N * (M+1) * d

    def test_hutch_requires_jvp(self):
        cfg = FdsConfig(m=1, n=1, sigma=SigmaSchedule("constant", 0.1),
                        t_trunc=1.0, divergence="hutch", probes=2)
        with pytest.raises(ConfigError):
            refine(CubicField(), np.zeros((1, 1)), 0.2, cfg, seed=0)

    def test_nonfinite_divergence(self):
        class BadDiv(CubicField):
            def divergence(self, x, t):
                return np.full(len(np.atleast_2d(x)), np.nan)

        cfg = FdsConfig(m=1, n=1, sigma=SigmaSchedule("constant", 0.1), t_trunc=1.0)
        with pytest.raises(RefinementError):
            refine(BadDiv(), np.zeros((1, 1)), 0.2, cfg, seed=0)

    def test_config_validation(self):
        with pytest.raises(ConfigError):
            FdsConfig(m=-1)
        with pytest.raises(ConfigError):
            FdsConfig(divergence="autodiff")
        with pytest.raises(ConfigError):
            FdsConfig(probes=0)


class TestPipeline:
    def test_plugin_neutrality(self, quick_field):
        grid = uniform_grid(10)
        base = run_pipeline(quick_field, "euler", grid, FdsConfig.disabled(), 32, 7)
        for cfg in (FdsConfig(m=0, n=1),
                    FdsConfig(m=1, n=1, sigma=SigmaSchedule("constant", 0.0)),
                    FdsConfig(m=1, n=1, sigma=SigmaSchedule("constant", 0.3), t_trunc=0.0)):
            run = run_pipeline(quick_field, "euler", grid, cfg, 32, 7)
            np.testing.assert_array_equal(run.final, base.final)
            assert run.nfe_refine == 0

    def test_determinism(self, quick_field):
        grid = uniform_grid(10)
        cfg = FdsConfig(m=2, n=1, sigma=SigmaSchedule("constant", 0.3), t_trunc=1.0)
        a = run_pipeline(quick_field, "euler", grid, cfg, 16, 3)
        b = run_pipeline(quick_field, "euler", grid, cfg, 16, 3)
        np.testing.assert_array_equal(a.final, b.final)
        np.testing.assert_array_equal(a.states_pre, b.states_pre)

    def test_refined_mean_divergence_not_higher(self, quick_field):
        # With refinement the post-step divergence at each refined step is <=
        # the baseline's at the same step (paired prior).
        grid = uniform_grid(20)
        cfg = FdsConfig(m=1, n=1, sigma=SigmaSchedule("constant", 0.3), t_trunc=1.0)
        base = run_pipeline(quick_field, "euler", grid, FdsConfig.disabled(), 128, 11)
        fds = run_pipeline(quick_field, "euler", grid, cfg, 128, 11)
        np.testing.assert_array_equal(base.states_pre[0], fds.states_pre[0])
        worse = 0
        for k in range(1, 20):
            t_k = grid[k]
            div_base = np.mean(quick_field.divergence(base.states_post[k], t_k))
            div_fds = np.mean(quick_field.divergence(fds.states_post[k], t_k))
            worse += div_fds > div_base
        assert worse == 0

    def test_nfe_accounting(self, quick_field):
        grid = uniform_grid(20)
        cfg = FdsConfig(m=1, n=1, sigma=SigmaSchedule("constant", 0.3), t_trunc=1.0)
        run = run_pipeline(quick_field, "euler", grid, cfg, 8, 0)
        assert run.nfe_velocity == 20
        assert run.nfe_refine == 20 * 1 * (1 + 1) * 2  # steps * N * (M+1) * d
        cfg_h = FdsConfig(m=1, n=1, sigma=SigmaSchedule("constant", 0.3),
                          t_trunc=1.0, divergence="hutch", probes=3)
        run_h = run_pipeline(quick_field, "heun", grid, cfg_h, 8, 0)
        assert run_h.nfe_velocity == 40
        assert run_h.nfe_refine == 20 * 1 * (1 + 1) * 3

    def test_heun_oracle_endpoint_fallback(self):
        # Oracle field is singular at t = 1; the last Heun step degrades to Euler.
        tgt = EmpiricalTarget.from_spec(SinglePointTarget(point=(0.5, 0.5)), n=1, seed=0)
        f = OracleField(tgt, LinearSchedule())
        run = run_pipeline(f, "heun", uniform_grid(10), FdsConfig.disabled(), 8, 0)
        assert run.heun_fallback_steps == (9,)
        assert run.nfe_velocity == 9 * 2 + 1

    def test_state_at(self, quick_field):
        grid = uniform_grid(4)
        run = run_pipeline(quick_field, "euler", grid, FdsConfig.disabled(), 8, 0)
        np.testing.assert_array_equal(run.state_at(0.0), run.states_pre[0])
        np.testing.assert_array_equal(run.state_at(1.0), run.final)
        with pytest.raises(KeyError):
            run.state_at(0.33)

    def test_grid_validation(self, quick_field):
        with pytest.raises(ConfigError):
            run_pipeline(quick_field, "euler", [0.0, 0.5], FdsConfig.disabled(), 4, 0)
        with pytest.raises(ConfigError):
            run_pipeline(quick_field, "rk4", uniform_grid(4), FdsConfig.disabled(), 4, 0)
