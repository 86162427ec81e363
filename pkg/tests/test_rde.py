import numpy as np
import pytest

from roughmdp.errors import NumericalError, ValidationError
from roughmdp.fbm import TimeGrid, sample_fbm
from roughmdp.fields import CoefficientField, bilinear_field, linear_field, tanh_field
from roughmdp.rde import (
    KappaSpec,
    Trajectory,
    advance,
    coupled_field,
    ito_drift_correction,
    phi_map,
    solve_base_ode,
    solve_coupled_system,
    solve_ito_sde_euler,
    solve_rde,
    theta_drift,
    z_from_solutions,
)
from roughmdp.roughpath import dilate, holder_estimate, lift_piecewise_linear, zero_lift

ROTATION = [[0.0, 1.0], [-1.0, 0.0]]


def geometric_field():
    """b = 0, sigma(y) = y (d = e = 1)."""
    return bilinear_field(1, 1, B=[[[1.0]]])


def smooth_lift(grid: TimeGrid, fn, depth: int = 2):
    return lift_piecewise_linear(fn(grid.nodes), depth, grid)


class TestKappa:
    def test_power(self):
        k = KappaSpec.power(0.4)
        assert k(0.5) == pytest.approx(0.5 ** -0.4)
        assert k.scale(0.0) == 0.0

    def test_table_interpolates_and_rejects_outside(self):
        k = KappaSpec.from_table([(0.5, 2.0), (0.1, 4.0)])
        assert k(0.3) == pytest.approx(3.0)
        with pytest.raises(ValidationError):
            k(0.05)

    @pytest.mark.parametrize("theta", [0.0, 1.0, -0.2])
    def test_theta_range(self, theta):
        with pytest.raises(ValidationError):
            KappaSpec.power(theta)

    def test_increasing_table_rejected(self):
        with pytest.raises(ValidationError):
            KappaSpec.from_table([(0.5, 4.0), (0.1, 2.0)])

    def test_mdp_regime(self):
        eps = [0.5, 0.25, 0.12]
        KappaSpec.power(0.4).check_mdp_regime(eps)
        with pytest.raises(ValidationError):
            KappaSpec.constant(eps).check_mdp_regime(eps)
        # kappa cresce rápido demais: eps * kappa não desce
        with pytest.raises(ValidationError):
            KappaSpec.from_table([(0.5, 1.0), (0.25, 4.0), (0.12, 9.0)]).check_mdp_regime(eps)


class TestBaseOde:
    def test_exponential_decay(self):
        grid = TimeGrid(10)
        y = solve_base_ode(linear_field(1, 1, A=[[-1.0]]), [1.0], grid)
        assert y.terminal[0] == pytest.approx(np.exp(-1.0), abs=1e-8)

    def test_zero_drift_is_constant(self):
        y = solve_base_ode(linear_field(2, 2), [0.3, -1.0], TimeGrid(4))
        assert np.all(y.values == np.array([0.3, -1.0]))

    def test_rotation(self):
        grid = TimeGrid(8)
        y = solve_base_ode(linear_field(2, 2, A=ROTATION), [1.0, 0.0], grid)
        t = grid.nodes
        np.testing.assert_allclose(y.values, np.stack([np.cos(t), -np.sin(t)], axis=1), atol=1e-6)

    def test_initial_value(self):
        with pytest.raises(ValidationError):
            solve_base_ode(linear_field(2, 2), [1.0], TimeGrid(2))

    def test_blow_up_aborts(self):
        f = CoefficientField(d=1, e=1, b=lambda y: np.exp(50 * y), sigma=lambda y: np.ones(np.shape(y) + (1,)))
        with pytest.raises(NumericalError):
            solve_base_ode(f, [5.0], TimeGrid(3))

    def test_csv(self, tmp_path):
        y = solve_base_ode(linear_field(2, 2), [1.0, 2.0], TimeGrid(1))
        text = y.to_csv(tmp_path / "y.csv").read_text().splitlines()
        assert text[0] == "node,t,y0,y1"
        assert len(text) == 4


class TestSolveRde:
    def test_geometric_exponential(self):
        grid = TimeGrid(10)
        x = smooth_lift(grid, lambda t: t)
        y = solve_rde(geometric_field(), [1.5], x, 1.0)
        assert y.terminal[0] == pytest.approx(1.5 * np.e, abs=1e-4)

    def test_convergence_order(self):
        errors = []
        for m in range(6, 13):
            grid = TimeGrid(m)
            y = solve_rde(geometric_field(), [1.0], smooth_lift(grid, lambda t: t), 1.0)
            errors.append(abs(y.terminal[0] - np.e))
        ratios = np.array(errors[:-1]) / np.array(errors[1:])
        assert np.all(ratios >= 2.0)

    def test_eps_zero_is_base_ode(self):
        grid = TimeGrid(5)
        f = tanh_field(2, 2, gamma=0.3)
        x = lift_piecewise_linear(sample_fbm(grid, 0.4, 2, 1, seed=1).values[0], 2, grid)
        assert np.array_equal(solve_rde(f, [0.2, 0.1], x, 0.0).values, solve_base_ode(f, [0.2, 0.1], grid).values)

    def test_zero_sigma_is_base_ode(self):
        grid = TimeGrid(5)
        f = linear_field(1, 1, A=[[-0.5]], S=[[0.0]])
        x = lift_piecewise_linear(sample_fbm(grid, 0.4, 1, 1, seed=1).values[0], 2, grid)
        assert np.array_equal(solve_rde(f, [1.0], x, 0.7).values, solve_base_ode(f, [1.0], grid).values)

    def test_flow_property(self):
        grid = TimeGrid(6)
        f = tanh_field(2, 2, gamma=0.3)
        x = lift_piecewise_linear(sample_fbm(grid, 0.3, 2, 1, seed=9).values[0], 3, grid)
        whole = advance(f, np.array([0.4, -0.2]), grid, x, 0.8)
        half = grid.n_steps // 2
        first = advance(f, np.array([0.4, -0.2]), grid, x, 0.8, stop=half)
        second = advance(f, first[-1], grid, x, 0.8, start=half)
        np.testing.assert_allclose(np.concatenate([first, second[1:]]), whole, atol=1e-10, rtol=0)

    def test_batched_matches_single(self):
        grid = TimeGrid(4)
        f = tanh_field(2, 2, gamma=0.3)
        batch = sample_fbm(grid, 0.3, 2, 3, seed=2)
        lifts = lift_piecewise_linear(batch, 3)
        ys = solve_rde(f, [0.1, 0.2], lifts, 0.5)
        one = solve_rde(f, [0.1, 0.2], lift_piecewise_linear(batch.values[1], 3, grid), 0.5)
        np.testing.assert_allclose(ys.values[1], one.values, rtol=1e-14, atol=1e-14)

    def test_rejects(self):
        grid = TimeGrid(3)
        x = zero_lift(grid, 1, 2)
        with pytest.raises(ValidationError):
            solve_rde(geometric_field(), [1.0], x, 1.5)
        with pytest.raises(ValidationError):
            solve_rde(geometric_field(), [1.0], x, 0.5, alpha=0.3)
        with pytest.raises(ValidationError):
            solve_rde(linear_field(2, 2), [1.0, 1.0], x, 0.5)


class TestThetaDrift:
    def test_u_zero_and_z_zero(self):
        f = tanh_field(2, 2)
        y0, z = np.array([0.3, -0.1]), np.array([1.0, 2.0])
        np.testing.assert_allclose(theta_drift(f, y0, z, 0.0), f.grad_b(y0) @ z, rtol=1e-15, atol=1e-15)
        np.testing.assert_array_equal(theta_drift(f, y0, np.zeros(2), 0.5), np.zeros(2))

    def test_quadratic_drift(self):
        f = CoefficientField(
            d=1, e=1,
            b=lambda y: 0.5 * y**2,
            db=lambda y: y[..., None],
            sigma=lambda y: np.ones(np.shape(y) + (1,)),
        )
        assert theta_drift(f, np.array([1.0]), np.array([2.0]), 0.5)[0] == pytest.approx(3.0, abs=1e-13)

    def test_negative_u(self):
        with pytest.raises(ValidationError):
            theta_drift(tanh_field(1, 1), np.zeros(1), np.zeros(1), -0.1)


class TestCoupledSystem:
    def test_eps_zero_identity_follows_h(self):
        grid = TimeGrid(6)
        h = lambda t: np.stack([np.sin(np.pi * t), t**2], axis=1)
        x = lift_piecewise_linear(h(grid.nodes), 2, grid)
        _, z = solve_coupled_system(linear_field(2, 2), [0.0, 0.0], x, 0.0, KappaSpec.power(0.4))
        np.testing.assert_allclose(z.values, h(grid.nodes), atol=1e-6)

    @pytest.mark.parametrize("eps", [0.0, 0.3, 1.0])
    def test_zero_driver_gives_zero(self, eps):
        grid = TimeGrid(4)
        z = phi_map(tanh_field(2, 2, gamma=0.2), [0.5, -0.5], eps, zero_lift(grid, 2, 3), KappaSpec.power(0.4))
        assert np.all(z.values == 0.0)

    def test_y_component_matches_base_ode(self):
        grid = TimeGrid(5)
        f = tanh_field(2, 2, gamma=0.3)
        x = lift_piecewise_linear(sample_fbm(grid, 0.4, 2, 1, seed=3).values[0], 2, grid)
        y, _ = solve_coupled_system(f, [0.2, 0.4], x, 0.3, KappaSpec.power(0.4))
        assert np.array_equal(y.values, solve_base_ode(f, [0.2, 0.4], grid).values)

    def test_block_field_derivatives(self):
        block = coupled_field(tanh_field(2, 2, gamma=0.3), 0.4)
        probes = np.random.default_rng(1).normal(size=(5, 4))
        errors = block.check_derivatives(probes)
        assert {"dsigma", "d2sigma"} <= set(errors)

    def test_bounded_over_eps_grid(self):
        grid = TimeGrid(6)
        f = tanh_field(1, 1, gamma=0.3)
        x = lift_piecewise_linear(sample_fbm(grid, 0.4, 1, 1, seed=21).values[0], 2, grid)
        r = holder_estimate(x, 0.39).sum()
        kappa = KappaSpec.power(0.4)
        norms = []
        for eps in np.linspace(0.0, 1.0, 11):
            y, z = solve_coupled_system(f, [0.3], x, eps, kappa)
            norms.append(y.sup_norm() + z.sup_norm())
        # tanh limita drift e difusão: a constante depende só de (a, r)
        assert max(norms) < 10.0 * (1.0 + r) ** 3

    def test_continuity_in_eps_and_driver(self):
        grid = TimeGrid(6)
        f = linear_field(2, 2, A=[[-0.5, 0.2], [0.0, -0.3]], S=[[1.0, 0.0], [0.3, 0.6]])
        kappa = KappaSpec.power(0.4)
        path = sample_fbm(grid, 0.4, 2, 1, seed=5).values[0]
        x = lift_piecewise_linear(path, 2, grid)
        base = phi_map(f, [0.1, 0.2], 0.3, x, kappa)
        moved = phi_map(f, [0.1, 0.2], 0.3 + 1e-4, x, kappa)
        assert np.max(np.abs(base.values - moved.values)) <= 1e-2
        nudged = lift_piecewise_linear(path + 1e-6 * np.sin(grid.nodes)[:, None], 2, grid)
        assert np.max(np.abs(phi_map(f, [0.1, 0.2], 0.3, nudged, kappa).values - base.values)) <= 1e-3


class TestDeviationIdentity:
    @pytest.mark.parametrize("H", [0.45, 0.3])
    def test_difference_quotient_matches_phi(self, H):
        eps = 0.3
        grid = TimeGrid(6)
        f = bilinear_field(
            2, 2, A=[[-0.4, 0.3], [-0.2, -0.1]], c=[0.1, 0.0],
            S=[[1.0, 0.2], [0.0, 0.8]], B=0.1 * np.ones((2, 2, 2)),
        )
        kappa = KappaSpec.power(0.4)
        a = [0.5, -0.3]
        batch = sample_fbm(grid, H, 2, 100, seed=12)
        depth = 2 if H > 1 / 3 else 3
        x = lift_piecewise_linear(batch, depth)
        z_diff = z_from_solutions(solve_rde(f, a, x, eps), solve_base_ode(f, a, grid), eps, kappa)
        z_phi = phi_map(f, a, eps, dilate(x, 1.0 / kappa(eps)), kappa)
        assert np.max(np.abs(z_diff.values - z_phi.values)) <= 1e-3

    def test_z_from_solutions(self):
        grid = TimeGrid(2)
        y0 = Trajectory(grid, np.zeros((5, 1)))
        table = KappaSpec.from_table([(0.5, 1.0)])
        z = z_from_solutions(Trajectory(grid, np.full((5, 1), 0.5)), y0, 0.5, table)
        np.testing.assert_allclose(z.values, 1.0)
        assert np.all(z_from_solutions(y0, y0, 0.5, table).values == 0.0)
        with pytest.raises(ValidationError):
            z_from_solutions(y0, y0, 0.0, table)


class TestIto:
    def test_formula(self):
        f = ito_drift_correction(geometric_field(), 1.0)
        assert f.b(np.array([2.0]))[0] == pytest.approx(-1.0)

    def test_eps_zero_and_constant_sigma(self):
        g = tanh_field(2, 2, gamma=0.3)
        y = np.array([0.3, 0.7])
        assert np.array_equal(ito_drift_correction(g, 0.0).b(y), g.b(y))
        lin = linear_field(2, 2, A=ROTATION, S=[[1.0, 0.5], [0.0, 1.0]])
        assert np.array_equal(ito_drift_correction(lin, 0.8).b(y), lin.b(y))

    def test_corrected_derivatives_consistent(self):
        g = ito_drift_correction(tanh_field(2, 2, gamma=0.4), 0.7)
        g.check_derivatives(np.random.default_rng(4).normal(size=(5, 2)))
        assert not g.finite_difference

    def test_mean_matches_euler_maruyama(self):
        eps, a, n = 0.5, 1.0, 20_000
        grid = TimeGrid(6)
        f = geometric_field()
        lift = lift_piecewise_linear(sample_fbm(grid, 0.5, 1, n, seed=31), 2)
        y_strat = solve_rde(ito_drift_correction(f, eps), [a], lift, eps).terminal[:, 0]
        dw = sample_fbm(grid, 0.5, 1, n, seed=32).increments
        y_ito = solve_ito_sde_euler(f, [a], dw, eps, grid).terminal[:, 0]
        se = np.sqrt(y_strat.var() / n + y_ito.var() / n)
        assert abs(y_strat.mean() - y_ito.mean()) < 3 * se

    @pytest.mark.slow
    def test_mean_matches_euler_maruyama_acceptance(self):
        eps, a, n = 0.5, 1.0, 100_000
        grid = TimeGrid(6)
        f = geometric_field()
        lift = lift_piecewise_linear(sample_fbm(grid, 0.5, 1, n, seed=41), 2)
        y_strat = solve_rde(ito_drift_correction(f, eps), [a], lift, eps).terminal[:, 0]
        dw = sample_fbm(grid, 0.5, 1, n, seed=42).increments
        y_ito = solve_ito_sde_euler(f, [a], dw, eps, grid).terminal[:, 0]
        assert abs(y_strat.mean() - a) < 3 * y_strat.std() / np.sqrt(n)
        se = np.sqrt(y_strat.var() / n + y_ito.var() / n)
        assert abs(y_strat.mean() - y_ito.mean()) < 3 * se

    def test_euler_shape_check(self):
        with pytest.raises(ValidationError):
            solve_ito_sde_euler(geometric_field(), [1.0], np.zeros((3, 5, 1)), 0.5, TimeGrid(3))
