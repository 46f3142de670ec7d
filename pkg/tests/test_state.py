"""Tests for the Westervelt state solver and its diagnostics."""

from dataclasses import replace

import numpy as np
import pytest

from lensopt.errors import DegeneracyBreach, GridMismatch, InitialDataError
from lensopt.geometry import structured_mesh
from lensopt.helpers import (
    continuous_eigenvalue,
    discrete_eigenvalue,
    eigenmode,
    modal_solution,
)
from lensopt.models import MaterialParams, SolverOptions, TimeGrid
from lensopt.state import (
    cost_gradient,
    degeneracy_margin,
    energy_report,
    evaluate_cost,
    linear_energy,
    solve_state,
)

UNIT_SQUARE = [0.0, 1.0, 0.0, 1.0]


def modal_error(nx, steps, material, kappa_of, final_time=0.5):
    """Max amplitude error of a (1,1) eigenmode run against a modal solution."""
    mesh = structured_mesh(UNIT_SQUARE, nx, nx)
    phi = eigenmode(mesh, UNIT_SQUARE)
    grid = TimeGrid(final_time=final_time, steps=steps)
    params = MaterialParams.homogeneous(material, q=1.0)
    traj = solve_state(mesh, params, grid, 0.01 * phi, np.zeros(mesh.n_nodes))
    node = int(np.argmax(phi))
    amplitude = traj.u[:, node] / phi[node]
    exact, _ = modal_solution(grid.times(), kappa_of(nx), material, 0.01, 0.0)
    return float(np.max(np.abs(amplitude - exact)))


class TestSolveState:
    """Test the time-stepping of the state."""

    def test_zero_data_gives_zero_state(self, shape_problem):
        """Test that zero initial data stay zero."""
        zero = np.zeros(shape_problem.mesh.n_nodes)
        traj = solve_state(
            shape_problem.mesh, shape_problem.params, shape_problem.grid, zero, zero
        )
        assert not np.any(traj.u)
        assert traj.newton_iterations.sum() == 0

    def test_shapes_and_initial_values(self, shape_problem):
        """Test trajectory shapes and that u(0) = u₀."""
        traj = shape_problem.solve()
        steps = shape_problem.grid.steps
        assert traj.u.shape == (steps + 1, shape_problem.mesh.n_nodes)
        np.testing.assert_array_equal(traj.u0, shape_problem.u0)
        np.testing.assert_array_equal(traj.u[:, shape_problem.mesh.boundary_nodes], 0.0)
        assert traj.newton_iterations.sum() > 0

    def test_displacement_update(self, shape_problem):
        """Test u^{n+1} = u^n + dt/2 (v^n + v^{n+1})."""
        traj = shape_problem.solve()
        dt = shape_problem.grid.dt
        np.testing.assert_allclose(
            np.diff(traj.u, axis=0), 0.5 * dt * (traj.v[:-1] + traj.v[1:]), atol=1e-14
        )

    def test_boundary_data_rejected(self, shape_problem):
        """Test that u₀ must vanish on ∂Ω."""
        u0 = shape_problem.u0.copy()
        u0[shape_problem.mesh.boundary_nodes[0]] = 0.1
        with pytest.raises(InitialDataError):
            replace(shape_problem, u0=u0).solve()

    def test_wrong_length_rejected(self, shape_problem):
        """Test the nodal shape check."""
        with pytest.raises(GridMismatch):
            replace(shape_problem, u1=np.zeros(3)).solve()

    def test_degeneracy_breach(self, shape_problem):
        """Test that 1 - 2ku below the floor stops the solve at step 0."""
        with pytest.raises(DegeneracyBreach) as excinfo:
            replace(shape_problem, u0=200.0 * shape_problem.u0).solve()
        assert excinfo.value.step == 0
        assert excinfo.value.to_record()["context"]["min_factor"] < 0.1


class TestModalSolution:
    """Test a linear eigenmode run against the exact amplitude ODE."""

    def test_matches_discrete_modal_solution(self, linear_material):
        """Test agreement with the discrete eigenvalue at a fine time step."""
        error = modal_error(
            16, 128, linear_material, lambda n: discrete_eigenvalue(UNIT_SQUARE, n, n)
        )
        assert error <= 1e-3 * 0.01

    def test_second_order_in_time(self, linear_material):
        """Test that halving dt quarters the error."""
        kappa = lambda n: discrete_eigenvalue(UNIT_SQUARE, n, n)  # noqa: E731
        coarse = modal_error(8, 16, linear_material, kappa)
        fine = modal_error(8, 32, linear_material, kappa)
        assert 3.0 <= coarse / fine <= 5.0

    @pytest.mark.slow
    def test_second_order_in_space(self, linear_material):
        """Test that halving h quarters the error against the continuous mode."""
        kappa = lambda n: continuous_eigenvalue(UNIT_SQUARE)  # noqa: E731
        coarse = modal_error(8, 1024, linear_material, kappa)
        fine = modal_error(16, 1024, linear_material, kappa)
        assert 3.0 <= coarse / fine <= 5.0


class TestCost:
    """Test the tracking functional."""

    def test_zero_when_tracking_the_state(self, shape_problem):
        """Test J = 0 for u_d = u."""
        traj = shape_problem.solve()
        assert evaluate_cost(shape_problem.mesh, traj, traj.u) == 0.0

    def test_positive_against_zero_target(self, shape_problem):
        """Test J > 0 for u_d = 0 and a nonzero state."""
        assert shape_problem.cost() > 0.0

    def test_gradient_is_exact_for_the_quadratic(self, shape_problem):
        """Test J(u + δ) - J(u) = Σ g·δ + J_δ for the quadratic cost."""
        traj = shape_problem.solve()
        mesh = shape_problem.mesh
        rng = np.random.default_rng(0)
        delta = 1e-3 * rng.standard_normal(traj.u.shape)
        moved = replace(traj, u=traj.u + delta)
        lhs = evaluate_cost(mesh, moved, shape_problem.u_d) - evaluate_cost(
            mesh, traj, shape_problem.u_d
        )
        quadratic = evaluate_cost(mesh, replace(traj, u=delta), np.zeros(mesh.n_nodes))
        linear = float(np.sum(cost_gradient(mesh, traj, shape_problem.u_d) * delta))
        assert lhs == pytest.approx(linear + quadratic, rel=1e-9, abs=1e-15)

    def test_target_shape_mismatch(self, shape_problem):
        """Test that a target on another grid is rejected."""
        traj = shape_problem.solve()
        with pytest.raises(GridMismatch):
            evaluate_cost(shape_problem.mesh, traj, np.zeros((3, shape_problem.mesh.n_nodes)))


class TestDiagnostics:
    """Test energy and degeneracy monitors."""

    def test_linear_energy_decays(self, shape_problem, fluid, lens_material):
        """Test that the discrete energy never grows when k = 0."""
        params = MaterialParams(
            lens=lens_material.model_copy(update={"k": 0.0}),
            fluid=fluid.model_copy(update={"k": 0.0}),
            q=3.0,
        )
        problem = replace(shape_problem, params=params)
        traj = problem.solve()
        energy = linear_energy(problem.mesh, traj, params)
        assert energy[0] > 0
        assert np.max(np.diff(energy)) <= 1e-12 * energy[0]
        assert energy[-1] < energy[0]

    def test_degeneracy_margin(self, shape_problem):
        """Test a₀ and the direct range of 1 - 2ku on small data."""
        traj = shape_problem.solve()
        report = degeneracy_margin(shape_problem.mesh, traj, shape_problem.params)
        assert report.passed
        assert report.a0 == pytest.approx(2 * 0.1 * np.abs(traj.u).max())
        assert 1.0 - report.a0 <= report.min_factor <= 1.0
        assert report.min_factor > 0.9

    def test_energy_report_is_finite(self, shape_problem):
        """Test the energy estimate monitors."""
        traj = shape_problem.solve()
        bounds = energy_report(shape_problem.mesh, traj, shape_problem.params)
        assert bounds.finite
        assert bounds.lhs_total > 0
        assert bounds.u_linf_linf_sq == pytest.approx(np.abs(traj.u).max() ** 2)

    def test_regularisation_changes_little(self, shape_problem):
        """Test that ε = 1e-8 and ε = 1e-6 give nearly the same state for q = 3."""
        first = shape_problem.solve()
        second = replace(shape_problem, options=SolverOptions(eps_reg=1e-6)).solve()
        assert np.max(np.abs(first.u - second.u)) <= 1e-6 * np.max(np.abs(first.u))
