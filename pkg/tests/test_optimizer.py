"""Tests for the H¹ descent loop."""

from dataclasses import replace

import numpy as np
import pytest

from lensopt.adjoint import solve_adjoint
from lensopt.errors import LineSearchExhausted
from lensopt.geometry import check_admissible
from lensopt.models import OptimizerOptions
from lensopt.optimizer import line_search, optimize, riesz_descent_field
from lensopt.runconfig import parse_config_text
from lensopt.service import LensOptService
from lensopt.shape_gradient import eval_volume_form, volume_load_vector, volume_tensors


def descent(problem):
    state = problem.solve()
    adjoint = solve_adjoint(
        problem.mesh, problem.params, state, problem.u_d, options=problem.options
    )
    tensors = volume_tensors(
        problem.mesh, problem.params, state, adjoint, problem.u_d, problem.options
    )
    load = volume_load_vector(problem.mesh, tensors)
    h, norm = riesz_descent_field(problem.mesh, load)
    return state, adjoint, load, h, norm


class TestRieszField:
    """Test the H¹ representative of the derivative."""

    def test_slope_is_minus_norm_squared(self, shape_problem):
        """Test dJ·h = -‖h‖²_H¹ for the smoothed field."""
        state, adjoint, load, h, norm = descent(shape_problem)
        assert norm > 0
        assert float(np.sum(load * h.values)) == pytest.approx(-(norm**2), rel=1e-10)
        slope = eval_volume_form(
            shape_problem.mesh,
            shape_problem.params,
            state,
            adjoint,
            shape_problem.u_d,
            h,
            shape_problem.options,
        )
        assert slope == pytest.approx(-(norm**2), rel=1e-8)

    def test_field_vanishes_on_boundary(self, shape_problem):
        """Test the Dirichlet condition on ∂Ω."""
        _, _, _, h, _ = descent(shape_problem)
        np.testing.assert_array_equal(h.values[shape_problem.mesh.boundary_nodes], 0.0)

    def test_zero_load(self, lens_mesh):
        """Test that a zero derivative gives a zero field."""
        h, norm = riesz_descent_field(lens_mesh, np.zeros((lens_mesh.n_nodes, 2)))
        assert norm == 0.0
        assert h.is_zero

    def test_load_shape(self, lens_mesh):
        """Test the load shape guard."""
        with pytest.raises(ValueError):
            riesz_descent_field(lens_mesh, np.zeros(lens_mesh.n_nodes))


class TestLineSearch:
    """Test Armijo backtracking."""

    def test_accepts_a_decreasing_step(self, shape_problem):
        """Test that the accepted step satisfies the Armijo condition."""
        state, _, _, h, norm = descent(shape_problem)
        cost = shape_problem.cost(state)
        options = OptimizerOptions()
        result = line_search(shape_problem, h, -(norm**2), cost, options)
        assert result.tau > 0
        assert result.cost <= cost - options.c1 * result.tau * norm**2
        assert result.trials[-1] == (result.tau, "accepted")
        assert check_admissible(result.mesh, options.lipschitz_bound_deg).passed

    def test_tau_init_caps_the_first_trial(self, shape_problem):
        """Test min(τ_init, τ₀) as the first step."""
        state, _, _, h, norm = descent(shape_problem)
        result = line_search(
            shape_problem,
            h,
            -(norm**2),
            shape_problem.cost(state),
            OptimizerOptions(tau_init=1e-6),
        )
        assert result.trials[0][0] == 1e-6

    def test_rejects_ascent_direction(self, shape_problem):
        """Test that a non-negative slope is refused."""
        _, _, _, h, _ = descent(shape_problem)
        with pytest.raises(LineSearchExhausted):
            line_search(shape_problem, h, 0.0, shape_problem.cost())

    def test_exhausted_without_halvings(self, shape_problem):
        """Test that an unreachable Armijo condition is reported."""
        state, _, _, h, norm = descent(shape_problem)
        with pytest.raises(LineSearchExhausted) as excinfo:
            line_search(
                shape_problem,
                h,
                -(norm**2),
                shape_problem.cost(state) - 1.0,
                OptimizerOptions(max_halvings=2),
            )
        assert excinfo.value.context["trials"] == 3


class TestOptimize:
    """Test the descent loop."""

    def test_converges_immediately_on_target(self, shape_problem):
        """Test that u_d = u(Ω) stops at the first iteration."""
        state = shape_problem.solve()
        problem = replace(shape_problem, u_d=state.u.copy())
        history, mesh = optimize(problem)
        assert history.status == "converged"
        assert len(history.records) == 1
        assert history.records[0].tau == 0.0
        assert history.final_cost == 0.0
        assert mesh is problem.mesh

    def test_cost_decreases(self, shape_problem):
        """Test a short run with a monotone cost history."""
        seen = []
        history, mesh = optimize(
            shape_problem,
            OptimizerOptions(max_iters=3, g_tol=1e-14),
            on_iteration=lambda i, m: seen.append(i),
        )
        assert history.status == "max_iters"
        assert len(history.records) == 3
        assert seen == [1, 2, 3]
        assert np.all(np.diff(history.costs) < 0)
        assert history.final_cost < history.initial_cost == history.costs[0]
        assert all(r.tau > 0 for r in history.records)
        assert mesh.n_nodes == shape_problem.mesh.n_nodes
        assert not np.array_equal(mesh.vertices, shape_problem.mesh.vertices)

    def test_outer_boundary_is_fixed(self, shape_problem):
        """Test that ∂Ω does not move."""
        _, mesh = optimize(shape_problem, OptimizerOptions(max_iters=2, g_tol=1e-14))
        boundary = shape_problem.mesh.boundary_nodes
        np.testing.assert_array_equal(
            mesh.vertices[boundary], shape_problem.mesh.vertices[boundary]
        )

    @pytest.mark.slow
    def test_recovers_a_circle_from_an_ellipse(self, config_text):
        """Test that descending from an ellipse lowers the tracking cost."""
        text = config_text.replace(
            'shape = "circle"', 'shape = "ellipse"\nsemi_axes = [0.24, 0.17]'
        ).replace(
            'mode = "analytic"',
            'mode = "from_shape"\nlens = { shape = "circle", center = [0.5, 0.5], radius = 0.2 }',
        )
        config = parse_config_text(text)
        problem = LensOptService(config).problem
        history, _ = optimize(problem, OptimizerOptions(max_iters=10, g_tol=1e-12))
        assert history.final_cost < 0.5 * history.initial_cost
