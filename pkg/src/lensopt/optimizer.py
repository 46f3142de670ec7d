"""Steepest descent on the lens shape.

Each iteration solves the state and the discrete adjoint, turns the volume
shape derivative into a nodal load, smooths it into an H¹ descent field and
backtracks along x ↦ x + τh until the Armijo condition holds on an
admissible mesh. The design variable is the nodal deformation itself; the
mesh is never regenerated.
"""

import math
import time
from collections.abc import Callable
from dataclasses import dataclass, field
from typing import Literal

import numpy as np
import structlog
from numpy.typing import NDArray
from scipy.sparse.linalg import factorized

from .adjoint import solve_adjoint
from .errors import FoldedElement, LensOptError, LinearSolveFailure, LineSearchExhausted
from .fem import P1Space
from .geometry import (
    Mesh2D,
    VelocityField,
    check_admissible,
    max_admissible_step,
    perturb_mesh,
    velocity_field,
    zero_field,
)
from .metrics import last_cost, line_search_trials_total
from .models import IterationRecord, OptimizationHistory, OptimizerOptions
from .shape_gradient import ShapeProblem, volume_load_vector, volume_tensors

logger = structlog.get_logger(__name__)


def riesz_descent_field(
    mesh: Mesh2D, load: NDArray[np.float64]
) -> tuple[VelocityField, float]:
    """Solve ∫ Dh:Dφ + h·φ = -g(φ) for h vanishing on ∂Ω.

    ``load`` holds the nodal representation g of the derivative, shape (n, 2),
    so that dJ·h = Σ_a g_a·h_a. Returns the field and its H¹ norm; by
    construction dJ·h = -‖h‖²_H¹.

    Raises:
        LinearSolveFailure: the H¹ system produced non-finite values.
    """
    load = np.asarray(load, dtype=float)
    if load.shape != (mesh.n_nodes, 2):
        raise ValueError("load must have one 2-vector per node")
    space = P1Space(mesh)
    free = space.free
    if not np.any(load[free]):
        return zero_field(mesh), 0.0

    matrix = space.assemble_free(
        space.stiffness_elements() + space.consistent_mass_elements()
    )
    solve = factorized(matrix.tocsc())
    values = np.zeros((mesh.n_nodes, 2))
    for component in range(2):
        values[free, component] = solve(-load[free, component])
    if not np.all(np.isfinite(values)):
        raise LinearSolveFailure("H1 Riesz system produced non-finite values")
    norm_sq = -float(np.sum(load[free] * values[free]))
    return velocity_field(mesh, values), math.sqrt(max(norm_sq, 0.0))


@dataclass
class LineSearchResult:
    tau: float
    cost: float
    mesh: Mesh2D
    trials: list[tuple[float, str]] = field(default_factory=list)


def line_search(
    problem: ShapeProblem,
    h: VelocityField,
    slope: float,
    cost: float,
    options: OptimizerOptions | None = None,
) -> LineSearchResult:
    """Backtrack by halving from min(τ_init, τ₀(h)) until Armijo holds.

    A trial is rejected when it folds an element, fails the admissibility
    check, fails to solve, or misses J(τ) ≤ J(0) + c₁ τ dJ·h.

    Raises:
        LineSearchExhausted: ``slope`` is not negative, or no trial passed.
    """
    options = options or OptimizerOptions()
    if not slope < 0:
        raise LineSearchExhausted("h is not a descent direction", slope=slope)
    tau0 = max_admissible_step(h)
    tau = tau0 if options.tau_init is None else min(options.tau_init, tau0)
    if not math.isfinite(tau):
        tau = 1.0
    trials: list[tuple[float, str]] = []

    for _ in range(options.max_halvings + 1):
        outcome = _trial(problem, h, tau, options)
        if isinstance(outcome, str):
            trials.append((tau, outcome))
        else:
            mesh, trial_cost = outcome
            if trial_cost <= cost + options.c1 * tau * slope:
                trials.append((tau, "accepted"))
                line_search_trials_total.labels(outcome="accepted").inc()
                return LineSearchResult(tau=tau, cost=trial_cost, mesh=mesh, trials=trials)
            trials.append((tau, "armijo"))
        line_search_trials_total.labels(outcome=trials[-1][1]).inc()
        tau *= 0.5

    raise LineSearchExhausted(
        "no step satisfied the Armijo condition",
        slope=slope,
        trials=len(trials),
        last_tau=trials[-1][0],
    )


def _trial(
    problem: ShapeProblem, h: VelocityField, tau: float, options: OptimizerOptions
) -> tuple[Mesh2D, float] | str:
    try:
        mesh = perturb_mesh(problem.mesh, h, tau)
    except FoldedElement:
        return "folded"
    if not check_admissible(mesh, options.lipschitz_bound_deg).passed:
        return "inadmissible"
    try:
        return mesh, problem.with_mesh(mesh).cost()
    except LensOptError as exc:
        logger.debug("optimizer.trial_failed", tau=tau, error=type(exc).__name__)
        return "solver"


def optimize(
    problem: ShapeProblem,
    options: OptimizerOptions | None = None,
    on_iteration: Callable[[int, Mesh2D], None] | None = None,
) -> tuple[OptimizationHistory, Mesh2D]:
    """Run the descent loop from ``problem.mesh``.

    Stops with status ``converged`` when ‖h‖_H¹ < g_tol, ``max_iters`` after
    the iteration budget and ``line_search_exhausted`` when backtracking
    fails. ``on_iteration`` sees every accepted mesh.

    Raises:
        LensOptError: any solver failure, with ``iteration`` in its context.
    """
    options = options or OptimizerOptions()
    history = OptimizationHistory()
    current = problem
    status: Literal["converged", "max_iters", "line_search_exhausted"] = "max_iters"

    for iteration in range(1, options.max_iters + 1):
        started = time.perf_counter()
        try:
            state = current.solve()
            cost = current.cost(state)
            adjoint = solve_adjoint(
                current.mesh, current.params, state, current.u_d, options=current.options
            )
            tensors = volume_tensors(
                current.mesh, current.params, state, adjoint, current.u_d, current.options
            )
            h, norm = riesz_descent_field(
                current.mesh, volume_load_vector(current.mesh, tensors)
            )
        except LensOptError as exc:
            exc.context["iteration"] = iteration
            raise
        last_cost.set(cost)
        if iteration == 1:
            history.initial_cost = cost
        history.final_cost = cost
        admissibility = check_admissible(current.mesh, options.lipschitz_bound_deg)

        tau = 0.0
        if norm < options.g_tol:
            status = "converged"
        else:
            try:
                result = line_search(current, h, -(norm**2), cost, options)
            except LineSearchExhausted:
                status = "line_search_exhausted"
            else:
                tau = result.tau
                current = current.with_mesh(result.mesh)
                history.final_cost = result.cost
                if on_iteration is not None:
                    on_iteration(iteration, current.mesh)

        history.records.append(
            IterationRecord(
                iteration=iteration,
                cost=cost,
                h1_norm=norm,
                tau=tau,
                max_turning_angle_deg=admissibility.max_turning_angle_deg,
                min_quality=admissibility.min_quality,
                wall_time=time.perf_counter() - started,
            )
        )
        logger.info(
            "optimizer.iteration",
            iteration=iteration,
            cost=cost,
            h1_norm=norm,
            tau=tau,
        )
        if status != "max_iters":
            break

    history.status = status
    logger.info(
        "optimizer.finished",
        status=status,
        iterations=len(history.records),
        initial_cost=history.initial_cost,
        final_cost=history.final_cost,
    )
    return history, current.mesh
