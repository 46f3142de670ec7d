"""Adjoint of the Westervelt state problem.

Two schemes are available:

``discrete``
    The exact transpose of the implicit midpoint state scheme. Writing the
    step equations as E1ⁿ = u^{n+1} - uⁿ - dt/2 (vⁿ + v^{n+1}) and E2ⁿ = R(v^{n+1}),
    the multipliers (μⁿ, πⁿ) of the Lagrangian J - Σ μⁿ·E1ⁿ - πⁿ·E2ⁿ solve a
    backward recursion of linear systems. This is the gradient used by the
    optimizer: the volume shape derivative built from it is the exact
    derivative of the discrete cost.

``continuous``
    The reversed-time adjoint problem p̃(t) = p(T - t) with source
    2(u - u_d), discretised by implicit midpoint. Time derivatives of the
    state-dependent coefficients use central differences over the stored
    midpoint states.

:func:`adjoint_gap` measures how far the two are apart.
"""

import math
from dataclasses import dataclass
from typing import Literal

import numpy as np
import scipy.sparse as sp
import structlog
from numpy.typing import NDArray
from scipy.sparse.linalg import spsolve

from .errors import LinearSolveFailure, StateMissing
from .fem import P1Space
from .geometry import Mesh2D
from .metrics import MetricsCollector, time_steps_total
from .models import (
    DiagnosticsBounds,
    MaterialParams,
    SmallnessReport,
    SolverOptions,
    TimeGrid,
)
from .qlaplace import regularized_norm
from .state import StateTrajectory, WesterveltStepper, cost_gradient, energy_report

logger = structlog.get_logger(__name__)

Scheme = Literal["discrete", "continuous"]


@dataclass(frozen=True, eq=False)
class AdjointTrajectory:
    """Adjoint p, ṗ at the time points plus the midpoint multipliers.

    ``p_mid[n]`` is the adjoint attached to the step from tₙ to tₙ₊₁ and is
    what the shape derivative integrates against; ``mu[n]`` is the
    multiplier of the displacement update of that step (discrete scheme).
    """

    grid: TimeGrid
    p: NDArray[np.float64]
    dp: NDArray[np.float64]
    p_mid: NDArray[np.float64]
    mu: NDArray[np.float64]
    scheme: str

    @property
    def reversed(self) -> NDArray[np.float64]:
        """p̃ at the reversed time points."""
        return self.p[::-1]


@dataclass(frozen=True)
class StepOperators:
    """Linearisation of step n around the computed state."""

    mass: NDArray[np.float64]
    force: sp.csr_matrix
    coupling: sp.csr_matrix


class StepLinearization:
    """Derivatives of the state step equations along a trajectory.

    For step n with aⁿ = v^{n+1} - vⁿ:

    * Mⁿ = m_1 - 2 m_k u_mⁿ (diagonal),
    * Fⁿ = C + D'(v_mⁿ) - 4 diag(m_k v_mⁿ) = ∂F/∂v at the midpoint,
    * Bⁿ = -2 diag(m_k aⁿ) + dt K, so that ∂E2ⁿ/∂u^{n+1} = ∂E2ⁿ/∂uⁿ = Bⁿ/2.
    """

    def __init__(
        self,
        mesh: Mesh2D,
        params: MaterialParams,
        state: StateTrajectory,
        options: SolverOptions,
    ) -> None:
        self.stepper = WesterveltStepper(mesh, params, state.grid, options)
        self.state = state
        self.free = self.stepper.space.free
        self.dt = state.grid.dt

    def operators(self, n: int) -> StepOperators:
        stepper = self.stepper
        u_mid = self.state.midpoint_u(n)[self.free]
        v_mid = self.state.midpoint_v(n)[self.free]
        increment = self.state.increment_v(n)[self.free]
        coupling = (
            sp.diags(-2.0 * stepper.mk * increment) + self.dt * stepper.stiffness
        ).tocsr()
        return StepOperators(
            mass=stepper.m1 - 2.0 * stepper.mk * u_mid,
            force=stepper.force_jacobian(v_mid),
            coupling=coupling,
        )


def _validate(mesh: Mesh2D, state: StateTrajectory | None, grid: TimeGrid | None) -> None:
    if state is None:
        raise StateMissing("adjoint requires a solved state trajectory")
    if state.u.shape[1] != mesh.n_nodes:
        raise StateMissing(
            "state trajectory belongs to another mesh",
            state_nodes=state.u.shape[1],
            mesh_nodes=mesh.n_nodes,
        )
    if grid is not None and grid != state.grid:
        raise StateMissing("state trajectory was solved on another time grid")


def _solve(matrix: sp.spmatrix, rhs: NDArray[np.float64], step: int) -> NDArray[np.float64]:
    solution = np.atleast_1d(spsolve(matrix.tocsc(), rhs))
    if not np.all(np.isfinite(solution)):
        raise LinearSolveFailure("adjoint step produced non-finite values", step=step)
    return solution


def solve_adjoint(
    mesh: Mesh2D,
    params: MaterialParams,
    state: StateTrajectory,
    u_d: NDArray[np.float64],
    grid: TimeGrid | None = None,
    options: SolverOptions | None = None,
    scheme: Scheme = "discrete",
) -> AdjointTrajectory:
    """Solve the adjoint problem backwards from p(T) = ṗ(T) = 0.

    ``discrete`` (the default) is the transpose of the stepping and thus the
    exact derivative of the discrete J. ``continuous`` marches the reversed
    adjoint equation; the two agree as dt → 0.

    Raises:
        StateMissing: no state or a state on another mesh or grid.
        GridMismatch: ``u_d`` does not fit the state.
        LinearSolveFailure: a backward step could not be solved.
    """
    _validate(mesh, state, grid)
    options = options or SolverOptions()
    with MetricsCollector.track_solve(f"adjoint_{scheme}"):
        if scheme == "discrete":
            result = _solve_discrete(mesh, params, state, u_d, options)
        elif scheme == "continuous":
            result = _solve_continuous(mesh, params, state, u_d, options)
        else:
            raise ValueError(f"unknown adjoint scheme {scheme!r}")
        time_steps_total.labels(kind="adjoint").inc(state.grid.steps)
    logger.debug(
        "adjoint.solved",
        scheme=scheme,
        steps=state.grid.steps,
        max_abs=float(np.abs(result.p_mid).max(initial=0.0)),
    )
    return result


def _solve_discrete(
    mesh: Mesh2D,
    params: MaterialParams,
    state: StateTrajectory,
    u_d: NDArray[np.float64],
    options: SolverOptions,
) -> AdjointTrajectory:
    linearization = StepLinearization(mesh, params, state, options)
    space = linearization.stepper.space
    free = space.free
    dt = state.grid.dt
    steps = state.grid.steps
    source = cost_gradient(mesh, state, u_d)[:, free]

    pi = np.zeros((steps, len(free)))
    mu = np.zeros((steps, len(free)))
    mu_next = np.zeros(len(free))
    after: StepOperators | None = None
    for j in range(steps, 0, -1):
        r1 = source[j] + mu_next
        r2 = 0.5 * dt * mu_next
        if after is not None:
            r1 = r1 - 0.5 * (after.coupling @ pi[j])
            r2 = r2 + after.mass * pi[j] - 0.5 * dt * (after.force @ pi[j])
        ops = linearization.operators(j - 1)
        system = sp.diags(ops.mass) + 0.5 * dt * ops.force + 0.25 * dt * ops.coupling
        pi[j - 1] = _solve(system, r2 + 0.5 * dt * r1, step=j - 1)
        mu[j - 1] = r1 - 0.5 * (ops.coupling @ pi[j - 1])
        mu_next = mu[j - 1]
        after = ops

    p = np.zeros((steps + 1, len(free)))
    dp = np.zeros((steps + 1, len(free)))
    p[0] = pi[0]
    p[1:steps] = 0.5 * (pi[:-1] + pi[1:])
    dp[0] = (pi[1] - pi[0]) / dt
    dp[1:steps] = np.diff(pi, axis=0) / dt
    return AdjointTrajectory(
        grid=state.grid,
        p=space.embed(p),
        dp=space.embed(dp),
        p_mid=space.embed(pi),
        mu=space.embed(mu),
        scheme="discrete",
    )


def _coefficient_rates(values: NDArray[np.float64], dt: float) -> NDArray[np.float64]:
    """Time derivative of midpoint samples: central inside, one-sided at the ends."""
    rates = np.empty_like(values)
    rates[1:-1] = (values[2:] - values[:-2]) / (2.0 * dt)
    rates[0] = (values[1] - values[0]) / dt
    rates[-1] = (values[-1] - values[-2]) / dt
    return rates


def _solve_continuous(
    mesh: Mesh2D,
    params: MaterialParams,
    state: StateTrajectory,
    u_d: NDArray[np.float64],
    options: SolverOptions,
) -> AdjointTrajectory:
    stepper = WesterveltStepper(mesh, params, state.grid, options)
    space = stepper.space
    free = space.free
    coef = stepper.coef
    q = params.q
    dt = state.grid.dt
    steps = state.grid.steps

    v_mid = 0.5 * (state.v[:-1] + state.v[1:])
    u_mid = 0.5 * (state.u[:-1] + state.u[1:])
    grad_v = space.element_gradients(v_mid)
    grad_a = space.element_gradients(np.diff(state.v, axis=0) / dt)
    size = regularized_norm(grad_v, options.eps_reg)
    with np.errstate(divide="ignore", invalid="ignore"):
        c1 = np.where(size > 0, size ** (q - 1), 0.0)
        c3 = np.where(size > 0, size ** (q - 3), 0.0) if q != 1 else np.zeros_like(size)
    rate1 = _coefficient_rates(c1, dt)
    rate3 = _coefficient_rates(c3, dt)

    # 2(u - u_d) weighted by the lumped mass, sampled at the midpoints
    residual = cost_gradient(mesh, state, u_d) / state.grid.trapezoid_weights()[:, None]
    source = 0.5 * (residual[:-1] + residual[1:])[:, free]

    eye = np.eye(2)
    p_rev = np.zeros((steps + 1, len(free)))
    r_rev = np.zeros((steps + 1, len(free)))
    for k in range(steps):
        n = steps - 1 - k
        g = grad_v[n]
        gdot = grad_a[n]
        outer = g[:, :, None] * g[:, None, :]
        sym = g[:, :, None] * gdot[:, None, :] + gdot[:, :, None] * g[:, None, :]
        damping = coef.b_delta[:, None, None] * (
            c1[n][:, None, None] * eye + (q - 1) * c3[n][:, None, None] * outer
        )
        damping_rate = coef.b_delta[:, None, None] * (
            rate1[n][:, None, None] * eye
            + (q - 1) * (rate3[n][:, None, None] * outer + c3[n][:, None, None] * sym)
        )
        flux_matrix = stepper.viscous + space.assemble_free(
            space.stiffness_elements(damping)
        )
        reaction = stepper.stiffness - space.assemble_free(
            space.stiffness_elements(damping_rate)
        )
        mass = stepper.m1 - 2.0 * stepper.mk * u_mid[n][free]
        p_k, r_k = p_rev[k], r_rev[k]
        system = (
            sp.diags(mass) + 0.5 * dt * flux_matrix + 0.25 * dt**2 * reaction
        )
        rhs = (
            mass * r_k
            + dt * source[n]
            - dt * (reaction @ (p_k + 0.25 * dt * r_k) + 0.5 * (flux_matrix @ r_k))
        )
        r_rev[k + 1] = _solve(system, rhs, step=n)
        p_rev[k + 1] = p_k + 0.5 * dt * (r_k + r_rev[k + 1])

    p = p_rev[::-1]
    dp = -r_rev[::-1]
    p_mid = 0.5 * (p[:-1] + p[1:])
    return AdjointTrajectory(
        grid=state.grid,
        p=space.embed(p),
        dp=space.embed(dp),
        p_mid=space.embed(p_mid),
        mu=np.zeros((steps, mesh.n_nodes)),
        scheme="continuous",
    )


def adjoint_gap(mesh: Mesh2D, first: AdjointTrajectory, second: AdjointTrajectory) -> float:
    """Relative L²(0,T;L²) distance of two adjoints, relative to ``second``."""
    mass = P1Space(mesh).mass
    weights = first.grid.trapezoid_weights()
    difference = float(weights @ (((first.p - second.p) ** 2) @ mass))
    reference = float(weights @ ((second.p**2) @ mass))
    if reference == 0.0:
        return 0.0 if difference == 0.0 else math.inf
    return math.sqrt(difference / reference)


# ============================================================================
# SPACE-TIME OPERATORS
# ============================================================================


def space_time_jacobian(
    mesh: Mesh2D,
    params: MaterialParams,
    state: StateTrajectory,
    options: SolverOptions | None = None,
) -> sp.csr_matrix:
    """Jacobian of all step equations with respect to all unknown states.

    Unknowns are ordered (u¹, v¹, u², v², ..., u^N, v^N) on the free nodes;
    equations are ordered (E1⁰, E2⁰, ..., E1^{N-1}, E2^{N-1}).
    """
    options = options or SolverOptions()
    linearization = StepLinearization(mesh, params, state, options)
    size = len(linearization.free)
    dt = state.grid.dt
    steps = state.grid.steps
    eye = sp.identity(size, format="csr")
    blocks: list[list[sp.spmatrix | None]] = [
        [None] * (2 * steps) for _ in range(2 * steps)
    ]
    for n in range(steps):
        ops = linearization.operators(n)
        mass = sp.diags(ops.mass)
        # unknowns at t_{n+1}
        blocks[2 * n][2 * n] = eye
        blocks[2 * n][2 * n + 1] = -0.5 * dt * eye
        blocks[2 * n + 1][2 * n] = 0.5 * ops.coupling
        blocks[2 * n + 1][2 * n + 1] = mass + 0.5 * dt * ops.force
        if n > 0:
            # unknowns at t_n
            blocks[2 * n][2 * n - 2] = -eye
            blocks[2 * n][2 * n - 1] = -0.5 * dt * eye
            blocks[2 * n + 1][2 * n - 2] = 0.5 * ops.coupling
            blocks[2 * n + 1][2 * n - 1] = -mass + 0.5 * dt * ops.force
    return sp.bmat(blocks, format="csr")


def apply_adjoint_operator(
    mesh: Mesh2D,
    params: MaterialParams,
    state: StateTrajectory,
    mu: NDArray[np.float64],
    pi: NDArray[np.float64],
    options: SolverOptions | None = None,
) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """Transpose action of :func:`space_time_jacobian` on multipliers.

    ``mu`` and ``pi`` have shape (N, n_free) and hold the multipliers of E1
    and E2 per step. Returns the (u, v) rows for t₁..t_N, shape (N, n_free).
    """
    options = options or SolverOptions()
    linearization = StepLinearization(mesh, params, state, options)
    dt = state.grid.dt
    steps = state.grid.steps
    rows_u = np.zeros_like(mu)
    rows_v = np.zeros_like(pi)
    previous = linearization.operators(0)
    for j in range(1, steps + 1):
        # step j-1 couples to t_j as its new time level
        rows_u[j - 1] = mu[j - 1] + 0.5 * (previous.coupling.T @ pi[j - 1])
        rows_v[j - 1] = -0.5 * dt * mu[j - 1] + (
            previous.mass * pi[j - 1] + 0.5 * dt * (previous.force.T @ pi[j - 1])
        )
        if j < steps:
            ops = linearization.operators(j)
            # step j couples to t_j as its old time level
            rows_u[j - 1] += -mu[j] + 0.5 * (ops.coupling.T @ pi[j])
            rows_v[j - 1] += -0.5 * dt * mu[j] + (
                -ops.mass * pi[j] + 0.5 * dt * (ops.force.T @ pi[j])
            )
            previous = ops
    return rows_u, rows_v


# ============================================================================
# SMALLNESS CONDITIONS
# ============================================================================


def smallness_report(
    mesh: Mesh2D,
    state: StateTrajectory,
    params: MaterialParams,
    bounds: DiagnosticsBounds | None = None,
    *,
    young_eps: float = 0.5,
    c_q: float | None = None,
) -> SmallnessReport:
    """Evaluate the three smallness conditions of the adjoint well-posedness.

    1. T k̄/λ_min C²_{H¹,L⁴} C_P m̄ < (1 - a₀)/4
    2. (1/ε) b̄ δ̄ C_q ‖∇u̇‖^{q-2}_{L∞L∞} ‖∇ü‖_{L²L∞} < 1/ϱ̄
    3. k̄/λ_min C²_{H¹,L⁴} C_P m̄ < b_min (1 - δ̄)/2

    Embedding constants are the measured surrogates of ``bounds``. Advisory.
    """
    bounds = bounds or energy_report(mesh, state, params)
    c_q = 3.0 * abs(params.q - 1.0) if c_q is None else c_q
    lens, fluid = params.lens, params.fluid
    k_bar = params.k_max
    lam_min = min(lens.lam, fluid.lam)
    rho_bar = max(lens.rho, fluid.rho)
    b_bar = max(lens.b, fluid.b)
    b_min = min(lens.b, fluid.b)
    delta_bar = max(lens.delta, fluid.delta)
    embedding = bounds.h1_l4_surrogate**2 * bounds.poincare_surrogate * bounds.m_bar

    def product(*factors: float) -> float:
        return 0.0 if any(f == 0.0 for f in factors) else math.prod(factors)

    grad_power = (
        1.0 if params.q == 2 else bounds.grad_du_linf_linf ** (params.q - 2)
    )
    lhs = [
        product(state.grid.final_time, k_bar / lam_min, embedding),
        product(b_bar * delta_bar * c_q / young_eps, grad_power, bounds.grad_ddu_l2_linf),
        product(k_bar / lam_min, embedding),
    ]
    rhs = [(1.0 - bounds.a0) / 4.0, 1.0 / rho_bar, b_min * (1.0 - delta_bar) / 2.0]
    return SmallnessReport(
        lhs=lhs,
        rhs=rhs,
        margins=[r - l for l, r in zip(lhs, rhs, strict=True)],
        satisfied=[l < r for l, r in zip(lhs, rhs, strict=True)],
    )
