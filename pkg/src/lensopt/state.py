"""Westervelt state solver with nonlinear strong damping.

The weak form

    ∫ (1/λ)(1-2ku)ü φ + (1/ϱ)∇u·∇φ + b(1-δ)∇u̇·∇φ
      + bδ|∇u̇|_ε^{q-1}∇u̇·∇φ - (2k/λ)u̇² φ dx = 0

is discretised with P1 elements (lumped quadrature for the non-gradient
terms) and the implicit midpoint rule on the first-order system (u, v = u̇).
Each step solves for v^{n+1} with Newton's method using the exact
linearisation of the q-Laplace flux; a damped Newton iteration is the
fallback. The coefficients are piecewise constant per label, so the interface
condition is imposed weakly by assembling across Γ.
"""

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import structlog
from numpy.typing import NDArray
from scipy.sparse.linalg import spsolve

from .errors import DegeneracyBreach, GridMismatch, InitialDataError, NonlinearSolveFailure
from .fem import Coefficients, P1Space
from .geometry import Mesh2D
from .metrics import MetricsCollector, newton_iterations_total, time_steps_total
from .models import (
    DegeneracyReport,
    DiagnosticsBounds,
    MaterialParams,
    SolverOptions,
    TimeGrid,
)
from .qlaplace import flux, flux_tensor, regularized_norm

logger = structlog.get_logger(__name__)

_BOUNDARY_TOLERANCE = 1e-10


@dataclass(frozen=True, eq=False)
class StateTrajectory:
    """Nodal histories u, u̇ and ü at the N+1 time points."""

    grid: TimeGrid
    u: NDArray[np.float64]
    v: NDArray[np.float64]
    a: NDArray[np.float64]
    newton_iterations: NDArray[np.int64]

    @property
    def u0(self) -> NDArray[np.float64]:
        return self.u[0]

    @property
    def u1(self) -> NDArray[np.float64]:
        return self.v[0]

    @property
    def n_nodes(self) -> int:
        return int(self.u.shape[1])

    def midpoint_u(self, n: int) -> NDArray[np.float64]:
        return 0.5 * (self.u[n] + self.u[n + 1])

    def midpoint_v(self, n: int) -> NDArray[np.float64]:
        return 0.5 * (self.v[n] + self.v[n + 1])

    def increment_v(self, n: int) -> NDArray[np.float64]:
        return self.v[n + 1] - self.v[n]


class WesterveltStepper:
    """Residual and Jacobian of one implicit midpoint step on the free nodes.

    With x = v^{n+1}: u^{n+1} = u^n + dt/2 (v^n + x), the midpoint values are
    u_m = u^n + dt/4 (v^n + x) and v_m = (v^n + x)/2, and

        R(x) = M(u_m)(x - v^n) + dt [K u_m + C v_m + D(v_m) - 2 m_k v_m²]

    with M(u) = diag(m_1 - 2 m_k u) from the lumped masses of 1/λ and k/λ.
    """

    def __init__(
        self,
        mesh: Mesh2D,
        params: MaterialParams,
        grid: TimeGrid,
        options: SolverOptions,
    ) -> None:
        self.space = P1Space(mesh)
        self.coef = Coefficients.from_params(mesh, params)
        self.q = params.q
        self.dt = grid.dt
        self.eps = options.eps_reg
        free = self.space.free
        self.m1 = self.space.lumped(self.coef.inv_lam)[free]
        self.mk = self.space.lumped(self.coef.k_over_lam)[free]
        self.stiffness = self.space.stiffness(self.coef.inv_rho)
        self.viscous = self.space.stiffness(self.coef.b_visc)

    def midpoints(
        self, x: NDArray[np.float64], u_n: NDArray[np.float64], v_n: NDArray[np.float64]
    ) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
        return u_n + 0.25 * self.dt * (v_n + x), 0.5 * (v_n + x)

    def damping(self, v_mid: NDArray[np.float64]) -> NDArray[np.float64]:
        """Free part of the q-Laplace load ∫ bδ|∇v|_ε^{q-1}∇v·∇φ."""
        grads = self.space.element_gradients(self.space.embed(v_mid))
        load = self.space.load(self.coef.b_delta[:, None] * flux(grads, self.q, self.eps))
        return load[self.space.free]

    def damping_jacobian(self, v_mid: NDArray[np.float64]) -> sp.csr_matrix:
        grads = self.space.element_gradients(self.space.embed(v_mid))
        tensors = self.coef.b_delta[:, None, None] * flux_tensor(grads, self.q, self.eps)
        return self.space.assemble_free(self.space.stiffness_elements(tensors))

    def forces(
        self, u_mid: NDArray[np.float64], v_mid: NDArray[np.float64]
    ) -> NDArray[np.float64]:
        return (
            self.stiffness @ u_mid
            + self.viscous @ v_mid
            + self.damping(v_mid)
            - 2.0 * self.mk * v_mid**2
        )

    def residual(
        self, x: NDArray[np.float64], u_n: NDArray[np.float64], v_n: NDArray[np.float64]
    ) -> NDArray[np.float64]:
        u_mid, v_mid = self.midpoints(x, u_n, v_n)
        return (self.m1 - 2.0 * self.mk * u_mid) * (x - v_n) + self.dt * self.forces(
            u_mid, v_mid
        )

    def force_jacobian(self, v_mid: NDArray[np.float64]) -> sp.csr_matrix:
        """∂F/∂v at the midpoint: C + D'(v_m) - 4 diag(m_k v_m)."""
        return (
            self.viscous
            + self.damping_jacobian(v_mid)
            - sp.diags(4.0 * self.mk * v_mid)
        ).tocsr()

    def jacobian(
        self, x: NDArray[np.float64], u_n: NDArray[np.float64], v_n: NDArray[np.float64]
    ) -> sp.csr_matrix:
        u_mid, v_mid = self.midpoints(x, u_n, v_n)
        diagonal = self.m1 - 2.0 * self.mk * u_mid - 0.5 * self.dt * self.mk * (x - v_n)
        return (
            sp.diags(diagonal)
            + (0.25 * self.dt**2) * self.stiffness
            + (0.5 * self.dt) * self.force_jacobian(v_mid)
        ).tocsc()


def _check_initial(mesh: Mesh2D, name: str, values: NDArray[np.float64]) -> NDArray[np.float64]:
    values = np.array(values, dtype=float)
    if values.shape != (mesh.n_nodes,):
        raise GridMismatch(
            f"{name} must have one value per node", shape=list(values.shape), nodes=mesh.n_nodes
        )
    on_boundary = float(np.abs(values[mesh.boundary_nodes]).max(initial=0.0))
    if on_boundary > _BOUNDARY_TOLERANCE:
        raise InitialDataError(
            f"{name} must vanish on the outer boundary", max_boundary_value=on_boundary
        )
    values[mesh.boundary_nodes] = 0.0
    return values


def _element_factors(
    mesh: Mesh2D, k: NDArray[np.float64], u: NDArray[np.float64]
) -> NDArray[np.float64]:
    """1 - 2k_T u at the vertices of every triangle."""
    return 1.0 - 2.0 * k[:, None] * u[mesh.triangles]


def solve_state(
    mesh: Mesh2D,
    params: MaterialParams,
    grid: TimeGrid,
    u0: NDArray[np.float64],
    u1: NDArray[np.float64],
    options: SolverOptions | None = None,
) -> StateTrajectory:
    """March the Westervelt equation from (u₀, u₁) over the time grid.

    Raises:
        InitialDataError: initial data do not vanish on ∂Ω.
        DegeneracyBreach: min(1 - 2ku) fell below the degeneracy floor.
        NonlinearSolveFailure: neither Newton nor its damped fallback converged.
    """
    options = options or SolverOptions()
    u0 = _check_initial(mesh, "u0", u0)
    u1 = _check_initial(mesh, "u1", u1)
    stepper = WesterveltStepper(mesh, params, grid, options)
    space = stepper.space
    free = space.free
    steps = grid.steps
    dt = grid.dt

    u = np.zeros((steps + 1, mesh.n_nodes))
    v = np.zeros((steps + 1, mesh.n_nodes))
    u[0], v[0] = u0, u1
    iterations = np.zeros(steps, dtype=np.int64)

    def guard(step: int, values: NDArray[np.float64]) -> None:
        factor = float(_element_factors(mesh, stepper.coef.k, values).min())
        if factor < options.degeneracy_floor:
            raise DegeneracyBreach(
                "1 - 2ku dropped below the degeneracy floor",
                step=step,
                min_factor=factor,
                floor=options.degeneracy_floor,
            )

    with MetricsCollector.track_solve("state"):
        guard(0, u[0])
        for n in range(steps):
            u_n, v_n = u[n, free], v[n, free]
            x, count = _newton(stepper, u_n, v_n, options, step=n + 1)
            iterations[n] = count
            v[n + 1, free] = x
            u[n + 1, free] = u_n + 0.5 * dt * (v_n + x)
            guard(n + 1, u[n + 1])
        newton_iterations_total.inc(int(iterations.sum()))
        time_steps_total.labels(kind="state").inc(steps)

    # midpoint accelerations averaged to the time points, one-sided at the ends
    mid = np.diff(v, axis=0) / dt
    a = np.empty_like(u)
    a[0], a[-1] = mid[0], mid[-1]
    a[1:-1] = 0.5 * (mid[:-1] + mid[1:])

    logger.debug(
        "state.solved",
        steps=steps,
        nodes=mesh.n_nodes,
        newton_iterations=int(iterations.sum()),
    )
    return StateTrajectory(grid=grid, u=u, v=v, a=a, newton_iterations=iterations)


def _newton(
    stepper: WesterveltStepper,
    u_n: NDArray[np.float64],
    v_n: NDArray[np.float64],
    options: SolverOptions,
    step: int,
) -> tuple[NDArray[np.float64], int]:
    scale = stepper.m1
    x = v_n.copy()
    residual = stepper.residual(x, u_n, v_n)
    initial = float(np.max(np.abs(residual / scale), initial=0.0))
    if initial <= options.newton_atol:
        return x, 0
    tolerance = max(options.newton_atol, options.newton_rtol * initial)

    for damping, label in ((1.0, "newton"), (options.fallback_damping, "damped")):
        x = v_n.copy()
        residual = stepper.residual(x, u_n, v_n)
        for iteration in range(1, options.max_iterations + 1):
            delta = spsolve(stepper.jacobian(x, u_n, v_n), -residual)
            if not np.all(np.isfinite(delta)):
                break
            x = x + damping * delta
            residual = stepper.residual(x, u_n, v_n)
            size = float(np.max(np.abs(residual / scale)))
            if not math.isfinite(size):
                break
            if size <= tolerance:
                return x, iteration
        logger.warning("state.newton_stalled", step=step, method=label)

    raise NonlinearSolveFailure(
        "nonlinear step did not converge", step=step, initial_residual=initial
    )


def _target_series(
    mesh: Mesh2D, traj: StateTrajectory, u_d: NDArray[np.float64]
) -> NDArray[np.float64]:
    u_d = np.asarray(u_d, dtype=float)
    if u_d.shape == (mesh.n_nodes,):
        return np.broadcast_to(u_d, traj.u.shape)
    if u_d.shape != traj.u.shape or traj.u.shape[1] != mesh.n_nodes:
        raise GridMismatch(
            "target does not match the mesh and time grid",
            target_shape=list(u_d.shape),
            state_shape=list(traj.u.shape),
            nodes=mesh.n_nodes,
        )
    return u_d


def evaluate_cost(
    mesh: Mesh2D, traj: StateTrajectory, u_d: NDArray[np.float64]
) -> float:
    """J = ∫₀ᵀ∫_Ω (u - u_d)² with lumped mass in space and trapezoid in time.

    ``u_d`` is either a nodal time series shaped like ``traj.u`` or a single
    nodal field held constant in time.
    """
    target = _target_series(mesh, traj, u_d)
    mass = P1Space(mesh).mass
    per_step = ((traj.u - target) ** 2) @ mass
    return float(traj.grid.trapezoid_weights() @ per_step)


def cost_gradient(
    mesh: Mesh2D, traj: StateTrajectory, u_d: NDArray[np.float64]
) -> NDArray[np.float64]:
    """∂J/∂u^n as nodal vectors, shape (N+1, n)."""
    target = _target_series(mesh, traj, u_d)
    mass = P1Space(mesh).mass
    weights = traj.grid.trapezoid_weights()
    return 2.0 * weights[:, None] * mass[None, :] * (traj.u - target)


# ============================================================================
# DIAGNOSTICS
# ============================================================================


def _node_k_range(
    mesh: Mesh2D, params: MaterialParams
) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    k = Coefficients.from_params(mesh, params).k
    low = np.full(mesh.n_nodes, np.inf)
    high = np.full(mesh.n_nodes, -np.inf)
    np.minimum.at(low, mesh.triangles.ravel(), np.repeat(k, 3))
    np.maximum.at(high, mesh.triangles.ravel(), np.repeat(k, 3))
    return low, high


def degeneracy_margin(
    mesh: Mesh2D, traj: StateTrajectory, params: MaterialParams
) -> DegeneracyReport:
    """Degeneracy bound a₀ = 2 max|k| max|u| and the direct range of 1 - 2ku.

    The direct values are taken per element at its vertices, so nodes on Γ
    see both subdomain values of k. ``passed`` means a₀ < 1 and the direct
    range lies in [1 - a₀, 1 + a₀].
    """
    a0 = 2.0 * params.k_max * float(np.abs(traj.u).max(initial=0.0))
    low, high = _node_k_range(mesh, params)
    candidates = np.stack([1.0 - 2.0 * low * traj.u, 1.0 - 2.0 * high * traj.u])
    min_factor = float(candidates.min())
    max_factor = float(candidates.max())
    slack = 1e-14 * max(1.0, a0)
    passed = (
        a0 < 1.0 and min_factor >= 1.0 - a0 - slack and max_factor <= 1.0 + a0 + slack
    )
    return DegeneracyReport(
        a0=a0, min_factor=min_factor, max_factor=max_factor, passed=bool(passed)
    )


def linear_energy(
    mesh: Mesh2D, traj: StateTrajectory, params: MaterialParams
) -> NDArray[np.float64]:
    """(1/(2λ))‖u̇‖² + (1/(2ϱ))‖∇u‖² at every time point."""
    space = P1Space(mesh)
    coef = Coefficients.from_params(mesh, params)
    m1 = space.lumped(coef.inv_lam)
    stiffness = space.assemble_full(space.stiffness_elements(weights=coef.inv_rho))
    kinetic = 0.5 * (traj.v**2) @ m1
    potential = 0.5 * np.einsum("sn,sn->s", traj.u, (stiffness @ traj.u.T).T)
    return kinetic + potential


def energy_report(
    mesh: Mesh2D, traj: StateTrajectory, params: MaterialParams
) -> DiagnosticsBounds:
    """Discrete versions of every norm in the energy estimate of the state.

    Left side: ‖u‖²_{L∞L∞}, ‖ü‖²_{L²L²}, ‖∇u̇‖²_{L²L²}, ‖∇u̇‖^{q+1}_{L^{q+1}L^{q+1}},
    ‖u̇‖²_{L∞L²}, ‖∇u‖²_{L∞L²}, ‖∇u̇‖²_{L∞L²} and ‖∇u̇‖^{q+1}_{L∞L^{q+1}}.
    Data: ‖u₁‖² + ‖∇u₀‖² + ‖∇u₁‖² + ‖∇u₁‖^{q+1}_{L^{q+1}}.
    """
    space = P1Space(mesh)
    q = params.q
    area = space.areas
    mass = space.mass
    grid = traj.grid
    weights = grid.trapezoid_weights()

    def gradient_norms(values: NDArray[np.float64]) -> tuple[NDArray, NDArray, NDArray]:
        grads = space.element_gradients(values)
        size = regularized_norm(grads)
        return size**2 @ area, size ** (q + 1) @ area, size.max(axis=-1)

    grad_u2, grad_uq, _ = gradient_norms(traj.u)
    grad_v2, grad_vq, grad_vinf = gradient_norms(traj.v)
    _, _, grad_ainf = gradient_norms(traj.a)
    v2 = (traj.v**2) @ mass
    v4 = (traj.v**4) @ mass
    a2 = (traj.a**2) @ mass

    bounds = DiagnosticsBounds()
    bounds.u_linf_linf_sq = float(np.abs(traj.u).max(initial=0.0) ** 2)
    bounds.ddu_l2_l2_sq = float(weights @ a2)
    bounds.grad_du_l2_l2_sq = float(weights @ grad_v2)
    bounds.grad_du_lq1_lq1 = float(weights @ grad_vq)
    bounds.du_linf_l2_sq = float(v2.max())
    bounds.grad_u_linf_l2_sq = float(grad_u2.max())
    bounds.grad_du_linf_l2_sq = float(grad_v2.max())
    bounds.grad_du_linf_lq1 = float(grad_vq.max())
    bounds.lhs_total = (
        bounds.u_linf_linf_sq
        + bounds.ddu_l2_l2_sq
        + bounds.grad_du_l2_l2_sq
        + bounds.grad_du_lq1_lq1
        + bounds.du_linf_l2_sq
        + bounds.grad_u_linf_l2_sq
        + bounds.grad_du_linf_l2_sq
        + bounds.grad_du_linf_lq1
    )
    bounds.data_norm = float(v2[0] + grad_u2[0] + grad_v2[0] + grad_vq[0])
    bounds.ratio = bounds.lhs_total / bounds.data_norm if bounds.data_norm > 0 else 0.0

    bounds.m_bar = max(math.sqrt(bounds.ddu_l2_l2_sq), math.sqrt(bounds.grad_du_linf_l2_sq))
    bounds.big_m_bar = bounds.grad_du_lq1_lq1 ** (1.0 / (q + 1))
    grad_u0_lq1 = float(grad_uq[0]) ** (1.0 / (q + 1))
    bounds.kappa_t = math.sqrt(bounds.data_norm + grad_u0_lq1**2)

    with np.errstate(divide="ignore", invalid="ignore"):
        poincare = np.where(grad_v2 > 0, np.sqrt(v2 / grad_v2), 0.0)
        h1 = np.sqrt(v2 + grad_v2)
        h1_l4 = np.where(h1 > 0, v4**0.25 / h1, 0.0)
        w1q = np.where(
            grad_uq > 0, np.abs(traj.u).max(axis=1) / grad_uq ** (1.0 / (q + 1)), 0.0
        )
    bounds.poincare_surrogate = float(poincare.max())
    bounds.h1_l4_surrogate = float(h1_l4.max())
    bounds.w1q_linf_surrogate = float(w1q.max())

    degeneracy = degeneracy_margin(mesh, traj, params)
    bounds.a0 = degeneracy.a0
    bounds.min_degeneracy_factor = degeneracy.min_factor
    bounds.a0_embedding = (
        2.0
        * params.k_max
        * bounds.w1q_linf_surrogate
        * (grad_u0_lq1 + grid.final_time ** (q / (q + 1)) * bounds.big_m_bar)
    )
    bounds.grad_du_linf_linf = float(grad_vinf.max(initial=0.0))
    bounds.grad_ddu_l2_linf = math.sqrt(float(weights @ grad_ainf**2))
    bounds.energy_history = linear_energy(mesh, traj, params).tolist()
    return bounds
