"""Shape derivatives of the tracking cost with respect to the lens.

``eval_volume_form`` is the production gradient. It contracts a per-element
2×2 tensor W_T with Dh:

    dJ·h = Σ_T W_T : Dh_T,
    W_T = Σ_n dt |T| [(a ⊗ ∇π + ∇π ⊗ a) + c ∇v_m ⊗ ∇v_m] - (s_T - j_T) I,

where a = (1/ϱ)∇u_m + b(1-δ)∇v_m + bδ|∇v_m|_ε^{q-1}∇v_m is the flux at the
step midpoint, c = bδ(q-1)|∇v_m|_ε^{q-3}(∇v_m·∇π), s_T collects the state
equation tested with the adjoint on T and j_T the cost density on T. With the
discrete adjoint this is the exact derivative of the discrete cost under
x ↦ x + τh, so the finite-difference oracle can check it to high accuracy.

``eval_boundary_form`` evaluates the interface expression with jumps across Γ
weighted by h·n₊; it agrees with the volume form only as the mesh is refined.
"""

import math
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
import structlog
from numpy.typing import NDArray

from .adjoint import AdjointTrajectory
from .errors import (
    GridMismatch,
    LensOptError,
    MissingAdjoint,
    SolverFailure,
    TraceUnavailable,
)
from .fem import Coefficients, P1Space
from .geometry import Mesh2D, VelocityField, perturb_mesh
from .models import (
    ContinuityEntry,
    ContinuityReport,
    FDReport,
    FDSlope,
    MaterialParams,
    SolverOptions,
    TimeGrid,
)
from .qlaplace import flux, regularized_norm
from .state import StateTrajectory, evaluate_cost, solve_state

logger = structlog.get_logger(__name__)

_GAUSS_POINTS = np.array([0.5 - math.sqrt(15.0) / 10.0, 0.5, 0.5 + math.sqrt(15.0) / 10.0])
_GAUSS_WEIGHTS = np.array([5.0, 8.0, 5.0]) / 18.0


@dataclass(frozen=True, eq=False)
class ShapeProblem:
    """Everything a perturbed re-solve needs.

    The initial data and the target are nodal arrays that travel with the
    nodes when the mesh is deformed.
    """

    mesh: Mesh2D
    params: MaterialParams
    grid: TimeGrid
    u0: NDArray[np.float64]
    u1: NDArray[np.float64]
    u_d: NDArray[np.float64]
    options: SolverOptions = field(default_factory=SolverOptions)

    def with_mesh(self, mesh: Mesh2D) -> "ShapeProblem":
        return replace(self, mesh=mesh)

    def solve(self) -> StateTrajectory:
        return solve_state(self.mesh, self.params, self.grid, self.u0, self.u1, self.options)

    def cost(self, state: StateTrajectory | None = None) -> float:
        return evaluate_cost(self.mesh, state or self.solve(), self.u_d)


@dataclass(frozen=True, eq=False)
class VolumeTensors:
    """Per-element pieces of the volume form."""

    contraction: NDArray[np.float64]
    curvature: NDArray[np.float64]
    state_density: NDArray[np.float64]
    cost_density: NDArray[np.float64]

    @property
    def total(self) -> NDArray[np.float64]:
        weight = (self.state_density - self.cost_density)[:, None, None]
        return self.contraction + self.curvature - weight * np.eye(2)[None]


def _check_inputs(
    mesh: Mesh2D,
    state: StateTrajectory,
    adjoint: AdjointTrajectory | None,
    u_d: NDArray[np.float64] | None = None,
) -> None:
    steps = state.grid.steps
    if state.u.shape[1] != mesh.n_nodes:
        raise GridMismatch("state does not live on this mesh")
    if adjoint is None or adjoint.p_mid.shape != (steps, mesh.n_nodes):
        raise MissingAdjoint("shape derivative needs the adjoint of this state")
    if u_d is not None:
        target = np.asarray(u_d)
        if target.shape not in ((mesh.n_nodes,), state.u.shape):
            raise GridMismatch(
                "target does not match the mesh and time grid",
                target_shape=list(target.shape),
            )


def _midpoint_flux(
    coef: Coefficients, q: float, eps: float, grad_u: NDArray, grad_v: NDArray
) -> NDArray[np.float64]:
    return (
        coef.inv_rho[:, None] * grad_u
        + coef.b_visc[:, None] * grad_v
        + coef.b_delta[:, None] * flux(grad_v, q, eps)
    )


def _curvature_weight(
    coef: Coefficients, q: float, eps: float, grad_v: NDArray, grad_p: NDArray
) -> NDArray[np.float64]:
    if q == 1:
        return np.zeros(len(grad_v))
    size = regularized_norm(grad_v, eps)
    with np.errstate(divide="ignore", invalid="ignore"):
        power = np.where(size > 0, size ** (q - 3), 0.0)
    return coef.b_delta * (q - 1) * power * np.sum(grad_v * grad_p, axis=1)


def volume_tensors(
    mesh: Mesh2D,
    params: MaterialParams,
    state: StateTrajectory,
    adjoint: AdjointTrajectory,
    u_d: NDArray[np.float64],
    options: SolverOptions | None = None,
) -> VolumeTensors:
    """Accumulate the element tensors of the volume form over all steps."""
    _check_inputs(mesh, state, adjoint, u_d)
    options = options or SolverOptions()
    space = P1Space(mesh)
    coef = Coefficients.from_params(mesh, params)
    q, eps = params.q, options.eps_reg
    dt = state.grid.dt
    area = space.areas
    triangles = mesh.triangles
    m = mesh.n_triangles

    contraction = np.zeros((m, 2, 2))
    curvature = np.zeros((m, 2, 2))
    state_density = np.zeros(m)
    for n in range(state.grid.steps):
        u_mid = state.midpoint_u(n)
        v_mid = state.midpoint_v(n)
        acceleration = state.increment_v(n) / dt
        pi = adjoint.p_mid[n]
        grad_u, grad_v, grad_p = space.element_gradients(np.stack([u_mid, v_mid, pi]))

        a = _midpoint_flux(coef, q, eps, grad_u, grad_v)
        outer = a[:, :, None] * grad_p[:, None, :]
        contraction += (dt * area)[:, None, None] * (outer + outer.transpose(0, 2, 1))
        c = _curvature_weight(coef, q, eps, grad_v, grad_p)
        curvature += (dt * area * c)[:, None, None] * (
            grad_v[:, :, None] * grad_v[:, None, :]
        )

        # lumped vertex quadrature of the non-gradient terms tested with π
        vertex = (
            coef.inv_lam[:, None]
            * (1.0 - 2.0 * coef.k[:, None] * u_mid[triangles])
            * acceleration[triangles]
            - 2.0 * coef.k_over_lam[:, None] * v_mid[triangles] ** 2
        ) * pi[triangles]
        state_density += dt * (
            area / 3.0 * vertex.sum(axis=1) + area * np.sum(a * grad_p, axis=1)
        )

    target = np.broadcast_to(np.asarray(u_d, dtype=float), state.u.shape)
    weights = state.grid.trapezoid_weights()
    squared = (state.u - target) ** 2
    cost_density = area / 3.0 * (weights @ squared[:, triangles].sum(axis=2))
    return VolumeTensors(
        contraction=contraction,
        curvature=curvature,
        state_density=state_density,
        cost_density=cost_density,
    )


def volume_form_terms(
    mesh: Mesh2D,
    params: MaterialParams,
    state: StateTrajectory,
    adjoint: AdjointTrajectory,
    u_d: NDArray[np.float64],
    h: VelocityField,
    options: SolverOptions | None = None,
    tensors: VolumeTensors | None = None,
) -> dict[str, float]:
    """Volume form split into its Dh-contraction, q, div h and j div h parts."""
    tensors = tensors or volume_tensors(mesh, params, state, adjoint, u_d, options)
    dh = h.gradients
    divergence = h.divergence
    return {
        "dh_contraction": float(np.einsum("eij,eij->", tensors.contraction, dh)),
        "q_term": float(np.einsum("eij,eij->", tensors.curvature, dh)),
        "div_term": -float(tensors.state_density @ divergence),
        "j_div_term": float(tensors.cost_density @ divergence),
    }


def eval_volume_form(
    mesh: Mesh2D,
    params: MaterialParams,
    state: StateTrajectory,
    adjoint: AdjointTrajectory,
    u_d: NDArray[np.float64],
    h: VelocityField,
    options: SolverOptions | None = None,
) -> float:
    """dJ·h from the volume expression.

    Raises:
        GridMismatch: state or target do not fit the mesh.
        MissingAdjoint: no adjoint for this state.
    """
    if h.is_zero:
        _check_inputs(mesh, state, adjoint, u_d)
        return 0.0
    terms = volume_form_terms(mesh, params, state, adjoint, u_d, h, options)
    return math.fsum(terms.values())


def volume_load_vector(mesh: Mesh2D, tensors: VolumeTensors) -> NDArray[np.float64]:
    """Nodal load g with dJ·h = Σ_a g_a · h_a, shape (n, 2)."""
    # W_T : Dh_T = Σ_a h_a · (W_T ∇φ_a)
    local = np.einsum("eij,eaj->eai", tensors.total, mesh.gradients)
    load = np.zeros((mesh.n_nodes, 2))
    for component in range(2):
        load[:, component] = np.bincount(
            mesh.triangles.ravel(),
            weights=local[:, :, component].ravel(),
            minlength=mesh.n_nodes,
        )
    load[mesh.boundary_nodes] = 0.0
    return load


# ============================================================================
# INTERFACE FORM
# ============================================================================


def boundary_form_terms(
    mesh: Mesh2D,
    params: MaterialParams,
    state: StateTrajectory,
    adjoint: AdjointTrajectory,
    h: VelocityField,
    options: SolverOptions | None = None,
) -> dict[str, float]:
    """Jump terms across Γ weighted by h·n₊, grouped as in the interface form.

    Gradients are taken from the adjacent triangle on each side; nodal values
    are interpolated linearly along the edge and integrated with a 3-point
    Gauss rule.
    """
    _check_inputs(mesh, state, adjoint)
    if len(mesh.interface_edges) == 0:
        raise TraceUnavailable("mesh has no interface edges")
    options = options or SolverOptions()
    space = P1Space(mesh)
    coef = Coefficients.from_params(mesh, params)
    q, eps = params.q, options.eps_reg
    dt = state.grid.dt
    edges = mesh.interface_edges
    normals = mesh.interface_normals
    lengths = mesh.interface_lengths
    s = _GAUSS_POINTS[None, :]

    def along(values: NDArray[np.float64]) -> NDArray[np.float64]:
        return (1.0 - s) * values[edges[:, 0], None] + s * values[edges[:, 1], None]

    h_start = h.values[edges[:, 0]]
    h_end = h.values[edges[:, 1]]
    normal_speed = (1.0 - s) * np.sum(h_start * normals, axis=1)[:, None] + s * np.sum(
        h_end * normals, axis=1
    )[:, None]
    edge_weight = lengths[:, None] * _GAUSS_WEIGHTS[None, :] * normal_speed
    mean_speed = edge_weight.sum(axis=1)

    groups = ("inertia_source", "stiffness", "damping", "normal_flux", "q_laplace")
    totals = dict.fromkeys(groups, 0.0)
    for n in range(state.grid.steps):
        u_mid = state.midpoint_u(n)
        v_mid = state.midpoint_v(n)
        acceleration = state.increment_v(n) / dt
        pi = adjoint.p_mid[n]
        grad_u, grad_v, grad_p = space.element_gradients(np.stack([u_mid, v_mid, pi]))
        u_q, v_q, a_q, p_q = along(u_mid), along(v_mid), along(acceleration), along(pi)

        for side, sign in ((0, 1.0), (1, -1.0)):
            element = mesh.interface_elements[:, side]
            gu, gv, gp = grad_u[element], grad_v[element], grad_p[element]
            inv_lam = coef.inv_lam[element][:, None]
            k = coef.k[element][:, None]
            inv_rho = coef.inv_rho[element]
            size = regularized_norm(gv, eps)
            effective = coef.b_visc[element] + coef.b_delta[element] * size ** (q - 1)
            vp = np.sum(gv * gp, axis=1)
            un, vn, pn = (np.sum(g * normals, axis=1) for g in (gu, gv, gp))

            inertia = (
                -inv_lam * (1.0 - 2.0 * k * u_q) * a_q + 2.0 * inv_lam * k * v_q**2
            ) * p_q
            totals["inertia_source"] += sign * dt * float(np.sum(inertia * edge_weight))
            scale = sign * dt
            totals["stiffness"] += scale * float(
                np.sum(-inv_rho * np.sum(gu * gp, axis=1) * mean_speed)
            )
            totals["damping"] += scale * float(np.sum(-effective * vp * mean_speed))
            totals["normal_flux"] += scale * float(
                np.sum((2.0 * inv_rho * un * pn + 2.0 * effective * vn * pn) * mean_speed)
            )
            if q != 1:
                with np.errstate(divide="ignore", invalid="ignore"):
                    power = np.where(size > 0, size ** (q - 3), 0.0)
                curvature = coef.b_delta[element] * (q - 1) * power * vp * vn**2
                totals["q_laplace"] += scale * float(np.sum(curvature * mean_speed))
    return totals


def eval_boundary_form(
    mesh: Mesh2D,
    params: MaterialParams,
    state: StateTrajectory,
    adjoint: AdjointTrajectory,
    h: VelocityField,
    options: SolverOptions | None = None,
) -> float:
    """dJ·h from the interface expression.

    Raises:
        TraceUnavailable: the mesh has no interface.
        MissingAdjoint: no adjoint for this state.
    """
    terms = boundary_form_terms(mesh, params, state, adjoint, h, options)
    return math.fsum(terms.values())


# ============================================================================
# FINITE-DIFFERENCE ORACLE
# ============================================================================


def _perturbed_state(
    problem: ShapeProblem, h: VelocityField, tau: float
) -> tuple[Mesh2D, StateTrajectory]:
    mesh = perturb_mesh(problem.mesh, h, tau)
    try:
        state = solve_state(
            mesh, problem.params, problem.grid, problem.u0, problem.u1, problem.options
        )
    except LensOptError as exc:
        raise SolverFailure(
            f"perturbed solve failed: {exc.message}", tau=tau, cause=type(exc).__name__
        ) from exc
    return mesh, state


def _perturbed_cost(problem: ShapeProblem, h: VelocityField, tau: float) -> float:
    mesh, state = _perturbed_state(problem, h, tau)
    return evaluate_cost(mesh, state, problem.u_d)


def fd_oracle(
    problem: ShapeProblem,
    h: VelocityField,
    taus: Sequence[float],
    threads: int = 1,
    cost: float | None = None,
) -> FDReport:
    """One-sided and central difference quotients of J along x ↦ x + τh.

    Every ±τ is an independent re-solve; with ``threads > 1`` they run in a
    thread pool and results are collected in τ order. ``extrapolated`` is the
    Richardson combination of the central slopes at the two smallest τ and
    ``plateau`` the central slope at the smallest τ.

    Raises:
        FoldedElement: some τ folds the mesh.
        SolverFailure: a perturbed state solve failed.
    """
    taus = [float(t) for t in taus]
    if not taus or any(t <= 0 for t in taus):
        raise ValueError("taus must be positive")
    base = problem.cost() if cost is None else cost
    if h.is_zero:
        slopes = [
            FDSlope(tau=t, cost_plus=base, cost_minus=base, one_sided=0.0, central=0.0)
            for t in taus
        ]
        return FDReport(cost=base, slopes=slopes, extrapolated=0.0, plateau=0.0)

    signed = [s * t for t in taus for s in (1.0, -1.0)]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            values = list(pool.map(lambda t: _perturbed_cost(problem, h, t), signed))
    else:
        values = [_perturbed_cost(problem, h, t) for t in signed]

    slopes = []
    for index, tau in enumerate(taus):
        plus, minus = values[2 * index], values[2 * index + 1]
        slopes.append(
            FDSlope(
                tau=tau,
                cost_plus=plus,
                cost_minus=minus,
                one_sided=(plus - base) / tau,
                central=(plus - minus) / (2.0 * tau),
            )
        )
    ordered = sorted(slopes, key=lambda slope: slope.tau)
    plateau = ordered[0].central
    extrapolated = plateau
    if len(ordered) > 1:
        small, large = ordered[0], ordered[1]
        ratio_sq = (large.tau / small.tau) ** 2
        extrapolated = (ratio_sq * small.central - large.central) / (ratio_sq - 1.0)
    logger.debug("shape_gradient.fd_oracle", taus=taus, plateau=plateau)
    return FDReport(cost=base, slopes=slopes, extrapolated=extrapolated, plateau=plateau)


def relative_error(value: float, reference: float, eps_abs: float = 1e-12) -> float:
    return abs(value - reference) / max(abs(value), eps_abs)


# ============================================================================
# CONTINUITY IN τ
# ============================================================================


def continuity_diagnostics(
    problem: ShapeProblem,
    h: VelocityField,
    taus: Sequence[float],
    threads: int = 1,
    state: StateTrajectory | None = None,
) -> ContinuityReport:
    """Distance between the perturbed and unperturbed states as τ shrinks.

    The perturbed state is pulled back by node identification. Per τ the
    report holds ‖u̇^τ-u̇‖²_{L∞L²}, ‖∇(u^τ-u)‖²_{L∞L²}, ‖∇(u̇^τ-u̇)‖²_{L²L²},
    ‖∇(u̇^τ-u̇)‖^{q+1}_{L^{q+1}L^{q+1}}, their sum over τ (``holder_ratio``)
    and the unsquared triple over τ (``lipschitz_ratio``). All norms are
    taken on the unperturbed mesh.
    """
    taus = sorted((float(t) for t in taus), reverse=True)
    if not taus or any(t <= 0 for t in taus):
        raise ValueError("taus must be positive")
    state = state or problem.solve()
    space = P1Space(problem.mesh)
    q = problem.params.q
    weights = problem.grid.trapezoid_weights()

    def solve(tau: float) -> StateTrajectory:
        return _perturbed_state(problem, h, tau)[1]

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            perturbed = list(pool.map(solve, taus))
    else:
        perturbed = [solve(t) for t in taus]

    entries = []
    for tau, other in zip(taus, perturbed, strict=True):
        du = other.u - state.u
        dv = other.v - state.v
        grad_du = regularized_norm(space.element_gradients(du))
        grad_dv = regularized_norm(space.element_gradients(dv))
        n1 = float(((dv**2) @ space.mass).max())
        n2 = float((grad_du**2 @ space.areas).max())
        n3 = float(weights @ (grad_dv**2 @ space.areas))
        n4 = float(weights @ (grad_dv ** (q + 1) @ space.areas))
        combined = n1 + n2 + n3 + n4
        entries.append(
            ContinuityEntry(
                tau=tau,
                du_linf_l2_sq=n1,
                grad_u_linf_l2_sq=n2,
                grad_du_l2_l2_sq=n3,
                grad_du_lq1=n4,
                combined=combined,
                holder_ratio=combined / tau,
                lipschitz_ratio=(math.sqrt(n1) + math.sqrt(n2) + math.sqrt(n3)) / tau,
            )
        )

    holder = [e.holder_ratio for e in entries]
    lipschitz = [e.lipschitz_ratio for e in entries]
    decreasing = all(b <= a for a, b in zip(holder, holder[1:], strict=False))
    spread = max(lipschitz) / min(lipschitz) if min(lipschitz) > 0 else 1.0
    slope = None
    sizes = [e.lipschitz_ratio * e.tau for e in entries]
    if len(entries) > 1 and min(sizes) > 0:
        slope = float(np.polyfit(np.log(taus), np.log(sizes), 1)[0])
    return ContinuityReport(
        entries=entries,
        holder_decreasing=decreasing,
        lipschitz_spread=spread,
        scaling_slope=slope,
    )
