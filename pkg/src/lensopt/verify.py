"""Oracle and invariant suite behind ``lensopt verify``.

Required checks decide the exit status; advisory checks are reported with
their measured values but never fail a run.
"""

import math
from dataclasses import dataclass, field, replace

import numpy as np
import structlog

from .adjoint import adjoint_gap, apply_adjoint_operator, smallness_report, solve_adjoint
from .config import Settings, get_settings
from .errors import LensOptError
from .fem import P1Space
from .geometry import VelocityField, check_admissible, transform_factors
from .models import (
    CheckResult,
    ShapeGradientReport,
    VerificationSummary,
)
from .qlaplace import (
    flux,
    inequality_oracles,
    regularized_norm,
    repr_formula_residual,
    young_constant,
    young_constant_numeric,
)
from .runconfig import RunConfig
from .shape_gradient import (
    ShapeProblem,
    boundary_form_terms,
    continuity_diagnostics,
    fd_oracle,
    relative_error,
    volume_form_terms,
    volume_tensors,
)
from .state import (
    StateTrajectory,
    cost_gradient,
    degeneracy_margin,
    energy_report,
    linear_energy,
)

logger = structlog.get_logger(__name__)

_DEGENERACY_THRESHOLD = 0.9
_ANNIHILATION_ADJOINT = 1e-10
_ANNIHILATION_GRADIENT = 1e-8
_TRANSFORM_STEP = 1e-4


@dataclass
class VerificationOutcome:
    summary: VerificationSummary
    gradients: list[ShapeGradientReport] = field(default_factory=list)


def _check(
    name: str,
    passed: bool,
    value: float | None = None,
    threshold: float | None = None,
    *,
    required: bool = True,
    detail: str = "",
) -> CheckResult:
    return CheckResult(
        name=name,
        passed=bool(passed),
        required=required,
        value=value,
        threshold=threshold,
        detail=detail,
    )


def kernel_checks(q: float, seed: int = 0) -> list[CheckResult]:
    """Representation formula, monotonicity, antipodal equality and Young."""
    rng = np.random.default_rng(seed)
    checks = []

    worst = 0.0
    for power in sorted({2.5, 3.0, 4.0, q} if q > 2 else {2.5, 3.0, 4.0}):
        x = rng.standard_normal((10_000, 2))
        y = rng.standard_normal((10_000, 2))
        worst = max(worst, float(np.max(repr_formula_residual(x, y, power, n_quad=64))))
    checks.append(_check("kernel.representation_formula", worst <= 1e-8, worst, 1e-8))

    slack = math.inf
    monotone = True
    for power in (1.0, 2.0, 3.0, 4.0):
        x = rng.standard_normal((100_000, 2))
        y = rng.standard_normal((100_000, 2))
        report = inequality_oracles(x, y, power, eta=0.5)
        monotone = monotone and report.monotonicity_ok
        slack = min(slack, report.monotonicity_slack)
    checks.append(_check("kernel.monotonicity", monotone, slack, -1e-12))

    # y = -x attains (a(x) - a(y))·(x - y) = 2^{1-q}|x - y|^{q+1}
    x = rng.standard_normal((100, 2))
    lhs = np.sum((flux(x, 3.0) - flux(-x, 3.0)) * (2.0 * x), axis=-1)
    rhs = 2.0**-2 * regularized_norm(2.0 * x) ** 4
    gap = float(np.max(np.abs(lhs - rhs) / np.maximum(1.0, rhs)))
    checks.append(_check("kernel.antipodal_equality", gap <= 1e-12, gap, 1e-12))

    young_gap = 0.0
    for eps, r in zip(rng.uniform(0.05, 5.0, 100), rng.uniform(1.2, 5.0, 100), strict=True):
        exact = young_constant(float(eps), float(r))
        young_gap = max(
            young_gap,
            abs(exact - young_constant_numeric(float(eps), float(r))) / max(1.0, exact),
        )
    checks.append(_check("kernel.young_constant", young_gap <= 1e-8, young_gap, 1e-8))
    return checks


def transform_checks(problem: ShapeProblem, h: VelocityField) -> list[CheckResult]:
    """Central differences of I_τ and A_τ at τ = 0."""
    tau = _TRANSFORM_STEP
    plus = transform_factors(problem.mesh, h, tau)
    minus = transform_factors(problem.mesh, h, -tau)
    scale = max(1.0, float(np.abs(h.gradients).max(initial=0.0)))
    det_rate = (plus.determinants - minus.determinants) / (2 * tau)
    det_gap = float(np.abs(det_rate - h.divergence).max(initial=0.0)) / scale
    inv_rate = (plus.inverse_transposes - minus.inverse_transposes) / (2 * tau)
    inv_gap = float(
        np.abs(inv_rate + h.gradients.transpose(0, 2, 1)).max(initial=0.0)
    ) / scale
    # I_τ is quadratic in τ and A_τ has an O(τ²) central-difference error
    return [
        _check("transform.determinant_rate", det_gap <= 1e-8, det_gap, 1e-8),
        _check("transform.inverse_transpose_rate", inv_gap <= 1e-6, inv_gap, 1e-6),
    ]


def run_verification(
    problem: ShapeProblem,
    fields: list[VelocityField],
    config: RunConfig,
    settings: Settings | None = None,
    threads: int = 1,
) -> VerificationOutcome:
    """Run every oracle on the configured problem.

    A failed perturbed solve in the finite-difference sweep becomes a failed
    check; failures of the unperturbed solves propagate.
    """
    settings = settings or get_settings()
    mesh, params = problem.mesh, problem.params
    checks: list[CheckResult] = []
    gradients: list[ShapeGradientReport] = []

    admissibility = check_admissible(mesh)
    checks.append(
        _check(
            "geometry.admissible",
            admissibility.passed,
            admissibility.max_turning_angle_deg,
            admissibility.lipschitz_bound_deg,
            detail=str(admissibility),
        )
    )
    checks.extend(kernel_checks(params.q, config.seed))
    if fields:
        checks.extend(transform_checks(problem, fields[0]))

    state = problem.solve()
    degeneracy = degeneracy_margin(mesh, state, params)
    checks.append(
        _check(
            "state.degeneracy",
            degeneracy.passed and degeneracy.min_factor > _DEGENERACY_THRESHOLD,
            degeneracy.min_factor,
            _DEGENERACY_THRESHOLD,
            detail=f"a0={degeneracy.a0:.3e}",
        )
    )
    bounds = energy_report(mesh, state, params)
    checks.append(
        _check("state.energy_finite", bounds.finite, bounds.ratio, detail="lhs/data ratio")
    )
    if params.k_max == 0.0:
        energy = linear_energy(mesh, state, params)
        growth = float(np.max(np.diff(energy), initial=0.0))
        checks.append(
            _check("state.energy_decay", growth <= 1e-12 * max(1.0, energy[0]), growth, 0.0)
        )

    adjoint = solve_adjoint(
        mesh,
        params,
        state,
        problem.u_d,
        options=problem.options,
        scheme=config.gradient.adjoint_scheme,
    )
    if config.gradient.adjoint_scheme == "discrete":
        free = P1Space(mesh).free
        rows_u, rows_v = apply_adjoint_operator(
            mesh, params, state, adjoint.mu[:, free], adjoint.p_mid[:, free], problem.options
        )
        source = cost_gradient(mesh, state, problem.u_d)[1:, free]
        scale = max(1.0, float(np.abs(source).max(initial=0.0)))
        residual = max(
            float(np.abs(rows_u - source).max(initial=0.0)),
            float(np.abs(rows_v).max(initial=0.0)),
        ) / scale
        checks.append(_check("adjoint.transposition", residual <= 1e-9, residual, 1e-9))
    other = solve_adjoint(
        mesh,
        params,
        state,
        problem.u_d,
        options=problem.options,
        scheme="continuous" if adjoint.scheme == "discrete" else "discrete",
    )
    gap = adjoint_gap(mesh, other, adjoint)
    checks.append(
        _check("adjoint.scheme_gap", math.isfinite(gap), gap, required=False)
    )
    smallness = smallness_report(mesh, state, params, bounds)
    checks.append(
        _check(
            "adjoint.smallness",
            all(smallness.satisfied),
            min(smallness.margins),
            0.0,
            required=False,
        )
    )

    checks.extend(_annihilation(problem, state, fields))

    tensors = volume_tensors(mesh, params, state, adjoint, problem.u_d, problem.options)
    base_cost = problem.cost(state)
    for index, h in enumerate(fields):
        terms = volume_form_terms(
            mesh, params, state, adjoint, problem.u_d, h, problem.options, tensors
        )
        report = ShapeGradientReport(
            dj_volume=math.fsum(terms.values()), volume_terms=terms
        )
        if config.gradient.boundary and len(mesh.interface_edges):
            report.boundary_terms = boundary_form_terms(
                mesh, params, state, adjoint, h, problem.options
            )
            report.dj_boundary = math.fsum(report.boundary_terms.values())
            report.volume_boundary_gap = relative_error(
                report.dj_volume, report.dj_boundary, settings.fd_eps_abs
            )
            checks.append(
                _check(
                    f"gradient[{index}].volume_boundary",
                    report.volume_boundary_gap <= settings.volume_boundary_tolerance,
                    report.volume_boundary_gap,
                    settings.volume_boundary_tolerance,
                    required=False,
                )
            )
        if config.gradient.fd_taus:
            try:
                report.fd = fd_oracle(
                    problem, h, config.gradient.fd_taus, threads=threads, cost=base_cost
                )
            except LensOptError as exc:
                checks.append(
                    _check(f"gradient[{index}].fd_agreement", False, detail=str(exc))
                )
            else:
                checks.extend(_fd_checks(index, report, settings))
        if config.gradient.continuity and config.gradient.fd_taus:
            continuity = continuity_diagnostics(
                problem, h, config.gradient.fd_taus, threads=threads, state=state
            )
            checks.append(
                _check(
                    f"gradient[{index}].continuity",
                    continuity.holder_decreasing and continuity.lipschitz_spread <= 2.0,
                    continuity.lipschitz_spread,
                    2.0,
                    required=False,
                )
            )
        gradients.append(report)

    summary = VerificationSummary(checks=checks)
    logger.info(
        "verify.finished",
        passed=summary.passed,
        failed=[c.name for c in checks if c.required and not c.passed],
    )
    return VerificationOutcome(summary=summary, gradients=gradients)


def _fd_checks(
    index: int, report: ShapeGradientReport, settings: Settings
) -> list[CheckResult]:
    assert report.fd is not None
    dj = report.dj_volume
    report.fd_relative_error = relative_error(dj, report.fd.plateau, settings.fd_eps_abs)
    ordered = sorted(report.fd.slopes, key=lambda s: s.tau)
    small = abs(ordered[0].central - dj)
    large = abs(ordered[-1].central - dj)
    floor = 1e-8 * max(abs(dj), settings.fd_eps_abs)
    order_ok = len(ordered) < 2 or small <= 0.5 * large or small <= floor
    return [
        _check(
            f"gradient[{index}].fd_agreement",
            report.fd_relative_error <= settings.fd_tolerance,
            report.fd_relative_error,
            settings.fd_tolerance,
        ),
        _check(
            f"gradient[{index}].fd_order",
            order_ok,
            small,
            0.5 * large,
            detail="central error at smallest vs largest tau",
        ),
    ]


def _annihilation(
    problem: ShapeProblem, state: StateTrajectory, fields: list[VelocityField]
) -> list[CheckResult]:
    """With u_d = u the adjoint and every dJ·h vanish."""
    tracked = replace(problem, u_d=state.u.copy())
    adjoint = solve_adjoint(
        tracked.mesh, tracked.params, state, tracked.u_d, options=tracked.options
    )
    scale = max(1.0, float(np.abs(state.u).max(initial=0.0)))
    p_size = float(np.abs(adjoint.p_mid).max(initial=0.0))
    tensors = volume_tensors(
        tracked.mesh, tracked.params, state, adjoint, tracked.u_d, tracked.options
    )
    dj = 0.0
    for h in fields:
        terms = volume_form_terms(
            tracked.mesh,
            tracked.params,
            state,
            adjoint,
            tracked.u_d,
            h,
            tracked.options,
            tensors,
        )
        dj = max(dj, abs(math.fsum(terms.values())))
    return [
        _check(
            "adjoint.annihilation",
            p_size <= _ANNIHILATION_ADJOINT * scale,
            p_size,
            _ANNIHILATION_ADJOINT * scale,
        ),
        _check(
            "gradient.annihilation",
            dj <= _ANNIHILATION_GRADIENT,
            dj,
            _ANNIHILATION_GRADIENT,
        ),
    ]
