"""Pydantic models for material data, options and reports."""

import math
from enum import IntEnum
from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


class Label(IntEnum):
    """Subdomain label of a triangle."""

    FLUID = 0
    LENS = 1


# ============================================================================
# PHYSICAL INPUT
# ============================================================================


class SubdomainParams(BaseModel):
    """Constant coefficients on one subdomain."""

    model_config = ConfigDict(frozen=True, populate_by_name=True)

    lam: float = Field(..., alias="lambda", description="Bulk modulus λ")
    k: float = Field(0.0, description="Nonlinearity k = β_a/λ")
    rho: float = Field(..., description="Mass density ϱ")
    b: float = Field(..., description="Diffusivity over bulk modulus")
    delta: float = Field(..., description="Damping mix δ")

    @field_validator("lam", "rho", "b")
    @classmethod
    def _positive(cls, value: float) -> float:
        if not value > 0 or not math.isfinite(value):
            raise ValueError("must be positive and finite (λ, ϱ, b > 0)")
        return value

    @field_validator("delta")
    @classmethod
    def _unit_interval(cls, value: float) -> float:
        if not 0.0 < value < 1.0:
            raise ValueError("δ ∈ (0,1) is required for the damping mix")
        return value

    @property
    def sound_speed(self) -> float:
        """c = sqrt(λ/ϱ)."""
        return math.sqrt(self.lam / self.rho)

    @classmethod
    def from_acoustics(
        cls,
        lam: float,
        rho: float,
        b: float,
        delta: float,
        nonlinearity_ratio: float = 0.0,
    ) -> "SubdomainParams":
        """Build from the parameter of nonlinearity B/A.

        β_a = 1 + B/(2A) and k = β_a/λ, with ``nonlinearity_ratio`` = B/A.
        """
        beta_a = 1.0 + nonlinearity_ratio / 2.0
        return cls(lam=lam, k=beta_a / lam, rho=rho, b=b, delta=delta)


class MaterialParams(BaseModel):
    """Coefficients of both subdomains plus the damping exponent."""

    model_config = ConfigDict(frozen=True)

    lens: SubdomainParams
    fluid: SubdomainParams
    q: float = Field(3.0, ge=1.0, description="Damping exponent q ≥ 1")

    def for_label(self, label: Label | int) -> SubdomainParams:
        return self.lens if int(label) == Label.LENS else self.fluid

    @classmethod
    def homogeneous(cls, params: SubdomainParams, q: float) -> "MaterialParams":
        return cls(lens=params, fluid=params, q=q)

    @property
    def k_max(self) -> float:
        return max(abs(self.lens.k), abs(self.fluid.k))


class TimeGrid(BaseModel):
    """Uniform time grid on [0, T]."""

    model_config = ConfigDict(frozen=True)

    final_time: float = Field(..., gt=0, description="Final time T")
    steps: int = Field(..., ge=2, description="Number of steps N")

    @property
    def dt(self) -> float:
        return self.final_time / self.steps

    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.final_time, self.steps + 1)

    def trapezoid_weights(self) -> np.ndarray:
        weights = np.full(self.steps + 1, self.dt)
        weights[0] = weights[-1] = 0.5 * self.dt
        return weights


class RegularizedNorm(BaseModel):
    """|g|_ε = sqrt(|g|² + ε²)."""

    model_config = ConfigDict(frozen=True)

    eps_reg: float = Field(0.0, ge=0.0)

    def norm(self, g: np.ndarray) -> np.ndarray:
        g = np.asarray(g, dtype=float)
        return np.sqrt(np.sum(g * g, axis=-1) + self.eps_reg**2)


class SolverOptions(BaseModel):
    """Tolerances of the nonlinear state solve."""

    model_config = ConfigDict(frozen=True)

    eps_reg: float = Field(1e-8, ge=0.0, description="Flux regularisation ε")
    newton_atol: float = Field(1e-10, gt=0)
    newton_rtol: float = Field(1e-12, gt=0)
    max_iterations: int = Field(30, ge=1)
    degeneracy_floor: float = Field(0.1, gt=0, lt=1)
    fallback_damping: float = Field(0.5, gt=0, le=1)


class OptimizerOptions(BaseModel):
    """Descent loop and line-search controls."""

    model_config = ConfigDict(frozen=True)

    max_iters: int = Field(100, ge=1)
    g_tol: float = Field(1e-6, gt=0, description="Stop when ‖h‖_H¹ < g_tol")
    tau_init: float | None = Field(None, gt=0, description="First trial step")
    c1: float = Field(1e-4, gt=0, lt=1, description="Armijo constant")
    max_halvings: int = Field(25, ge=0)
    lipschitz_bound_deg: float = Field(150.0, gt=0, le=180)
    mesh_snapshots: bool = False


# ============================================================================
# GEOMETRY INPUT
# ============================================================================


class LensSpec(BaseModel):
    """Parameterisation of the lens curve."""

    model_config = ConfigDict(frozen=True)

    shape: Literal["circle", "ellipse", "polygon", "none"] = "circle"
    center: list[float] = Field(default_factory=lambda: [0.5, 0.5])
    radius: float = Field(0.2, gt=0)
    semi_axes: list[float] = Field(default_factory=lambda: [0.25, 0.15])
    angle: float = Field(0.0, description="Ellipse rotation in radians")
    points: list[list[float]] = Field(default_factory=list)

    @model_validator(mode="after")
    def _check_shape(self) -> "LensSpec":
        if len(self.center) != 2:
            raise ValueError("lens center needs two coordinates")
        if len(self.semi_axes) != 2 or min(self.semi_axes) <= 0:
            raise ValueError("ellipse semi_axes need two positive values")
        if self.shape == "polygon":
            if len(self.points) < 3 or any(len(p) != 2 for p in self.points):
                raise ValueError("polygon lens needs at least three [x, y] points")
        return self


class DomainSpec(BaseModel):
    """Rectangle, lens and resolution."""

    model_config = ConfigDict(frozen=True)

    extent: list[float] = Field(
        default_factory=lambda: [0.0, 1.0, 0.0, 1.0],
        description="[x_min, x_max, y_min, y_max]",
    )
    h_mesh: float = Field(1.0 / 32.0, gt=0)
    lens: LensSpec = Field(default_factory=LensSpec)

    @model_validator(mode="after")
    def _check_extent(self) -> "DomainSpec":
        if len(self.extent) != 4:
            raise ValueError("extent needs [x_min, x_max, y_min, y_max]")
        x0, x1, y0, y1 = self.extent
        if not (x1 > x0 and y1 > y0):
            raise ValueError("extent must have positive width and height")
        if self.h_mesh > min(x1 - x0, y1 - y0) / 2:
            raise ValueError("h_mesh too coarse for the rectangle")
        return self


class ProfileSpec(BaseModel):
    """Named nodal profile for initial data or an analytic target."""

    model_config = ConfigDict(frozen=True)

    profile: Literal["zero", "eigenmode", "bump", "file"] = "zero"
    amplitude: float = 1.0
    modes: list[int] = Field(default_factory=lambda: [1, 1])
    center: list[float] = Field(default_factory=lambda: [0.5, 0.5])
    width: float = Field(0.2, gt=0, description="Support radius of the bump")
    file: str | None = None
    step: int = Field(0, ge=0, description="Step read from an imported CSV")

    @model_validator(mode="after")
    def _check_profile(self) -> "ProfileSpec":
        if len(self.modes) != 2 or min(self.modes) < 1:
            raise ValueError("eigenmode needs two positive mode numbers")
        if len(self.center) != 2:
            raise ValueError("bump center needs two coordinates")
        if self.profile == "file" and not self.file:
            raise ValueError("profile 'file' needs a file")
        return self


class VelocitySpec(BaseModel):
    """Deformation directions used for gradient checks."""

    model_config = ConfigDict(frozen=True)

    kind: Literal["random", "bump", "zero", "file"] = "random"
    count: int = Field(3, ge=1, description="Number of random fields")
    amplitude: float = Field(0.05, gt=0)
    modes: int = Field(3, ge=1, description="Sine modes per direction")
    radius: float = Field(0.4, gt=0, description="Support radius of the bump")
    file: str | None = None

    @model_validator(mode="after")
    def _check_file(self) -> "VelocitySpec":
        if self.kind == "file" and not self.file:
            raise ValueError("velocity kind 'file' needs a file")
        return self


# ============================================================================
# REPORTS
# ============================================================================


class AdmissibilityReport(BaseModel):
    """Result of the admissibility diagnostic."""

    passed: bool
    lens_interior: bool
    max_turning_angle_deg: float
    lipschitz_bound_deg: float
    lipschitz_ok: bool
    min_quality: float
    min_area: float
    interface_edges: int

    def __str__(self) -> str:
        status = "pass" if self.passed else "fail"
        return (
            f"admissibility {status}: interior={self.lens_interior}, "
            f"turning={self.max_turning_angle_deg:.2f}° "
            f"(bound {self.lipschitz_bound_deg:.1f}°), "
            f"min_quality={self.min_quality:.3f}"
        )


class InequalityReport(BaseModel):
    """Outcome of the q-Laplace inequality oracles over one sample batch."""

    samples: int
    q: float
    eta: float
    bounded_by_sum_ok: bool = Field(..., description="σ-segment bound")
    bounded_by_sum_slack: float
    holder_ratio: float = Field(..., description="max LHS/core for the flux bound")
    holder_norm_ratio: float = Field(..., description="max LHS/core, power bound")
    monotonicity_ok: bool
    monotonicity_slack: float
    auxiliary_ratio: float | None = None
    auxiliary_identity_gap: float | None = None


class DegeneracyReport(BaseModel):
    a0: float
    min_factor: float
    max_factor: float
    passed: bool


class DiagnosticsBounds(BaseModel):
    """Energy and degeneracy monitors of a state trajectory."""

    a0: float = 0.0
    a0_embedding: float = 0.0
    min_degeneracy_factor: float = 1.0
    u_linf_linf_sq: float = 0.0
    ddu_l2_l2_sq: float = 0.0
    grad_du_l2_l2_sq: float = 0.0
    grad_du_lq1_lq1: float = 0.0
    du_linf_l2_sq: float = 0.0
    grad_u_linf_l2_sq: float = 0.0
    grad_du_linf_l2_sq: float = 0.0
    grad_du_linf_lq1: float = 0.0
    lhs_total: float = 0.0
    data_norm: float = 0.0
    ratio: float = 0.0
    m_bar: float = 0.0
    big_m_bar: float = 0.0
    kappa_t: float = 0.0
    poincare_surrogate: float = 0.0
    h1_l4_surrogate: float = 0.0
    w1q_linf_surrogate: float = 0.0
    grad_du_linf_linf: float = 0.0
    grad_ddu_l2_linf: float = 0.0
    energy_history: list[float] = Field(default_factory=list)

    @property
    def finite(self) -> bool:
        values = [v for v in self.model_dump().values() if isinstance(v, float)]
        return all(math.isfinite(v) for v in values)


class SmallnessReport(BaseModel):
    """Margins of the three adjoint smallness conditions (advisory)."""

    lhs: list[float]
    rhs: list[float]
    margins: list[float]
    satisfied: list[bool]


class FDSlope(BaseModel):
    tau: float
    cost_plus: float
    cost_minus: float
    one_sided: float
    central: float


class FDReport(BaseModel):
    """Finite-difference slopes of the discrete cost under deformation."""

    cost: float
    slopes: list[FDSlope]
    extrapolated: float
    plateau: float


class ContinuityEntry(BaseModel):
    tau: float
    du_linf_l2_sq: float
    grad_u_linf_l2_sq: float
    grad_du_l2_l2_sq: float
    grad_du_lq1: float
    combined: float
    holder_ratio: float
    lipschitz_ratio: float


class ContinuityReport(BaseModel):
    entries: list[ContinuityEntry]
    holder_decreasing: bool
    lipschitz_spread: float
    scaling_slope: float | None


class ShapeGradientReport(BaseModel):
    """Volume form, optional interface form, FD table and agreement."""

    dj_volume: float
    volume_terms: dict[str, float]
    dj_boundary: float | None = None
    boundary_terms: dict[str, float] | None = None
    fd: FDReport | None = None
    fd_relative_error: float | None = None
    volume_boundary_gap: float | None = None

    def __str__(self) -> str:
        lines = [f"dJ_volume = {self.dj_volume:.12e}"]
        for name, value in self.volume_terms.items():
            lines.append(f"  volume.{name} = {value:.12e}")
        if self.dj_boundary is not None:
            lines.append(f"dJ_boundary = {self.dj_boundary:.12e}")
            for name, value in (self.boundary_terms or {}).items():
                lines.append(f"  boundary.{name} = {value:.12e}")
        if self.fd is not None:
            lines.append(f"J = {self.fd.cost:.12e}")
            lines.append("tau, one_sided, central")
            for slope in self.fd.slopes:
                lines.append(
                    f"  {slope.tau:.6e}, {slope.one_sided:.12e}, {slope.central:.12e}"
                )
            lines.append(f"fd_extrapolated = {self.fd.extrapolated:.12e}")
            lines.append(f"fd_plateau = {self.fd.plateau:.12e}")
        if self.fd_relative_error is not None:
            lines.append(f"fd_relative_error = {self.fd_relative_error:.6e}")
        if self.volume_boundary_gap is not None:
            lines.append(f"volume_boundary_gap = {self.volume_boundary_gap:.6e}")
        return "\n".join(lines)


class IterationRecord(BaseModel):
    iteration: int
    cost: float
    h1_norm: float
    tau: float
    max_turning_angle_deg: float
    min_quality: float
    wall_time: float


class OptimizationHistory(BaseModel):
    records: list[IterationRecord] = Field(default_factory=list)
    status: Literal["converged", "max_iters", "line_search_exhausted"] = "max_iters"
    initial_cost: float = 0.0
    final_cost: float = 0.0

    @property
    def costs(self) -> list[float]:
        return [r.cost for r in self.records]


class CheckResult(BaseModel):
    name: str
    passed: bool
    required: bool = True
    value: float | None = None
    threshold: float | None = None
    detail: str = ""


class VerificationSummary(BaseModel):
    checks: list[CheckResult]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks if c.required)

    def __str__(self) -> str:
        lines = []
        for check in self.checks:
            mark = "PASS" if check.passed else ("FAIL" if check.required else "WARN")
            value = "" if check.value is None else f" value={check.value:.6e}"
            bound = "" if check.threshold is None else f" threshold={check.threshold:.3e}"
            lines.append(f"[{mark}] {check.name}{value}{bound} {check.detail}".rstrip())
        lines.append("overall: " + ("PASS" if self.passed else "FAIL"))
        return "\n".join(lines)


class RunManifest(BaseModel):
    """Everything needed to reproduce a run."""

    command: str
    status: Literal["success", "error"]
    config_sha256: str
    config_toml: str
    seed: int
    threads: int
    versions: dict[str, str]
    timings: dict[str, float]
    artifacts: list[str]
    started_at: str
