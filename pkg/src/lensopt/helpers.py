"""Analytic profiles, reference solutions and test velocity fields.

These are the inputs of verification runs: initial data and targets built
from named profiles, the modal solution of the linear damped wave equation
used as an analytic reference, and smooth deformation directions that vanish
on the outer boundary.
"""

import cmath
import math
from pathlib import Path

import numpy as np
from numpy.typing import NDArray

from .errors import FieldFormatError, InvalidVelocityField
from .fieldio import read_csv
from .geometry import Mesh2D, VelocityField, velocity_field, zero_field
from .models import ProfileSpec, SubdomainParams, VelocitySpec


def _unit_coordinates(
    mesh: Mesh2D, extent: list[float]
) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    x0, x1, y0, y1 = extent
    xs = (mesh.vertices[:, 0] - x0) / (x1 - x0)
    ys = (mesh.vertices[:, 1] - y0) / (y1 - y0)
    return xs, ys


def _resolve(path: str, base_dir: Path | None) -> Path:
    candidate = Path(path)
    if base_dir is not None and not candidate.is_absolute():
        candidate = base_dir / candidate
    return candidate


def eigenmode(
    mesh: Mesh2D, extent: list[float], modes: tuple[int, int] | list[int] = (1, 1)
) -> NDArray[np.float64]:
    """sin(mπξ) sin(nπη) on the rectangle in unit coordinates (ξ, η)."""
    m, n = modes
    xs, ys = _unit_coordinates(mesh, extent)
    values = np.sin(m * np.pi * xs) * np.sin(n * np.pi * ys)
    values[mesh.boundary_nodes] = 0.0
    return values


def bump(
    mesh: Mesh2D, center: list[float], width: float
) -> NDArray[np.float64]:
    """cos²(πr/(2w)) for r < w, zero outside."""
    r = np.hypot(mesh.vertices[:, 0] - center[0], mesh.vertices[:, 1] - center[1])
    return np.where(r < width, np.cos(0.5 * np.pi * r / width) ** 2, 0.0)


def evaluate_profile(
    mesh: Mesh2D,
    spec: ProfileSpec,
    extent: list[float],
    base_dir: Path | None = None,
) -> NDArray[np.float64]:
    """Nodal values of a named profile, scaled by ``spec.amplitude``."""
    if spec.profile == "zero":
        return np.zeros(mesh.n_nodes)
    if spec.profile == "eigenmode":
        return spec.amplitude * eigenmode(mesh, extent, spec.modes)
    if spec.profile == "bump":
        values = spec.amplitude * bump(mesh, spec.center, spec.width)
        values[mesh.boundary_nodes] = 0.0
        return values
    assert spec.file is not None
    steps, data = read_csv(_resolve(spec.file, base_dir), mesh)
    if spec.step not in steps or data.ndim != 2:
        raise FieldFormatError("profile file has no such scalar step", step=spec.step)
    return spec.amplitude * data[steps.index(spec.step)]


def continuous_eigenvalue(extent: list[float], modes: tuple[int, int] | list[int] = (1, 1)) -> float:
    """π²(m²/W² + n²/H²)."""
    m, n = modes
    width, height = extent[1] - extent[0], extent[3] - extent[2]
    return math.pi**2 * ((m / width) ** 2 + (n / height) ** 2)


def discrete_eigenvalue(
    extent: list[float], nx: int, ny: int, modes: tuple[int, int] | list[int] = (1, 1)
) -> float:
    """Eigenvalue of the lumped P1 Laplacian on the structured mesh.

    The diagonal split reproduces the five-point stencil, so the sampled
    eigenmode is an exact discrete eigenvector with
    κ_h = 4 sin²(mπ/(2nx))/hx² + 4 sin²(nπ/(2ny))/hy².
    """
    m, n = modes
    hx = (extent[1] - extent[0]) / nx
    hy = (extent[3] - extent[2]) / ny
    return (
        4.0 * math.sin(m * math.pi / (2 * nx)) ** 2 / hx**2
        + 4.0 * math.sin(n * math.pi / (2 * ny)) ** 2 / hy**2
    )


def modal_solution(
    times: NDArray[np.float64],
    kappa: float,
    material: SubdomainParams,
    mu0: float,
    mu1: float,
) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """Amplitude μ(t) and rate μ̇(t) of u = μ(t)φ for -Δφ = κφ.

    With k = 0 and linear damping the equation reduces to
    μ̈ + βμ̇ + ω²μ = 0, β = κλb, ω² = κλ/ϱ, started from μ(0) = μ₀ and
    μ̇(0) = μ₁.
    """
    times = np.asarray(times, dtype=float)
    beta = kappa * material.lam * material.b
    omega_sq = kappa * material.lam / material.rho
    root = cmath.sqrt(beta**2 - 4.0 * omega_sq)
    r1 = 0.5 * (-beta + root)
    r2 = 0.5 * (-beta - root)

    if abs(root) <= 1e-12 * max(1.0, beta):
        r = complex(-0.5 * beta)
        c = mu1 - r * mu0
        e = np.exp(r * times)
        mu = (mu0 + c * times) * e
        dmu = (c + r * (mu0 + c * times)) * e
    else:
        c1 = (mu1 - r2 * mu0) / (r1 - r2)
        c2 = mu0 - c1
        e1, e2 = np.exp(r1 * times), np.exp(r2 * times)
        mu = c1 * e1 + c2 * e2
        dmu = r1 * c1 * e1 + r2 * c2 * e2
    return np.real(mu), np.real(dmu)


# ============================================================================
# VELOCITY FIELDS
# ============================================================================


def random_velocity_field(
    mesh: Mesh2D,
    extent: list[float],
    rng: np.random.Generator,
    amplitude: float = 0.05,
    modes: int = 3,
) -> VelocityField:
    """Seeded sine series in each component, max |h| scaled to ``amplitude``.

    Coefficients decay like 1/(i² + j²) so the field stays smooth.
    """
    xs, ys = _unit_coordinates(mesh, extent)
    orders = np.arange(1, modes + 1)
    sx = np.sin(np.pi * np.outer(xs, orders))
    sy = np.sin(np.pi * np.outer(ys, orders))
    decay = 1.0 / (orders[:, None] ** 2 + orders[None, :] ** 2)
    values = np.zeros((mesh.n_nodes, 2))
    for component in range(2):
        coefficients = rng.standard_normal((modes, modes)) * decay
        values[:, component] = np.einsum("ni,ij,nj->n", sx, coefficients, sy)
    values[mesh.boundary_nodes] = 0.0
    peak = float(np.abs(values).max())
    if peak > 0:
        values *= amplitude / peak
    return velocity_field(mesh, values)


def bump_velocity_field(
    mesh: Mesh2D, center: list[float], radius: float, amplitude: float = 0.05
) -> VelocityField:
    """Radial field (x - c) cos²(π|x - c|/(2R)), zero outside radius R.

    Around a circular lens centred at c this moves the interface along its
    normal.

    Raises:
        InvalidVelocityField: the support reaches the outer boundary.
    """
    offset = mesh.vertices - np.asarray(center, dtype=float)
    r = np.hypot(offset[:, 0], offset[:, 1])
    weight = np.where(r < radius, np.cos(0.5 * np.pi * r / radius) ** 2, 0.0)
    return velocity_field(mesh, amplitude * weight[:, None] * offset / radius)


def make_velocity_fields(
    mesh: Mesh2D,
    spec: VelocitySpec,
    extent: list[float],
    seed: int = 0,
    center: list[float] | None = None,
    base_dir: Path | None = None,
) -> list[VelocityField]:
    """Build the deformation directions a gradient or verify run checks."""
    if spec.kind == "zero":
        return [zero_field(mesh)]
    if spec.kind == "random":
        rng = np.random.default_rng(seed)
        return [
            random_velocity_field(mesh, extent, rng, spec.amplitude, spec.modes)
            for _ in range(spec.count)
        ]
    if spec.kind == "bump":
        if center is None:
            center = [0.5 * (extent[0] + extent[1]), 0.5 * (extent[2] + extent[3])]
        return [bump_velocity_field(mesh, center, spec.radius, spec.amplitude)]
    assert spec.file is not None
    steps, data = read_csv(_resolve(spec.file, base_dir), mesh)
    if data.ndim != 3:
        raise InvalidVelocityField("velocity file must hold value and value_y columns")
    return [velocity_field(mesh, data[s]) for s in range(len(steps))]
