"""Pytest configuration and fixtures for lensopt tests.

This module provides reusable fixtures for:
- Configuration and settings management
- Small meshes with and without a lens
- Material parameters and time grids sized for fast solves
- A ready-to-solve shape problem
- Run configuration files for end-to-end runs
"""

from pathlib import Path
from typing import Any

import numpy as np
import pytest

from lensopt.config import Settings
from lensopt.geometry import Mesh2D, build_mesh, structured_mesh
from lensopt.helpers import bump
from lensopt.models import (
    DomainSpec,
    LensSpec,
    MaterialParams,
    SolverOptions,
    SubdomainParams,
    TimeGrid,
)
from lensopt.shape_gradient import ShapeProblem

UNIT_SQUARE = [0.0, 1.0, 0.0, 1.0]

# ============================================================================
# CONFIGURATION FIXTURES
# ============================================================================


@pytest.fixture
def test_settings(tmp_path: Path) -> Settings:
    """Create test settings writing into a temporary directory."""
    return Settings(
        log_level="DEBUG",
        output_root=tmp_path / "runs",
        default_threads=1,
        metrics_textfile=True,
    )


@pytest.fixture(autouse=True)
def override_settings(monkeypatch: Any, tmp_path: Path) -> None:
    """Override global settings for all tests.

    Automatically applied to every test to ensure consistent environment.
    Clears settings cache before and after to prevent cross-test contamination.
    """
    from lensopt.config import get_settings

    monkeypatch.setenv("LOG_LEVEL", "WARNING")
    monkeypatch.setenv("OUTPUT_ROOT", str(tmp_path / "runs"))
    monkeypatch.setenv("DEFAULT_THREADS", "1")
    monkeypatch.setenv("METRICS_TEXTFILE", "true")

    get_settings.cache_clear()

    yield

    get_settings.cache_clear()


# ============================================================================
# MESH FIXTURES
# ============================================================================


@pytest.fixture
def square_mesh() -> Mesh2D:
    """4x4 structured mesh of the unit square, no lens."""
    return structured_mesh(UNIT_SQUARE, 4, 4)


@pytest.fixture
def fine_square_mesh() -> Mesh2D:
    """16x16 structured mesh of the unit square, no lens."""
    return structured_mesh(UNIT_SQUARE, 16, 16)


@pytest.fixture
def lens_domain() -> DomainSpec:
    return DomainSpec(extent=UNIT_SQUARE, h_mesh=1.0 / 8.0, lens=LensSpec(radius=0.2))


@pytest.fixture
def lens_mesh(lens_domain: DomainSpec) -> Mesh2D:
    """Unit square with a fitted circular lens of radius 0.2, h = 1/8."""
    return build_mesh(lens_domain)


# ============================================================================
# MATERIAL AND GRID FIXTURES
# ============================================================================


@pytest.fixture
def fluid() -> SubdomainParams:
    return SubdomainParams(lam=1.0, k=0.1, rho=1.0, b=0.02, delta=0.5)


@pytest.fixture
def lens_material() -> SubdomainParams:
    return SubdomainParams(lam=2.0, k=0.05, rho=1.5, b=0.03, delta=0.4)


@pytest.fixture
def materials(lens_material: SubdomainParams, fluid: SubdomainParams) -> MaterialParams:
    """Contrasting lens and fluid with cubic damping."""
    return MaterialParams(lens=lens_material, fluid=fluid, q=3.0)


@pytest.fixture
def linear_material() -> SubdomainParams:
    """k = 0 material for modal comparisons."""
    return SubdomainParams(lam=1.0, k=0.0, rho=1.0, b=0.05, delta=0.5)


@pytest.fixture
def short_grid() -> TimeGrid:
    return TimeGrid(final_time=0.25, steps=16)


@pytest.fixture
def solver_options() -> SolverOptions:
    return SolverOptions(eps_reg=1e-8)


# ============================================================================
# PROBLEM FIXTURES
# ============================================================================


@pytest.fixture
def initial_pressure(lens_mesh: Mesh2D) -> np.ndarray:
    """Off-centre bump so the state crosses the interface."""
    values = 0.1 * bump(lens_mesh, [0.4, 0.5], 0.3)
    values[lens_mesh.boundary_nodes] = 0.0
    return values


@pytest.fixture
def shape_problem(
    lens_mesh: Mesh2D,
    materials: MaterialParams,
    short_grid: TimeGrid,
    initial_pressure: np.ndarray,
    solver_options: SolverOptions,
) -> ShapeProblem:
    """Tracking problem with u_d = 0, so J = ∫∫u²."""
    return ShapeProblem(
        mesh=lens_mesh,
        params=materials,
        grid=short_grid,
        u0=initial_pressure,
        u1=np.zeros(lens_mesh.n_nodes),
        u_d=np.zeros(lens_mesh.n_nodes),
        options=solver_options,
    )


# ============================================================================
# RUN CONFIGURATION FIXTURES
# ============================================================================

SMALL_CONFIG = """\
seed = 7

[domain]
extent = [0.0, 1.0, 0.0, 1.0]
h_mesh = 0.125

[domain.lens]
shape = "circle"
center = [0.5, 0.5]
radius = 0.2

[materials]
q = 3.0

[materials.lens]
lambda = 2.0
k = 0.05
rho = 1.5
b = 0.03
delta = 0.4

[materials.fluid]
lambda = 1.0
k = 0.1
rho = 1.0
b = 0.02
delta = 0.5

[time]
final_time = 0.25
steps = 8

[initial.u0]
profile = "bump"
amplitude = 0.1
center = [0.4, 0.5]
width = 0.3

[target]
mode = "analytic"

[target.profile]
profile = "zero"

[gradient]
fd_taus = [0.01, 0.005]

[gradient.velocity]
kind = "random"
count = 1
"""


@pytest.fixture
def config_text() -> str:
    return SMALL_CONFIG


@pytest.fixture
def config_file(tmp_path: Path) -> Path:
    """Small run configuration written to disk."""
    path = tmp_path / "run.toml"
    path.write_text(SMALL_CONFIG, encoding="utf-8")
    return path
