"""TOML run configuration.

A run is described by one TOML file. Sections map one-to-one onto the models
below; anything not given falls back to the documented defaults. Parsing
reports every violation at once: pydantic field errors first, then the
cross-field checks (referenced files, gradient hypotheses, target mode).
"""

import hashlib
import re
import tomllib
from pathlib import Path
from typing import Any, Literal

import structlog
import tomli_w
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from .errors import ConfigParseError, ConfigValidationError
from .models import (
    DomainSpec,
    LensSpec,
    MaterialParams,
    OptimizerOptions,
    ProfileSpec,
    SolverOptions,
    TimeGrid,
    VelocitySpec,
)

logger = structlog.get_logger(__name__)

_LINE = re.compile(r"line (\d+)")


class InitialSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    u0: ProfileSpec = Field(default_factory=ProfileSpec)
    u1: ProfileSpec = Field(default_factory=ProfileSpec)


class TargetSpec(BaseModel):
    """Where the desired pressure u_d comes from.

    ``analytic`` holds a named profile constant in time, ``imported`` reads a
    nodal trajectory CSV on the working mesh and ``from_shape`` solves the
    state on a mesh built around ``lens`` and resamples it.
    """

    model_config = ConfigDict(extra="forbid")

    mode: Literal["analytic", "imported", "from_shape"] = "from_shape"
    profile: ProfileSpec | None = None
    file: str | None = None
    lens: LensSpec | None = None


class GradientSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    enabled: bool = True
    boundary: bool = False
    continuity: bool = False
    fd_taus: list[float] = Field(default_factory=lambda: [1e-2, 5e-3, 2.5e-3])
    adjoint_scheme: Literal["discrete", "continuous"] = "discrete"
    velocity: VelocitySpec = Field(default_factory=VelocitySpec)


class OutputSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    directory: str | None = Field(None, description="Defaults to output_root/<command>")
    formats: list[Literal["csv", "vtk"]] = Field(default_factory=lambda: ["csv"])
    export_every: int = Field(1, ge=1, description="Export every n-th time step")


class RunConfig(BaseModel):
    """Validated contents of one run configuration file."""

    model_config = ConfigDict(extra="forbid")

    seed: int = 0
    domain: DomainSpec = Field(default_factory=DomainSpec)
    materials: MaterialParams
    time: TimeGrid
    initial: InitialSpec = Field(default_factory=InitialSpec)
    target: TargetSpec = Field(default_factory=TargetSpec)
    solver: SolverOptions = Field(default_factory=SolverOptions)
    gradient: GradientSpec = Field(default_factory=GradientSpec)
    optimizer: OptimizerOptions = Field(default_factory=OptimizerOptions)
    output: OutputSpec = Field(default_factory=OutputSpec)
    base_dir: Path = Field(default=Path("."), exclude=True)

    def resolve(self, relative: str) -> Path:
        """Resolve a path from the config relative to the config file."""
        path = Path(relative)
        return path if path.is_absolute() else self.base_dir / path


def _format_error(error: Any) -> str:
    location = ".".join(str(part) for part in error["loc"]) or "<root>"
    message = str(error["msg"]).removeprefix("Value error, ")
    return f"{location}: {message}"


def _cross_check(config: RunConfig) -> list[str]:
    problems = []
    if (
        config.gradient.enabled
        and config.solver.eps_reg == 0.0
        and config.materials.q <= 2.0
    ):
        problems.append(
            "materials.q: q > 2 is required for the shape derivative when "
            "solver.eps_reg = 0"
        )
    if config.gradient.boundary and config.domain.lens.shape == "none":
        problems.append("gradient.boundary: the interface form needs a lens")
    if any(tau <= 0 for tau in config.gradient.fd_taus):
        problems.append("gradient.fd_taus: step sizes must be positive")

    target = config.target
    if target.mode == "analytic" and target.profile is None:
        problems.append("target.profile: analytic targets need a profile")
    if target.mode == "imported" and not target.file:
        problems.append("target.file: imported targets need a file")

    files = {
        "initial.u0.file": config.initial.u0.file,
        "initial.u1.file": config.initial.u1.file,
        "target.file": target.file if target.mode == "imported" else None,
        "target.profile.file": target.profile.file if target.profile else None,
        "gradient.velocity.file": config.gradient.velocity.file,
    }
    for key, name in files.items():
        if name and not config.resolve(name).is_file():
            problems.append(f"{key}: file {name!r} does not exist")
    return problems


def parse_config_text(text: str, base_dir: Path | None = None) -> RunConfig:
    """Parse and validate TOML text.

    Raises:
        ConfigParseError: the text is not valid TOML.
        ConfigValidationError: listing every violated invariant.
    """
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        line = getattr(exc, "lineno", None)
        if line is None:
            match = _LINE.search(str(exc))
            line = int(match.group(1)) if match else None
        raise ConfigParseError(str(exc), line=line) from None

    raw["base_dir"] = base_dir or Path(".")
    try:
        config = RunConfig.model_validate(raw)
    except ValidationError as exc:
        raise ConfigValidationError([_format_error(e) for e in exc.errors()]) from None

    problems = _cross_check(config)
    if problems:
        raise ConfigValidationError(problems)
    return config


def parse_config(path: Path) -> RunConfig:
    """Read and validate a run configuration file."""
    path = Path(path)
    logger.info("runconfig.parse", path=str(path))
    return parse_config_text(path.read_text(encoding="utf-8"), base_dir=path.parent)


def serialize_config(config: RunConfig) -> str:
    """Canonical TOML text; parsing it again yields an equal config."""
    data = config.model_dump(mode="json", by_alias=True, exclude_none=True)
    return tomli_w.dumps(data)


def config_digest(config: RunConfig) -> str:
    return hashlib.sha256(serialize_config(config).encode("utf-8")).hexdigest()
