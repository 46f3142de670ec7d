"""Error hierarchy for lensopt.

Every failure raised by the package derives from :class:`LensOptError` so the
CLI can turn it into a machine-readable error record and a nonzero exit code.
"""

from typing import Any


class LensOptError(Exception):
    """Base class for all lensopt failures."""

    component = "lensopt"

    def __init__(self, message: str, **context: Any) -> None:
        super().__init__(message)
        self.message = message
        self.context: dict[str, Any] = context

    def to_record(self) -> dict[str, Any]:
        """Return a JSON-serialisable description of the failure."""
        return {
            "error": type(self).__name__,
            "component": self.component,
            "message": self.message,
            "context": {key: _plain(value) for key, value in self.context.items()},
        }

    def __str__(self) -> str:
        if not self.context:
            return self.message
        details = ", ".join(f"{k}={v}" for k, v in self.context.items())
        return f"{self.message} ({details})"


def _plain(value: Any) -> Any:
    if isinstance(value, (str, int, float, bool)) or value is None:
        return value
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    try:
        return float(value)
    except (TypeError, ValueError):
        return str(value)


# ============================================================================
# GEOMETRY
# ============================================================================


class GeometryError(LensOptError):
    component = "geometry"


class LensTouchesBoundary(GeometryError):
    """The lens comes closer to the outer boundary than the required margin."""


class DegenerateElement(GeometryError):
    """A triangle area fell below the degeneracy threshold."""


class FoldedElement(GeometryError):
    """A deformation produced a triangle with non-positive Jacobian."""

    def __init__(self, message: str, tau: float, **context: Any) -> None:
        super().__init__(message, tau=tau, **context)
        self.tau = tau


class InterfaceNotFitted(GeometryError):
    """The triangulation does not reproduce the lens polygon as edges."""


class InvalidVelocityField(GeometryError):
    """A velocity field has the wrong shape or does not vanish on the boundary."""


class MeshFormatError(GeometryError):
    """A mesh file could not be parsed."""

    def __init__(self, message: str, line: int, **context: Any) -> None:
        super().__init__(message, line=line, **context)
        self.line = line


# ============================================================================
# KERNELS AND SOLVERS
# ============================================================================


class SingularLinearization(LensOptError):
    """The linearised flux is undefined at a vanishing gradient."""

    component = "qlaplace"


class StateError(LensOptError):
    component = "state"


class DegeneracyBreach(StateError):
    """The factor 1 - 2ku dropped below the degeneracy floor."""

    def __init__(self, message: str, step: int, **context: Any) -> None:
        super().__init__(message, step=step, **context)
        self.step = step


class NonlinearSolveFailure(StateError):
    """Newton and the damped fallback both failed to converge."""

    def __init__(self, message: str, step: int, **context: Any) -> None:
        super().__init__(message, step=step, **context)
        self.step = step


class InitialDataError(StateError):
    """Initial data violate the homogeneous Dirichlet condition."""


class GridMismatch(StateError):
    """Two nodal time series do not live on the same mesh and time grid."""


class AdjointError(LensOptError):
    component = "adjoint"


class LinearSolveFailure(AdjointError):
    """A sparse linear solve returned a non-finite result."""


class StateMissing(AdjointError):
    """The adjoint was requested without a matching state trajectory."""


class GradientError(LensOptError):
    component = "shape_gradient"


class MissingAdjoint(GradientError):
    """A shape derivative was requested without a matching adjoint."""


class TraceUnavailable(GradientError):
    """The interface form needs a non-empty interface."""


class SolverFailure(GradientError):
    """A perturbed state solve failed inside a finite-difference sweep."""

    def __init__(self, message: str, tau: float, **context: Any) -> None:
        super().__init__(message, tau=tau, **context)
        self.tau = tau


class LineSearchExhausted(LensOptError):
    """Backtracking ran out of halvings without an acceptable step."""

    component = "optimizer"


# ============================================================================
# CONFIGURATION
# ============================================================================


class ConfigError(LensOptError):
    component = "config"


class ConfigParseError(ConfigError):
    """The run configuration is not valid TOML."""

    def __init__(self, message: str, line: int | None, **context: Any) -> None:
        super().__init__(message, line=line, **context)
        self.line = line


class ConfigValidationError(ConfigError):
    """The run configuration violates one or more invariants."""

    def __init__(self, errors: list[str]) -> None:
        super().__init__(
            f"{len(errors)} configuration error(s)", errors=list(errors)
        )
        self.errors = list(errors)


# ============================================================================
# FIELD FILES
# ============================================================================


class FieldFormatError(LensOptError):
    """A nodal field file could not be parsed or does not fit the mesh."""

    component = "fieldio"

    def __init__(self, message: str, line: int | None = None, **context: Any) -> None:
        super().__init__(message, line=line, **context)
        self.line = line
