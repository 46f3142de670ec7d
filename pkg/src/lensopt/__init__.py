"""lensopt - shape optimisation of an acoustic lens.

This package computes shape derivatives of a tracking cost for the Westervelt
equation with q-Laplace strong damping. The design variable is a lens
subdomain inside a rectangle: P1 finite elements with implicit midpoint time
stepping solve the state, a discrete adjoint gives the gradient and a
volume-form shape derivative drives steepest descent on the lens nodes.
"""

import logging
import sys

import structlog

from .config import get_settings

__version__ = "0.3.0"

_settings = get_settings()

# Configure structlog at package level; stdout stays free for CLI output
structlog.configure(
    processors=[
        structlog.contextvars.merge_contextvars,
        structlog.processors.add_log_level,
        structlog.processors.TimeStamper(fmt="iso"),
        structlog.processors.StackInfoRenderer(),
        structlog.processors.format_exc_info,
        (
            structlog.processors.JSONRenderer()
            if _settings.log_format == "json"
            else structlog.dev.ConsoleRenderer(colors=False)
        ),
    ],
    wrapper_class=structlog.make_filtering_bound_logger(
        getattr(logging, _settings.log_level)
    ),
    context_class=dict,
    logger_factory=structlog.PrintLoggerFactory(file=sys.stderr),
    cache_logger_on_first_use=True,
)

# Import after structlog is configured
from .adjoint import solve_adjoint  # noqa: E402
from .config import Settings  # noqa: E402
from .errors import LensOptError  # noqa: E402
from .geometry import Mesh2D, VelocityField, build_mesh, check_admissible  # noqa: E402
from .models import MaterialParams, SubdomainParams, TimeGrid  # noqa: E402
from .optimizer import optimize  # noqa: E402
from .runconfig import RunConfig, parse_config, serialize_config  # noqa: E402
from .service import LensOptService  # noqa: E402
from .shape_gradient import (  # noqa: E402
    ShapeProblem,
    eval_boundary_form,
    eval_volume_form,
    fd_oracle,
)
from .state import solve_state  # noqa: E402

__all__ = [
    "LensOptError",
    "LensOptService",
    "MaterialParams",
    "Mesh2D",
    "RunConfig",
    "Settings",
    "ShapeProblem",
    "SubdomainParams",
    "TimeGrid",
    "VelocityField",
    "build_mesh",
    "check_admissible",
    "eval_boundary_form",
    "eval_volume_form",
    "fd_oracle",
    "get_settings",
    "optimize",
    "parse_config",
    "serialize_config",
    "solve_adjoint",
    "solve_state",
    "__version__",
]
