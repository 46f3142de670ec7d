"""Run orchestration for the lensopt subcommands.

:class:`LensOptService` turns a validated :class:`RunConfig` into meshes,
initial data, targets and a :class:`ShapeProblem`, runs one subcommand and
persists its artifacts. Every run directory gets:

1. ``config.toml``: the canonical configuration
2. ``manifest.json``: hash, versions, seed, threads, timings, artifacts, status
3. the subcommand artifacts
4. ``metrics.prom`` when metrics text files are enabled
5. ``error.json`` when the run failed

The CLI is a thin layer over this class, so everything here can be tested
without spawning processes.
"""

import csv
import io
import json
import math
import platform
import time
from collections.abc import Callable, Iterator
from contextlib import contextmanager
from dataclasses import dataclass, field
from datetime import UTC, datetime
from functools import cached_property
from importlib.metadata import PackageNotFoundError, version
from pathlib import Path
from typing import Any, Literal

import numpy as np
import scipy
import structlog
from numpy.typing import NDArray
from scipy.interpolate import LinearNDInterpolator

from . import __version__
from .adjoint import adjoint_gap, smallness_report, solve_adjoint
from .config import Settings, get_settings
from .errors import GridMismatch, LensOptError
from .fieldio import export_field, read_csv
from .geometry import (
    Mesh2D,
    VelocityField,
    build_mesh,
    check_admissible,
    write_mesh,
)
from .helpers import evaluate_profile, make_velocity_fields
from .metrics import MetricsCollector, write_textfile
from .models import LensSpec, RunManifest, ShapeGradientReport
from .optimizer import optimize
from .runconfig import RunConfig, config_digest, serialize_config
from .shape_gradient import (
    ShapeProblem,
    boundary_form_terms,
    continuity_diagnostics,
    fd_oracle,
    relative_error,
    volume_form_terms,
    volume_tensors,
)
from .state import degeneracy_margin, energy_report, evaluate_cost, solve_state
from .verify import run_verification

logger = structlog.get_logger(__name__)

Command = Literal["solve", "adjoint", "gradient", "verify", "optimize"]
COMMANDS: tuple[Command, ...] = ("solve", "adjoint", "gradient", "verify", "optimize")

FD_COLUMNS = ["field", "tau", "cost_plus", "cost_minus", "one_sided", "central"]
HISTORY_COLUMNS = [
    "iteration",
    "cost",
    "h1_norm",
    "tau",
    "max_turning_angle_deg",
    "min_quality",
]


def _package_version(name: str) -> str:
    try:
        return version(name)
    except PackageNotFoundError:
        return "unknown"


def _csv_text(header: list[str], rows: list[list[Any]]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([repr(v) if isinstance(v, float) else v for v in row])
    return buffer.getvalue()


@dataclass
class RunContext:
    """Output directory plus the artifact and timing ledger of one run."""

    directory: Path
    artifacts: list[str] = field(default_factory=list)
    timings: dict[str, float] = field(default_factory=dict)

    def path(self, name: str) -> Path:
        return self.directory / name

    def record(self, *paths: Path) -> None:
        for path in paths:
            name = str(Path(path).relative_to(self.directory))
            if name not in self.artifacts:
                self.artifacts.append(name)

    def write_text(self, name: str, text: str) -> Path:
        path = self.path(name)
        path.write_text(text, encoding="utf-8")
        self.record(path)
        return path

    def write_json(self, name: str, data: Any) -> Path:
        return self.write_text(name, json.dumps(data, indent=2, sort_keys=True) + "\n")

    @contextmanager
    def timed(self, name: str) -> Iterator[None]:
        start = time.perf_counter()
        try:
            yield
        finally:
            self.timings[name] = self.timings.get(name, 0.0) + time.perf_counter() - start


@dataclass
class RunResult:
    command: Command
    directory: Path
    passed: bool
    artifacts: list[str]


class LensOptService:
    """Builds the problem of a run configuration and executes subcommands.

    Usage:
        service = LensOptService(parse_config(path), threads=4)
        result = service.run("gradient")
    """

    def __init__(
        self,
        config: RunConfig,
        settings: Settings | None = None,
        threads: int | None = None,
    ) -> None:
        self.config = config
        self.settings = settings or get_settings()
        self.threads = threads or self.settings.default_threads

    # ------------------------------------------------------------------
    # problem setup
    # ------------------------------------------------------------------

    @cached_property
    def mesh(self) -> Mesh2D:
        mesh = build_mesh(self.config.domain, self.settings)
        logger.info(
            "service.mesh_built",
            nodes=mesh.n_nodes,
            triangles=mesh.n_triangles,
            interface_edges=len(mesh.interface_edges),
        )
        return mesh

    def initial_data(self, mesh: Mesh2D) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
        extent = self.config.domain.extent
        base = self.config.base_dir
        return (
            evaluate_profile(mesh, self.config.initial.u0, extent, base),
            evaluate_profile(mesh, self.config.initial.u1, extent, base),
        )

    def target(self) -> NDArray[np.float64]:
        """Desired pressure u_d on the working mesh, shape (N+1, n) or (n,)."""
        config = self.config
        target = config.target
        mesh = self.mesh
        if target.mode == "analytic":
            assert target.profile is not None
            return evaluate_profile(mesh, target.profile, config.domain.extent, config.base_dir)
        if target.mode == "imported":
            assert target.file is not None
            _, data = read_csv(config.resolve(target.file), mesh)
            expected = (config.time.steps + 1, mesh.n_nodes)
            if data.shape != expected:
                raise GridMismatch(
                    "imported target does not match the time grid",
                    target_shape=list(data.shape),
                    expected=list(expected),
                )
            return data

        lens = target.lens or config.domain.lens
        if lens == config.domain.lens:
            u0, u1 = self.initial_data(mesh)
            state = solve_state(mesh, config.materials, config.time, u0, u1, config.solver)
            return state.u.copy()
        return self._resample_from_shape(lens)

    def _resample_from_shape(self, lens: LensSpec) -> NDArray[np.float64]:
        config = self.config
        domain = config.domain.model_copy(update={"lens": lens})
        source = build_mesh(domain, self.settings)
        u0, u1 = self.initial_data(source)
        state = solve_state(source, config.materials, config.time, u0, u1, config.solver)
        interpolate = LinearNDInterpolator(source.vertices, state.u.T, fill_value=0.0)
        values = np.asarray(interpolate(self.mesh.vertices)).T
        values[:, self.mesh.boundary_nodes] = 0.0
        logger.info(
            "service.target_resampled",
            source_nodes=source.n_nodes,
            target_nodes=self.mesh.n_nodes,
        )
        return np.ascontiguousarray(values)

    @cached_property
    def problem(self) -> ShapeProblem:
        u0, u1 = self.initial_data(self.mesh)
        return ShapeProblem(
            mesh=self.mesh,
            params=self.config.materials,
            grid=self.config.time,
            u0=u0,
            u1=u1,
            u_d=self.target(),
            options=self.config.solver,
        )

    @cached_property
    def velocity_fields(self) -> list[VelocityField]:
        lens = self.config.domain.lens
        return make_velocity_fields(
            self.mesh,
            self.config.gradient.velocity,
            self.config.domain.extent,
            seed=self.config.seed,
            center=None if lens.shape == "none" else lens.center,
            base_dir=self.config.base_dir,
        )

    def export_steps(self) -> list[int]:
        steps = self.config.time.steps
        selected = list(range(0, steps + 1, self.config.output.export_every))
        if selected[-1] != steps:
            selected.append(steps)
        return selected

    def _export(self, ctx: RunContext, name: str, values: NDArray[np.float64]) -> None:
        for fmt in self.config.output.formats:
            suffix = ".csv" if fmt == "csv" else ""
            paths = export_field(
                self.problem.mesh,
                values,
                ctx.path(f"{name}{suffix}"),
                fmt=fmt,
                steps=self.export_steps(),
                name=name,
            )
            ctx.record(*paths)

    # ------------------------------------------------------------------
    # run driver
    # ------------------------------------------------------------------

    def output_directory(self, command: Command, override: Path | None = None) -> Path:
        if override is not None:
            return Path(override)
        if self.config.output.directory:
            return self.config.resolve(self.config.output.directory)
        return self.settings.output_root / command

    def run(self, command: Command, output: Path | None = None) -> RunResult:
        """Execute ``command`` and write its artifacts.

        Raises:
            LensOptError: after ``error.json`` and the manifest were written.
        """
        handlers: dict[str, Callable[[RunContext], bool]] = {
            "solve": self._run_solve,
            "adjoint": self._run_adjoint,
            "gradient": self._run_gradient,
            "verify": self._run_verify,
            "optimize": self._run_optimize,
        }
        if command not in handlers:
            raise ValueError(f"unknown command {command!r}")
        directory = self.output_directory(command, output)
        directory.mkdir(parents=True, exist_ok=True)
        ctx = RunContext(directory=directory)
        started_at = datetime.now(UTC).isoformat()
        config_text = serialize_config(self.config)
        ctx.write_text("config.toml", config_text)
        logger.info(
            "service.run_started",
            command=command,
            output=str(directory),
            threads=self.threads,
        )

        status: Literal["success", "error"] = "error"
        passed = False
        try:
            with MetricsCollector.track_run(command), ctx.timed("total"):
                passed = handlers[command](ctx)
            status = "success"
        except LensOptError as exc:
            ctx.write_json("error.json", exc.to_record())
            logger.error("service.run_failed", command=command, **exc.to_record())
            raise
        finally:
            if self.settings.metrics_textfile:
                write_textfile(ctx.path("metrics.prom"))
                ctx.record(ctx.path("metrics.prom"))
            self._write_manifest(ctx, command, status, config_text, started_at)

        logger.info("service.run_finished", command=command, passed=passed)
        return RunResult(
            command=command, directory=directory, passed=passed, artifacts=ctx.artifacts
        )

    def _write_manifest(
        self,
        ctx: RunContext,
        command: Command,
        status: Literal["success", "error"],
        config_text: str,
        started_at: str,
    ) -> None:
        manifest = RunManifest(
            command=command,
            status=status,
            config_sha256=config_digest(self.config),
            config_toml=config_text,
            seed=self.config.seed,
            threads=self.threads,
            versions={
                "lensopt": __version__,
                "python": platform.python_version(),
                "numpy": np.__version__,
                "scipy": scipy.__version__,
                "pydantic": _package_version("pydantic"),
                "structlog": _package_version("structlog"),
            },
            timings=ctx.timings,
            artifacts=sorted([*ctx.artifacts, "manifest.json"]),
            started_at=started_at,
        )
        ctx.path("manifest.json").write_text(
            manifest.model_dump_json(indent=2) + "\n", encoding="utf-8"
        )

    # ------------------------------------------------------------------
    # subcommands
    # ------------------------------------------------------------------

    def _run_solve(self, ctx: RunContext) -> bool:
        problem = self.problem
        with ctx.timed("state"):
            state = problem.solve()
        with ctx.timed("diagnostics"):
            bounds = energy_report(problem.mesh, state, problem.params)
            degeneracy = degeneracy_margin(problem.mesh, state, problem.params)
            admissibility = check_admissible(problem.mesh)
        ctx.record(write_mesh(problem.mesh, ctx.path("mesh.txt")))
        self._export(ctx, "state_u", state.u)
        self._export(ctx, "state_v", state.v)
        ctx.write_json(
            "diagnostics.json",
            {
                "cost": evaluate_cost(problem.mesh, state, problem.u_d),
                "newton_iterations": int(state.newton_iterations.sum()),
                "degeneracy": degeneracy.model_dump(),
                "bounds": bounds.model_dump(),
                "admissibility": admissibility.model_dump(),
            },
        )
        return True

    def _run_adjoint(self, ctx: RunContext) -> bool:
        problem = self.problem
        scheme = self.config.gradient.adjoint_scheme
        with ctx.timed("state"):
            state = problem.solve()
        with ctx.timed("adjoint"):
            adjoint = solve_adjoint(
                problem.mesh,
                problem.params,
                state,
                problem.u_d,
                options=problem.options,
                scheme=scheme,
            )
            other = solve_adjoint(
                problem.mesh,
                problem.params,
                state,
                problem.u_d,
                options=problem.options,
                scheme="continuous" if scheme == "discrete" else "discrete",
            )
        smallness = smallness_report(problem.mesh, state, problem.params)
        self._export(ctx, "adjoint_p", adjoint.p)
        ctx.write_json(
            "adjoint_report.json",
            {
                "scheme": scheme,
                "max_abs_p": float(np.abs(adjoint.p).max(initial=0.0)),
                "gap_to_" + other.scheme: adjoint_gap(problem.mesh, other, adjoint),
                "smallness": smallness.model_dump(),
            },
        )
        return True

    def gradient_reports(self, ctx: RunContext | None = None) -> list[ShapeGradientReport]:
        """Volume form, optional interface form, FD and continuity per field."""
        problem = self.problem
        spec = self.config.gradient
        state = problem.solve()
        adjoint = solve_adjoint(
            problem.mesh,
            problem.params,
            state,
            problem.u_d,
            options=problem.options,
            scheme=spec.adjoint_scheme,
        )
        tensors = volume_tensors(
            problem.mesh, problem.params, state, adjoint, problem.u_d, problem.options
        )
        cost = problem.cost(state)
        reports = []
        for h in self.velocity_fields:
            terms = volume_form_terms(
                problem.mesh,
                problem.params,
                state,
                adjoint,
                problem.u_d,
                h,
                problem.options,
                tensors,
            )
            report = ShapeGradientReport(
                dj_volume=math.fsum(terms.values()), volume_terms=terms
            )
            if spec.boundary:
                report.boundary_terms = boundary_form_terms(
                    problem.mesh, problem.params, state, adjoint, h, problem.options
                )
                report.dj_boundary = math.fsum(report.boundary_terms.values())
                report.volume_boundary_gap = relative_error(
                    report.dj_volume, report.dj_boundary, self.settings.fd_eps_abs
                )
            if spec.fd_taus:
                report.fd = fd_oracle(
                    problem, h, spec.fd_taus, threads=self.threads, cost=cost
                )
                report.fd_relative_error = relative_error(
                    report.dj_volume, report.fd.plateau, self.settings.fd_eps_abs
                )
            reports.append(report)
            if spec.continuity and spec.fd_taus and ctx is not None:
                continuity = continuity_diagnostics(
                    problem, h, spec.fd_taus, threads=self.threads, state=state
                )
                ctx.write_json(
                    f"continuity_{len(reports) - 1}.json", continuity.model_dump()
                )
        return reports

    def _write_gradient_artifacts(
        self, ctx: RunContext, reports: list[ShapeGradientReport]
    ) -> None:
        blocks = [f"# field {i}\n{report}\n" for i, report in enumerate(reports)]
        ctx.write_text("gradient_report.txt", "\n".join(blocks))
        rows = [
            [i, s.tau, s.cost_plus, s.cost_minus, s.one_sided, s.central]
            for i, report in enumerate(reports)
            if report.fd is not None
            for s in report.fd.slopes
        ]
        ctx.write_text("fd_slopes.csv", _csv_text(FD_COLUMNS, rows))

    def _run_gradient(self, ctx: RunContext) -> bool:
        with ctx.timed("gradient"):
            reports = self.gradient_reports(ctx)
        self._write_gradient_artifacts(ctx, reports)
        ctx.write_json("gradient.json", [r.model_dump() for r in reports])
        return True

    def _run_verify(self, ctx: RunContext) -> bool:
        with ctx.timed("verify"):
            outcome = run_verification(
                self.problem,
                self.velocity_fields,
                self.config,
                self.settings,
                threads=self.threads,
            )
        ctx.write_text("verify_summary.txt", str(outcome.summary) + "\n")
        ctx.write_json(
            "verify.json",
            {
                "passed": outcome.summary.passed,
                "checks": [c.model_dump() for c in outcome.summary.checks],
                "gradients": [g.model_dump() for g in outcome.gradients],
            },
        )
        self._write_gradient_artifacts(ctx, outcome.gradients)
        return outcome.summary.passed

    def _run_optimize(self, ctx: RunContext) -> bool:
        options = self.config.optimizer

        def snapshot(iteration: int, mesh: Mesh2D) -> None:
            if options.mesh_snapshots:
                ctx.record(write_mesh(mesh, ctx.path(f"mesh_{iteration:04d}.txt")))

        with ctx.timed("optimize"):
            history, final_mesh = optimize(self.problem, options, on_iteration=snapshot)
        rows = [
            [
                r.iteration,
                r.cost,
                r.h1_norm,
                r.tau,
                r.max_turning_angle_deg,
                r.min_quality,
            ]
            for r in history.records
        ]
        ctx.write_text("history.csv", _csv_text(HISTORY_COLUMNS, rows))
        ctx.write_json("history.json", history.model_dump())
        ctx.record(write_mesh(final_mesh, ctx.path("final_mesh.txt")))
        return True
