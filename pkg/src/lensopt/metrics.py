"""Prometheus metrics for solver runs."""

import time
from pathlib import Path
from types import TracebackType
from typing import Any, Literal

from prometheus_client import REGISTRY, Counter, Gauge, Histogram, Info
from prometheus_client import write_to_textfile

# Info metric for package metadata
package_info = Info("lensopt_package", "Package information")
package_info.info({"version": "0.3.0", "package": "lensopt"})

# Counter metrics
solves_total = Counter(
    "lensopt_solves_total",
    "Total number of PDE solves",
    ["kind", "status"],
)

runs_total = Counter(
    "lensopt_runs_total",
    "Total number of CLI runs",
    ["command", "status"],
)

newton_iterations_total = Counter(
    "lensopt_newton_iterations_total",
    "Total number of Newton iterations in state solves",
)

time_steps_total = Counter(
    "lensopt_time_steps_total",
    "Total number of time steps taken",
    ["kind"],
)

line_search_trials_total = Counter(
    "lensopt_line_search_trials_total",
    "Total number of line-search trial steps",
    ["outcome"],
)

errors_total = Counter(
    "lensopt_errors_total",
    "Total number of errors",
    ["error_type", "component"],
)

# Histogram metrics for latency
solve_duration_seconds = Histogram(
    "lensopt_solve_duration_seconds",
    "Duration of PDE solves in seconds",
    ["kind"],
    buckets=(0.01, 0.05, 0.1, 0.5, 1.0, 5.0, 10.0, 30.0, 60.0, 300.0),
)

run_duration_seconds = Histogram(
    "lensopt_run_duration_seconds",
    "Duration of CLI runs in seconds",
    ["command"],
    buckets=(0.1, 1.0, 10.0, 60.0, 300.0, 600.0, 1800.0),
)

# Gauge metrics
active_runs = Gauge(
    "lensopt_active_runs",
    "Number of currently active runs",
)

last_cost = Gauge(
    "lensopt_last_cost",
    "Most recently evaluated tracking cost",
)


class MetricsCollector:
    """Helper class for collecting metrics with context managers."""

    @staticmethod
    def track_solve(kind: str) -> Any:
        """Context manager to track a state, adjoint or auxiliary solve."""

        class SolveTracker:
            def __init__(self, kind: str) -> None:
                self.kind = kind
                self.start_time = 0.0

            def __enter__(self) -> "SolveTracker":
                self.start_time = time.perf_counter()
                return self

            def __exit__(
                self,
                exc_type: type[BaseException] | None,
                exc_val: BaseException | None,
                exc_tb: TracebackType | None,
            ) -> Literal[False]:
                duration = time.perf_counter() - self.start_time
                solve_duration_seconds.labels(kind=self.kind).observe(duration)

                status = "error" if exc_type else "success"
                solves_total.labels(kind=self.kind, status=status).inc()

                if exc_type:
                    errors_total.labels(
                        error_type=exc_type.__name__, component=self.kind
                    ).inc()

                return False  # Don't suppress exceptions

        return SolveTracker(kind)

    @staticmethod
    def track_run(command: str) -> Any:
        """Context manager to track a CLI subcommand."""

        class RunTracker:
            def __init__(self, command: str) -> None:
                self.command = command
                self.start_time = 0.0

            def __enter__(self) -> "RunTracker":
                self.start_time = time.perf_counter()
                active_runs.inc()
                return self

            def __exit__(
                self,
                exc_type: type[BaseException] | None,
                exc_val: BaseException | None,
                exc_tb: TracebackType | None,
            ) -> Literal[False]:
                duration = time.perf_counter() - self.start_time
                run_duration_seconds.labels(command=self.command).observe(duration)

                status = "error" if exc_type else "success"
                runs_total.labels(command=self.command, status=status).inc()

                if exc_type:
                    errors_total.labels(
                        error_type=exc_type.__name__, component="cli"
                    ).inc()

                active_runs.dec()
                return False

        return RunTracker(command)


def write_textfile(path: Path) -> None:
    """Dump the default registry in prometheus text format."""
    write_to_textfile(str(path), REGISTRY)
