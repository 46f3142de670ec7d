"""Nodal field export and import.

CSV files hold one row per node and time step with the header
``node,x,y,step,value`` (``value_y`` added for vector fields). Floats are
written with ``repr`` so a re-import reproduces every value bit for bit.
VTK output goes through meshio, one ASCII unstructured-grid file per step.
"""

import csv
from pathlib import Path
from typing import Literal

import meshio
import numpy as np
import structlog
from numpy.typing import NDArray

from .errors import FieldFormatError
from .geometry import Mesh2D

logger = structlog.get_logger(__name__)

FieldFormat = Literal["csv", "vtk"]


def _as_series(mesh: Mesh2D, values: NDArray[np.float64]) -> NDArray[np.float64]:
    """Bring a field to shape (S, n) or (S, n, 2)."""
    values = np.asarray(values, dtype=float)
    if values.shape in ((mesh.n_nodes,), (mesh.n_nodes, 2)):
        values = values[None]
    if values.ndim not in (2, 3) or values.shape[1] != mesh.n_nodes:
        raise FieldFormatError(
            "field does not live on the mesh nodes",
            shape=list(values.shape),
            nodes=mesh.n_nodes,
        )
    if values.ndim == 3 and values.shape[2] != 2:
        raise FieldFormatError("vector fields need two components", shape=list(values.shape))
    return values


def _select(series: NDArray[np.float64], steps: list[int] | None) -> list[int]:
    if steps is None:
        return list(range(series.shape[0]))
    bad = [s for s in steps if not 0 <= s < series.shape[0]]
    if bad:
        raise FieldFormatError("requested steps outside the series", steps=bad)
    return list(steps)


def export_csv(
    mesh: Mesh2D,
    values: NDArray[np.float64],
    path: Path,
    steps: list[int] | None = None,
) -> Path:
    """Write a nodal time series as CSV."""
    series = _as_series(mesh, values)
    vector = series.ndim == 3
    header = ["node", "x", "y", "step", "value"] + (["value_y"] if vector else [])
    coords = mesh.vertices.tolist()
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(header)
        for step in _select(series, steps):
            rows = series[step].tolist()
            for node, ((x, y), value) in enumerate(zip(coords, rows, strict=True)):
                cells = list(value) if vector else [value]
                writer.writerow([node, repr(x), repr(y), step, *(repr(c) for c in cells)])
    logger.debug("fieldio.csv_written", path=str(path), vector=vector)
    return path


def read_csv(
    path: Path, mesh: Mesh2D | None = None
) -> tuple[list[int], NDArray[np.float64]]:
    """Read a CSV written by :func:`export_csv`.

    Returns the step numbers and an array shaped (S, n) or (S, n, 2). When
    ``mesh`` is given the node count and coordinates must match it.

    Raises:
        FieldFormatError: with the 1-based line number of the first bad row.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as handle:
        rows = list(csv.reader(handle))
    if not rows:
        raise FieldFormatError("empty field file", line=1, path=str(path))
    header = rows[0]
    if header[:5] != ["node", "x", "y", "step", "value"] or len(header) > 6:
        raise FieldFormatError("unexpected CSV header", line=1, header=header)
    if len(header) == 6 and header[5] != "value_y":
        raise FieldFormatError("unexpected CSV header", line=1, header=header)
    width = len(header) - 4

    records: dict[int, dict[int, list[float]]] = {}
    coords: dict[int, tuple[float, float]] = {}
    for number, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise FieldFormatError("wrong number of columns", line=number)
        try:
            node, step = int(row[0]), int(row[3])
            x, y = float(row[1]), float(row[2])
            value = [float(cell) for cell in row[4:]]
        except ValueError:
            raise FieldFormatError(f"cannot parse {','.join(row)!r}", line=number) from None
        coords.setdefault(node, (x, y))
        records.setdefault(step, {})[node] = value

    steps = sorted(records)
    nodes = sorted(coords)
    n = len(nodes)
    if nodes != list(range(n)):
        raise FieldFormatError("node ids must be 0..n-1", line=None)
    if mesh is not None:
        if n != mesh.n_nodes:
            raise FieldFormatError("node count differs from the mesh", nodes=n, expected=mesh.n_nodes)
        given = np.array([coords[i] for i in nodes])
        if not np.allclose(given, mesh.vertices, rtol=0.0, atol=1e-12):
            raise FieldFormatError("node coordinates differ from the mesh")

    data = np.empty((len(steps), n, width))
    for s, step in enumerate(steps):
        if len(records[step]) != n:
            raise FieldFormatError("step is missing nodes", step=step)
        for node, value in records[step].items():
            data[s, node] = value
    return steps, (data[..., 0] if width == 1 else data)


def export_vtk(
    mesh: Mesh2D,
    values: NDArray[np.float64],
    stem: Path,
    steps: list[int] | None = None,
    name: str = "value",
) -> list[Path]:
    """Write one ASCII VTK file ``{stem}_{step:05d}.vtk`` per step.

    Points and vector fields get a zero third component. Triangle labels
    travel as the cell field ``label``.
    """
    series = _as_series(mesh, values)
    stem = Path(stem)
    points = np.column_stack([mesh.vertices, np.zeros(mesh.n_nodes)])
    cells = [("triangle", mesh.triangles.astype(np.int64))]
    labels = [mesh.labels.astype(np.int32)]

    written = []
    for step in _select(series, steps):
        data = series[step]
        if data.ndim == 2:
            data = np.column_stack([data, np.zeros(mesh.n_nodes)])
        grid = meshio.Mesh(
            points=points,
            cells=cells,
            point_data={name: data},
            cell_data={"label": labels},
        )
        path = stem.parent / f"{stem.name}_{step:05d}.vtk"
        try:
            grid.write(path, file_format="vtk", binary=False)
        except (OSError, ValueError) as exc:
            raise FieldFormatError("VTK write failed", path=str(path), reason=str(exc)) from exc
        written.append(path)
    logger.debug("fieldio.vtk_written", stem=str(stem), files=len(written))
    return written


def export_field(
    mesh: Mesh2D,
    values: NDArray[np.float64],
    path: Path,
    fmt: FieldFormat = "csv",
    steps: list[int] | None = None,
    name: str = "value",
) -> list[Path]:
    """Export a nodal scalar or vector time series.

    For ``csv`` ``path`` is the file; for ``vtk`` it is the stem, a suffix is
    dropped.
    """
    if fmt == "csv":
        return [export_csv(mesh, values, path, steps)]
    if fmt == "vtk":
        return export_vtk(mesh, values, Path(path).with_suffix(""), steps, name)
    raise ValueError(f"unknown field format {fmt!r}")
