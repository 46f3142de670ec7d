"""Meshes, subdomain labels, admissibility checks and the mapping machinery.

A :class:`Mesh2D` is a fitted triangulation of the rectangle Ω: the lens
boundary Γ runs along element edges, so every triangle is either LENS or
FLUID and a deformation x ↦ x + τh(x) keeps that labelling. Meshes, velocity
fields and transform records are immutable; every operation here returns new
values and is safe to call from several threads.
"""

import math
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np
import structlog
from numpy.typing import NDArray
from scipy.spatial import Delaunay

from .config import Settings, get_settings
from .errors import (
    DegenerateElement,
    FoldedElement,
    InterfaceNotFitted,
    InvalidVelocityField,
    LensTouchesBoundary,
    MeshFormatError,
)
from .models import AdmissibilityReport, DomainSpec, Label, LensSpec

logger = structlog.get_logger(__name__)

_LOCAL_EDGES = np.array([[0, 1], [1, 2], [2, 0]])


def _frozen(array: NDArray, dtype: type) -> NDArray:
    copy = np.array(array, dtype=dtype, copy=True)
    copy.setflags(write=False)
    return copy


# ============================================================================
# MESH TYPES
# ============================================================================


@dataclass(frozen=True, eq=False)
class Mesh2D:
    """Conforming triangulation with lens/fluid labels.

    Attributes:
        vertices: (n, 2) node coordinates.
        triangles: (m, 3) vertex indices, counter-clockwise.
        labels: (m,) :class:`Label` values.
        interface_edges: (k, 2) node pairs of the edges on Γ.
        interface_elements: (k, 2) indices of the (LENS, FLUID) triangles
            adjacent to each interface edge.
        boundary_nodes: sorted indices of the nodes on ∂Ω.
    """

    vertices: NDArray[np.float64]
    triangles: NDArray[np.int64]
    labels: NDArray[np.int8]
    interface_edges: NDArray[np.int64]
    interface_elements: NDArray[np.int64]
    boundary_nodes: NDArray[np.int64]

    def __post_init__(self) -> None:
        object.__setattr__(self, "vertices", _frozen(self.vertices, np.float64))
        object.__setattr__(self, "triangles", _frozen(self.triangles, np.int64))
        object.__setattr__(self, "labels", _frozen(self.labels, np.int8))
        edges = np.asarray(self.interface_edges, dtype=np.int64).reshape(-1, 2)
        elements = np.asarray(self.interface_elements, dtype=np.int64).reshape(-1, 2)
        object.__setattr__(self, "interface_edges", _frozen(edges, np.int64))
        object.__setattr__(self, "interface_elements", _frozen(elements, np.int64))
        object.__setattr__(
            self, "boundary_nodes", _frozen(np.unique(self.boundary_nodes), np.int64)
        )

    @property
    def n_nodes(self) -> int:
        return int(self.vertices.shape[0])

    @property
    def n_triangles(self) -> int:
        return int(self.triangles.shape[0])

    @cached_property
    def areas(self) -> NDArray[np.float64]:
        """Signed triangle areas (positive for a valid mesh)."""
        p = self.vertices[self.triangles]
        e1 = p[:, 1] - p[:, 0]
        e2 = p[:, 2] - p[:, 0]
        return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])

    @cached_property
    def gradients(self) -> NDArray[np.float64]:
        """(m, 3, 2) gradients of the three P1 basis functions per triangle."""
        p = self.vertices[self.triangles]
        x, y = p[..., 0], p[..., 1]
        twice = 2.0 * self.areas
        grads = np.empty((self.n_triangles, 3, 2))
        for a in range(3):
            b, c = (a + 1) % 3, (a + 2) % 3
            grads[:, a, 0] = (y[:, b] - y[:, c]) / twice
            grads[:, a, 1] = (x[:, c] - x[:, b]) / twice
        return grads

    @cached_property
    def h_mesh(self) -> float:
        """Longest edge."""
        p = self.vertices[self.triangles]
        lengths = np.linalg.norm(p[:, [1, 2, 0]] - p, axis=-1)
        return float(lengths.max())

    @cached_property
    def free_nodes(self) -> NDArray[np.int64]:
        mask = np.ones(self.n_nodes, dtype=bool)
        mask[self.boundary_nodes] = False
        return np.flatnonzero(mask)

    @cached_property
    def lens_nodes(self) -> NDArray[np.int64]:
        return np.unique(self.triangles[self.labels == Label.LENS])

    @cached_property
    def interface_normals(self) -> NDArray[np.float64]:
        """Unit normals of the interface edges pointing out of the lens."""
        if len(self.interface_edges) == 0:
            return np.zeros((0, 2))
        a = self.vertices[self.interface_edges[:, 0]]
        b = self.vertices[self.interface_edges[:, 1]]
        tangent = b - a
        normals = np.column_stack([tangent[:, 1], -tangent[:, 0]])
        normals /= np.linalg.norm(normals, axis=1, keepdims=True)
        lens_centroids = self.vertices[
            self.triangles[self.interface_elements[:, 0]]
        ].mean(axis=1)
        flip = np.sum(normals * (0.5 * (a + b) - lens_centroids), axis=1) < 0
        normals[flip] *= -1.0
        return normals

    @cached_property
    def interface_lengths(self) -> NDArray[np.float64]:
        a = self.vertices[self.interface_edges[:, 0]]
        b = self.vertices[self.interface_edges[:, 1]]
        return np.linalg.norm(b - a, axis=1)

    def with_vertices(self, vertices: NDArray[np.float64]) -> "Mesh2D":
        """Same topology, new node positions."""
        vertices = np.asarray(vertices, dtype=float)
        if vertices.shape != self.vertices.shape:
            raise ValueError("vertex array shape does not match the mesh")
        return Mesh2D(
            vertices=vertices,
            triangles=self.triangles,
            labels=self.labels,
            interface_edges=self.interface_edges,
            interface_elements=self.interface_elements,
            boundary_nodes=self.boundary_nodes,
        )


@dataclass(frozen=True, eq=False)
class VelocityField:
    """Nodal deformation direction h and its elementwise gradient Dh."""

    values: NDArray[np.float64]
    gradients: NDArray[np.float64]

    def __post_init__(self) -> None:
        object.__setattr__(self, "values", _frozen(self.values, np.float64))
        object.__setattr__(self, "gradients", _frozen(self.gradients, np.float64))

    @property
    def divergence(self) -> NDArray[np.float64]:
        return np.trace(self.gradients, axis1=1, axis2=2)

    @property
    def is_zero(self) -> bool:
        return not np.any(self.values)


def velocity_field(mesh: Mesh2D, values: NDArray[np.float64]) -> VelocityField:
    """Wrap nodal vectors as a :class:`VelocityField` on ``mesh``.

    Raises:
        InvalidVelocityField: wrong shape, non-finite entries or a nonzero
            value on ∂Ω.
    """
    values = np.array(values, dtype=float)
    if values.shape != (mesh.n_nodes, 2):
        raise InvalidVelocityField(
            "velocity field must have one 2-vector per node",
            shape=list(values.shape),
            nodes=mesh.n_nodes,
        )
    if not np.all(np.isfinite(values)):
        raise InvalidVelocityField("velocity field has non-finite entries")
    on_boundary = np.abs(values[mesh.boundary_nodes]).max(initial=0.0)
    if on_boundary > 1e-12:
        raise InvalidVelocityField(
            "velocity field must vanish on the outer boundary",
            max_boundary_value=on_boundary,
        )
    values[mesh.boundary_nodes] = 0.0
    gradients = np.einsum("eai,eaj->eij", values[mesh.triangles], mesh.gradients)
    return VelocityField(values=values, gradients=gradients)


def zero_field(mesh: Mesh2D) -> VelocityField:
    return velocity_field(mesh, np.zeros((mesh.n_nodes, 2)))


@dataclass(frozen=True, eq=False)
class TransformRecord:
    """Per-triangle DF_τ = I + τDh, I_τ = det DF_τ and A_τ = DF_τ^{-T}."""

    tau: float
    jacobians: NDArray[np.float64]
    determinants: NDArray[np.float64]
    inverse_transposes: NDArray[np.float64]
    alpha0: float
    alpha1: float
    beta1: float
    beta2: float


# ============================================================================
# TOPOLOGY
# ============================================================================


def _edge_topology(
    triangles: NDArray[np.int64],
) -> tuple[NDArray[np.int64], NDArray[np.int64], NDArray[np.int64], NDArray[np.int64]]:
    """Unique edges with their first and second owning triangle (-1 if none)."""
    m = len(triangles)
    all_edges = np.sort(triangles[:, _LOCAL_EDGES].reshape(-1, 2), axis=1)
    owner = np.repeat(np.arange(m), 3)
    edges, inverse, counts = np.unique(
        all_edges, axis=0, return_inverse=True, return_counts=True
    )
    if counts.max(initial=0) > 2:
        raise DegenerateElement("edge shared by more than two triangles")
    order = np.argsort(inverse.ravel(), kind="stable")
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    first = owner[order[starts]]
    second_index = np.minimum(starts + 1, len(order) - 1)
    second = np.where(counts == 2, owner[order[second_index]], -1)
    return edges, first, second, counts


def mesh_from_arrays(
    vertices: NDArray[np.float64],
    triangles: NDArray[np.int64],
    labels: NDArray[np.int8],
) -> Mesh2D:
    """Orient triangles and derive Γ, its element pairs and ∂Ω."""
    triangles = np.array(triangles, dtype=np.int64)
    p = vertices[triangles]
    e1 = p[:, 1] - p[:, 0]
    e2 = p[:, 2] - p[:, 0]
    signed = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
    clockwise = signed < 0
    triangles[clockwise] = triangles[clockwise][:, [0, 2, 1]]

    edges, first, second, counts = _edge_topology(triangles)
    boundary_nodes = np.unique(edges[counts == 1])

    interior = second >= 0
    first_label = labels[first]
    second_label = np.where(interior, labels[np.maximum(second, 0)], -1)
    on_interface = interior & (first_label != second_label)
    lens_first = first_label == Label.LENS
    lens_tri = np.where(lens_first, first, second)[on_interface]
    fluid_tri = np.where(lens_first, second, first)[on_interface]

    return Mesh2D(
        vertices=vertices,
        triangles=triangles,
        labels=labels,
        interface_edges=edges[on_interface],
        interface_elements=np.column_stack([lens_tri, fluid_tri]),
        boundary_nodes=boundary_nodes,
    )


# ============================================================================
# MESH CONSTRUCTION
# ============================================================================


def lens_polygon(lens: LensSpec, h: float) -> NDArray[np.float64]:
    """Counter-clockwise polygon approximating the lens with edges ≤ h."""
    center = np.asarray(lens.center, dtype=float)
    if lens.shape == "circle":
        n = max(8, math.ceil(2.0 * math.pi * lens.radius / h))
        theta = 2.0 * math.pi * np.arange(n) / n
        return center + lens.radius * np.column_stack([np.cos(theta), np.sin(theta)])
    if lens.shape == "ellipse":
        a, b = lens.semi_axes
        n = max(8, math.ceil(2.0 * math.pi * max(a, b) / h))
        theta = 2.0 * math.pi * np.arange(n) / n
        local = np.column_stack([a * np.cos(theta), b * np.sin(theta)])
        c, s = math.cos(lens.angle), math.sin(lens.angle)
        rotation = np.array([[c, -s], [s, c]])
        return center + local @ rotation.T
    if lens.shape == "polygon":
        corners = np.asarray(lens.points, dtype=float)
        if _signed_polygon_area(corners) < 0:
            corners = corners[::-1]
        nxt = np.roll(corners, -1, axis=0)
        lengths = np.linalg.norm(nxt - corners, axis=1)
        perimeter = lengths.sum()
        pieces = [
            max(1, math.ceil(length / h), math.ceil(8 * length / perimeter))
            for length in lengths
        ]
        points = [
            a + (b - a) * (i / k)
            for a, b, k in zip(corners, nxt, pieces, strict=True)
            for i in range(k)
        ]
        return np.asarray(points)
    raise ValueError(f"lens shape {lens.shape!r} has no polygon")


def _signed_polygon_area(points: NDArray[np.float64]) -> float:
    x, y = points[:, 0], points[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def points_in_polygon(
    points: NDArray[np.float64], polygon: NDArray[np.float64]
) -> NDArray[np.bool_]:
    """Crossing-number test, vectorised over points and polygon edges."""
    x = points[:, 0:1]
    y = points[:, 1:2]
    xa, ya = polygon[None, :, 0], polygon[None, :, 1]
    nxt = np.roll(polygon, -1, axis=0)
    xb, yb = nxt[None, :, 0], nxt[None, :, 1]
    straddles = (ya > y) != (yb > y)
    with np.errstate(divide="ignore", invalid="ignore"):
        crossing_x = xa + (y - ya) * (xb - xa) / (yb - ya)
    crossings = straddles & (x < crossing_x)
    return np.asarray(crossings.sum(axis=1) % 2 == 1)


def _distance_to_segments(
    points: NDArray[np.float64], a: NDArray[np.float64], b: NDArray[np.float64]
) -> NDArray[np.float64]:
    ab = b - a
    ap = points[:, None, :] - a[None, :, :]
    t = np.clip(np.sum(ap * ab, axis=-1) / np.sum(ab * ab, axis=-1), 0.0, 1.0)
    closest = a[None, :, :] + t[..., None] * ab[None, :, :]
    return np.linalg.norm(points[:, None, :] - closest, axis=-1).min(axis=1)


def structured_mesh(extent: list[float], nx: int, ny: int) -> Mesh2D:
    """Right-triangle mesh of the rectangle, all FLUID, no interface.

    Every cell (i, j) is split along its (i, j)-(i+1, j+1) diagonal, so the
    lumped-mass P1 discretisation of -Δ is the five-point stencil.
    """
    x0, x1, y0, y1 = extent
    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    vertices = np.column_stack([gx.ravel(), gy.ravel()])

    def node(i: NDArray[np.int64], j: NDArray[np.int64]) -> NDArray[np.int64]:
        return i * (ny + 1) + j

    i, j = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
    i, j = i.ravel(), j.ravel()
    lower = np.column_stack([node(i, j), node(i + 1, j), node(i + 1, j + 1)])
    upper = np.column_stack([node(i, j), node(i + 1, j + 1), node(i, j + 1)])
    triangles = np.vstack([lower, upper])
    labels = np.full(len(triangles), Label.FLUID, dtype=np.int8)
    return mesh_from_arrays(vertices, triangles, labels)


def build_mesh(domain: DomainSpec, settings: Settings | None = None) -> Mesh2D:
    """Triangulate the rectangle with the lens boundary as mesh edges.

    The lens polygon, the subdivided outer boundary and a triangular lattice
    of spacing ``h_mesh`` are triangulated with Delaunay. Lattice points are
    kept at least 0.6h away from lens edges, so every lens edge of length ≤ h
    has an empty diametral disk and therefore appears in the triangulation.

    Raises:
        LensTouchesBoundary: the lens comes closer than 2h to ∂Ω.
        InterfaceNotFitted: a lens edge is missing from the triangulation.
        DegenerateElement: a triangle is smaller than the area threshold.
    """
    settings = settings or get_settings()
    x0, x1, y0, y1 = domain.extent
    h = domain.h_mesh
    width, height = x1 - x0, y1 - y0
    nx, ny = math.ceil(width / h - 1e-9), math.ceil(height / h - 1e-9)

    if domain.lens.shape == "none":
        mesh = structured_mesh(domain.extent, nx, ny)
        logger.debug("geometry.mesh_built", nodes=mesh.n_nodes, lens="none")
        return mesh

    polygon = lens_polygon(domain.lens, h)
    margin = float(
        np.min(
            np.minimum.reduce(
                [
                    polygon[:, 0] - x0,
                    x1 - polygon[:, 0],
                    polygon[:, 1] - y0,
                    y1 - polygon[:, 1],
                ]
            )
        )
    )
    if margin < 2.0 * h * (1.0 - 1e-9):
        raise LensTouchesBoundary(
            "lens must keep a margin of two elements from the outer boundary",
            margin=margin,
            required=2.0 * h,
        )

    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    outer = np.vstack(
        [
            np.column_stack([xs, np.full_like(xs, y0)]),
            np.column_stack([xs, np.full_like(xs, y1)]),
            np.column_stack([np.full(ny - 1, x0), ys[1:-1]]),
            np.column_stack([np.full(ny - 1, x1), ys[1:-1]]),
        ]
    )

    row_height = h * math.sqrt(3.0) / 2.0
    lattice = np.array(
        [
            (x0 + (i + 0.5 * (j % 2)) * h, y0 + j * row_height)
            for j in range(math.ceil(height / row_height) + 1)
            for i in range(-1, nx + 2)
        ]
    )
    wall = np.minimum.reduce(
        [lattice[:, 0] - x0, x1 - lattice[:, 0], lattice[:, 1] - y0, y1 - lattice[:, 1]]
    )
    lattice = lattice[wall >= 0.5 * h]
    away = _distance_to_segments(lattice, polygon, np.roll(polygon, -1, axis=0))
    lattice = lattice[away >= 0.6 * h]

    points = np.vstack([polygon, outer, lattice])
    simplices = Delaunay(points).simplices.astype(np.int64)
    p = points[simplices]
    e1 = p[:, 1] - p[:, 0]
    e2 = p[:, 2] - p[:, 0]
    twice = np.abs(e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])
    simplices = simplices[twice > 1e-12 * h * h]

    used = np.unique(simplices)
    remap = np.full(len(points), -1, dtype=np.int64)
    remap[used] = np.arange(len(used))
    vertices = points[used]
    triangles = remap[simplices]
    polygon_ids = remap[np.arange(len(polygon))]

    centroids = vertices[triangles].mean(axis=1)
    labels = np.where(
        points_in_polygon(centroids, polygon), Label.LENS, Label.FLUID
    ).astype(np.int8)
    mesh = mesh_from_arrays(vertices, triangles, labels)

    min_area = float(mesh.areas.min())
    threshold = settings.min_element_area_ratio * h * h
    if min_area < threshold:
        raise DegenerateElement(
            "triangle below the area threshold", min_area=min_area, threshold=threshold
        )

    expected = {
        tuple(sorted((int(a), int(b))))
        for a, b in zip(polygon_ids, np.roll(polygon_ids, -1), strict=True)
    }
    fitted = {tuple(int(v) for v in edge) for edge in mesh.interface_edges}
    if np.any(polygon_ids < 0) or expected != fitted:
        raise InterfaceNotFitted(
            "lens polygon is not reproduced by interface edges",
            expected=len(expected),
            found=len(fitted),
        )
    if np.intersect1d(mesh.lens_nodes, mesh.boundary_nodes).size:
        raise LensTouchesBoundary("lens triangle touches the outer boundary")

    logger.debug(
        "geometry.mesh_built",
        nodes=mesh.n_nodes,
        triangles=mesh.n_triangles,
        interface_edges=len(mesh.interface_edges),
        lens=domain.lens.shape,
    )
    return mesh


# ============================================================================
# MAPPING
# ============================================================================


def max_admissible_step(h: VelocityField) -> float:
    """τ₀ = 0.5 / max‖Dh‖₂, infinite for a piecewise-constant field."""
    if len(h.gradients) == 0:
        return math.inf
    largest = float(np.linalg.norm(h.gradients, ord=2, axis=(1, 2)).max())
    return math.inf if largest == 0.0 else 0.5 / largest


def transform_factors(mesh: Mesh2D, h: VelocityField, tau: float) -> TransformRecord:
    """Evaluate DF_τ, I_τ and A_τ on every triangle.

    Raises:
        FoldedElement: some I_τ ≤ 0.
    """
    if h.gradients.shape != (mesh.n_triangles, 2, 2):
        raise InvalidVelocityField("velocity field belongs to another mesh")
    jacobians = np.eye(2)[None, :, :] + tau * h.gradients
    determinants = np.linalg.det(jacobians)
    if np.any(determinants <= 0.0):
        worst = int(np.argmin(determinants))
        raise FoldedElement(
            "deformation folds a triangle",
            tau=tau,
            element=worst,
            determinant=float(determinants[worst]),
        )
    inverse_transposes = np.linalg.inv(jacobians).transpose(0, 2, 1)
    return TransformRecord(
        tau=tau,
        jacobians=jacobians,
        determinants=determinants,
        inverse_transposes=inverse_transposes,
        alpha0=float(determinants.min()),
        alpha1=float(determinants.max()),
        beta1=float(np.linalg.norm(inverse_transposes, ord=2, axis=(1, 2)).max()),
        beta2=float(np.linalg.norm(jacobians, ord=2, axis=(1, 2)).max()),
    )


def perturb_mesh(mesh: Mesh2D, h: VelocityField, tau: float) -> Mesh2D:
    """Move every node by τh; connectivity and labels are kept."""
    transform_factors(mesh, h, tau)
    if tau == 0.0 or h.is_zero:
        return mesh
    return mesh.with_vertices(mesh.vertices + tau * h.values)


# ============================================================================
# ADMISSIBILITY
# ============================================================================


def interface_turning_angles(mesh: Mesh2D) -> NDArray[np.float64]:
    """Turning angle (radians) at every interface node.

    Nodes where Γ does not pass exactly twice get π.
    """
    edges = mesh.interface_edges
    if len(edges) == 0:
        return np.zeros(0)
    nodes = np.unique(edges)
    angles = np.empty(len(nodes))
    for index, node in enumerate(nodes):
        rows = np.flatnonzero(np.any(edges == node, axis=1))
        if len(rows) != 2:
            angles[index] = math.pi
            continue
        u, w = (int(edges[r][edges[r] != node][0]) for r in rows)
        d1 = mesh.vertices[u] - mesh.vertices[node]
        d2 = mesh.vertices[w] - mesh.vertices[node]
        cosine = float(np.dot(d1, d2) / (np.linalg.norm(d1) * np.linalg.norm(d2)))
        angles[index] = math.pi - math.acos(max(-1.0, min(1.0, cosine)))
    return angles


def element_quality(mesh: Mesh2D) -> NDArray[np.float64]:
    """4√3·area / Σ edge², equal to 1 for an equilateral triangle."""
    p = mesh.vertices[mesh.triangles]
    squared = np.sum((p[:, [1, 2, 0]] - p) ** 2, axis=(1, 2))
    return 4.0 * math.sqrt(3.0) * mesh.areas / squared


def check_admissible(
    mesh: Mesh2D, lipschitz_bound: float | None = None
) -> AdmissibilityReport:
    """Diagnose lens interiority, interface turning angle and element quality.

    ``lipschitz_bound`` is the maximum turning angle in degrees; it defaults
    to ``Settings.lipschitz_bound_deg``.
    """
    if lipschitz_bound is None:
        lipschitz_bound = get_settings().lipschitz_bound_deg
    outer = mesh.vertices[mesh.boundary_nodes]
    lower, upper = outer.min(axis=0), outer.max(axis=0)
    lens_points = mesh.vertices[mesh.lens_nodes]
    tol = 1e-12 * float(np.max(upper - lower))
    interior = bool(
        not np.intersect1d(mesh.lens_nodes, mesh.boundary_nodes).size
        and np.all(lens_points > lower + tol)
        and np.all(lens_points < upper - tol)
    )
    angles = interface_turning_angles(mesh)
    max_turning = math.degrees(float(angles.max(initial=0.0)))
    quality = element_quality(mesh)
    min_quality = float(quality.min())
    lipschitz_ok = max_turning <= lipschitz_bound
    return AdmissibilityReport(
        passed=interior and lipschitz_ok and min_quality > 0.0,
        lens_interior=interior,
        max_turning_angle_deg=max_turning,
        lipschitz_bound_deg=lipschitz_bound,
        lipschitz_ok=lipschitz_ok,
        min_quality=min_quality,
        min_area=float(mesh.areas.min()),
        interface_edges=len(mesh.interface_edges),
    )


# ============================================================================
# MESH FILES
# ============================================================================


def write_mesh(mesh: Mesh2D, path: Path) -> Path:
    """Write the NODES / ELEMS / GAMMA text format."""
    path = Path(path)
    lines = [
        f"NODES {mesh.n_nodes} / ELEMS {mesh.n_triangles} / "
        f"GAMMA {len(mesh.interface_edges)}"
    ]
    lines += [f"{i} {x!r} {y!r}" for i, (x, y) in enumerate(mesh.vertices.tolist())]
    lines += [
        f"{i} {a} {b} {c} {Label(int(label)).name}"
        for i, ((a, b, c), label) in enumerate(
            zip(mesh.triangles.tolist(), mesh.labels.tolist(), strict=True)
        )
    ]
    lines += [f"{i} {a} {b}" for i, (a, b) in enumerate(mesh.interface_edges.tolist())]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def read_mesh(path: Path) -> Mesh2D:
    """Parse the NODES / ELEMS / GAMMA text format.

    Raises:
        MeshFormatError: with the 1-based line number of the first bad line.
    """
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines:
        raise MeshFormatError("empty mesh file", line=1)
    header = lines[0].replace("/", " ").split()
    try:
        if header[0::2] != ["NODES", "ELEMS", "GAMMA"]:
            raise ValueError
        n, m, k = (int(v) for v in header[1::2])
    except (ValueError, IndexError):
        raise MeshFormatError("bad header, expected NODES n / ELEMS m / GAMMA k", line=1) from None
    if len(lines) < 1 + n + m + k:
        raise MeshFormatError("file ends early", line=len(lines) + 1)

    vertices = np.empty((n, 2))
    triangles = np.empty((m, 3), dtype=np.int64)
    labels = np.empty(m, dtype=np.int8)
    gamma = np.empty((k, 2), dtype=np.int64)
    for offset, line in enumerate(lines[1 : 1 + n + m + k]):
        number = offset + 2
        fields = line.split()
        try:
            if offset < n:
                if len(fields) != 3 or int(fields[0]) != offset:
                    raise ValueError
                vertices[offset] = [float(fields[1]), float(fields[2])]
            elif offset < n + m:
                e = offset - n
                if len(fields) != 5 or int(fields[0]) != e:
                    raise ValueError
                triangles[e] = [int(v) for v in fields[1:4]]
                labels[e] = Label[fields[4]]
            else:
                g = offset - n - m
                if len(fields) != 3 or int(fields[0]) != g:
                    raise ValueError
                gamma[g] = [int(fields[1]), int(fields[2])]
        except (ValueError, KeyError):
            raise MeshFormatError(f"cannot parse {line!r}", line=number) from None
    if triangles.size and (triangles.min() < 0 or triangles.max() >= n):
        raise MeshFormatError("element refers to a missing node", line=n + 2)

    mesh = mesh_from_arrays(vertices, triangles, labels)
    given = {tuple(sorted(edge)) for edge in gamma.tolist()}
    derived = {tuple(edge) for edge in mesh.interface_edges.tolist()}
    if given != derived:
        raise MeshFormatError(
            "GAMMA section does not match the LENS/FLUID labels", line=n + m + 2
        )
    return mesh
