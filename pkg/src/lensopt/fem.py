"""P1 finite elements on a :class:`~lensopt.geometry.Mesh2D`.

Gradients are constant per triangle, so every gradient integral is exact per
element; terms without gradients use the lumped (vertex) quadrature
∫_T f ≈ |T|/3 Σ f(vertex). Sparse matrices are assembled from precomputed
COO patterns, either over all nodes or restricted to the free (interior)
nodes that carry the Dirichlet unknowns.
"""

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp
from numpy.typing import NDArray

from .geometry import Mesh2D
from .models import Label, MaterialParams


@dataclass(frozen=True, eq=False)
class Coefficients:
    """Elementwise material coefficients derived from the labels."""

    inv_lam: NDArray[np.float64]
    k_over_lam: NDArray[np.float64]
    inv_rho: NDArray[np.float64]
    b_visc: NDArray[np.float64]
    b_delta: NDArray[np.float64]
    k: NDArray[np.float64]
    q: float

    @classmethod
    def from_params(cls, mesh: Mesh2D, params: MaterialParams) -> "Coefficients":
        lens = mesh.labels == Label.LENS

        def pick(attr: str) -> NDArray[np.float64]:
            return np.where(
                lens, getattr(params.lens, attr), getattr(params.fluid, attr)
            ).astype(float)

        lam, k, rho, b, delta = (pick(a) for a in ("lam", "k", "rho", "b", "delta"))
        return cls(
            inv_lam=1.0 / lam,
            k_over_lam=k / lam,
            inv_rho=1.0 / rho,
            b_visc=b * (1.0 - delta),
            b_delta=b * delta,
            k=k,
            q=params.q,
        )


class P1Space:
    """Assembly helpers bound to one mesh."""

    def __init__(self, mesh: Mesh2D) -> None:
        self.mesh = mesh
        self.n_nodes = mesh.n_nodes
        self.triangles = mesh.triangles
        self.areas = mesh.areas
        self.grads = mesh.gradients
        self.free = mesh.free_nodes
        self.n_free = len(self.free)

        rows = np.broadcast_to(self.triangles[:, :, None], (mesh.n_triangles, 3, 3))
        cols = np.broadcast_to(self.triangles[:, None, :], (mesh.n_triangles, 3, 3))
        self._rows = rows.ravel()
        self._cols = cols.ravel()
        index = np.full(self.n_nodes, -1, dtype=np.int64)
        index[self.free] = np.arange(self.n_free)
        free_rows = index[self._rows]
        free_cols = index[self._cols]
        self._keep = (free_rows >= 0) & (free_cols >= 0)
        self._free_rows = free_rows[self._keep]
        self._free_cols = free_cols[self._keep]

    # ------------------------------------------------------------------
    # vectors
    # ------------------------------------------------------------------

    def lumped(self, coefficient: NDArray[np.float64] | float = 1.0) -> NDArray[np.float64]:
        """Diagonal of the lumped mass matrix weighted by an element coefficient."""
        weights = np.broadcast_to(self.areas * coefficient / 3.0, (3, len(self.areas)))
        return np.bincount(
            self.triangles.T.ravel(), weights=weights.ravel(), minlength=self.n_nodes
        )

    @cached_property
    def mass(self) -> NDArray[np.float64]:
        return self.lumped()

    def element_gradients(self, values: NDArray[np.float64]) -> NDArray[np.float64]:
        """(..., m, 2) elementwise gradients of nodal fields (..., n)."""
        return np.einsum("...ea,eaj->...ej", values[..., self.triangles], self.grads)

    def load(self, flux: NDArray[np.float64]) -> NDArray[np.float64]:
        """Nodal vector Σ_T |T| flux_T · ∇φ_a for an elementwise flux (m, 2)."""
        local = self.areas[:, None] * np.einsum("eaj,ej->ea", self.grads, flux)
        return np.bincount(
            self.triangles.ravel(), weights=local.ravel(), minlength=self.n_nodes
        )

    def nodal_load(self, values: NDArray[np.float64]) -> NDArray[np.float64]:
        """Scatter (m, 3) per-element vertex contributions to nodes."""
        return np.bincount(
            self.triangles.ravel(), weights=values.ravel(), minlength=self.n_nodes
        )

    def embed(self, free_values: NDArray[np.float64]) -> NDArray[np.float64]:
        full = np.zeros(free_values.shape[:-1] + (self.n_nodes,))
        full[..., self.free] = free_values
        return full

    # ------------------------------------------------------------------
    # matrices
    # ------------------------------------------------------------------

    def stiffness_elements(
        self, tensors: NDArray[np.float64] | None = None, weights: NDArray[np.float64] | float = 1.0
    ) -> NDArray[np.float64]:
        """(m, 3, 3) element matrices |T| ∇φ_a · T_e ∇φ_b."""
        if tensors is None:
            local = np.einsum("eai,ebi->eab", self.grads, self.grads)
        else:
            local = np.einsum("eai,eij,ebj->eab", self.grads, tensors, self.grads)
        scale = self.areas * weights
        return local * np.asarray(scale)[:, None, None]

    def consistent_mass_elements(self) -> NDArray[np.float64]:
        local = (np.ones((3, 3)) + np.eye(3)) / 12.0
        return self.areas[:, None, None] * local[None, :, :]

    def assemble_free(self, elements: NDArray[np.float64]) -> sp.csr_matrix:
        data = elements.ravel()[self._keep]
        return sp.coo_matrix(
            (data, (self._free_rows, self._free_cols)), shape=(self.n_free, self.n_free)
        ).tocsr()

    def assemble_full(self, elements: NDArray[np.float64]) -> sp.csr_matrix:
        return sp.coo_matrix(
            (elements.ravel(), (self._rows, self._cols)),
            shape=(self.n_nodes, self.n_nodes),
        ).tocsr()

    def stiffness(self, weights: NDArray[np.float64] | float = 1.0) -> sp.csr_matrix:
        """Free-node stiffness matrix ∫ w ∇φ_a·∇φ_b."""
        return self.assemble_free(self.stiffness_elements(weights=weights))
