"""Tests for P1 assembly."""

import numpy as np
import pytest

from lensopt.fem import Coefficients, P1Space
from lensopt.geometry import structured_mesh
from lensopt.models import Label


class TestLumpedMass:
    """Test vertex-quadrature masses."""

    def test_total_mass_is_area(self, lens_mesh):
        """Test Σ m_a = |Ω|."""
        assert P1Space(lens_mesh).mass.sum() == pytest.approx(1.0)

    def test_weighted_mass(self, lens_mesh, materials):
        """Test Σ lumped(1/λ) = |Ω_lens|/λ_lens + |Ω_fluid|/λ_fluid."""
        space = P1Space(lens_mesh)
        coef = Coefficients.from_params(lens_mesh, materials)
        lens_area = lens_mesh.areas[lens_mesh.labels == Label.LENS].sum()
        expected = lens_area / 2.0 + (1.0 - lens_area) / 1.0
        assert space.lumped(coef.inv_lam).sum() == pytest.approx(expected)


class TestStiffness:
    """Test the P1 Laplacian."""

    def test_constants_in_kernel(self, lens_mesh):
        """Test that the full stiffness annihilates constants."""
        space = P1Space(lens_mesh)
        full = space.assemble_full(space.stiffness_elements())
        np.testing.assert_allclose(full @ np.ones(lens_mesh.n_nodes), 0.0, atol=1e-12)

    def test_five_point_stencil(self):
        """Test the stencil at an interior node of the structured mesh."""
        mesh = structured_mesh([0.0, 1.0, 0.0, 1.0], 4, 4)
        space = P1Space(mesh)
        full = space.assemble_full(space.stiffness_elements()).toarray()
        node = 2 * 5 + 2
        row = full[node]
        assert row[node] == pytest.approx(4.0)
        for neighbour in (node - 1, node + 1, node - 5, node + 5):
            assert row[neighbour] == pytest.approx(-1.0)
        assert np.count_nonzero(np.abs(row) > 1e-12) == 5

    def test_free_matrix_is_symmetric_positive(self, lens_mesh, materials):
        """Test the Dirichlet stiffness with material weights."""
        space = P1Space(lens_mesh)
        coef = Coefficients.from_params(lens_mesh, materials)
        matrix = space.stiffness(coef.inv_rho).toarray()
        np.testing.assert_allclose(matrix, matrix.T, atol=1e-12)
        assert np.linalg.eigvalsh(matrix).min() > 0


class TestCoefficients:
    """Test elementwise coefficients from labels."""

    def test_damping_split(self, lens_mesh, materials):
        """Test b(1-δ) and bδ per subdomain."""
        coef = Coefficients.from_params(lens_mesh, materials)
        lens = lens_mesh.labels == Label.LENS
        np.testing.assert_allclose(coef.b_visc[lens], 0.03 * 0.6)
        np.testing.assert_allclose(coef.b_delta[~lens], 0.02 * 0.5)
        np.testing.assert_allclose(coef.k_over_lam[lens], 0.05 / 2.0)

    def test_gradients_of_linear_function(self, lens_mesh):
        """Test that P1 gradients reproduce a linear function exactly."""
        space = P1Space(lens_mesh)
        values = 2.0 * lens_mesh.vertices[:, 0] - 3.0 * lens_mesh.vertices[:, 1]
        grads = space.element_gradients(values)
        np.testing.assert_allclose(grads, np.broadcast_to([2.0, -3.0], grads.shape), atol=1e-10)
