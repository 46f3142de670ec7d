"""Unit tests for the pydantic models."""

import math

import numpy as np
import pytest
from pydantic import ValidationError

from lensopt.models import (
    CheckResult,
    DomainSpec,
    FDReport,
    FDSlope,
    LensSpec,
    MaterialParams,
    ProfileSpec,
    ShapeGradientReport,
    SubdomainParams,
    TimeGrid,
    VelocitySpec,
    VerificationSummary,
)


class TestSubdomainParams:
    """Test material coefficient validation."""

    def test_alias_lambda(self):
        """Test that ``lambda`` populates ``lam``."""
        params = SubdomainParams.model_validate(
            {"lambda": 2.0, "rho": 1.0, "b": 0.1, "delta": 0.5}
        )
        assert params.lam == 2.0
        assert params.k == 0.0

    def test_delta_outside_unit_interval(self):
        """Test that δ = 1.2 is rejected with the damping-mix message."""
        with pytest.raises(ValidationError, match=r"δ ∈ \(0,1\)"):
            SubdomainParams(lam=1.0, rho=1.0, b=0.1, delta=1.2)

    @pytest.mark.parametrize("delta", [0.0, 1.0])
    def test_delta_endpoints_rejected(self, delta):
        """Test that δ must lie strictly inside (0, 1)."""
        with pytest.raises(ValidationError):
            SubdomainParams(lam=1.0, rho=1.0, b=0.1, delta=delta)

    @pytest.mark.parametrize("field", ["lam", "rho", "b"])
    def test_nonpositive_coefficients_rejected(self, field):
        """Test that λ, ϱ and b must be positive."""
        values = {"lam": 1.0, "rho": 1.0, "b": 0.1, "delta": 0.5, field: 0.0}
        with pytest.raises(ValidationError):
            SubdomainParams(**values)

    def test_from_acoustics(self):
        """Test k = (1 + B/(2A))/λ."""
        params = SubdomainParams.from_acoustics(
            lam=2.0, rho=1.0, b=0.1, delta=0.5, nonlinearity_ratio=5.0
        )
        assert params.k == pytest.approx(3.5 / 2.0)
        assert params.sound_speed == pytest.approx(math.sqrt(2.0))


class TestMaterialParams:
    """Test the two-subdomain parameter set."""

    def test_k_max(self, materials):
        """Test that k_max takes the larger |k|."""
        assert materials.k_max == 0.1

    def test_for_label(self, materials):
        """Test label lookup."""
        assert materials.for_label(1).lam == 2.0
        assert materials.for_label(0).lam == 1.0

    def test_q_below_one_rejected(self, fluid):
        """Test that q ≥ 1 is required."""
        with pytest.raises(ValidationError):
            MaterialParams(lens=fluid, fluid=fluid, q=0.5)


class TestTimeGrid:
    """Test the uniform time grid."""

    def test_dt_and_times(self):
        """Test step size and time points."""
        grid = TimeGrid(final_time=0.5, steps=4)
        assert grid.dt == 0.125
        np.testing.assert_allclose(grid.times(), [0.0, 0.125, 0.25, 0.375, 0.5])

    def test_trapezoid_weights_sum_to_t(self):
        """Test that the trapezoid weights integrate constants exactly."""
        grid = TimeGrid(final_time=0.7, steps=9)
        weights = grid.trapezoid_weights()
        assert weights.sum() == pytest.approx(0.7)
        assert weights[0] == weights[-1] == pytest.approx(0.5 * grid.dt)

    def test_single_step_rejected(self):
        """Test that at least two steps are required."""
        with pytest.raises(ValidationError):
            TimeGrid(final_time=1.0, steps=1)


class TestGeometryInput:
    """Test domain and lens specifications."""

    def test_polygon_needs_three_points(self):
        """Test that a polygon lens needs at least three vertices."""
        with pytest.raises(ValidationError):
            LensSpec(shape="polygon", points=[[0.4, 0.4], [0.6, 0.4]])

    def test_extent_must_be_positive(self):
        """Test that an empty rectangle is rejected."""
        with pytest.raises(ValidationError):
            DomainSpec(extent=[0.0, 0.0, 0.0, 1.0])

    def test_h_mesh_too_coarse(self):
        """Test that h must resolve the rectangle."""
        with pytest.raises(ValidationError):
            DomainSpec(extent=[0.0, 1.0, 0.0, 1.0], h_mesh=0.8)


class TestProfileAndVelocitySpecs:
    """Test profile and deformation-direction specifications."""

    def test_file_profile_needs_file(self):
        """Test that a file profile names its file."""
        with pytest.raises(ValidationError):
            ProfileSpec(profile="file")

    def test_modes_must_be_positive(self):
        """Test eigenmode numbers."""
        with pytest.raises(ValidationError):
            ProfileSpec(profile="eigenmode", modes=[0, 1])

    def test_velocity_file_needs_file(self):
        """Test that a file velocity names its file."""
        with pytest.raises(ValidationError):
            VelocitySpec(kind="file")


class TestReports:
    """Test report rendering."""

    def test_verification_summary_ignores_advisory_failures(self):
        """Test that only required checks decide the verdict."""
        summary = VerificationSummary(
            checks=[
                CheckResult(name="a", passed=True),
                CheckResult(name="b", passed=False, required=False),
            ]
        )
        assert summary.passed
        text = str(summary)
        assert "[WARN] b" in text
        assert text.endswith("overall: PASS")

    def test_verification_summary_fails_on_required(self):
        """Test that a failed required check fails the summary."""
        summary = VerificationSummary(
            checks=[CheckResult(name="a", passed=False, value=1.0, threshold=0.5)]
        )
        assert not summary.passed
        assert "[FAIL] a value=1.000000e+00 threshold=5.000e-01" in str(summary)

    def test_gradient_report_text(self):
        """Test the text rendering of a gradient report."""
        report = ShapeGradientReport(
            dj_volume=0.5,
            volume_terms={"dh_contraction": 0.5},
            fd=FDReport(
                cost=1.0,
                slopes=[
                    FDSlope(tau=0.01, cost_plus=1.005, cost_minus=0.995, one_sided=0.5, central=0.5)
                ],
                extrapolated=0.5,
                plateau=0.5,
            ),
            fd_relative_error=0.0,
        )
        text = str(report)
        assert text.startswith("dJ_volume = 5.000000000000e-01")
        assert "fd_plateau" in text
        assert "dJ_boundary" not in text
