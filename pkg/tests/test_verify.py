"""Tests for the oracle and invariant suite."""

import pytest

from lensopt.runconfig import parse_config_text
from lensopt.service import LensOptService
from lensopt.verify import kernel_checks, run_verification, transform_checks


@pytest.fixture
def service(config_text):
    return LensOptService(parse_config_text(config_text))


class TestKernelChecks:
    """Test the pointwise q-Laplace checks."""

    @pytest.mark.parametrize("q", [2.0, 3.0, 3.5])
    def test_all_pass(self, q):
        """Test that every kernel check passes for admissible q."""
        checks = kernel_checks(q, seed=1)
        assert [c.name for c in checks] == [
            "kernel.representation_formula",
            "kernel.monotonicity",
            "kernel.antipodal_equality",
            "kernel.young_constant",
        ]
        assert all(c.passed and c.required for c in checks)


class TestTransformChecks:
    """Test the derivatives of the transformation factors."""

    def test_rates_match_divergence_and_gradient(self, service):
        """Test d/dτ I_τ = div h and d/dτ A_τ = -Dhᵀ at τ = 0."""
        checks = transform_checks(service.problem, service.velocity_fields[0])
        assert all(c.passed for c in checks)


class TestRunVerification:
    """Test the full suite on a small configuration."""

    def test_small_problem(self, service):
        """Test the required checks that hold on any healthy problem."""
        outcome = run_verification(
            service.problem, service.velocity_fields, service.config, threads=1
        )
        checks = {c.name: c for c in outcome.summary.checks}
        for name in (
            "geometry.admissible",
            "state.degeneracy",
            "state.energy_finite",
            "adjoint.transposition",
            "adjoint.annihilation",
            "gradient[0].fd_agreement",
        ):
            assert checks[name].passed, str(checks[name])
        assert not checks["adjoint.scheme_gap"].required
        assert not checks["adjoint.smallness"].required
        assert "state.energy_decay" not in checks
        assert len(outcome.gradients) == 1
        assert outcome.gradients[0].fd_relative_error <= 0.05

    def test_boundary_and_continuity_are_advisory(self, config_text):
        """Test the optional interface and continuity checks."""
        text = config_text.replace(
            "[gradient]\n", "[gradient]\nboundary = true\ncontinuity = true\n"
        )
        service = LensOptService(parse_config_text(text))
        outcome = run_verification(
            service.problem, service.velocity_fields, service.config
        )
        checks = {c.name: c for c in outcome.summary.checks}
        assert not checks["gradient[0].volume_boundary"].required
        assert not checks["gradient[0].continuity"].required
        assert outcome.gradients[0].dj_boundary is not None

    def test_linear_problem_checks_energy(self, config_text):
        """Test that k = 0 adds the energy decay check."""
        text = config_text.replace("k = 0.05", "k = 0.0").replace("k = 0.1", "k = 0.0")
        service = LensOptService(parse_config_text(text))
        outcome = run_verification(service.problem, [], service.config)
        checks = {c.name: c for c in outcome.summary.checks}
        assert checks["state.energy_decay"].passed
        assert not any(name.startswith("gradient[") for name in checks)
