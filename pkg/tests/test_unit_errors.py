"""Unit tests for the error hierarchy and error records."""

import json

import numpy as np
import pytest

from lensopt.errors import (
    ConfigParseError,
    ConfigValidationError,
    DegeneracyBreach,
    FieldFormatError,
    FoldedElement,
    GeometryError,
    LensOptError,
    LineSearchExhausted,
    MeshFormatError,
    SingularLinearization,
    SolverFailure,
    StateError,
    StateMissing,
)


class TestHierarchy:
    """Test that every failure derives from LensOptError."""

    @pytest.mark.parametrize(
        "error",
        [
            FoldedElement("x", tau=0.1),
            MeshFormatError("x", line=3),
            SingularLinearization("x"),
            DegeneracyBreach("x", step=2),
            StateMissing("x"),
            SolverFailure("x", tau=0.5),
            LineSearchExhausted("x"),
            ConfigParseError("x", line=None),
            ConfigValidationError(["a: bad"]),
            FieldFormatError("x"),
        ],
    )
    def test_is_lensopt_error(self, error):
        """Test the common base class."""
        assert isinstance(error, LensOptError)

    def test_components(self):
        """Test the component labels used in error records."""
        assert FoldedElement("x", tau=0.1).component == "geometry"
        assert DegeneracyBreach("x", step=1).component == "state"
        assert StateMissing("x").component == "adjoint"
        assert SolverFailure("x", tau=1.0).component == "shape_gradient"
        assert LineSearchExhausted("x").component == "optimizer"
        assert ConfigParseError("x", line=1).component == "config"
        assert FieldFormatError("x").component == "fieldio"

    def test_subclassing(self):
        """Test intermediate classes."""
        assert issubclass(FoldedElement, GeometryError)
        assert issubclass(DegeneracyBreach, StateError)


class TestErrorRecords:
    """Test machine-readable error records."""

    def test_record_carries_context(self):
        """Test that the record names the error, component and context."""
        record = DegeneracyBreach("floor reached", step=12, min_factor=0.05).to_record()
        assert record == {
            "error": "DegeneracyBreach",
            "component": "state",
            "message": "floor reached",
            "context": {"step": 12, "min_factor": 0.05},
        }

    def test_record_is_json_serialisable(self):
        """Test that numpy scalars and arrays become plain values."""
        error = FoldedElement(
            "fold", tau=np.float64(0.25), element=np.int64(4), shape=(3, 2)
        )
        record = error.to_record()
        assert json.loads(json.dumps(record))["context"] == {
            "tau": 0.25,
            "element": 4.0,
            "shape": [3, 2],
        }

    def test_line_attributes(self):
        """Test that parse errors keep their line numbers."""
        assert MeshFormatError("bad", line=7).line == 7
        assert ConfigParseError("bad", line=None).line is None
        assert FieldFormatError("bad", line=3).context["line"] == 3

    def test_validation_error_lists_all(self):
        """Test that validation errors keep every message."""
        error = ConfigValidationError(["a: one", "b: two"])
        assert error.errors == ["a: one", "b: two"]
        assert "2 configuration error(s)" in str(error)

    def test_str_includes_context(self):
        """Test the human-readable rendering."""
        assert str(SolverFailure("failed", tau=0.5)) == "failed (tau=0.5)"
        assert str(StateMissing("no state")) == "no state"
