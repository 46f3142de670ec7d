"""Unit tests for configuration management.

Tests Settings validation, defaults, environment variable handling, and caching.
"""

from pathlib import Path

import pytest
from pydantic import ValidationError

from lensopt.config import Settings, get_settings


class TestSettingsDefaults:
    """Test default settings values."""

    def test_default_log_level(self, monkeypatch):
        """Test default log level."""
        monkeypatch.delenv("LOG_LEVEL", raising=False)
        settings = Settings()
        assert settings.log_level == "INFO"

    def test_default_output_root(self, monkeypatch):
        """Test default output root."""
        monkeypatch.delenv("OUTPUT_ROOT", raising=False)
        settings = Settings()
        assert settings.output_root == Path("runs")

    def test_default_threads(self, monkeypatch):
        """Test default worker thread count."""
        monkeypatch.delenv("DEFAULT_THREADS", raising=False)
        settings = Settings()
        assert settings.default_threads == 1

    def test_default_numerical_guards(self):
        """Test default admissibility and oracle thresholds."""
        settings = Settings()
        assert settings.lipschitz_bound_deg == 150.0
        assert settings.fd_tolerance == 0.05
        assert settings.volume_boundary_tolerance == 0.10
        assert settings.fd_eps_abs == 1e-12


class TestSettingsCustomValues:
    """Test settings with custom values."""

    def test_custom_log_format(self):
        """Test text log format."""
        settings = Settings(log_format="text")
        assert settings.log_format == "text"

    def test_custom_threads(self):
        """Test custom thread count."""
        settings = Settings(default_threads=8)
        assert settings.default_threads == 8


class TestSettingsValidation:
    """Test settings validation rules."""

    def test_invalid_log_level(self):
        """Test that unknown log levels are rejected."""
        with pytest.raises(ValidationError):
            Settings(log_level="VERBOSE")

    def test_zero_threads_rejected(self):
        """Test that at least one thread is required."""
        with pytest.raises(ValidationError):
            Settings(default_threads=0)

    def test_lipschitz_bound_above_180_rejected(self):
        """Test that turning angles beyond a half turn are rejected."""
        with pytest.raises(ValidationError):
            Settings(lipschitz_bound_deg=200.0)

    def test_nonpositive_fd_tolerance_rejected(self):
        """Test that the oracle tolerance must be positive."""
        with pytest.raises(ValidationError):
            Settings(fd_tolerance=0.0)


class TestSettingsEnvironment:
    """Test environment variable handling."""

    def test_env_overrides_threads(self, monkeypatch):
        """Test DEFAULT_THREADS from the environment."""
        monkeypatch.setenv("DEFAULT_THREADS", "4")
        assert Settings().default_threads == 4

    def test_env_is_case_insensitive(self, monkeypatch):
        """Test lower-case environment names."""
        monkeypatch.delenv("LOG_LEVEL", raising=False)
        monkeypatch.setenv("log_level", "ERROR")
        assert Settings().log_level == "ERROR"

    def test_env_disables_metrics_file(self, monkeypatch):
        """Test METRICS_TEXTFILE=false."""
        monkeypatch.setenv("METRICS_TEXTFILE", "false")
        assert Settings().metrics_textfile is False


class TestSettingsCaching:
    """Test get_settings caching."""

    def test_get_settings_is_cached(self):
        """Test that repeated calls return the same instance."""
        assert get_settings() is get_settings()

    def test_cache_clear_reloads(self, monkeypatch):
        """Test that clearing the cache picks up new environment values."""
        first = get_settings()
        monkeypatch.setenv("DEFAULT_THREADS", "3")
        get_settings.cache_clear()
        second = get_settings()
        assert second is not first
        assert second.default_threads == 3
