"""End-to-end runs through the service and the command line."""

import csv
import json

import numpy as np
import pytest

from lensopt.cli import EXIT_CHECKS_FAILED, EXIT_ERROR, EXIT_OK, main
from lensopt.errors import DegeneracyBreach
from lensopt.fieldio import read_csv
from lensopt.geometry import read_mesh
from lensopt.runconfig import parse_config, parse_config_text
from lensopt.service import LensOptService

pytestmark = pytest.mark.integration


def write_config(tmp_path, text, name="run.toml"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


class TestService:
    """Test run directories written by the service."""

    def test_solve_artifacts(self, config_file, tmp_path):
        """Test the solve artifacts and the manifest."""
        service = LensOptService(parse_config(config_file))
        result = service.run("solve", output=tmp_path / "out")
        out = result.directory
        for name in (
            "config.toml",
            "mesh.txt",
            "state_u.csv",
            "state_v.csv",
            "diagnostics.json",
            "metrics.prom",
            "manifest.json",
        ):
            assert (out / name).is_file(), name
        manifest = json.loads((out / "manifest.json").read_text(encoding="utf-8"))
        assert manifest["status"] == "success"
        assert manifest["seed"] == 7
        assert "state_u.csv" in manifest["artifacts"]
        assert manifest["config_toml"] == (out / "config.toml").read_text(encoding="utf-8")
        assert parse_config_text(manifest["config_toml"], config_file.parent) == service.config

        mesh = read_mesh(out / "mesh.txt")
        steps, u = read_csv(out / "state_u.csv", mesh)
        assert steps == list(range(9))
        np.testing.assert_array_equal(u[0], service.problem.u0)
        diagnostics = json.loads((out / "diagnostics.json").read_text(encoding="utf-8"))
        assert diagnostics["degeneracy"]["passed"]
        assert "lensopt_solves_total" in (out / "metrics.prom").read_text(encoding="utf-8")

    def test_default_output_root(self, config_file):
        """Test runs land under output_root/<command> by default."""
        service = LensOptService(parse_config(config_file))
        result = service.run("adjoint")
        assert result.directory == service.settings.output_root / "adjoint"
        report = json.loads((result.directory / "adjoint_report.json").read_text("utf-8"))
        assert report["scheme"] == "discrete"
        assert report["max_abs_p"] > 0

    def test_zero_velocity_gives_zero_gradient(self, config_text, tmp_path):
        """Test that h = 0 yields zero dJ and zero FD slopes."""
        text = config_text.replace('kind = "random"', 'kind = "zero"')
        service = LensOptService(parse_config_text(text))
        service.run("gradient", output=tmp_path / "out")
        reports = json.loads((tmp_path / "out" / "gradient.json").read_text("utf-8"))
        assert reports[0]["dj_volume"] == 0.0
        with (tmp_path / "out" / "fd_slopes.csv").open(encoding="utf-8") as handle:
            rows = list(csv.DictReader(handle))
        assert len(rows) == 2
        assert all(float(r["central"]) == 0.0 and float(r["one_sided"]) == 0.0 for r in rows)

    def test_error_record_on_failure(self, config_text, tmp_path):
        """Test error.json and an error manifest when the state breaks down."""
        text = config_text.replace("amplitude = 0.1", "amplitude = 20.0")
        service = LensOptService(parse_config_text(text))
        with pytest.raises(DegeneracyBreach):
            service.run("solve", output=tmp_path / "out")
        record = json.loads((tmp_path / "out" / "error.json").read_text("utf-8"))
        assert record["error"] == "DegeneracyBreach"
        assert record["component"] == "state"
        assert record["context"]["step"] == 0
        manifest = json.loads((tmp_path / "out" / "manifest.json").read_text("utf-8"))
        assert manifest["status"] == "error"

    def test_optimize_artifacts(self, config_text, tmp_path):
        """Test history files, snapshots and the final mesh."""
        text = config_text + "\n[optimizer]\nmax_iters = 2\nmesh_snapshots = true\n"
        service = LensOptService(parse_config_text(text))
        service.run("optimize", output=tmp_path / "out")
        out = tmp_path / "out"
        with (out / "history.csv").open(encoding="utf-8") as handle:
            rows = list(csv.DictReader(handle))
        assert list(rows[0]) == [
            "iteration",
            "cost",
            "h1_norm",
            "tau",
            "max_turning_angle_deg",
            "min_quality",
        ]
        assert 1 <= len(rows) <= 2
        history = json.loads((out / "history.json").read_text("utf-8"))
        assert history["status"] in {"max_iters", "converged", "line_search_exhausted"}
        final = read_mesh(out / "final_mesh.txt")
        assert final.n_nodes == service.mesh.n_nodes
        if history["records"][0]["tau"] > 0:
            assert (out / "mesh_0001.txt").is_file()

    def test_fd_slopes_are_deterministic(self, config_text, tmp_path):
        """Test that a fixed seed reproduces fd_slopes.csv byte for byte."""
        texts = []
        for threads, name in ((1, "a"), (2, "b")):
            service = LensOptService(parse_config_text(config_text), threads=threads)
            service.run("gradient", output=tmp_path / name)
            texts.append((tmp_path / name / "fd_slopes.csv").read_text("utf-8"))
        assert texts[0] == texts[1]

    def test_vtk_export(self, config_text, tmp_path):
        """Test VTK output selected in the output section."""
        text = config_text + '\n[output]\nformats = ["vtk"]\nexport_every = 4\n'
        LensOptService(parse_config_text(text)).run("solve", output=tmp_path / "out")
        names = sorted(p.name for p in (tmp_path / "out").glob("state_u_*.vtk"))
        assert names == ["state_u_00000.vtk", "state_u_00004.vtk", "state_u_00008.vtk"]


class TestCli:
    """Test exit codes and stream output."""

    def test_solve_succeeds(self, config_file, tmp_path, capsys):
        """Test exit 0 and the JSON summary line on stdout."""
        code = main(["solve", "--config", str(config_file), "--output", str(tmp_path / "o")])
        assert code == EXIT_OK
        summary = json.loads(capsys.readouterr().out)
        assert summary["command"] == "solve"
        assert summary["passed"] is True

    def test_verify_exit_code_matches_summary(self, config_file, tmp_path, capsys):
        """Test exit 0 or 3 according to the required checks."""
        out = tmp_path / "v"
        code = main(["verify", "--config", str(config_file), "--output", str(out)])
        verdict = json.loads((out / "verify.json").read_text("utf-8"))
        assert code == (EXIT_OK if verdict["passed"] else EXIT_CHECKS_FAILED)
        assert (out / "verify_summary.txt").read_text("utf-8").rstrip().endswith(
            "PASS" if verdict["passed"] else "FAIL"
        )

    def test_invalid_config(self, tmp_path, config_text, capsys):
        """Test exit 1 and a config error record on stderr."""
        path = write_config(tmp_path, config_text.replace("delta = 0.4", "delta = 1.2"))
        assert main(["solve", "--config", str(path)]) == EXIT_ERROR
        record = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
        assert record["error"] == "ConfigValidationError"
        assert record["component"] == "config"
        assert any("materials.lens.delta" in e for e in record["context"]["errors"])

    def test_toml_syntax_error(self, tmp_path, capsys):
        """Test exit 1 with the offending line in the record."""
        path = write_config(tmp_path, "seed = 7\nseed = = 8\n")
        assert main(["gradient", "--config", str(path)]) == EXIT_ERROR
        record = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
        assert record["error"] == "ConfigParseError"
        assert record["context"]["line"] == 2

    def test_missing_config(self, tmp_path, capsys):
        """Test exit 1 for a configuration file that does not exist."""
        assert main(["solve", "--config", str(tmp_path / "absent.toml")]) == EXIT_ERROR
        record = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
        assert record["component"] == "cli"

    def test_runtime_failure(self, tmp_path, config_text, capsys):
        """Test exit 1 for a failing solve."""
        path = write_config(tmp_path, config_text.replace("amplitude = 0.1", "amplitude = 20.0"))
        code = main(["solve", "--config", str(path), "--output", str(tmp_path / "o")])
        assert code == EXIT_ERROR
        assert (tmp_path / "o" / "error.json").is_file()

    def test_threads_must_be_positive(self, config_file):
        """Test argparse rejects --threads 0."""
        with pytest.raises(SystemExit):
            main(["solve", "--config", str(config_file), "--threads", "0"])
