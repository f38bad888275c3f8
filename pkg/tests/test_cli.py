import shutil

import numpy as np
import pytest

from usnav.cli import _vec3, build_parser, main
from usnav.usrecon import load_volume


@pytest.fixture(scope="module")
def pipeline_dir(tmp_path_factory):
    """Full pipeline driven through the CLI entry point, once."""
    work = tmp_path_factory.mktemp("cli_run")
    assert main(["simulate", "--out", str(work), "--seed", "4"]) == 0
    assert main(["reconstruct", "--work", str(work)]) == 0
    assert main(["segment", "--work", str(work)]) == 0
    assert main(["register", "--work", str(work)]) == 0
    assert main(["navigate", "--work", str(work)]) == 0
    return work


class TestParsing:
    def test_vec3(self):
        assert _vec3("1,2.5,-3") == [1.0, 2.5, -3.0]

    def test_vec3_rejects_wrong_arity(self):
        import argparse
        with pytest.raises(argparse.ArgumentTypeError):
            _vec3("1,2")
        with pytest.raises(argparse.ArgumentTypeError):
            _vec3("a,b,c")

    def test_bad_seed_point_exits_2(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["segment", "--work", "x", "--seed-point", "1,2"])
        assert exc.value.code == 2

    def test_missing_subcommand_exits_2(self):
        with pytest.raises(SystemExit) as exc:
            main([])
        assert exc.value.code == 2

    def test_every_stage_has_a_seed_or_none_needed(self):
        parser = build_parser()
        args = parser.parse_args(["simulate", "--out", "x"])
        assert args.seed == 0
        args = parser.parse_args(["navigate", "--work", "x"])
        assert args.seed == 0


class TestPipeline:
    def test_full_pipeline_produces_report(self, pipeline_dir, tmp_path,
                                           capsys):
        code = main(["evaluate", "--work", str(pipeline_dir),
                     "--out", str(tmp_path)])
        assert code == 0
        out = capsys.readouterr().out
        assert "stage evaluate finished" in out
        assert "seed = 0" in out
        assert (tmp_path / "summary.txt").exists()
        assert (tmp_path / "clips.csv").exists()
        assert (tmp_path / "boxplot.csv").exists()

    def test_stage_timings_printed(self, pipeline_dir, tmp_path, capsys):
        code = main(["register", "--work", str(pipeline_dir)])
        assert code == 0
        out = capsys.readouterr().out
        assert "stage register finished in" in out
        assert " s" in out

    def test_navigate_prints_seed_and_clips(self, pipeline_dir, capsys):
        code = main(["navigate", "--work", str(pipeline_dir)])
        assert code == 0
        out = capsys.readouterr().out
        assert "clips_digitized = 6" in out
        assert "seed = 0" in out


class TestSimulateFlags:
    def test_same_seed_bit_identical(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        assert main(["simulate", "--out", str(a), "--seed", "9"]) == 0
        assert main(["simulate", "--out", str(b), "--seed", "9"]) == 0
        for name in ("tracking.log", "frames.bin", "phantom.spec",
                     "gt_volume.vol"):
            assert (a / name).read_bytes() == (b / name).read_bytes(), name

    def test_detach_at_leaves_missing_reference(self, tmp_path):
        assert main(["simulate", "--out", str(tmp_path),
                     "--detach-at", "0.5"]) == 0
        log = (tmp_path / "tracking.log").read_text()
        missing = [line for line in log.splitlines()
                   if "REFERENCE" in line and "MISSING" in line]
        assert missing
        for line in missing:
            assert line.split()[0].startswith("t=")
            assert float(line.split()[0][2:]) >= 0.5

    def test_tumor_radius_matches_analytic_volume(self, tmp_path):
        assert main(["simulate", "--out", str(tmp_path),
                     "--tumor-radius", "10"]) == 0
        vol = load_volume(tmp_path / "gt_tumor.vol")
        measured = np.count_nonzero(vol.scalars) * vol.spacing ** 3
        analytic = 4.0 / 3.0 * np.pi * 1000.0
        assert abs(measured - analytic) / analytic < 0.05


class TestExitCodes:
    def test_missing_input_exits_2(self, tmp_path, capsys):
        code = main(["reconstruct", "--work", str(tmp_path / "empty")])
        assert code == 2
        err = capsys.readouterr().err
        assert "tracking.log" in err
        assert "simulate" in err

    def test_unreachable_server_exits_3(self, tmp_path, capsys):
        code = main(["--server", "http://127.0.0.1:9", "register",
                     "--work", str(tmp_path)])
        assert code == 3
        assert "cannot reach" in capsys.readouterr().err

    def test_evaluate_without_runs_exits_2(self, tmp_path, capsys):
        code = main(["evaluate", "--out", str(tmp_path)])
        assert code == 2

    def test_evaluate_empty_cohort_exits_2(self, tmp_path, capsys):
        cohort = tmp_path / "cohort"
        cohort.mkdir()
        code = main(["evaluate", "--cohort", str(cohort),
                     "--out", str(tmp_path / "rep")])
        assert code == 2
        assert "session.log" in capsys.readouterr().err


class TestCohort:
    def test_cohort_directory_scan(self, pipeline_dir, tmp_path, capsys):
        cohort = tmp_path / "cohort"
        for name in ("p01", "p02"):
            shutil.copytree(pipeline_dir, cohort / name)
        code = main(["evaluate", "--cohort", str(cohort),
                     "--out", str(tmp_path / "rep")])
        assert code == 0
        out = capsys.readouterr().out
        assert "patients = 2" in out
        summary = (tmp_path / "rep" / "summary.txt").read_text()
        assert "p01" in summary and "p02" in summary


class TestServeMode:
    def test_navigate_serve_creates_and_stops_session(self, pipeline_dir,
                                                      capsys):
        code = main(["navigate", "--work", str(pipeline_dir), "--serve",
                     "--duration", "0.5", "--port", "0"])
        assert code == 0
        out = capsys.readouterr().out
        assert "scene stream" in out
        assert "stopped" in out
        logs = list(pipeline_dir.glob("session_s*.log"))
        assert logs
