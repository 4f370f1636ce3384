import json

import numpy as np
import pytest

import fbsdelab.problems as problems
from fbsdelab.cli import EXIT_FAILURE, EXIT_MISMATCH, EXIT_OK, load_config, main
from fbsdelab.core import FbsdeError


def write_config(path, **overrides):
    cfg = {
        "problem": {"name": "zero"},
        "discretization": {"steps": 2},
        "partition": {"m": 1},
        "mc": {"paths": 3, "seed": 5},
    }
    cfg.update(overrides)
    path.write_text(json.dumps(cfg))
    return path


class TestLoadConfig:
    def test_defaults_come_from_registry(self, tmp_path):
        p = tmp_path / "cfg.json"
        p.write_text(json.dumps({"problem": {"name": "example24"}}))
        cfg = load_config(p)
        assert cfg.discretization.dx == 0.01
        assert cfg.discretization.x_lo == -1.0
        assert cfg.m == 4
        assert cfg.mc["paths"] == 1000

    def test_seed_override(self, tmp_path):
        p = write_config(tmp_path / "cfg.json")
        cfg = load_config(p, seed=99)
        assert cfg.mc["seed"] == 99

    def test_missing_problem(self, tmp_path):
        p = tmp_path / "cfg.json"
        p.write_text(json.dumps({"partition": {"m": 2}}))
        with pytest.raises(FbsdeError):
            load_config(p)

    def test_bad_partition(self, tmp_path):
        p = write_config(tmp_path / "cfg.json", partition={"m": -3})
        with pytest.raises(FbsdeError):
            load_config(p)

    def test_bad_margin_constant(self, tmp_path):
        p = write_config(tmp_path / "cfg.json", check={"c": -1.0})
        with pytest.raises(FbsdeError):
            load_config(p)

    def test_hash_stable(self, tmp_path):
        p = write_config(tmp_path / "cfg.json")
        assert load_config(p).hash() == load_config(p).hash()


class TestExitCodes:
    def test_config_error_exit(self, tmp_path, capsys):
        p = tmp_path / "cfg.json"
        p.write_text("{not json")
        code = main(["solve", "--config", str(p), "--out", str(tmp_path / "o")])
        assert code == EXIT_FAILURE
        assert "config error" in capsys.readouterr().err

    def test_unknown_problem_exit(self, tmp_path, capsys):
        p = write_config(tmp_path / "cfg.json", problem={"name": "nope"})
        code = main(["solve", "--config", str(p), "--out", str(tmp_path / "o")])
        assert code == EXIT_FAILURE

    def test_check_pass_and_mismatch(self, tmp_path):
        p = write_config(tmp_path / "cfg.json", problem={"name": "brownian_identity"})
        assert main(["check", "--config", str(p), "--out", str(tmp_path / "a")]) == EXIT_OK

        # a deliberately wrong stored expectation must be flagged
        original = problems._REGISTRY["brownian_identity"]

        def wrong(**kw):
            entry = original(**kw)
            bad_profile = dict(entry.condition_profile, decoupled={"holds": False})
            import dataclasses

            return dataclasses.replace(entry, condition_profile=bad_profile)

        problems._REGISTRY["brownian_identity"] = wrong
        try:
            code = main(["check", "--config", str(p), "--out", str(tmp_path / "b")])
        finally:
            problems._REGISTRY["brownian_identity"] = original
        assert code == EXIT_MISMATCH


class TestSolveArtifacts:
    def test_file_set_and_summary(self, tmp_path):
        p = write_config(tmp_path / "cfg.json", problem={"name": "example24"},
                         discretization={"steps": 4, "dx": 0.05},
                         partition={"m": 2}, mc={"paths": 2, "seed": 1})
        out = tmp_path / "out"
        assert main(["solve", "--config", str(p), "--out", str(out)]) == EXIT_OK
        names = {f.name for f in out.iterdir()}
        assert {"solution.json", "summary.json", "paths.csv",
                "segment_000.json", "segment_001.json"} <= names
        summary = json.loads((out / "summary.json").read_text())
        assert summary["y0"][0] == pytest.approx(0.5, abs=1e-3)
        assert summary["ratio"] == pytest.approx(1.25, abs=1e-2)
        solution = json.loads((out / "solution.json").read_text())
        assert solution["segments"] == ["segment_000.json", "segment_001.json"]

    def test_paths_csv_columns(self, tmp_path):
        p = write_config(tmp_path / "cfg.json", problem={"name": "zero"})
        out = tmp_path / "out"
        main(["solve", "--config", str(p), "--out", str(out)])
        lines = (out / "paths.csv").read_text().splitlines()
        assert lines[0].startswith("# config_hash=")
        assert lines[1] == "t,path_id,X,Y_1,Z_11"
        # 3 paths on a 5-node grid
        assert len(lines) == 2 + 3 * 5


class TestConvergeCommand:
    def test_zero_problem_errors_at_floor(self, tmp_path):
        p = write_config(tmp_path / "cfg.json", convergence={"levels": 2})
        out = tmp_path / "out"
        assert main(["converge", "--config", str(p), "--out", str(out)]) == EXIT_OK
        lines = (out / "convergence.csv").read_text().splitlines()
        assert lines[1] == "level,dt,dx,err_y0,err_field_sup,observed_order"
        rows = [line.split(",") for line in lines[2:]]
        assert len(rows) == 2
        # order column empty below the measurement floor
        assert all(r[-1] == "" for r in rows)


class TestStabilityCommand:
    def test_zero_eps_guarded(self, tmp_path):
        p = write_config(
            tmp_path / "cfg.json",
            problem={"name": "brownian_identity"},
            discretization={"steps": 2, "dx": 0.5},
            partition={"m": 1},
            mc={"paths": 4, "seed": 2},
            stability={"perturbations": [0.1, 0.0]},
        )
        out = tmp_path / "out"
        assert main(["stability", "--config", str(p), "--out", str(out)]) == EXIT_OK
        lines = (out / "stability.csv").read_text().splitlines()
        header_idx = next(i for i, l in enumerate(lines) if not l.startswith("#"))
        rows = [line.split(",") for line in lines[header_idx + 1:]]
        by_eps = {float(r[0]): r for r in rows}
        assert by_eps[0.1][3] != ""
        assert by_eps[0.0][3] == ""  # ratio not defined at zero perturbation

    def test_out_of_hypothesis_label(self, tmp_path):
        p = write_config(
            tmp_path / "cfg.json",
            problem={"name": "example24"},
            discretization={"steps": 4, "dx": 0.05},
            partition={"m": 2},
            mc={"paths": 2, "seed": 0},
            stability={"perturbations": [0.1]},
        )
        out = tmp_path / "out"
        main(["stability", "--config", str(p), "--out", str(out)])
        text = (out / "stability.csv").read_text()
        assert "label=out-of-hypothesis" in text


class TestLipschitzCommand:
    def test_table_and_probe(self, tmp_path):
        p = write_config(
            tmp_path / "cfg.json",
            problem={"name": "brownian_identity"},
            discretization={"steps": 4, "dx": 0.1},
            partition={"m": 2},
        )
        out = tmp_path / "out"
        assert main(["lipschitz", "--config", str(p), "--out", str(out)]) == EXIT_OK
        lines = (out / "lipschitz.csv").read_text().splitlines()
        assert lines[1] == "i,t_i,measured_lip_sq,bound_config_ck,bound_fitted_ck"
        assert len(lines) == 2 + 3  # m + 1 rows
        probe = json.loads((out / "ivmap_probe.json").read_text())
        assert probe["worst_slope"] == pytest.approx(1.0, abs=1e-6)
        assert probe["worst_slope"] <= probe["bound_fitted_ck"] + 0.05


class TestDeterminism:
    def test_byte_identical_outputs_across_threads(self, tmp_path):
        p = write_config(
            tmp_path / "cfg.json",
            problem={"name": "decoupled_f_no_z"},
            discretization={"steps": 2, "dx": 0.25},
            partition={"m": 1},
            mc={"paths": 8, "seed": 13},
        )
        out1, out2 = tmp_path / "r1", tmp_path / "r2"
        assert main(["solve", "--config", str(p), "--out", str(out1), "--threads", "1"]) == EXIT_OK
        assert main(["solve", "--config", str(p), "--out", str(out2), "--threads", "3"]) == EXIT_OK
        for f1 in sorted(out1.iterdir()):
            f2 = out2 / f1.name
            assert f1.read_bytes() == f2.read_bytes(), f1.name
