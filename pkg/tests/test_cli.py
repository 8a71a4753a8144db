"""CLI subcommands: exit codes, output files, reproducibility headers."""

import json

import pytest
import yaml

from voxplan import parallel
from voxplan.cli import main
from voxplan.sim import strip_timing_fields
from tests.conftest import mini_scenario_dict


def strip_timing(lines):
    """Parsed ndjson records with wall-clock fields removed."""
    return [strip_timing_fields(json.loads(line)) for line in lines]


class TestRun:
    def test_successful_episode(self, mini_scenario_file, tmp_path, capsys):
        out = tmp_path / "out"
        code = main(
            ["run", "--scenario", str(mini_scenario_file), "--out", str(out), "--threads", "2"]
        )
        assert code == 0
        assert (out / "episode.ndjson").exists()
        metrics = json.loads((out / "metrics.json").read_text())
        assert metrics["success"] is True
        assert metrics["scenario"] == "mini_reach"
        assert {"version", "seed", "config_hash"} <= metrics.keys()
        assert "success" in capsys.readouterr().out

    def test_missing_scenario_exits_1(self, tmp_path, capsys):
        missing = tmp_path / "nope.yaml"
        code = main(["run", "--scenario", str(missing), "--out", str(tmp_path / "o")])
        assert code == 1
        assert str(missing) in capsys.readouterr().err

    def test_malformed_scenario_exits_1(self, tmp_path, capsys):
        bad = tmp_path / "bad.yaml"
        doc = mini_scenario_dict()
        del doc["grid"]
        bad.write_text(yaml.safe_dump(doc), encoding="utf-8")
        code = main(["run", "--scenario", str(bad), "--out", str(tmp_path / "o")])
        assert code == 1
        err = capsys.readouterr().err
        assert "grid" in err and "bad.yaml" in err

    def test_bundled_reach_static_end_to_end(self, tmp_path):
        from voxplan.config import bundled_scenario_path

        out = tmp_path / "reach"
        code = main(
            [
                "run",
                "--scenario",
                str(bundled_scenario_path("reach_static")),
                "--out",
                str(out),
                "--seed",
                "3",
            ]
        )
        assert code == 0
        metrics = json.loads((out / "metrics.json").read_text())
        assert metrics["success"] is True
        assert metrics["metrics"]["e_pos_mm"] <= 10.0
        assert metrics["metrics"]["min_clearance_m"] >= 0.0

    def test_zero_threads_exits_1(self, mini_scenario_file, tmp_path, capsys):
        code = main(
            [
                "run",
                "--scenario",
                str(mini_scenario_file),
                "--out",
                str(tmp_path / "o"),
                "--threads",
                "0",
            ]
        )
        assert code == 1
        assert "thread" in capsys.readouterr().err

    def test_timeout_exits_2(self, tmp_path):
        doc = mini_scenario_dict(timeout=3)
        path = tmp_path / "short.yaml"
        path.write_text(yaml.safe_dump(doc), encoding="utf-8")
        code = main(["run", "--scenario", str(path), "--out", str(tmp_path / "o")])
        assert code == 2

    def test_same_seed_reproducible(self, mini_scenario_file, tmp_path):
        outs = []
        for name in ("a", "b"):
            out = tmp_path / name
            code = main(
                [
                    "run",
                    "--scenario",
                    str(mini_scenario_file),
                    "--out",
                    str(out),
                    "--seed",
                    "7",
                ]
            )
            assert code == 0
            outs.append(out)
        logs = [strip_timing((o / "episode.ndjson").read_text().splitlines()) for o in outs]
        assert logs[0] == logs[1]
        metrics = [
            strip_timing_fields(json.loads((o / "metrics.json").read_text()))
            for o in outs
        ]
        assert metrics[0] == metrics[1]

    def test_thread_counts_do_not_change_results(self, mini_scenario_file, tmp_path):
        logs = []
        for threads in (1, 4, 8):
            out = tmp_path / f"t{threads}"
            code = main(
                [
                    "run",
                    "--scenario",
                    str(mini_scenario_file),
                    "--out",
                    str(out),
                    "--threads",
                    str(threads),
                ]
            )
            assert code == 0
            logs.append(strip_timing((out / "episode.ndjson").read_text().splitlines()))
        parallel.set_threads(1)
        assert logs[0] == logs[1] == logs[2]


class TestBenchEdt:
    def test_smoke_single_grid(self, capsys):
        code = main(["bench-edt", "--sizes", "16", "--reps", "1"])
        assert code == 0
        out = capsys.readouterr().out
        assert "ogm_ms_mean" in out and "16x16x16" in out

    def test_empty_sizes_usage_error(self, capsys):
        code = main(["bench-edt", "--sizes", ",", "--reps", "1"])
        assert code == 1
        assert "size" in capsys.readouterr().err

    def test_csv_output_with_header(self, tmp_path):
        out = tmp_path / "edt.csv"
        code = main(
            ["bench-edt", "--sizes", "16", "--reps", "1", "--threads", "1,2", "--out", str(out)]
        )
        assert code == 0
        lines = out.read_text().splitlines()
        header = [l for l in lines if l.startswith("#")]
        assert any("version=" in h for h in header)
        assert any("config_hash=" in h for h in header)
        body = [l for l in lines if not l.startswith("#")]
        assert body[0].startswith("size,threads")
        assert len(body) == 3  # column row + one row per thread count

    def test_speedup_column_present(self, capsys):
        code = main(["bench-edt", "--sizes", "16", "--reps", "1", "--threads", "1,8"])
        assert code == 0
        assert "speedup" in capsys.readouterr().out


class TestBenchPlanner:
    def test_smoke(self, capsys):
        code = main(
            ["bench-planner", "--samples", "16", "--horizon", "5", "--reps", "1", "--threads", "1"]
        )
        assert code == 0
        out = capsys.readouterr().out
        assert "plan_ms_mean" in out

    def test_rejects_bad_samples(self, capsys):
        code = main(["bench-planner", "--samples", "0", "--reps", "1"])
        assert code == 1


class TestOracle:
    def test_edt_suite_passes(self, capsys):
        code = main(["oracle", "--suite", "edt", "--cases", "3"])
        assert code == 0
        assert "3/3" in capsys.readouterr().out

    def test_geometry_suite_passes(self, capsys):
        code = main(["oracle", "--suite", "geometry", "--cases", "20"])
        assert code == 0

    def test_unknown_suite_exits_1(self):
        with pytest.raises(SystemExit) as info:
            main(["oracle", "--suite", "wavelets"])
        assert info.value.code == 1

    def test_zero_cases_vacuous_with_warning(self, capsys):
        code = main(["oracle", "--suite", "edt", "--cases", "0"])
        assert code == 0
        assert "vacuous" in capsys.readouterr().out


class TestThreadsEnv:
    def test_paramap_threads_env_default(self, monkeypatch):
        monkeypatch.setenv("PARAMAP_THREADS", "3")
        assert parallel.default_threads() == 3

    def test_invalid_env_rejected(self, monkeypatch):
        monkeypatch.setenv("PARAMAP_THREADS", "zero")
        with pytest.raises(ValueError):
            parallel.default_threads()
