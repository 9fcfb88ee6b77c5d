import json

import yaml

from clockpulse.cli import main as cli_main
from clockpulse.config import parse_config
from clockpulse.runner import (
    EXIT_NOT_CONVERGED,
    EXIT_OK,
    run_experiment,
)

SMALL = {
    "system": {
        "drift": "0.1*Z@Z",
        "controls": [
            {"expr": "(SP+SM)@I", "channel": 0},
            {"expr": "i*(SP-SM)@I", "channel": 0},
            {"expr": "I@(SP+SM)", "channel": 1},
            {"expr": "i*(I@SP-I@SM)", "channel": 1},
        ],
    },
    "target": {"gate": "cnot", "phase": 0.7853981633974483},
    "schedule": {
        "sample_period": 1.0,
        "slices": 20,
        "initial": {"kind": "random_uniform", "scale": 0.15, "seed": 2},
    },
    "noise": {
        "channel_latency": [[0.0, 0.3], [0.0, 0.3]],
        "jitter_width": 0.04,
        "shift_turn_on": False,
        "seed": 5,
    },
    "run": {
        "algorithm": "grape",
        "max_iters": 3000,
        "test_samples": 300,
        "test_seed": 17,
        "sweep_points": 5,
        "sweep_max": 0.3,
        "histogram_bins": 8,
        "overrides": {
            "homotopic": {"max_iters": 40},
            "bgrape": {"max_iters": 60, "learning_rate": 0.01},
        },
    },
}


def small_config(**over):
    data = json.loads(json.dumps(SMALL))
    for key, section in over.items():
        data.setdefault(key, {}).update(section)
    return parse_config(data)


def read_rows(path):
    lines = path.read_text().strip().splitlines()
    return lines[0].split(","), [ln.split(",") for ln in lines[1:]]


class TestRunExperiment:
    def test_grape_artifacts(self, tmp_path):
        result = run_experiment(small_config(), tmp_path / "out")
        assert result.exit_code == EXIT_OK
        out = tmp_path / "out"
        for name in ("config_echo.cfg", "schedule.csv", "trace.csv", "robustness.json",
                     "test_report.json", "histogram.csv", "smoothness.csv",
                     "report.json", "manifest.json"):
            assert (out / name).exists(), name
        report = json.loads((out / "report.json").read_text())
        assert report["gate_error"] < 1e-10
        header, rows = read_rows(out / "schedule.csv")
        assert header == ["control", "slice", "amplitude"]
        assert len(rows) == 4 * 20

    def test_manifest_lists_every_file_with_hash(self, tmp_path):
        result = run_experiment(small_config(), tmp_path / "out")
        manifest = json.loads((tmp_path / "out" / "manifest.json").read_text())
        listed = set(manifest["files"])
        on_disk = {
            str(p.relative_to(tmp_path / "out"))
            for p in (tmp_path / "out").rglob("*")
            if p.is_file() and p.name != "manifest.json"
        }
        assert listed == on_disk
        for name, digest in manifest["files"].items():
            assert len(digest) == 64

    def test_rerun_is_byte_identical(self, tmp_path):
        run_experiment(small_config(), tmp_path / "a")
        run_experiment(small_config(), tmp_path / "b")
        files_a = sorted((tmp_path / "a").rglob("*"))
        for pa in files_a:
            if not pa.is_file():
                continue
            pb = tmp_path / "b" / pa.relative_to(tmp_path / "a")
            assert pa.read_bytes() == pb.read_bytes(), pa.name

    def test_estimate_on_constant_schedule_is_zero(self, tmp_path):
        cfg = small_config(schedule={"initial": {"kind": "constant", "value": 0.2}},
                           run={"algorithm": "estimate"})
        result = run_experiment(cfg, tmp_path / "out")
        assert result.exit_code == EXIT_OK
        report = json.loads((tmp_path / "out" / "robustness.json").read_text())
        assert report["jn_total"] == 0.0

    def test_test_algorithm_writes_report(self, tmp_path):
        cfg = small_config(run={"algorithm": "test", "keep_errors": True})
        result = run_experiment(cfg, tmp_path / "out")
        assert result.exit_code == EXIT_OK
        report = json.loads((tmp_path / "out" / "test_report.json").read_text())
        assert report["sample_count"] == 300
        header, rows = read_rows(tmp_path / "out" / "errors.csv")
        assert header == ["error"]
        assert len(rows) == 300
        header, rows = read_rows(tmp_path / "out" / "histogram.csv")
        assert sum(int(r[2]) for r in rows) == 300

    def test_sweep_artifacts(self, tmp_path):
        cfg = small_config(run={"algorithm": "sweep"})
        result = run_experiment(cfg, tmp_path / "out")
        assert result.exit_code == EXIT_OK
        header, rows = read_rows(tmp_path / "out" / "sweep.csv")
        assert header == ["tau1", "tau2", "error"]
        assert len(rows) == 25

    def test_homotopic_run_guards_gate_error(self, tmp_path):
        cfg = small_config(run={"algorithm": "homotopic"})
        result = run_experiment(cfg, tmp_path / "out")
        assert result.exit_code == EXIT_OK
        out = tmp_path / "out"
        assert (out / "grape_schedule.csv").exists()
        assert (out / "grape_trace.csv").exists()
        header, rows = read_rows(out / "trace.csv")
        assert header == ["iteration", "gate_error", "objective", "tested_error", "step"]
        gate_errors = [float(r[1]) for r in rows]
        assert all(g <= 1e-6 for g in gate_errors)

    def test_seed_override_recorded_and_changes_result(self, tmp_path):
        r1 = run_experiment(small_config(), tmp_path / "a", seed=101)
        r2 = run_experiment(small_config(), tmp_path / "b", seed=102)
        m1 = json.loads((tmp_path / "a" / "manifest.json").read_text())
        assert m1["seeds"]["initial_guess"] == 101
        s1 = (tmp_path / "a" / "schedule.csv").read_text()
        s2 = (tmp_path / "b" / "schedule.csv").read_text()
        assert s1 != s2

    def test_non_convergence_flagged(self, tmp_path):
        cfg = small_config(run={"max_iters": 3})
        result = run_experiment(cfg, tmp_path / "out")
        assert result.exit_code == EXIT_NOT_CONVERGED
        assert result.status == "not_converged"
        manifest = json.loads((tmp_path / "out" / "manifest.json").read_text())
        assert manifest["status"] == "not_converged"
        # partial artifacts are retained
        assert (tmp_path / "out" / "schedule.csv").exists()

    def test_bgrape_runs_with_warm_start(self, tmp_path):
        cfg = small_config(run={"algorithm": "bgrape"})
        result = run_experiment(cfg, tmp_path / "out")
        assert result.exit_code == EXIT_OK
        assert (tmp_path / "out" / "grape_schedule.csv").exists()
        header, rows = read_rows(tmp_path / "out" / "trace.csv")
        assert len(rows) == 60


class TestCli:
    def write_config(self, tmp_path, data=None):
        path = tmp_path / "exp.cfg"
        path.write_text(yaml.safe_dump(data or SMALL))
        return path

    def test_grape_roundtrip(self, tmp_path, capsys):
        cfg = self.write_config(tmp_path)
        code = cli_main(["grape", "--config", str(cfg), "--out", str(tmp_path / "out")])
        assert code == 0
        assert "artifacts in" in capsys.readouterr().out

    def test_config_error_exit_code(self, tmp_path, capsys):
        path = tmp_path / "bad.cfg"
        path.write_text("system:\n  drift: 'Q@Z'\n  controls:\n    - expr: X\n      channel: 0\n")
        code = cli_main(["grape", "--config", str(path), "--out", str(tmp_path / "out")])
        assert code == 2
        assert "config error" in capsys.readouterr().err

    def test_missing_config_file(self, tmp_path, capsys):
        code = cli_main(["grape", "--config", str(tmp_path / "none.cfg"),
                         "--out", str(tmp_path / "out")])
        assert code == 4

    def test_subcommand_overrides_algorithm(self, tmp_path):
        cfg = self.write_config(tmp_path)
        code = cli_main(["estimate", "--config", str(cfg), "--out", str(tmp_path / "out")])
        assert code == 0
        assert (tmp_path / "out" / "robustness.json").exists()

    def test_non_convergence_exit_code(self, tmp_path):
        data = json.loads(json.dumps(SMALL))
        data["run"]["max_iters"] = 3
        cfg = self.write_config(tmp_path, data)
        code = cli_main(["grape", "--config", str(cfg), "--out", str(tmp_path / "out")])
        assert code == 3
