import json
from pathlib import Path

import numpy as np

from conftest import iid_scalar_problem
from fedsde.cli import main
from fedsde.experiments import (problem_from_dict, problem_to_dict,
                                validate_config)


def discrete_config(seed=5, rounds=20, eta=0.1):
    return {
        "kind": "simulate-discrete",
        "seed": seed,
        "problem": problem_to_dict(iid_scalar_problem(2, noise_var=0.05)),
        "w_init": [1.0],
        "fedavg": {
            "local_steps": 2, "time_step": 0.5, "rounds": rounds,
            "client_schedule": {"kind": "constant", "param": eta},
            "server_schedule": {"kind": "constant", "param": 1.0},
        },
    }


def write_config(tmp_path: Path, payload: dict, name="config.json") -> Path:
    path = tmp_path / name
    path.write_text(json.dumps(payload), encoding="utf-8")
    return path


class TestValidate:
    def test_well_formed_is_clean(self):
        assert validate_config(discrete_config()) == []

    def test_zero_local_steps_reported(self):
        bad = discrete_config()
        bad["fedavg"]["local_steps"] = 0
        issues = validate_config(bad)
        assert any("local_steps" in issue for issue in issues)

    def test_negative_noise_eigenvalue_reported(self):
        bad = discrete_config()
        bad["problem"]["clients"][0]["noise_cov"] = [[-0.5]]
        issues = validate_config(bad)
        assert any("PSD" in issue for issue in issues)

    def test_missing_seed_reported(self):
        bad = discrete_config()
        del bad["seed"]
        assert any("seed" in issue for issue in validate_config(bad))

    def test_multiple_violations_all_reported(self):
        bad = discrete_config()
        del bad["seed"]
        bad["fedavg"]["local_steps"] = 0
        bad["problem"]["clients"][0]["weight"] = 0.9
        assert len(validate_config(bad)) >= 3

    def test_unknown_kind(self):
        assert any("kind" in issue for issue in validate_config({"kind": "mystery"}))

    def test_cli_exit_codes(self, tmp_path, capsys):
        good = write_config(tmp_path, discrete_config())
        assert main(["validate", str(good)]) == 0
        bad = discrete_config()
        bad["fedavg"]["rounds"] = -2
        assert main(["validate", str(write_config(tmp_path, bad, "bad.json"))]) == 2
        capsys.readouterr()


class TestRun:
    def test_run_writes_artifacts_and_manifest(self, tmp_path, capsys):
        config = write_config(tmp_path, discrete_config())
        out = tmp_path / "out"
        assert main(["run", str(config), "--out", str(out)]) == 0
        assert (out / "trajectory.csv").exists()
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["artifacts"] == ["trajectory.csv"]
        assert manifest["kind"] == "simulate-discrete"
        assert len(manifest["config_sha256"]) == 64
        capsys.readouterr()

    def test_invalid_config_exits_2_without_artifacts(self, tmp_path, capsys):
        bad = discrete_config()
        bad["fedavg"]["local_steps"] = 0
        config = write_config(tmp_path, bad)
        out = tmp_path / "out"
        assert main(["run", str(config), "--out", str(out)]) == 2
        assert not out.exists()
        capsys.readouterr()

    def test_numerical_abort_exits_3_without_partial_artifacts(self, tmp_path, capsys):
        diverging = discrete_config(rounds=500, eta=2001.0)
        config = write_config(tmp_path, diverging)
        out = tmp_path / "out"
        with np.errstate(over="ignore", invalid="ignore"):
            assert main(["run", str(config), "--out", str(out)]) == 3
        assert not out.exists() or not any(out.iterdir())
        capsys.readouterr()

    def test_unreadable_config(self, tmp_path, capsys):
        missing = tmp_path / "nope.json"
        assert main(["run", str(missing)]) == 2
        capsys.readouterr()

    def test_thread_flag_does_not_change_results(self, tmp_path, capsys):
        config = write_config(tmp_path, discrete_config())
        out1, out2 = tmp_path / "a", tmp_path / "b"
        assert main(["run", str(config), "--out", str(out1)]) == 0
        assert main(["run", str(config), "--out", str(out2), "--threads", "2"]) == 0
        from fedsde import parallel
        parallel.set_max_threads(None)
        assert (out1 / "trajectory.csv").read_bytes() == \
            (out2 / "trajectory.csv").read_bytes()
        capsys.readouterr()


class TestRoundTrip:
    def test_problem_serialization_round_trip(self):
        gen = np.random.default_rng(7)
        from conftest import random_quadratic_problem
        problem = random_quadratic_problem(gen, 3, 2, amplitude=0.1)
        restored = problem_from_dict(problem_to_dict(problem))
        assert restored.n_clients == problem.n_clients
        for a, b in zip(problem.clients, restored.clients):
            assert a.weight == b.weight
            np.testing.assert_array_equal(a.loss.curvature, b.loss.curvature)
            np.testing.assert_array_equal(a.loss.center, b.loss.center)
            np.testing.assert_array_equal(a.noise_cov, b.noise_cov)
            assert a.loss.sine_amplitude == b.loss.sine_amplitude

    def test_config_json_round_trip(self, tmp_path):
        raw = discrete_config()
        path = write_config(tmp_path, raw)
        reparsed = json.loads(path.read_text())
        assert reparsed == raw
        assert json.loads(json.dumps(reparsed)) == raw
