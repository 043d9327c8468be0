import json

import numpy as np
import pytest
import yaml

from stackmeta.cli_io import (
    PAPER,
    UNSPECIFIED,
    ConfigError,
    build_run_config,
    default_config_path,
    dump_config,
    load_config,
    load_model,
    main,
    read_csv,
    save_model,
    write_csv,
)
from stackmeta.lqg_core import true_response_matrix


def _shipped():
    return yaml.safe_load(default_config_path().read_text())


def _small(tmp_path, **train):
    # near the zero model the guidance cost is steep, so plumbing runs use tiny steps
    raw = _shipped()
    raw["train"].update({"max_iter": 2, "max_gd": 2, "adapt_iters": 3, "alpha": 1e-7, **train})
    raw["bench"].update({"runs": 3, "individual_iters": 2, "individual_alpha": 1e-7})
    path = tmp_path / "small.yaml"
    path.write_text(yaml.safe_dump(raw))
    return path


class TestConfig:
    def test_shipped_values(self, robot):
        assert robot.train.gamma == 5.0 and robot.train.lam == 100.0
        assert robot.train.kappa == 2.0 and robot.train.N == 6
        assert robot.type_distribution.probs == (0.2, 0.3, 0.1, 0.2, 0.2)
        assert robot.spec.T == 10 and robot.spec.n == 8
        assert np.array_equal(robot.spec.x0, [5, 6.5, 0, 0, 7, 4.5, 0, 0])
        assert np.array_equal(robot.spec.Sigma, 0.5 * np.eye(8))
        assert len(robot.types) == 5

    def test_probabilities_must_sum_to_one(self):
        raw = _shipped()
        raw["type_distribution"] = [0.5, 0.6, 0.0, 0.0, 0.0]
        with pytest.raises(ConfigError, match="probabilities must sum to 1"):
            build_run_config(raw)

    def test_distribution_length_matches_followers(self):
        raw = _shipped()
        raw["type_distribution"] = [0.5, 0.5]
        with pytest.raises(ConfigError):
            build_run_config(raw)

    def test_negative_lambda(self):
        raw = _shipped()
        raw["train"]["lam"] = -1.0
        with pytest.raises(ConfigError, match="lam"):
            build_run_config(raw)

    @pytest.mark.parametrize("section", ["config", "scenario", "train", "bench"])
    def test_unknown_field(self, section):
        raw = _shipped()
        (raw if section == "config" else raw[section])["bogus"] = 1
        with pytest.raises(ConfigError, match="bogus"):
            build_run_config(raw)

    def test_parse_error_reports_line(self, tmp_path):
        bad = tmp_path / "bad.yaml"
        bad.write_text("seed: 0\ntrain:\n  alpha: [1, 2\n  beta: 3\n")
        with pytest.raises(ConfigError, match="line"):
            load_config(bad)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(tmp_path / "absent.yaml")

    def test_provenance(self):
        cfg = build_run_config({})
        marks = {key: source for key, _, source in cfg.provenance}
        assert marks["scenario.dt"] == PAPER
        assert marks["scenario.position_weight"] == UNSPECIFIED
        assert marks["train.gamma"] == PAPER
        assert marks["train.beta"] == UNSPECIFIED

    def test_empty_config_matches_shipped(self, robot):
        assert build_run_config({}).to_dict() == robot.to_dict()

    def test_round_trip(self, robot, tmp_path):
        path = tmp_path / "again.yaml"
        path.write_text(dump_config(robot))
        again = load_config(path)
        assert again.to_dict() == robot.to_dict()
        assert np.array_equal(again.spec.Q_L, robot.spec.Q_L)

    def test_matrix_scenario(self):
        raw = {
            "scenario": {"kind": "matrices", "A": [[1.0]], "B_L": [[1.0]], "Sigma": [[0.5]], "Q_L": [[1.0]],
                         "R_L": [[1.0]], "Q_Lf": [[1.0]], "T": 1, "x0": [2.0]},
            "followers": [{"B_F": [[1.0]], "Q_F": [[1.0]], "R_F": [[1.0]]}],
            "type_distribution": [1.0],
            "bench": {"transfer_source": 0},
        }
        cfg = build_run_config(raw)
        assert true_response_matrix(cfg.spec, cfg.types[0])[0, 0] == pytest.approx(-0.5)


class TestArtifacts:
    def test_csv_round_trip_is_exact(self, tmp_path):
        rows = [{"type": 0, "x": 0.1 + 0.2, "flag": True}, {"type": 1, "x": 1e-300, "flag": False}]
        write_csv(rows, ["type", "x", "flag"], tmp_path / "r.csv")
        header, body = read_csv(tmp_path / "r.csv")
        assert header == ["type", "x", "flag"]
        assert float(body[0][1]) == 0.1 + 0.2 and float(body[1][1]) == 1e-300
        assert body[0][2] == "1"

    def test_csv_missing_column(self, tmp_path):
        with pytest.raises(ValueError):
            write_csv([{"a": 1}], ["a", "b"], tmp_path / "r.csv")

    def test_model_round_trip(self, tmp_path, rng):
        M = rng.standard_normal((2, 8))
        save_model(M, tmp_path / "m.txt")
        assert np.array_equal(load_model(tmp_path / "m.txt", (2, 8)), M)

    def test_model_wrong_shape(self, tmp_path):
        save_model(np.zeros((3, 3)), tmp_path / "m.txt")
        with pytest.raises(ConfigError, match="shape"):
            load_model(tmp_path / "m.txt", (2, 8))

    def test_model_malformed(self, tmp_path):
        (tmp_path / "m.txt").write_text("2 2\n1 2\n3\n")
        with pytest.raises(ConfigError):
            load_model(tmp_path / "m.txt")


class TestCommandLine:
    def test_train_is_deterministic(self, tmp_path):
        cfg = _small(tmp_path)
        for name in ("a", "b"):
            assert main(["train", "--config", str(cfg), "--out", str(tmp_path / name)]) == 0
        for f in ("meta_trace.csv", "model_meta.txt", "summary.json"):
            assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()

    def test_seed_override(self, tmp_path):
        cfg = _small(tmp_path)
        main(["train", "--config", str(cfg), "--out", str(tmp_path / "a")])
        main(["train", "--config", str(cfg), "--out", str(tmp_path / "b"), "--seed", "9"])
        assert json.loads((tmp_path / "b" / "summary.json").read_text())["seed"] == 9
        assert (tmp_path / "a" / "model_meta.txt").read_bytes() != (tmp_path / "b" / "model_meta.txt").read_bytes()

    def test_adapt_and_simulate_from_stored_model(self, tmp_path):
        cfg = _small(tmp_path)
        assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "t")]) == 0
        model = str(tmp_path / "t" / "model_meta.txt")
        assert main(["adapt", "--config", str(cfg), "--out", str(tmp_path / "a"), "--model", model]) == 0
        header, body = read_csv(tmp_path / "a" / "adaptation_report.csv")
        assert header[:4] == ["type", "expected_meta", "expected_adapted", "simulated_adapted"]
        assert len(body) == 5
        assert (tmp_path / "a" / "trajectory_adapted_0.csv").exists()
        assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "s"), "--model", model,
                     "--runs", "2"]) == 0
        assert len(read_csv(tmp_path / "s" / "simulation_report.csv")[1]) == 5

    def test_baselines(self, tmp_path):
        cfg = _small(tmp_path)
        for cmd in ("baseline-unilateral", "baseline-individual", "transfer"):
            assert main([cmd, "--config", str(cfg), "--out", str(tmp_path / cmd)]) == 0
        summary = json.loads((tmp_path / "baseline-unilateral" / "summary.json").read_text())
        assert summary["models_identical"] is True

    def test_simulate_needs_model(self, tmp_path):
        assert main(["simulate", "--config", str(_small(tmp_path)), "--out", str(tmp_path)]) == 1

    def test_wrong_model_shape_is_validation_error(self, tmp_path):
        save_model(np.zeros((3, 3)), tmp_path / "m.txt")
        code = main(["simulate", "--config", str(_small(tmp_path)), "--out", str(tmp_path / "o"),
                     "--model", str(tmp_path / "m.txt")])
        assert code == 1

    def test_invalid_config_exit_code(self, tmp_path):
        raw = _shipped()
        raw["train"]["lam"] = -1
        path = tmp_path / "bad.yaml"
        path.write_text(yaml.safe_dump(raw))
        assert main(["train", "--config", str(path), "--out", str(tmp_path / "o")]) == 1

    def test_divergence_exit_code(self, tmp_path, capsys):
        cfg = _small(tmp_path, alpha=0.5)
        assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
        assert "step size" in capsys.readouterr().err

    def test_check_gradients(self, tmp_path):
        assert main(["check-gradients", "--config", str(_small(tmp_path)), "--out", str(tmp_path / "g"),
                     "--instances", "5"]) == 0
        header, body = read_csv(tmp_path / "g" / "gradient_checks.csv")
        assert header == ["check", "instance", "rel_error", "tol", "passed"]
        assert all(row[4] == "1" for row in body)

    def test_output_dir_from_environment(self, tmp_path, monkeypatch):
        monkeypatch.setenv("STACKMETA_OUT", str(tmp_path / "env"))
        assert main(["train", "--config", str(_small(tmp_path))]) == 0
        assert (tmp_path / "env" / "config_resolved.yaml").exists()
