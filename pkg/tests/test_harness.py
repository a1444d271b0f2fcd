"""Experiment configuration, batch runner, and CLI tests."""

import json

import numpy as np
import pytest
from click.testing import CliRunner

from prefloop.cli import main as cli_main
from prefloop.harness import (
    ConfigError,
    ExperimentConfig,
    builtin_configs,
    load_thermal_plant,
    run_experiment,
)


def small_config(**overrides):
    doc = builtin_configs()["quadratic-c01"].to_dict()
    doc.update({"replicas": 2, "horizon": 50})
    doc.update(overrides)
    return ExperimentConfig.from_dict(doc, name=doc.get("name", "small"))


class TestBuiltins:
    def test_exactly_four(self):
        names = set(builtin_configs())
        assert names == {"quadratic-c01", "quadratic-c07", "quadratic-algebraic",
                         "thermal"}

    def test_quadratic_parameters(self):
        cfg = builtin_configs()["quadratic-c01"]
        assert cfg.eta == 0.1 and cfg.delta == 0.5 and cfg.replicas == 20
        np.testing.assert_allclose(cfg.build_plant().A, [[0.1, 1.0], [0.0, 0.1]])
        assert cfg.utility["x_ref"] == [100.0, 100.0]

    def test_c07_differs_only_in_c(self):
        a = builtin_configs()["quadratic-c01"].to_dict()
        b = builtin_configs()["quadratic-c07"].to_dict()
        assert b["plant"]["A"][0][0] == 0.7
        a.pop("plant"), b.pop("plant"), a.pop("name"), b.pop("name")
        assert a == b

    def test_thermal_plant(self):
        model, doc = load_thermal_plant()
        assert model.n_x == 13 and model.n_u == 1
        assert model.spectral_radius < 1.0
        H = np.linalg.solve(np.eye(13) - model.A, model.B)
        assert H[0, 0] == pytest.approx(7.0 / 12.0, rel=1e-9)
        cfg = builtin_configs()["thermal"]
        assert set(cfg.links) == {"logistic", "sign"}


class TestConfigValidation:
    def test_dimension_mismatch_u0(self):
        with pytest.raises(ConfigError, match="u0 has dimension"):
            small_config(u0=[0.0, 0.0, 0.0])

    def test_dimension_mismatch_x_ref(self):
        with pytest.raises(ConfigError, match="x_ref"):
            small_config(utility={"kind": "quadratic-tracking", "x_ref": [1.0]})

    def test_bad_version(self):
        with pytest.raises(ConfigError, match="version"):
            small_config(version=2)

    def test_unknown_utility(self):
        with pytest.raises(ConfigError, match="utility kind"):
            small_config(utility={"kind": "entropy"})

    def test_unknown_link(self):
        with pytest.raises(ConfigError, match="link"):
            small_config(links=["cauchy"])

    def test_zero_replicas(self):
        with pytest.raises(ConfigError, match="replicas"):
            small_config(replicas=0)

    def test_unknown_metric(self):
        with pytest.raises(ConfigError, match="metric"):
            small_config(metrics=["regret"])

    def test_missing_field(self):
        doc = small_config().to_dict()
        del doc["plant"]
        with pytest.raises(ConfigError, match="plant"):
            ExperimentConfig.from_dict(doc)

    def test_unstable_plant(self):
        with pytest.raises(ConfigError, match="spectral radius"):
            small_config(plant={"A": [[1.2, 0.0], [0.0, 0.1]],
                                "B": [[1.0, 0.0], [0.0, 1.0]]})

    def test_file_round_trip(self, tmp_path):
        cfg = small_config()
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps(cfg.to_dict()))
        again = ExperimentConfig.from_file(path)
        assert again.to_dict() == cfg.to_dict()

    def test_hash_changes_with_content(self):
        a = small_config()
        b = small_config(seed=1)
        assert a.config_hash() != b.config_hash()
        assert a.config_hash() == small_config().config_hash()


class TestRunExperiment:
    def test_single_row_single_replica(self, tmp_path):
        cfg = small_config(replicas=1, horizon=1, metrics=["utility"])
        result = run_experiment(cfg, tmp_path)
        recs = result.records["logistic"]
        assert len(recs) == 1 and len(recs[0]) == 1
        stats_file = (result.out_dir / "logistic" / "ensemble_utility.csv").read_text()
        assert stats_file.splitlines()[1].endswith(",0.0")

    def test_reproducibility_byte_identical(self, tmp_path):
        cfg = small_config()
        run_experiment(cfg, tmp_path / "a")
        run_experiment(cfg, tmp_path / "b")
        files_a = sorted((tmp_path / "a" / cfg.name).rglob("*.csv"))
        files_b = sorted((tmp_path / "b" / cfg.name).rglob("*.csv"))
        assert len(files_a) == len(files_b) > 0
        for fa, fb in zip(files_a, files_b):
            assert fa.read_bytes() == fb.read_bytes(), fa.name

    def test_seeds_are_base_plus_index(self, tmp_path):
        cfg = small_config(seed=10)
        result = run_experiment(cfg, tmp_path, write_files=False)
        seeds = [r.metadata["seed"] for r in result.records["logistic"]]
        assert seeds == [10, 11]

    def test_manifest_hash_matches(self, tmp_path):
        cfg = small_config()
        result = run_experiment(cfg, tmp_path)
        manifest = json.loads((result.out_dir / "manifest.json").read_text())
        assert manifest["config_hash"] == cfg.config_hash()
        assert "wall_time_s" in manifest

    def test_abort_preserves_partial_results(self, tmp_path):
        # PMV diverges once the state leaves physical range; force it with an
        # unbounded input box and a huge step size
        doc = builtin_configs()["thermal"].to_dict()
        doc.update({"replicas": 1, "horizon": 2000, "eta": 500.0, "delta": 0.1,
                    "links": ["logistic"]})
        cfg = ExperimentConfig.from_dict(doc, name="explode")
        with pytest.raises(RuntimeError, match="aborted"):
            run_experiment(cfg, tmp_path)
        manifest = json.loads((tmp_path / "explode" / "manifest.json").read_text())
        assert "aborted" in manifest


class TestCli:
    def test_list_builtins(self):
        result = CliRunner().invoke(cli_main, ["list-builtins"])
        assert result.exit_code == 0
        assert result.output.split() == ["quadratic-algebraic", "quadratic-c01",
                                         "quadratic-c07", "thermal"]

    def test_unknown_builtin_exit_2(self):
        result = CliRunner().invoke(cli_main, ["run", "quadratic-c02"])
        assert result.exit_code == 2
        assert "did you mean" in result.output

    def test_run_and_verify(self, tmp_path):
        runner = CliRunner()
        result = runner.invoke(cli_main, [
            "run", "quadratic-c01", "--replicas", "3", "--horizon", "300",
            "--seed", "5", "--out", str(tmp_path)])
        assert result.exit_code == 0, result.output
        result = runner.invoke(cli_main, [
            "verify", str(tmp_path / "quadratic-c01"), "--lemma", "1",
            "--lemma", "5", "--k-prime", "100"])
        assert result.exit_code == 0, result.output
        assert (tmp_path / "quadratic-c01" / "verification_lemma5.json").exists()
        doc = json.loads((tmp_path / "quadratic-c01"
                          / "verification_lemma1.json").read_text())
        assert doc["status"] == "vacuous"

    def test_run_determinism(self, tmp_path):
        runner = CliRunner()
        for sub in ("a", "b"):
            r = runner.invoke(cli_main, [
                "run", "quadratic-c01", "--replicas", "2", "--horizon", "100",
                "--seed", "7", "--out", str(tmp_path / sub)])
            assert r.exit_code == 0, r.output
        fa = (tmp_path / "a/quadratic-c01/logistic/rep000.csv").read_bytes()
        fb = (tmp_path / "b/quadratic-c01/logistic/rep000.csv").read_bytes()
        assert fa == fb

    def test_verify_not_a_result_dir(self, tmp_path):
        result = CliRunner().invoke(cli_main, ["verify", str(tmp_path)])
        assert result.exit_code == 2
