import json

import pytest

from allelink.cli import EXIT_CONFIG, EXIT_DATA, EXIT_OK, main
from allelink.config import ConfigError, parse_config


def write_config(tmp_path, body, name="config.json"):
    path = tmp_path / name
    path.write_text(json.dumps(body))
    return str(path)


def pipeline_config(tmp_path, **extra):
    body = {
        "scenario": {"id": 2, "clusters": 30, "psi": 0.02, "seed": 5},
        "prior": {"family": "bbap", "cap": 6, "calibration": {"family": "geometric", "p": 0.5}},
        "sampler": {
            "iterations": 260,
            "burn_in": 60,
            "chains": 2,
            "snapshot_stride": 2,
            "check_every": 100,
        },
        "estimation": {"losses": ["binder", "vi"], "samples_used": 150, "sweeps": 30},
        "output_dir": str(tmp_path / "out"),
        "seed": 7,
    }
    body.update(extra)
    return body


class TestParseConfig:
    def test_minimal_with_defaults(self, tmp_path):
        path = write_config(
            tmp_path,
            {
                "dataset": "records.csv",
                "prior": {"family": "bbap", "cap": 15},
                "output_dir": "out",
            },
        )
        cfg = parse_config(path, command="run")
        assert cfg.sampler.iterations == 20_000
        assert cfg.sampler.burn_in == 10_000
        assert cfg.sampler.chains == 2
        assert cfg.prior.calibration.p == 0.5
        assert cfg.prior.calibration.cv == 0.25
        assert cfg.likelihood.psi_prior_mean == 0.01
        assert cfg.likelihood.psi_prior_sd == 0.01
        assert cfg.estimation.samples_used == 2000

    def test_unknown_key_named(self, tmp_path):
        path = write_config(tmp_path, {"pirior": {}, "output_dir": "o", "dataset": "d"})
        with pytest.raises(ConfigError, match="pirior"):
            parse_config(path, command="run")

    def test_nested_unknown_key_named(self, tmp_path):
        path = write_config(
            tmp_path,
            {"prior": {"family": "bbap", "cap": 4, "capp": 3}, "output_dir": "o", "dataset": "d"},
        )
        with pytest.raises(ConfigError, match="prior.capp"):
            parse_config(path, command="run")

    def test_zero_cv_rejected(self, tmp_path):
        path = write_config(
            tmp_path,
            {"prior": {"family": "bbap", "cap": 4, "cv": 0.0}, "output_dir": "o", "dataset": "d"},
        )
        with pytest.raises(ConfigError, match="cv"):
            parse_config(path, command="run")

    def test_missing_cap_rejected(self, tmp_path):
        path = write_config(
            tmp_path, {"prior": {"family": "bbap"}, "output_dir": "o", "dataset": "d"}
        )
        with pytest.raises(ConfigError, match="cap"):
            parse_config(path, command="run")

    def test_overrides_win(self, tmp_path):
        path = write_config(
            tmp_path,
            {"dataset": "d", "prior": {"family": "bbap", "cap": 5}, "output_dir": "o", "seed": 1},
        )
        cfg = parse_config(
            path, command="run", overrides={"seed": 9, "sampler.iterations": 50, "sampler.burn_in": 10}
        )
        assert cfg.seed == 9
        assert cfg.sampler.iterations == 50

    def test_bad_command(self):
        with pytest.raises(ConfigError, match="command"):
            parse_config(None, command="explode", overrides={"output_dir": "o", "dataset": "d"})

    def test_scenario_validation(self, tmp_path):
        path = write_config(
            tmp_path,
            {
                "scenario": {"id": 2, "sizes": [1, 2], "weights": [0.5, 0.5]},
                "prior": {"family": "bbap", "cap": 4},
                "output_dir": "o",
            },
        )
        with pytest.raises(ConfigError, match="sizes"):
            parse_config(path, command="run")

    def test_explicit_scenario(self, tmp_path):
        path = write_config(
            tmp_path,
            {
                "scenario": {"sizes": [1, 2], "weights": [0.7, 0.3], "clusters": 10,
                             "psi": 0.01, "cardinalities": [3, 3]},
                "prior": {"family": "bbap", "cap": 3},
                "output_dir": "o",
            },
        )
        cfg = parse_config(path, command="simulate")
        assert cfg.scenario.sizes == (1, 2)
        assert cfg.scenario.cardinalities == (3, 3)

    def test_epp_prior(self, tmp_path):
        path = write_config(
            tmp_path,
            {"prior": {"family": "epp", "theta": 2.0}, "output_dir": "o", "dataset": "d"},
        )
        cfg = parse_config(path, command="run")
        assert cfg.prior.family == "epp"
        params = cfg.prior.build(10)
        assert params.theta == 2.0

    def test_informed_calibration_file(self, tmp_path):
        pi_path = tmp_path / "pi.json"
        pi_path.write_text(json.dumps({"pi": [0.2, 0.1]}))
        path = write_config(
            tmp_path,
            {
                "prior": {
                    "family": "bbap",
                    "cap": 3,
                    "calibration": {"family": "informed", "path": "pi.json"},
                },
                "output_dir": "o",
                "dataset": "d",
            },
        )
        cfg = parse_config(path, command="run")
        assert cfg.prior.calibration.family == "explicit"
        assert cfg.prior.calibration.pi == (0.2, 0.1)


class TestPipeline:
    def test_full_pipeline_emits_artifacts(self, tmp_path):
        config_path = write_config(tmp_path, pipeline_config(tmp_path))
        out = tmp_path / "out"
        for command in ("simulate", "calibrate", "sample-prior", "run", "estimate",
                        "evaluate", "summarize"):
            assert main([command, "--config", config_path]) == EXIT_OK
        expected = [
            "records.csv", "prior_params.json", "prior_summary.tsv",
            "trace.jsonl", "xi_snapshots.csv",
            "estimate_binder.csv", "estimate_binder.json",
            "estimate_vi.csv", "estimate_vi.json",
            "metrics.json", "summary.tsv", "k_distribution.tsv", "manifest.json",
        ]
        for name in expected:
            assert (out / name).exists(), name
        metrics = json.loads((out / "metrics.json").read_text())
        sources = {r["source"] for r in metrics["reports"]}
        assert sources == {"posterior-average", "point-estimate"}
        for report in metrics["reports"]:
            assert 0.0 <= report["fnr"] <= 1.0
            assert 0.0 <= report["fdr"] <= 1.0
            assert 0.0 <= report["js"] <= 1.0

    def test_manifest_rerun_reproduces_outputs(self, tmp_path):
        config_path = write_config(tmp_path, pipeline_config(tmp_path))
        assert main(["run", "--config", config_path]) == EXIT_OK
        out = tmp_path / "out"
        trace_first = (out / "trace.jsonl").read_bytes()
        manifest_path = str(out / "manifest.json")
        rerun_dir = tmp_path / "rerun"
        assert main(["run", "--config", manifest_path, "--output-dir", str(rerun_dir)]) == EXIT_OK
        assert (rerun_dir / "trace.jsonl").read_bytes() == trace_first
        assert (rerun_dir / "xi_snapshots.csv").read_bytes() == (out / "xi_snapshots.csv").read_bytes()

    def test_run_then_estimate_deterministic(self, tmp_path):
        config_path = write_config(tmp_path, pipeline_config(tmp_path))
        outs = []
        for name in ("a", "b"):
            target = tmp_path / name
            assert main(["run", "--config", config_path, "--output-dir", str(target)]) == EXIT_OK
            assert main(["estimate", "--config", config_path, "--output-dir", str(target)]) == EXIT_OK
            outs.append(target)
        for fname in ("trace.jsonl", "xi_snapshots.csv", "estimate_binder.csv", "estimate_vi.csv"):
            assert (outs[0] / fname).read_bytes() == (outs[1] / fname).read_bytes()

    def test_evaluate_without_truth_is_data_error(self, tmp_path, capsys):
        csv_path = tmp_path / "plain.csv"
        csv_path.write_text("a,b\n0,1\n0,1\n1,0\n1,1\n")
        body = pipeline_config(tmp_path)
        del body["scenario"]
        body["dataset"] = str(csv_path)
        body["prior"]["cap"] = 3
        body["sampler"] = {"iterations": 40, "burn_in": 10, "chains": 1, "check_every": 20}
        config_path = write_config(tmp_path, body)
        assert main(["run", "--config", config_path]) == EXIT_OK
        code = main(["evaluate", "--config", config_path])
        assert code == EXIT_DATA
        assert "no ground truth" in capsys.readouterr().err

    def test_estimate_without_run_cleans_partial_outputs(self, tmp_path):
        body = pipeline_config(tmp_path, output_dir=str(tmp_path / "fresh"))
        config_path = write_config(tmp_path, body)
        assert main(["estimate", "--config", config_path]) == EXIT_DATA
        out = tmp_path / "fresh"
        assert not list(out.glob("*")), list(out.glob("*"))

    def test_config_error_exit_code(self, tmp_path):
        config_path = write_config(tmp_path, {"output_dir": "o"})
        assert main(["run", "--config", config_path]) == EXIT_CONFIG

    def test_commands_do_not_mutate_inputs(self, tmp_path):
        body = pipeline_config(tmp_path)
        body["sampler"] = {"iterations": 30, "burn_in": 5, "chains": 1, "check_every": 20}
        config_path = write_config(tmp_path, body)
        assert main(["simulate", "--config", config_path]) == EXIT_OK
        records = (tmp_path / "out" / "records.csv").read_bytes()
        config_bytes = (tmp_path / "config.json").read_bytes()
        body2 = dict(body, dataset=str(tmp_path / "out" / "records.csv"))
        del body2["scenario"]
        config2 = write_config(tmp_path, body2, name="config2.json")
        assert main(["run", "--config", config2]) == EXIT_OK
        assert (tmp_path / "out" / "records.csv").read_bytes() == records
        assert (tmp_path / "config.json").read_bytes() == config_bytes
