import json

import conformal_control.cli as cli
from conformal_control import pipeline


def small_config(N=20, k=39, k1=19, theta=0.05, trials=300):
    return {
        "schema_version": 1,
        "system": {
            "A": [[1.0, 0.5], [0.0, 1.0]],
            "B": [[0.0], [0.5]],
            "N": N,
            "x0": [2.0, -1.0],
        },
        "constraints": {
            "P": [[0.1, 0.0], [0.0, 0.1]],
            "p": [0.0, 0.0],
            "Q": [[1.0]],
            "theta": theta,
        },
        "cost": {
            "state_weight": [[0.0, 0.0], [0.0, 0.0]],
            "input_weight": [[1.0]],
            "terminal_weight": [[100.0, 0.0], [0.0, 100.0]],
        },
        "data": {
            "k": k,
            "k1": k1,
            "seed": 7,
            "generator": {
                "coordinates": [
                    {"dist": "normal", "mean": -0.01, "variance": 0.005},
                    {"dist": "gamma", "shape": 5.5, "scale": 0.005, "signed": True},
                ]
            },
        },
        "method": {
            "direct": {"population": 20, "generations": 5, "gene_bound": 10.0, "seed": 11},
            "indirect": {"grid_step": 0.1, "mvee_tol": 1e-7},
            "baseline": {"scenarios": 5},
        },
        "validation": {"n_trials": trials, "seed": 13},
    }


def write_config(tmp_path, cfg, name="config.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg, indent=2))
    return path


def gen_data(tmp_path, cfg_path):
    out = tmp_path / "data"
    assert cli.main(["gen-data", "--config", str(cfg_path), "--out", str(out)]) == 0
    return out / "dataset.csv"


class TestGenData:
    def test_row_count_matches_split_arithmetic(self, tmp_path):
        cfg = small_config(N=10, k=9, k1=3)
        path = gen_data(tmp_path, write_config(tmp_path, cfg))
        lines = path.read_text().strip().splitlines()
        assert len(lines) == 1 + 10 * 10 * 2  # header + (k+1) * N * n

    def test_byte_identical_across_runs(self, tmp_path):
        cfg_path = write_config(tmp_path, small_config())
        out1 = tmp_path / "d1"
        out2 = tmp_path / "d2"
        assert cli.main(["gen-data", "--config", str(cfg_path), "--out", str(out1)]) == 0
        assert cli.main(["gen-data", "--config", str(cfg_path), "--out", str(out2)]) == 0
        assert (out1 / "dataset.csv").read_bytes() == (out2 / "dataset.csv").read_bytes()

    def test_seed_override_changes_data(self, tmp_path):
        cfg_path = write_config(tmp_path, small_config())
        out1 = tmp_path / "d1"
        out2 = tmp_path / "d2"
        assert cli.main(["gen-data", "--config", str(cfg_path), "--out", str(out1)]) == 0
        assert cli.main(["gen-data", "--config", str(cfg_path), "--out", str(out2), "--seed", "123"]) == 0
        assert (out1 / "dataset.csv").read_bytes() != (out2 / "dataset.csv").read_bytes()


class TestRunDirect:
    def test_end_to_end_manifest(self, tmp_path):
        cfg_path = write_config(tmp_path, small_config())
        data = gen_data(tmp_path, cfg_path)
        out = tmp_path / "run"
        code = cli.main(["run-direct", "--config", str(cfg_path), "--data", str(data), "--out", str(out)])
        assert code == 0
        manifest = json.loads((out / "manifest.json").read_text())
        results = manifest["results"]
        assert manifest["command"] == "run-direct"
        assert results["C_e"] > 0 and results["C_Ke"] > 0
        assert results["tightening_conditions"]["ok"]
        assert results["ocp"]["status"] == "optimal"
        assert 0.0 <= results["validation"]["state_sat_rate"] <= 1.0
        assert manifest["data"]["calibration_indices"] == [0, 19]
        assert manifest["data"]["training_indices"] == [20, 39]
        for name in ("solution.csv", "regions.csv", "samples.csv", "timings.json"):
            assert (out / name).exists()

    def test_manifests_byte_identical(self, tmp_path):
        cfg_path = write_config(tmp_path, small_config())
        data = gen_data(tmp_path, cfg_path)
        out1, out2 = tmp_path / "r1", tmp_path / "r2"
        for out in (out1, out2):
            assert cli.main(["run-direct", "--config", str(cfg_path), "--data", str(data), "--out", str(out)]) == 0
        assert (out1 / "manifest.json").read_bytes() == (out2 / "manifest.json").read_bytes()

    def test_insufficient_calibration_exits_2(self, tmp_path, capsys):
        cfg = small_config(k=9, k1=3)  # 4 calibration sequences, theta=0.05 needs 19
        cfg_path = write_config(tmp_path, cfg)
        data = gen_data(tmp_path, cfg_path)
        code = cli.main(["run-direct", "--config", str(cfg_path), "--data", str(data), "--out", str(tmp_path / "r")])
        assert code == 2
        assert "calibrat" in capsys.readouterr().err.lower()

    def test_run_alias_with_method_flag(self, tmp_path):
        cfg_path = write_config(tmp_path, small_config())
        data = gen_data(tmp_path, cfg_path)
        out = tmp_path / "alias"
        code = cli.main([
            "run", "--method", "direct", "--config", str(cfg_path), "--data", str(data), "--out", str(out)
        ])
        assert code == 0
        assert json.loads((out / "manifest.json").read_text())["command"] == "run-direct"


class TestRunIndirect:
    def test_end_to_end_manifest(self, tmp_path):
        cfg_path = write_config(tmp_path, small_config())
        data = gen_data(tmp_path, cfg_path)
        out = tmp_path / "run"
        code = cli.main(["run-indirect", "--config", str(cfg_path), "--data", str(data), "--out", str(out)])
        assert code == 0
        results = json.loads((out / "manifest.json").read_text())["results"]
        assert results["invariance"]["passed"]
        assert results["tightening_conditions"]["ok"]
        assert results["ocp"]["status"] == "optimal"

    def test_manifests_byte_identical(self, tmp_path):
        cfg_path = write_config(tmp_path, small_config())
        data = gen_data(tmp_path, cfg_path)
        out1, out2 = tmp_path / "r1", tmp_path / "r2"
        for out in (out1, out2):
            assert cli.main(["run-indirect", "--config", str(cfg_path), "--data", str(data), "--out", str(out)]) == 0
        assert (out1 / "manifest.json").read_bytes() == (out2 / "manifest.json").read_bytes()


class TestRunBaseline:
    def test_end_to_end(self, tmp_path):
        cfg_path = write_config(tmp_path, small_config())
        data = gen_data(tmp_path, cfg_path)
        out = tmp_path / "run"
        code = cli.main([
            "run-baseline", "--config", str(cfg_path), "--data", str(data),
            "--out", str(out), "--scenarios", "5", "--trials", "100",
        ])
        assert code == 0
        results = json.loads((out / "manifest.json").read_text())["results"]
        assert results["n_scenarios"] == 5
        assert results["training_max_violation"] <= 1e-7
        assert results["reference_scenario_count"] == 5739

    def test_single_scenario_is_nominal(self, tmp_path):
        cfg_path = write_config(tmp_path, small_config())
        data = gen_data(tmp_path, cfg_path)
        out = tmp_path / "one"
        code = cli.main([
            "run-baseline", "--config", str(cfg_path), "--data", str(data),
            "--out", str(out), "--scenarios", "1", "--trials", "50",
        ])
        assert code == 0

    def test_too_many_scenarios_rejected(self, tmp_path, capsys):
        cfg_path = write_config(tmp_path, small_config())
        data = gen_data(tmp_path, cfg_path)
        code = cli.main([
            "run-baseline", "--config", str(cfg_path), "--data", str(data),
            "--out", str(tmp_path / "r"), "--scenarios", "999",
        ])
        assert code == 1


class TestReport:
    def _run_both(self, tmp_path):
        cfg_path = write_config(tmp_path, small_config())
        data = gen_data(tmp_path, cfg_path)
        outs = []
        for name in ("run-direct", "run-indirect"):
            out = tmp_path / name
            assert cli.main([name, "--config", str(cfg_path), "--data", str(data), "--out", str(out)]) == 0
            outs.append(out)
        return outs

    def test_single_manifest_single_row(self, tmp_path):
        cfg_path = write_config(tmp_path, small_config())
        data = gen_data(tmp_path, cfg_path)
        out = tmp_path / "run"
        assert cli.main(["run-direct", "--config", str(cfg_path), "--data", str(data), "--out", str(out)]) == 0
        rep = tmp_path / "report"
        assert cli.main(["report", str(out), "--out", str(rep)]) == 0
        lines = (rep / "comparison.csv").read_text().strip().splitlines()
        assert len(lines) == 2

    def test_two_manifests_shared_columns(self, tmp_path):
        outs = self._run_both(tmp_path)
        rep = tmp_path / "report"
        assert cli.main(["report", *map(str, outs), "--out", str(rep)]) == 0
        lines = (rep / "comparison.csv").read_text().strip().splitlines()
        assert len(lines) == 3
        assert lines[0].count(",") == lines[1].count(",") == lines[2].count(",")
        text = (rep / "comparison.txt").read_text()
        assert "5739" in text  # scenario-count reference figure is documented

    def test_corrupt_manifest_names_file(self, tmp_path, capsys):
        bad = tmp_path / "bad"
        bad.mkdir()
        (bad / "manifest.json").write_text("{not json")
        code = cli.main(["report", str(bad), "--out", str(tmp_path / "rep")])
        assert code == 1
        assert "manifest" in capsys.readouterr().err
        # and schema mismatch is also named
        (bad / "manifest.json").write_text(json.dumps({"schema_version": 99}))
        code = cli.main(["report", str(bad), "--out", str(tmp_path / "rep")])
        assert code == 1


class TestConfigValidation:
    def test_missing_block_rejected(self, tmp_path):
        cfg = small_config()
        del cfg["constraints"]
        path = write_config(tmp_path, cfg)
        code = cli.main(["gen-data", "--config", str(path), "--out", str(tmp_path / "d")])
        assert code == 1

    def test_bad_split_rejected(self, tmp_path):
        cfg = small_config()
        cfg["data"]["k1"] = cfg["data"]["k"]
        path = write_config(tmp_path, cfg)
        code = cli.main(["gen-data", "--config", str(path), "--out", str(tmp_path / "d")])
        assert code == 1

    def test_resolve_seeds_override(self):
        cfg = small_config()
        seeds = pipeline.resolve_seeds(cfg, None)
        assert seeds == {"data": 7, "train": 11, "validation": 13}
        seeds = pipeline.resolve_seeds(cfg, 100)
        assert seeds == {"data": 100, "train": 101, "validation": 102}
