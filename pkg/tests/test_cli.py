import json
import subprocess
import sys

import pytest
import yaml

from photonic_qt.cli import aggregate, main, noise_sweep_values, read_metrics
from photonic_qt.config import ExperimentConfig, load_config_file, parse_int_list

FAST = ["--n-train", "100", "--n-test", "50", "--epochs", "1", "--maxfun", "2", "--cobyla-batch", "16", "--quiet"]
COLUMNS = ["method", "chi", "params", "epoch", "train_loss", "train_acc", "test_acc", "gen_error", "seed"]


def run(argv):
    return main([str(a) for a in argv])


def manifest_of(path):
    return json.loads((path / "manifest.json").read_text())


class TestExitCodes:
    def test_usage_errors(self, tmp_path):
        with pytest.raises(SystemExit) as info:
            main(["train-qt", "--bogus"])
        assert info.value.code == 2
        with pytest.raises(SystemExit) as info:
            main(["sweep-noise", "colour"])
        assert info.value.code == 2

    @pytest.mark.parametrize(
        "argv",
        [
            ["train-qt", "--chi", "0"],
            ["train-baseline", "share", "--k", "999"],
            ["train-qt", "--seeds", "a..b"],
            ["train-qt", "--lr", "-1"],
        ],
    )
    def test_invalid_values_exit_2(self, argv, tmp_path):
        assert run([*argv, "--out", tmp_path / "o", "--quiet"]) == 2
        assert not (tmp_path / "o" / "metrics.csv").exists()

    def test_unknown_config_key(self, tmp_path):
        cfg = tmp_path / "c.yaml"
        cfg.write_text("chi: 3\nbond: 4\n")
        assert run(["train-qt", "--config", cfg, "--quiet"]) == 2

    def test_missing_data_is_runtime_failure(self, tmp_path):
        out = tmp_path / "o"
        assert run(["train-qt", "--data-dir", tmp_path / "nothing", "--out", out, *FAST]) == 1
        manifest = manifest_of(out)
        assert manifest["status"] == "failed"
        assert "FileNotFoundError" in manifest["error"]

    def test_module_entry_point(self):
        proc = subprocess.run([sys.executable, "-m", "photonic_qt", "--version"], capture_output=True, text=True)
        assert proc.returncode == 0 and "photonic-qt" in proc.stdout


class TestRuns:
    def test_train_qt_outputs(self, tmp_path):
        out = tmp_path / "qt"
        assert run(["train-qt", "--chi", "4", "--out", out, *FAST]) == 0
        rows = read_metrics(out / "metrics.csv")
        assert list(rows[0]) == COLUMNS
        assert rows[0]["params"] == "688" and rows[0]["method"] == "qt"
        manifest = manifest_of(out)
        assert manifest["status"] == "ok" and manifest["backend"] in ("numba", "numpy")
        assert manifest["config"]["train"]["epochs"] == 1
        assert len(manifest["dataset"]["sha256"]) == 64
        summary = json.loads((out / "summary.json").read_text())
        assert summary["groups"][0]["params"] == 688

    def test_replay_is_bit_for_bit(self, tmp_path):
        first, second = tmp_path / "a", tmp_path / "b"
        assert run(["train-qt", "--chi", "2", "--seeds", "0,1", "--out", first, *FAST]) == 0
        assert run(["replay", first / "manifest.json", "--out", second, "--quiet"]) == 0
        assert (first / "metrics.csv").read_bytes() == (second / "metrics.csv").read_bytes()
        assert manifest_of(second)["dataset"] == manifest_of(first)["dataset"]

    def test_config_file_with_overrides(self, tmp_path):
        cfg = tmp_path / "c.yaml"
        cfg.write_text(yaml.safe_dump({"chis": [1, 2], "n_train": 100, "n_test": 50, "train": {"epochs": 1, "maxfun": 2}}))
        out = tmp_path / "o"
        assert run(["sweep-bond", "--config", cfg, "--chi", "3", "--cobyla-batch", "16", "--out", out, "--quiet"]) == 0
        rows = read_metrics(out / "metrics.csv")
        assert {r["chi"] for r in rows} == {"3"}
        assert manifest_of(out)["config"]["train"]["maxfun"] == 2

    def test_env_overrides_data_dir(self, tmp_path, monkeypatch):
        monkeypatch.setenv("PHOTONIC_QT_DATA_DIR", str(tmp_path / "missing"))
        assert run(["train-qt", "--out", tmp_path / "o", *FAST]) == 1
        assert "missing" in manifest_of(tmp_path / "o")["config"]["data_dir"]

    def test_baselines(self, tmp_path):
        assert run(["train-baseline", "share", "--k", "4", "--out", tmp_path / "s", *FAST]) == 0
        row = read_metrics(tmp_path / "s" / "metrics.csv")[0]
        assert row["method"] == "share[K=4]" and row["params"] == str(1090 + 400) and row["chi"] == ""
        summary = json.loads((tmp_path / "s" / "summary.json").read_text())
        assert summary["runs"][0]["shared_matrix_params"] == 400
        assert run(["train-baseline", "prune", "--out", tmp_path / "p", *FAST]) == 0
        assert read_metrics(tmp_path / "p" / "metrics.csv")[0]["params"] == "3370"

    def test_sweep_noise_and_ablate(self, tmp_path):
        out = tmp_path / "n"
        assert run(["sweep-noise", "g2", "--values", "0.01,0.3", "--chi", "2", "--out", out, *FAST]) == 0
        summary = json.loads((out / "summary.json").read_text())
        methods = {g["method"]: g for g in summary["groups"]}
        assert set(methods) == {"qt[noiseless]", "qt[g2=0.01]", "qt[g2=0.3]"}
        assert methods["qt[g2=0.01]"]["in_realistic_range"] and not methods["qt[g2=0.3]"]["in_realistic_range"]
        assert "test_acc_drop" in methods["qt[g2=0.3]"]
        out = tmp_path / "ab"
        assert run(["ablate", "--chi", "2", "--out", out, *FAST]) == 0
        row = read_metrics(out / "metrics.csv")[0]
        assert row["method"] == "ablation[frozen_pw]" and row["params"] == str(316 - 192)

    def test_report(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        assert run(["train-qt", "--chi", "1", "--seeds", "0", "--out", a, *FAST]) == 0
        assert run(["train-qt", "--chi", "1", "--seeds", "1", "--out", b, *FAST]) == 0
        assert run(["report", a, b, "--out", tmp_path / "r", "--quiet"]) == 0
        summary = json.loads((tmp_path / "r" / "summary.json").read_text())
        group = summary["groups"][0]
        assert group["n_seeds"] == 2 and group["seeds"] == [0, 1]
        assert run(["report", tmp_path / "none", "--out", tmp_path / "r2", "--quiet"]) == 1


class TestHelpers:
    def test_parse_int_list(self):
        assert parse_int_list("1..4") == [1, 2, 3, 4]
        assert parse_int_list("1,3, 5") == [1, 3, 5]
        assert parse_int_list("0..1,7") == [0, 1, 7]

    def test_exponent_floats_without_dot(self, tmp_path):
        path = tmp_path / "c.yaml"
        path.write_text("train:\n  lr: 1e-3\n  adam_eps: 1e-08\n")
        data, is_manifest = load_config_file(path)
        assert data["train"] == {"lr": 1e-3, "adam_eps": 1e-8} and not is_manifest

    def test_noise_grid_spans_range(self):
        cfg = ExperimentConfig(command="sweep-noise", variant="g2", noise_points=3)
        assert noise_sweep_values(cfg) == pytest.approx([1e-3, 1e-2, 1e-1])
        cfg = ExperimentConfig(command="sweep-noise", variant="beta", noise_points=2)
        assert noise_sweep_values(cfg) == [0.2, 0.75]

    def test_aggregate_uses_last_epoch(self):
        rows = [
            dict(method="qt", chi="4", params="688", epoch=str(e), train_loss="1", train_acc="0",
                 test_acc=str(acc), gen_error="0", seed=str(s))
            for s, accs in enumerate([(10, 80), (20, 90)]) for e, acc in enumerate(accs, 1)
        ]
        (group,) = aggregate(rows)
        assert group["test_acc_mean"] == 85.0
        assert group["test_acc_std"] == pytest.approx(7.0710678, rel=1e-6)
