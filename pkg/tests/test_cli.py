import json

import pytest

from coper.cli import main
from coper.profiles import PROFILES, get_profile


def run(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


MICRO_CONFIG = {
    "counts": {"train": 40, "test_id": 12, "test_hollow": 12, "test_extrapolation": 12},
    "model": {"d_model": 16, "n_heads": 2, "n_layers": 1, "ffn_mult": 2, "max_seq_len": 384},
    "train": {"batch_size": 16, "learning_rate": 1e-3, "epochs": 2, "eval_every": 1},
}


@pytest.fixture()
def micro_config(tmp_path):
    path = tmp_path / "micro.json"
    path.write_text(json.dumps(MICRO_CONFIG))
    return str(path)


class TestProfiles:
    def test_registry_names(self):
        assert set(PROFILES) == {
            "coper-default", "coper-dense", "single-period",
            "single-period-scaled", "circconv", "addsub", "sine",
        }

    def test_every_profile_resolves_both_scales(self):
        for name in PROFILES:
            for scale in ("desk", "paper"):
                settings = get_profile(name).settings(scale)
                assert settings.model.d_model >= 16
                assert settings.train.epochs >= 1
                assert sum(settings.counts.values()) > 0

    def test_unknown_profile(self):
        with pytest.raises(KeyError):
            get_profile("nope")


class TestGenVerify:
    def test_gen_writes_manifest_and_splits(self, tmp_path, capsys, micro_config):
        out = tmp_path / "d"
        code, _, _ = run(capsys, "gen", "--profile", "coper-default", "--seed", "7",
                         "--out", str(out), "--config", micro_config)
        assert code == 0
        assert (out / "manifest.json").exists()
        for name in ("train.jsonl", "test_id.jsonl", "test_hollow.jsonl", "test_extrapolation.jsonl"):
            assert (out / name).exists()
        assert (out / "stamp.json").exists()

    def test_gen_deterministic_across_invocations(self, tmp_path, capsys, micro_config):
        a, b = tmp_path / "a", tmp_path / "b"
        run(capsys, "gen", "--profile", "coper-default", "--seed", "3", "--out", str(a),
            "--config", micro_config)
        run(capsys, "gen", "--profile", "coper-default", "--seed", "3", "--out", str(b),
            "--config", micro_config)
        assert (a / "train.jsonl").read_bytes() == (b / "train.jsonl").read_bytes()
        assert (a / "manifest.json").read_bytes() == (b / "manifest.json").read_bytes()

    def test_verify_pass_and_fail(self, tmp_path, capsys, micro_config):
        out = tmp_path / "d"
        run(capsys, "gen", "--profile", "coper-default", "--out", str(out),
            "--config", micro_config)
        code, stdout, _ = run(capsys, "verify", "--data", str(out))
        assert code == 0 and "PASS" in stdout
        lines = (out / "train.jsonl").read_text().splitlines()
        rec = json.loads(lines[0])
        rec["target"] = ("3" if rec["target"][0] != "3" else "4") + rec["target"][1:]
        lines[0] = json.dumps(rec, sort_keys=True, separators=(",", ":"))
        (out / "train.jsonl").write_text("\n".join(lines) + "\n")
        code, stdout, _ = run(capsys, "verify", "--data", str(out))
        assert code == 1 and "FAIL" in stdout

    def test_unknown_profile_exits_one(self, tmp_path, capsys):
        code, _, err = run(capsys, "gen", "--profile", "bogus", "--out", str(tmp_path / "x"))
        assert code == 1
        assert "unknown profile" in err


class TestAnalyze:
    def test_counterexample_json(self, capsys):
        code, stdout, _ = run(capsys, "analyze", "rope-counterexample")
        assert code == 0
        payload = json.loads(stdout)
        assert payload["rule_diff_near"] == -1
        assert payload["rule_diff_far"] == 2
        assert payload["verdict"] == "not representable"

    def test_invariance_json(self, capsys):
        code, stdout, _ = run(capsys, "analyze", "rope-invariance", "--trials", "20",
                              "--max-period", "8")
        payload = json.loads(stdout)
        assert code == 0
        assert payload["max_deviation"] < 1e-9
        assert len(payload["per_period"]) == 8

    def test_scaled_premise_json(self, capsys):
        code, stdout, _ = run(capsys, "analyze", "scaled-premise", "--trials", "5")
        payload = json.loads(stdout)
        assert code == 0
        assert payload["all_violate"] is True


class TestEndToEnd:
    def test_run_experiment_micro(self, tmp_path, capsys, micro_config):
        out = tmp_path / "exp"
        code, stdout, err = run(
            capsys, "run-experiment", "coper-default", "--seed", "1",
            "--out", str(out), "--config", micro_config)
        assert code == 0, err
        assert (out / "data" / "manifest.json").exists()
        seed_dir = out / "seed_1"
        for name in ("model.ckpt", "runlog.csv", "runlog.json", "curves.svg",
                     "heatmap.csv", "heatmap.svg", "report.json"):
            assert (seed_dir / name).exists(), name
        assert (out / "summary.json").exists()
        assert (out / "categories.csv").exists()
        assert (out / "stamp.json").exists()
        summary = json.loads((out / "summary.json").read_text())
        assert summary["profile"] == "coper-default"
        assert "id_accuracy" in summary["mean"]

    def test_train_then_eval_then_plot(self, tmp_path, capsys, micro_config):
        data = tmp_path / "d"
        run(capsys, "gen", "--profile", "coper-default", "--out", str(data),
            "--config", micro_config)
        train_out = tmp_path / "t"
        code, _, err = run(capsys, "train", "--profile", "coper-default", "--data", str(data),
                           "--out", str(train_out), "--config", micro_config, "--seed", "2")
        assert code == 0, err
        eval_out = tmp_path / "e"
        code, stdout, err = run(capsys, "eval", "--ckpt", str(train_out / "model.ckpt"),
                                "--data", str(data), "--out", str(eval_out))
        assert code == 0, err
        assert "avg" in stdout
        plot_out = tmp_path / "p"
        code, _, err = run(capsys, "plot", "--runlog", str(train_out / "runlog.csv"),
                           "--heatmap", str(eval_out / "heatmap.csv"), "--out", str(plot_out))
        assert code == 0, err
        assert (plot_out / "curves.svg").exists()
        assert (plot_out / "heatmap.svg").exists()

    def test_flag_overrides_beat_config_file(self, tmp_path, capsys, micro_config):
        out = tmp_path / "exp"
        code, _, err = run(
            capsys, "run-experiment", "coper-default", "--seed", "1", "--out", str(out),
            "--config", micro_config, "--pe", "sinpe", "--layers", "1", "--epochs", "1")
        assert code == 0, err
        stamp = json.loads((out / "stamp.json").read_text())
        assert stamp["model"]["pe_kind"] == "sinpe"
        assert stamp["train"]["epochs"] == 1

    def test_plot_without_inputs_fails_validation(self, tmp_path, capsys):
        code, _, err = run(capsys, "plot", "--out", str(tmp_path / "p"))
        assert code == 1
