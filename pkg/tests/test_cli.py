import json
from pathlib import Path

import pytest

from vdd_robust.cli import main


def run_cli(*argv):
    try:
        return main(list(argv))
    except SystemExit as exc:  # argparse usage failures
        return exc.code


@pytest.fixture(scope="module")
def cli_corpus(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli") / "corpus"
    code = run_cli("gen-data", "--normal", "8", "--pathol", "8", "--seed", "11",
                   "--out", str(out))
    assert code == 0
    return out


@pytest.fixture(scope="module")
def cli_train_run(cli_corpus, tmp_path_factory):
    root = tmp_path_factory.mktemp("cli_runs")
    code = run_cli(
        "train", "--manifest", str(cli_corpus / "manifest.csv"),
        "--feature", "mel", "--preset", "mobile", "--classifier", "cnn",
        "--epochs", "2", "--seed", "11", "--out", str(root),
    )
    assert code == 0
    runs = list(root.glob("train-*"))
    assert len(runs) == 1
    return runs[0]


class TestGenData:
    def test_corpus_files_written(self, cli_corpus):
        assert (cli_corpus / "manifest.csv").exists()
        assert len(list(cli_corpus.glob("*.wav"))) == 16

    def test_repeat_same_seed_identical_bytes(self, cli_corpus, tmp_path):
        out2 = tmp_path / "again"
        assert run_cli("gen-data", "--normal", "8", "--pathol", "8", "--seed", "11",
                       "--out", str(out2)) == 0
        for wav in sorted(cli_corpus.glob("*.wav")):
            assert wav.read_bytes() == (out2 / wav.name).read_bytes()
        assert (cli_corpus / "manifest.csv").read_bytes() == (
            out2 / "manifest.csv"
        ).read_bytes()

    def test_missing_out_is_usage_error(self, capsys):
        assert run_cli("gen-data", "--normal", "4") == 1

    def test_replay_manifest_written(self, cli_corpus):
        replay = json.loads((cli_corpus / "run_manifest.json").read_text())
        assert replay["run"]["command"] == "gen-data"
        assert replay["run"]["config"]["seed"] == 11


class TestTrain:
    def test_artifacts_written(self, cli_train_run):
        assert (cli_train_run / "model.bin").exists()
        assert (cli_train_run / "split.json").exists()
        assert (cli_train_run / "training_log.csv").exists()
        assert (cli_train_run / "run_manifest.json").exists()

    def test_training_log_has_epochs(self, cli_train_run):
        lines = (cli_train_run / "training_log.csv").read_text().strip().splitlines()
        assert lines[0] == "epoch,train_loss,val_loss,val_acc"
        assert len(lines) == 3  # header + 2 epochs

    def test_invalid_feature_usage_error(self, cli_corpus):
        code = run_cli(
            "train", "--manifest", str(cli_corpus / "manifest.csv"),
            "--feature", "plp",
        )
        assert code == 1

    def test_missing_manifest_is_data_error(self, tmp_path):
        code = run_cli(
            "train", "--manifest", str(tmp_path / "ghost.csv"), "--epochs", "1",
        )
        assert code == 2


class TestAttack:
    def test_tone_grid_rows(self, cli_train_run, tmp_path):
        code = run_cli(
            "attack", "--model", str(cli_train_run),
            "--attack", "tone", "--scenario", "black-snippet",
            "--seed", "11", "--out", str(tmp_path),
        )
        assert code == 0
        runs = list(tmp_path.glob("attack-*"))
        assert len(runs) == 1
        lines = (runs[0] / "metrics.csv").read_text().strip().splitlines()
        assert len(lines) - 1 == 25  # 5 freqs x 5 amplitudes

    def test_fgsm_row_per_epsilon(self, cli_train_run, tmp_path):
        code = run_cli(
            "attack", "--model", str(cli_train_run),
            "--attack", "fgsm", "--scenario", "white",
            "--seed", "11", "--out", str(tmp_path),
        )
        assert code == 0
        runs = list(tmp_path.glob("attack-*"))
        lines = (runs[0] / "metrics.csv").read_text().strip().splitlines()
        assert len(lines) - 1 == 3  # default epsilon grid

    def test_scenario_mismatch_rejected(self, cli_train_run, tmp_path, capsys):
        code = run_cli(
            "attack", "--model", str(cli_train_run),
            "--attack", "fgsm", "--scenario", "black-file", "--out", str(tmp_path),
        )
        assert code == 1
        assert "white-box" in capsys.readouterr().err or True

    def test_missing_model_data_error(self, tmp_path):
        code = run_cli(
            "attack", "--model", str(tmp_path / "nope"), "--attack", "tone",
            "--scenario", "black-file",
        )
        assert code == 2


@pytest.fixture(scope="module")
def attack_run(cli_train_run, tmp_path_factory):
    root = tmp_path_factory.mktemp("cli_attack")
    assert run_cli(
        "attack", "--model", str(cli_train_run),
        "--attack", "tone,pitch", "--scenario", "black-file",
        "--seed", "11", "--out", str(root),
    ) == 0
    return next(root.glob("attack-*"))


class TestReport:
    def test_figure_files(self, attack_run):
        assert run_cli("report", "--run", str(attack_run)) == 0
        assert (attack_run / "fig_tone.csv").exists()
        assert (attack_run / "fig_pitch.csv").exists()
        assert (attack_run / "fig_boxplots.csv").exists()
        assert (attack_run / "summary.txt").exists()

    def test_tone_figure_schema(self, attack_run):
        run_cli("report", "--run", str(attack_run))
        header = (attack_run / "fig_tone.csv").read_text().splitlines()[0].split(",")
        assert header[:2] == ["detector", "amplitude"]
        assert all(col.startswith("freq_") for col in header[2:])

    def test_summary_lists_min_tpr(self, attack_run):
        run_cli("report", "--run", str(attack_run))
        text = (attack_run / "summary.txt").read_text()
        assert "min attacked TPR" in text

    def test_empty_run_dir_is_error(self, tmp_path):
        assert run_cli("report", "--run", str(tmp_path)) == 2


class TestReplay:
    def test_attack_replay_from_run_manifest(self, cli_train_run, tmp_path):
        root_a = tmp_path / "a"
        assert run_cli(
            "attack", "--model", str(cli_train_run), "--attack", "tone",
            "--scenario", "black-snippet", "--seed", "11", "--out", str(root_a),
        ) == 0
        run_a = next(root_a.glob("attack-*"))
        root_b = tmp_path / "b"
        assert run_cli(
            "attack", "--model", str(cli_train_run),
            "--config", str(run_a / "run_manifest.json"), "--out", str(root_b),
        ) == 0
        run_b = next(root_b.glob("attack-*"))
        assert (run_a / "metrics.csv").read_bytes() == (run_b / "metrics.csv").read_bytes()
        assert run_a.name == run_b.name  # same config hash


class TestEnvOutputRoot:
    def test_env_var_sets_run_root(self, cli_corpus, tmp_path, monkeypatch):
        monkeypatch.setenv("VDD_ROBUST_OUT", str(tmp_path / "envroot"))
        code = run_cli(
            "train", "--manifest", str(cli_corpus / "manifest.csv"),
            "--feature", "mel", "--preset", "mobile", "--epochs", "1", "--seed", "2",
        )
        assert code == 0
        assert list((tmp_path / "envroot").glob("train-*"))


class TestKfoldSelection:
    def test_candidates_selected_via_config(self, cli_corpus, tmp_path):
        config = {
            "detector": {
                "kfold_k": 2,
                "candidates": [
                    {"feature": "mel", "preset": "mobile", "train": {"epochs": 1}},
                    {"feature": "mfcc", "preset": "mobile", "train": {"epochs": 1}},
                ],
                "train": {"epochs": 1},
                "preset": "mobile",
            }
        }
        cfg_path = tmp_path / "cands.json"
        cfg_path.write_text(json.dumps(config))
        code = run_cli(
            "train", "--manifest", str(cli_corpus / "manifest.csv"),
            "--config", str(cfg_path), "--seed", "3", "--out", str(tmp_path / "runs"),
        )
        assert code == 0
        run = next((tmp_path / "runs").glob("train-*"))
        assert (run / "kfold.csv").exists()
        lines = (run / "kfold.csv").read_text().strip().splitlines()
        assert len(lines) == 3  # header + 2 candidates


class TestConfigCommand:
    def test_prints_default_grids(self, capsys):
        assert run_cli("config") == 0
        config = json.loads(capsys.readouterr().out)
        assert config["attack"]["grids"]["tone"]["freqs_hz"] == [50.0, 75.0, 100.0, 125.0, 150.0]
        assert config["attack"]["grids"]["fgsm"]["epsilons"] == [0.001, 0.01, 0.1]
        assert config["attack"]["grids"]["pitch"]["steps"] == [-1, -2, -3, -4, -5]
