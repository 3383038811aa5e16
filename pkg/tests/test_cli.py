import subprocess
import sys

import pytest

from safebrs.cli import main, oracle_check

SMALL_CONFIG = """\
# tiny pipeline for tests
pretrain.episodes = 200
train.episodes = 10
train.runs = 2
classifier.svm.epochs = 5
"""


@pytest.fixture
def config(tmp_path):
    path = tmp_path / "small.cfg"
    path.write_text(SMALL_CONFIG)
    return path


def test_run_safe_without_model_fails(tmp_path, capsys):
    status = main(["run", "--task", "1", "--algo", "q", "--strategy", "safe", "--out", str(tmp_path / "e.csv")])
    assert status != 0
    err = capsys.readouterr().err
    assert "missing model" in err and len(err.strip().splitlines()) == 1


@pytest.mark.parametrize("argv", [
    ["run", "--bogus"],
    ["fit", "--data", "/nonexistent.csv", "--out", "m.txt", "--report", "r.csv"],
    ["report", "--in", "/nonexistent", "--out", "s.csv"],
    ["pretrain", "--config", "/nonexistent.cfg", "--out", "x"],
])
def test_errors_give_nonzero_exit(argv, capsys):
    assert main(argv) != 0
    assert capsys.readouterr().err.startswith("safebrs: error:")


def test_invalid_config_is_rejected(tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text("train.episodes = 10\nnot_a_key = 3\n")
    assert main(["pipeline", "--config", str(bad), "--out", str(tmp_path / "o")]) != 0
    assert "not_a_key" in capsys.readouterr().err


def test_stepwise_commands(tmp_path, config):
    pre = tmp_path / "pre"
    assert main(["pretrain", "--config", str(config), "--out", str(pre)]) == 0
    assert (pre / "dataset.csv").read_text().startswith("h_n,h_e,h_s,h_w,obs_dir,distance,label\n")
    model, report = tmp_path / "model.txt", tmp_path / "report.csv"
    for kind in ("svm", "knn", "tree"):
        assert main(["fit", "--data", str(pre / "dataset.csv"), "--model", kind, "--out", str(model),
                     "--report", str(report), "--config", str(config)]) == 0
        assert report.read_text().splitlines()[1].startswith(kind + ",")
    runs = tmp_path / "runs"
    runs.mkdir()
    for strategy in ("egreedy", "safe"):
        assert main(["run", "--task", "2", "--algo", "sarsa", "--strategy", strategy, "--model", str(model),
                     "--config", str(config), "--out", str(runs / f"episodes_sarsa_task2_{strategy}.csv")]) == 0
    assert main(["report", "--in", str(runs), "--out", str(tmp_path / "summary.csv")]) == 0
    assert len((tmp_path / "summary.csv").read_text().splitlines()) == 3
    assert (tmp_path / "curves_sarsa_task2_safe.csv").exists()


def test_pipeline_cardinality_and_determinism(tmp_path, config):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["pipeline", "--config", str(config), "--out", str(a)]) == 0
    assert main(["pipeline", "--config", str(config), "--out", str(b), "--workers", "2"]) == 0
    summary = (a / "summary.csv").read_text().splitlines()
    assert len(summary) == 1 + 12
    names = sorted(p.name for p in a.iterdir())
    assert names == sorted(p.name for p in b.iterdir())
    for name in names:
        assert (a / name).read_bytes() == (b / name).read_bytes(), name


def test_oracle_check_command(capsys):
    violations, positives = oracle_check(6, 2, episodes=300)
    assert violations == 0 and positives > 0
    assert main(["oracle-check", "--size", "5", "--horizon", "1", "--episodes", "100"]) == 0
    assert "0 violations" in capsys.readouterr().out


def test_console_entry_point():
    out = subprocess.run([sys.executable, "-m", "safebrs.cli", "--help"], capture_output=True, text=True)
    assert out.returncode == 0 and "oracle-check" in out.stdout
