import subprocess
import sys
from importlib.resources import files

import pytest

from conftest import FLAG_SEED
from heatfuzz.cli import main

TARGET = str(files("heatfuzz") / "targets" / "motivating.tgt")


@pytest.fixture(scope="module")
def campaign(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    corpus = root / "corpus"
    corpus.mkdir()
    (corpus / "flag.bin").write_bytes(FLAG_SEED)
    cfg = root / "fuzz.cfg"
    cfg.write_text("window_execs = 20000\nmax_train_per_class = 200\ntrain.epochs = 5\nmax_execs = 1\n")
    out = root / "out"
    code = main(["fuzz", "--target", TARGET, "--corpus", str(corpus), "--out", str(out), "--seed", "3",
                 "--max-execs", "60000", "--config", str(cfg)])
    assert code == 0
    return out


def test_flags_override_config_file(campaign):
    text = (campaign / "config.txt").read_text()
    assert "max_execs = 60000" in text and "rng_seed = 3" in text and "train.epochs = 5" in text


def test_stats(campaign, capsys):
    assert main(["stats", "--out", str(campaign)]) == 0
    out = capsys.readouterr().out
    assert "executions: 60001" in out and "critical_ratio" in out


def test_rewards(campaign, capsys):
    assert main(["rewards", "--out", str(campaign)]) == 0
    out = capsys.readouterr().out
    assert "critical: " in out and "L6" in out.split("critical: ")[1]


def test_train_and_heatmap(campaign, capsys):
    assert main(["train", "--out", str(campaign), "--block", "L6"]) == 0
    assert (campaign / "models" / "L6.model").exists()
    assert main(["heatmap", "--out", str(campaign), "--seed-id", "0", "--mutator", "arth-", "--block", "L6"]) == 0
    assert (campaign / "heatmap_0_arth-_L6.csv").exists()
    assert "hot bytes" in capsys.readouterr().out


def test_replay(tmp_path, capsys):
    crash = tmp_path / "c.bin"
    crash.write_bytes(FLAG_SEED[:12] + b"XXX")
    assert main(["replay", "--target", TARGET, "--input", str(crash)]) == 0
    assert "crashed: true" in capsys.readouterr().out


def test_usage_errors(campaign, capsys):
    assert main([]) == 1
    assert main(["fuzz", "--target", TARGET]) == 1
    assert main(["train", "--out", str(campaign), "--block", "Z9"]) == 1
    assert main(["heatmap", "--out", str(campaign), "--seed-id", "0", "--mutator", "shuffle"]) == 1


def test_runtime_errors(tmp_path, capsys):
    assert main(["replay", "--target", str(tmp_path / "none.tgt"), "--input", str(tmp_path / "x")]) == 2
    assert main(["stats", "--out", str(tmp_path)]) == 2
    bad = tmp_path / "bad.tgt"
    bad.write_text("init A\nblock A {\n  else -> Z\n}\n")
    inp = tmp_path / "in.bin"
    inp.write_bytes(b"x")
    assert main(["replay", "--target", str(bad), "--input", str(inp)]) == 2


def test_bad_config_value_is_usage_error(tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("p_hot = 2\n")
    corpus = tmp_path / "seed.bin"
    corpus.write_bytes(b"x")
    assert main(["fuzz", "--target", TARGET, "--corpus", str(corpus), "--out", str(tmp_path / "o"),
                 "--config", str(cfg)]) == 1


def test_console_script_help():
    proc = subprocess.run([sys.executable, "-m", "heatfuzz.cli", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0
    for cmd in ("fuzz", "rewards", "train", "heatmap", "replay", "stats"):
        assert cmd in proc.stdout
