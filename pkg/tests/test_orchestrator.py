import numpy as np
import pytest

from conftest import FLAG_SEED
from heatfuzz.orchestrator import (ConfigError, CoverageHistory, FuzzerConfig, detect_bottleneck, load_corpus,
                                   run_campaign, triage_crash)
from heatfuzz.target import execute, parse_target

EASY = """init A
block A {
  if byte[0] == 0x41 -> C
  if byte[1] == 0x42 -> B
  else -> D
}
block B {
  else -> D
}
block C crash {}
block D {}
"""


@pytest.fixture(scope="module")
def easy():
    return parse_target(EASY, name="easy")


def test_bottleneck_examples():
    assert detect_bottleneck([(0, 100, 5), (10, 104, 5)], 10, 0.05) is True
    assert detect_bottleneck([(0, 100, 5), (10, 106, 5)], 10, 0.05) is False
    assert detect_bottleneck([(0, 0, 1), (10, 3, 2)], 10, 0.05) is False
    assert detect_bottleneck([(0, 10, 1)], 10, 0.05) is False
    with pytest.raises(ValueError):
        detect_bottleneck([], 10)


def test_history_is_monotone():
    h = CoverageHistory()
    h.append(0, 3, 2)
    with pytest.raises(ValueError):
        h.append(0, 4, 2)
    with pytest.raises(ValueError):
        h.append(5, 2, 2)


def test_config_validation():
    with pytest.raises(ConfigError):
        FuzzerConfig(p_hot=1.5)
    with pytest.raises(ConfigError):
        FuzzerConfig(window_execs=0)
    with pytest.raises(ConfigError):
        FuzzerConfig(mode="afl")


def test_config_text_round_trip():
    cfg = FuzzerConfig(rng_seed=7, p_hot=0.1, mode="baseline").replace(**{"train.epochs": 5})
    assert FuzzerConfig.parse(cfg.to_text()) == cfg
    assert FuzzerConfig.parse("max_execs = 2e6\n# comment\n").max_execs == 2_000_000
    with pytest.raises(ConfigError, match="unknown key"):
        FuzzerConfig.parse("nope = 1")


def test_budget_zero(motivating):
    r = run_campaign(FuzzerConfig(max_execs=0), motivating, [FLAG_SEED])
    assert r.fuzz_execs == 0 and not r.crashes
    assert r.coverage.covered == set(execute(motivating, FLAG_SEED).block_seq)
    assert len(r.records) == 0


def test_empty_corpus_rejected(motivating):
    with pytest.raises(ValueError, match="empty"):
        run_campaign(FuzzerConfig(), motivating, [])


def test_triage_dedups_and_replays(easy):
    seen = set()
    first = triage_crash(easy, b"A\x00", 1, 0, (), seen)
    assert first is not None and first.block == "C"
    assert triage_crash(easy, b"A\x01", 2, 0, (), seen) is None
    assert execute(easy, first.data).crashed
    assert triage_crash(easy, b"\x00\x00", 3, 0, (), set()) is None


def test_campaign_finds_easy_crash(tmp_path, easy):
    cfg = FuzzerConfig(rng_seed=1, mode="baseline", max_execs=5000, window_execs=1000)
    r = run_campaign(cfg, easy, [b"\x00\x00"], out_dir=tmp_path)
    assert [c.block for c in r.crashes] == ["C"]
    assert list((tmp_path / "crashes").iterdir()) == [tmp_path / "crashes" / "crash_C.bin"]
    assert execute(easy, (tmp_path / "crashes" / "crash_C.bin").read_bytes()).crashed


def test_baseline_campaign_outputs(tmp_path, motivating):
    cfg = FuzzerConfig(rng_seed=2, mode="baseline", max_execs=30_000, window_execs=10_000)
    r = run_campaign(cfg, motivating, [FLAG_SEED], out_dir=tmp_path)
    rows = (tmp_path / "coverage.csv").read_text().splitlines()[1:]
    assert len(rows) == 30_000 // 10_000 + 1
    cols = np.array([[int(v) for v in row.split(",")] for row in rows])
    assert np.all(np.diff(cols, axis=0) >= 0)
    assert not list(tmp_path.glob("heatmap_*.csv"))
    for op in ("estimate_dtmc", "solve_rewards", "train", "extract_heatmap", "build_dataset"):
        assert r.counters[op] == 0
    assert len(r.records) == r.fuzz_execs == 30_000
    for name in ("records.log", "rewards.csv", "critical_ratio.csv", "report.txt", "config.txt", "target.tgt"):
        assert (tmp_path / name).exists(), name


def test_pool_entries_brought_new_coverage(motivating):
    r = run_campaign(FuzzerConfig(rng_seed=3, mode="baseline", max_execs=50_000), motivating, [FLAG_SEED])
    by_exec = {r.records.exec_id[i]: i for i in range(len(r.records))}
    for e in r.pool[1:]:
        assert r.records.new_coverage[by_exec[e.exec_id]] == 1


def _small_attuzz(seed=4):
    cfg = FuzzerConfig(rng_seed=seed, max_execs=60_000, window_execs=20_000, max_train_per_class=200)
    return cfg.replace(**{"train.epochs": 5})


def test_pipeline_activates(motivating):
    r = run_campaign(_small_attuzz(), motivating, [FLAG_SEED])
    assert r.pipeline_runs and "L6" in r.pipeline_runs[0].selection.critical
    assert r.counters["train"] >= 1 and r.first_guided_exec is not None
    assert r.critical_ratio[-1][2] > 0


def test_campaigns_are_byte_identical(tmp_path, motivating):
    a, b = tmp_path / "a", tmp_path / "b"
    run_campaign(_small_attuzz(5), motivating, [FLAG_SEED], out_dir=a)
    run_campaign(_small_attuzz(5), motivating, [FLAG_SEED], out_dir=b)
    for name in ("records.log", "report.txt", "coverage.csv", "critical_ratio.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes(), name
    assert sorted(p.name for p in a.glob("plan_*.csv")) == sorted(p.name for p in b.glob("plan_*.csv"))


def test_load_corpus(tmp_path):
    (tmp_path / "b").write_bytes(b"2")
    (tmp_path / "a").write_bytes(b"1")
    assert load_corpus(tmp_path) == [b"1", b"2"]
    assert load_corpus(tmp_path / "a") == [b"1"]
    with pytest.raises(FileNotFoundError):
        load_corpus(tmp_path / "missing")
