"""Acceptance experiments, one test per criterion.

Each test records a one-line verdict that is printed in the pytest terminal
summary (and directly when this file is run as a script).  Criteria 3 and 4
share one set of twenty 2e6-execution campaigns, which dominates the
runtime (about a quarter of an hour on one core).
"""

import math
import random
import time

import numpy as np
import pytest

from conftest import FLAG_SEED, random_dag_dtmc
from heatfuzz import attention, guidance
from heatfuzz.coverage import GlobalCoverage
from heatfuzz.markov import estimate_dtmc, figure3_rewards, mc_reward_oracle, solve_rewards
from heatfuzz.mutation import ARITH_MAX, Mutation, MutatorId, apply_mutation, havoc_batch
from heatfuzz.orchestrator import FuzzerConfig, run_campaign
from heatfuzz.target import build_cfg, demo_targets, random_program

VERDICTS: dict[int, str] = {}

FIGURE3 = {"B1": 0.001, "B2": 0.002, "B3": 0.086, "B4": 1.333, "B5": 0.143, "B6": 0.0, "B7": 0.0, "B8": 1.0}
CAMPAIGNS = 10
BUDGET = 2_000_000
WARMUP_EXECS = 200_000


def verdict(n: int, ok: bool, detail: str) -> None:
    VERDICTS[n] = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
    print(VERDICTS[n])


@pytest.fixture(scope="module")
def motivating():
    return demo_targets()["motivating"]


# ---------------------------------------------------------------------------
# 1-2: rewards


def test_c1_figure3_rewards():
    t0 = time.perf_counter()
    _, rewards = figure3_rewards()
    elapsed = time.perf_counter() - t0
    err = max(abs(rewards[b] - v) for b, v in FIGURE3.items())
    ok = err <= 5e-3 and elapsed < 1.0
    verdict(1, ok, f"max |R - R_ref| = {err:.2e} (tol 5e-3), {elapsed:.3f}s (< 1s); "
                   f"R_4 = {rewards['B4']:.4f}, R_3 = {rewards['B3']:.4f}")
    assert ok


def test_c2_reward_oracle():
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    zs, outside, worst_exact = [], 0, 0.0
    for _ in range(50):
        dtmc = random_dag_dtmc(rng, int(rng.integers(5, 31)))
        covered = {b for b in dtmc.states if rng.random() < 0.5}
        r = solve_rewards(dtmc, covered)
        c = np.array([0.0 if b in covered else 1.0 for b in dtmc.states])
        exact = np.linalg.solve(np.eye(len(c)) - dtmc.matrix, c)
        worst_exact = max(worst_exact, float(np.max(np.abs(exact - [r[b] for b in dtmc.states]))))
        for b in dtmc.states:
            mean, se = mc_reward_oracle(dtmc, covered, b, 100_000, rng)
            gap = abs(mean - r[b])
            if se > 0:
                zs.append(gap / se)
            if gap > 3 * se + 1e-12:
                outside += 1
    elapsed = time.perf_counter() - t0
    zs = np.array(zs)
    p_any = 1 - (1 - math.erfc(3 / math.sqrt(2))) ** len(zs)
    ok = outside == 0 and elapsed < 120
    verdict(2, ok, f"{outside} of {len(zs)} stochastic comparisons beyond 3 SE (max z {zs.max():.2f}; "
                   f"chance of >=1 for an exact solver {p_any:.0%}); solver vs linear solve {worst_exact:.1e}; "
                   f"{elapsed:.0f}s (< 120s)")
    assert ok


# ---------------------------------------------------------------------------
# 3-4: campaigns


def _l6_hits(report, start, L6):
    """L6 hits and executions among fuzz executions with id >= ``start``."""
    cov = report.records.covers_block(L6)
    window = cov[np.asarray(report.records.exec_id) >= start]
    return int(window.sum()), len(window)


@pytest.fixture(scope="module")
def campaigns(motivating):
    t0 = time.perf_counter()
    runs = {}
    for mode in ("attuzz", "baseline"):
        runs[mode] = [run_campaign(FuzzerConfig(rng_seed=s, mode=mode, max_execs=BUDGET), motivating, [FLAG_SEED])
                      for s in range(CAMPAIGNS)]
    return runs, time.perf_counter() - t0


def test_c3_bottleneck_break(campaigns):
    runs, elapsed = campaigns
    guided = sum(r.found_crash for r in runs["attuzz"])
    base = sum(r.found_crash for r in runs["baseline"])
    ok = guided >= 9 and base <= 2 and elapsed < 900
    verdict(3, ok, f"crash in attuzz {guided}/{CAMPAIGNS} (need >= 9), baseline {base}/{CAMPAIGNS} "
                   f"(need <= 2); {elapsed:.0f}s for all campaigns (< 900s)")
    assert ok


def test_c4_critical_hit_ratio(campaigns, motivating):
    runs, _ = campaigns
    L6 = motivating.index["L6"]
    g_hit = g_n = b_hit = b_n = 0
    per = []
    for rg, rb in zip(runs["attuzz"], runs["baseline"]):
        if rg.first_guided_exec is None:
            continue
        h, n = _l6_hits(rg, rg.first_guided_exec, L6)
        hb, nb = _l6_hits(rb, rg.first_guided_exec, L6)
        g_hit, g_n, b_hit, b_n = g_hit + h, g_n + n, b_hit + hb, b_n + nb
        per.append(h / n)
    activated = len(per)
    guided = g_hit / g_n if g_n else 0.0
    base = b_hit / b_n if b_n else 0.0
    ok = activated == CAMPAIGNS and guided >= 0.5 and guided >= 3 * base
    verdict(4, ok, f"L6 ratio after activation {guided:.3f} (need >= 0.5; per campaign "
                   f"{min(per, default=0):.3f}..{max(per, default=0):.3f}), baseline same window {base:.3f}, "
                   f"ratio {guided / base if base else float('inf'):.2f}x (need >= 3); "
                   f"activated in {activated}/{CAMPAIGNS}")
    assert ok


# ---------------------------------------------------------------------------
# 5, 7: model and heat map on the warm-up log


@pytest.fixture(scope="module")
def warm_model(motivating):
    report = run_campaign(FuzzerConfig(rng_seed=0, mode="baseline", max_execs=WARMUP_EXECS), motivating,
                          [FLAG_SEED])
    cfg = FuzzerConfig()
    t0 = time.perf_counter()
    data = attention.build_dataset(report.records, report.seeds, motivating.index["L6"],
                                   np.random.default_rng(0), max_per_class=cfg.max_train_per_class)
    model, metrics = attention.train(data, cfg.train)
    return report, data, model, metrics, time.perf_counter() - t0


def test_c5_model_quality(warm_model):
    _, data, _, metrics, elapsed = warm_model
    ok = metrics.holdout_acc >= 0.80 and elapsed < 300
    verdict(5, ok, f"L6 holdout accuracy {metrics.holdout_acc:.3f} on {metrics.n_holdout} held-out of "
                   f"{len(data)} balanced samples (need >= 0.80); {elapsed:.0f}s (< 300s)")
    assert ok


def _heatmaps(warm_model):
    report, _, model, _, _ = warm_model
    out = {}
    for mut in MutatorId:
        samples = attention.pair_samples(report.records, report.seeds, 0, int(mut), model.n)
        hm = attention.extract_heatmap(model, 0, mut, samples)
        if hm is not None:
            out[mut] = hm
    return out


def test_c7_heatmap_sanity(warm_model):
    hm = _heatmaps(warm_model)[MutatorId.ARITH_MINUS]
    ab, rest = hm.mass(range(0, 8)), hm.mass(range(8, hm.valid_len))
    ok = ab > rest
    verdict(7, ok, f"ArithMinus heat mass a,b (bytes 0-7) {ab:.3f} vs c,buf (bytes 8-{hm.valid_len - 1}) "
                   f"{rest:.3f}")
    assert ok


# ---------------------------------------------------------------------------
# 6: gradients


def test_c6_gradient_check():
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(20):
        params = attention.init_params(8, 4, 4, rng)
        k = int(rng.integers(1, 9))
        sample = attention.encode(rng.integers(0, 256, k).astype(np.uint8).tobytes(), int(rng.integers(0, 7)),
                                  float(rng.random()), int(rng.integers(0, 2)), 8)
        worst = max(worst, attention.finite_difference_check(params, sample, 1e-5, n_checks=200, rng=rng))
    elapsed = time.perf_counter() - t0
    ok = worst < 1e-4 and elapsed < 60
    verdict(6, ok, f"max relative error {worst:.2e} over 20 draws (< 1e-4), {elapsed:.1f}s (< 60s)")
    assert ok


# ---------------------------------------------------------------------------
# 8: invariants


def _row_sums_ok(motivating, report) -> float:
    dtmc = estimate_dtmc(report.coverage, build_cfg(motivating))
    worst = 0.0
    for s, deg in zip(dtmc.matrix.sum(axis=1), dtmc.out_degree()):
        if deg:
            worst = max(worst, abs(s - 1.0))
    rng = random.Random(0)
    for _ in range(20):
        prog = random_program(rng, rng.randint(2, 30), acyclic=False)
        cfg = build_cfg(prog)
        counts = {e: rng.randrange(0, 1000) for e in cfg.edges}
        d = estimate_dtmc(GlobalCoverage.from_counts(prog.block_ids, counts), cfg)
        for s, deg in zip(d.matrix.sum(axis=1), d.out_degree()):
            if deg:
                worst = max(worst, abs(s - 1.0))
    return worst


def _involutions_ok() -> bool:
    rng = random.Random(1)
    for _ in range(2000):
        seed = bytes(rng.randrange(256) for _ in range(rng.randint(1, 16)))
        pos = rng.randrange(len(seed))
        pairs = [(Mutation(MutatorId.BIT_FLIP1, pos, rng.randrange(8)),) * 2,
                 (Mutation(MutatorId.BYTE_FLIP, pos, 0),) * 2]
        d = rng.randint(1, ARITH_MAX)
        pairs.append((Mutation(MutatorId.ARITH_PLUS, pos, d), Mutation(MutatorId.ARITH_MINUS, pos, d)))
        for a, b in pairs:
            if apply_mutation(apply_mutation(seed, a), b) != seed:
                return False
    return True


def _suppression_ok(warm_model) -> bool:
    report, _, _, _, _ = warm_model
    plan = guidance.compute_plan({"L6": _heatmaps(warm_model)}, ["L6"], p_hot=0.0, seed_id=0)
    n = len(FLAG_SEED)
    stream = list(guidance.guided_mutation_stream(FLAG_SEED, plan, rng=random.Random(0)))
    if any(plan.is_protected(m.mutator, m.position) for m in stream):
        return False
    mut, pos, _ = guidance.guided_schedule_arrays(n, plan, (), np.random.default_rng(0))
    prot = plan.protected_matrix(n)
    if prot[mut, pos].any():
        return False
    hb = havoc_batch(FLAG_SEED, np.random.default_rng(0), 5000, protected=prot, p_hot=0.0)
    applied = hb.mut >= 0
    return not prot[np.where(applied, hb.mut, 0), np.where(applied, hb.pos, 0)][applied].any()


def _determinism_ok(tmp_path, motivating) -> bool:
    cfg = FuzzerConfig(rng_seed=9, max_execs=300_000)
    for d in ("a", "b"):
        run_campaign(cfg, motivating, [FLAG_SEED], out_dir=tmp_path / d)
    return all((tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
               for f in ("records.log", "report.txt"))


def test_c8_invariants(warm_model, motivating, tmp_path):
    report, data, _, _, _ = warm_model
    row_err = _row_sums_ok(motivating, report)
    heats = _heatmaps(warm_model)
    heat_err = max(abs(h.heat[:h.valid_len].sum() - 1) for h in heats.values())
    pad_zero = all(not h.heat[h.valid_len:].any() for h in heats.values())
    checks = {
        "dtmc rows": row_err <= 1e-9,
        "heat normalisation": heat_err <= 1e-6 and pad_zero,
        "involutions": _involutions_ok(),
        "suppression at p_hot=0": _suppression_ok(warm_model),
        "dataset balance": int(data.label.sum()) * 2 == len(data),
        "determinism": _determinism_ok(tmp_path, motivating),
    }
    ok = all(checks.values())
    verdict(8, ok, "; ".join(f"{k} {'ok' if v else 'BROKEN'}" for k, v in checks.items())
            + f" (row err {row_err:.1e}, heat err {heat_err:.1e})")
    assert ok


if __name__ == "__main__":
    import sys

    code = pytest.main([__file__, "-q", "-p", "no:cacheprovider"])
    sys.exit(code)
