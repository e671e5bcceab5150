import random
from types import SimpleNamespace

import numpy as np
import pytest

from conftest import FLAG_SEED
from heatfuzz import attention
from heatfuzz.guidance import (compute_plan, guided_mutation_stream, guided_schedule_arrays, schedule_seeds,
                               should_mutate_position, write_plan_csv)
from heatfuzz.mutation import MutatorId, apply_batch, deterministic_schedule, schedule_arrays

# Per-variable heats for <a, b, c, buf> whose means are the worked example's thresholds.
ARITH_MINUS_HEAT = [0.70, 0.65, 0.30, 0.2676]  # mean 0.4794
ARITH_PLUS_HEAT = [0.30, 0.80, 0.70, 0.2492]  # mean 0.5123


def test_arith_minus_protects_a_and_b():
    plan = compute_plan({MutatorId.ARITH_MINUS: ARITH_MINUS_HEAT})
    assert plan.threshold(MutatorId.ARITH_MINUS) == [pytest.approx(0.4794)]
    assert plan.hot_set(MutatorId.ARITH_MINUS) == {0, 1}


def test_arith_plus_protects_b_and_c():
    plan = compute_plan({MutatorId.ARITH_PLUS: ARITH_PLUS_HEAT})
    assert plan.threshold(MutatorId.ARITH_PLUS) == [pytest.approx(0.5123)]
    assert plan.hot_set(MutatorId.ARITH_PLUS) == {1, 2}


def test_uniform_heat_has_no_hot_bytes():
    plan = compute_plan({MutatorId.BIT_FLIP1: [0.25] * 4})
    assert plan.hot_set(MutatorId.BIT_FLIP1) == frozenset()


def test_threshold_is_mean_over_valid_positions():
    hm = attention.HeatMap(0, MutatorId.RANDOM_BYTE, np.array([0.5, 0.3, 0.2, 0.0, 0.0]), 3)
    plan = compute_plan({MutatorId.RANDOM_BYTE: hm})
    assert plan.threshold(MutatorId.RANDOM_BYTE) == [pytest.approx(1 / 3)]
    assert plan.hot_set(MutatorId.RANDOM_BYTE) <= set(range(3))


def test_should_mutate():
    plan = compute_plan({MutatorId.ARITH_MINUS: ARITH_MINUS_HEAT}, p_hot=0.0)
    rng = random.Random(0)
    assert should_mutate_position(plan, MutatorId.ARITH_MINUS, 3, rng)
    assert should_mutate_position(plan, MutatorId.ARITH_PLUS, 0, rng)
    assert not any(should_mutate_position(plan, MutatorId.ARITH_MINUS, 0, rng) for _ in range(1000))


def test_acceptance_frequency_at_five_percent():
    plan = compute_plan({MutatorId.ARITH_MINUS: ARITH_MINUS_HEAT}, p_hot=0.05)
    rng = random.Random(12345)
    hits = sum(should_mutate_position(plan, MutatorId.ARITH_MINUS, 1, rng) for _ in range(100_000))
    assert 0.045 <= hits / 100_000 <= 0.055


def test_empty_plan_keeps_schedule():
    seed = bytes(range(6))
    assert list(guided_mutation_stream(seed, compute_plan({}), rng=random.Random(0))) == \
        list(deterministic_schedule(seed))


def test_full_suppression_leaves_unplanned_mutators():
    # Two block models whose hot sets together cover every position.
    n = 4
    planned = (MutatorId.BIT_FLIP1, MutatorId.ARITH_PLUS)
    heats = {"X": {m: [1.0, 1.0, 0.0, 0.0] for m in planned}, "Y": {m: [0.0, 0.0, 1.0, 1.0] for m in planned}}
    plan = compute_plan(heats, p_hot=0.0)
    assert all(plan.hot_set(m) == set(range(n)) for m in planned)
    out = list(guided_mutation_stream(bytes(n), plan, rng=random.Random(0)))
    assert out and all(m.mutator not in planned for m in out)


def test_array_form_matches_stream_at_extremes():
    n = 6
    plan = compute_plan({MutatorId.ARITH_MINUS: [0.9, 0.1, 0.1, 0.1, 0.9, 0.1]}, p_hot=0.0)
    mut, pos, param = guided_schedule_arrays(n, plan)
    stream = list(guided_mutation_stream(bytes(n), plan, rng=random.Random(0)))
    assert list(zip(mut.tolist(), pos.tolist(), param.tolist())) == [(int(m.mutator), m.position, m.param)
                                                                     for m in stream]


def _entry(sid, mask):
    return SimpleNamespace(seed_id=sid, covered_blocks=mask)


def test_schedule_seeds_ordering():
    pool = [_entry(0, 0b001), _entry(1, 0b011), _entry(2, 0b111), _entry(3, 0b001)]
    assert [e.seed_id for e in schedule_seeds(pool, [])] == [0, 1, 2, 3]
    assert [e.seed_id for e in schedule_seeds(pool, [1, 2])] == [2, 1, 0, 3]


def test_schedule_seeds_after_warmup(warmup, motivating):
    L6 = motivating.index["L6"]
    order = schedule_seeds(warmup.pool, [L6])
    reach = [bool(e.covered_blocks >> L6 & 1) for e in order]
    assert reach == sorted(reach, reverse=True) and reach[0]


@pytest.fixture(scope="module")
def l6_plan(warmup, motivating):
    L6 = motivating.index["L6"]
    data = attention.build_dataset(warmup.records, warmup.seeds, L6, np.random.default_rng(0),
                                   max_per_class=1000)
    model, _ = attention.train(data, attention.TrainConfig(seed=0))
    maps = {}
    for mut in MutatorId:
        samples = attention.pair_samples(warmup.records, warmup.seeds, 0, int(mut), model.n)
        hm = attention.extract_heatmap(model, 0, mut, samples)
        if hm is not None:
            maps[int(mut)] = hm
    return compute_plan({"L6": maps}, ["L6"], 0.05, 0)


def _l6_ratio(motivating, mut, pos, param):
    res = motivating.batch_runner()(apply_batch(FLAG_SEED, mut, pos, param))
    L6 = motivating.index["L6"]
    return float(np.mean([L6 in res.decode(c) for c in res.codes]))


def test_guided_stream_keeps_l6(l6_plan, motivating):
    n = len(FLAG_SEED)
    unguided = _l6_ratio(motivating, *schedule_arrays(n))
    guided = _l6_ratio(motivating, *guided_schedule_arrays(n, l6_plan, (), np.random.default_rng(0)))
    assert guided >= 0.5
    assert guided > unguided


@pytest.mark.xfail(strict=True, reason="most single-byte mutations of the Flag seed keep the L6 path, "
                                       "so the unguided sweep sits near 0.65")
def test_unguided_stream_l6_ratio_at_most_twenty_percent(motivating):
    assert _l6_ratio(motivating, *schedule_arrays(len(FLAG_SEED))) <= 0.20


def test_plan_csv(tmp_path, l6_plan):
    write_plan_csv(l6_plan, tmp_path / "plan.csv")
    lines = (tmp_path / "plan.csv").read_text().splitlines()
    assert lines[0] == "mutator,position,heat,threshold,protected,block"
    assert len(lines) == 1 + sum(len(v) for v in l6_plan.entries.values()) * l6_plan.valid_len
