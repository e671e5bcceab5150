import io
import random

import numpy as np
import pytest

from heatfuzz.coverage import (CorruptRecordError, CoverageBitmap, EdgeHashDict, ExecutionRecord, GlobalCoverage,
                               RecordLog, append_record, edge_hash_index, load_record_log, load_records,
                               reconstruct_blocks, update_from_trace)
from heatfuzz.mutation import MutatorId
from heatfuzz.target import ExecutionTrace, build_cfg, random_program


def test_hash_zero_ids():
    d = EdgeHashDict({"A": 0, "B": 0})
    assert edge_hash_index("A", "B", d) == 0


def test_hash_arithmetic():
    d = EdgeHashDict({"A": 2, "B": 5})
    assert edge_hash_index("A", "B", d) == 4


def test_every_edge_indexed_at_its_own_slot():
    rng = random.Random(1)
    blocks = [f"B{i}" for i in range(200)]
    edges = set()
    while len(edges) < 1000:
        edges.add((rng.choice(blocks), rng.choice(blocks)))
    d = EdgeHashDict({b: rng.randrange(1 << 16) for b in blocks}, edges)
    for e in edges:
        assert e in d.index_to_edges[edge_hash_index(*e, d)]


def test_first_trace_is_new_then_not():
    gc = GlobalCoverage(["A", "B"])
    bm = CoverageBitmap(64)
    d = EdgeHashDict({"A": 3, "B": 9}, map_size=64)
    trace = ExecutionTrace(("A", "B"), False, "no_match")
    assert update_from_trace(gc, bm, trace, d) is True
    assert update_from_trace(gc, bm, trace, d) is False
    assert bm.count() == 1


def test_edge_and_out_counts():
    gc = GlobalCoverage(["A", "B", "C"])
    update_from_trace(gc, None, ExecutionTrace(("A", "B"), False, "no_match"))
    update_from_trace(gc, None, ExecutionTrace(("A", "C"), False, "no_match"))
    assert gc.out_taken["A"] == 2
    assert gc.edge_taken[("A", "B")] == 1
    assert gc.out_taken["A"] == sum(n for (a, _), n in gc.edge_taken.items() if a == "A")


def test_reconstruct_collision_free():
    d = EdgeHashDict({"A": 2, "B": 8, "C": 32}, [("A", "B"), ("B", "C")], map_size=64)
    bm = CoverageBitmap(64)
    for e in [("A", "B"), ("B", "C")]:
        bm.set(edge_hash_index(*e, d))
    assert reconstruct_blocks(bm, d) == ({"A", "B", "C"}, False)


def test_reconstruct_empty():
    d = EdgeHashDict({"A": 2, "B": 8}, [("A", "B")], map_size=64)
    assert reconstruct_blocks(CoverageBitmap(64), d) == (set(), False)


def test_reconstruct_collision_is_ambiguous():
    # (A,B): (0>>1)^4 = 4 and (C,D): (8>>1)^0 = 4 share a slot.
    d = EdgeHashDict({"A": 0, "B": 4, "C": 8, "D": 0}, [("A", "B"), ("C", "D")], map_size=64)
    bm = CoverageBitmap(64)
    bm.set(4)
    blocks, ambiguous = reconstruct_blocks(bm, d)
    assert blocks == {"A", "B", "C", "D"} and ambiguous


def test_bitmap_round_trip(tmp_path):
    bm = CoverageBitmap(1024)
    for i in (0, 7, 1023):
        bm.set(i)
    bm.dump(tmp_path / "b.bin")
    assert CoverageBitmap.load(tmp_path / "b.bin") == bm


def test_random_cfg_map_from_cfg():
    prog = random_program(random.Random(0), 30, acyclic=False)
    cfg = build_cfg(prog)
    d = EdgeHashDict.for_cfg(cfg, random.Random(2))
    assert sum(len(v) for v in d.index_to_edges.values()) == len(cfg.edges)


def _records():
    return [
        ExecutionRecord(1, 0, MutatorId.ARITH_PLUS, 5, 0, 2, 0b11, True, False),
        ExecutionRecord(2, 0, MutatorId.BIT_FLIP1, 3, 1, 2, 0b101, False, False),
        ExecutionRecord(3, 1, MutatorId.RANDOM_BYTE, 88, -1, 2, 0b1, False, True),
    ]


def test_record_round_trip(tmp_path):
    path = tmp_path / "records.log"
    append_record(path, _records())
    assert load_records(path) == _records()
    log = load_record_log(path)
    assert list(log) == _records()


def test_arith_plus_record_line():
    # Worked example: <0, 5> with ArithPlus 5 at position 0 becomes <5, 5>.
    line = _records()[0].to_line()
    assert line.split(",")[2:4] == ["arth+", "5"]


def test_truncated_final_line(tmp_path):
    path = tmp_path / "records.log"
    append_record(path, _records())
    with open(path, "a") as fh:
        fh.write("4,0,bitflip,1")
    with pytest.raises(CorruptRecordError):
        load_records(path)
    with pytest.raises(CorruptRecordError):
        load_record_log(path)
    errors = []
    assert len(load_records(path, strict=False, errors=errors)) == 3
    assert len(errors) == 1


def test_bad_flag_is_corrupt():
    with pytest.raises(CorruptRecordError):
        load_records(io.StringIO("1,0,bitflip,0,0,2,3,2,0\n"))


def test_record_log_columns_and_flush(tmp_path):
    log = RecordLog(tmp_path / "r.log")
    for r in _records()[:2]:
        log.append(r)
    log.flush()
    log.add_batch(3, 1, [6, 6], [1, 2], [0, 1], 2, [log.intern(1), log.intern(3)], [0, 0], [0, 1])
    log.flush()
    loaded = load_records(tmp_path / "r.log")
    assert [r.exec_id for r in loaded] == [1, 2, 3, 4]
    assert list(log.covers_block(1)) == [True, False, False, True]
    assert log[3].crashed


def test_exec_ids_must_increase():
    log = RecordLog()
    log.append(_records()[1])
    with pytest.raises(Exception):
        log.append(_records()[0])


def test_snapshot_is_independent():
    gc = GlobalCoverage(["A", "B"])
    gc.observe((0, 1))
    snap = gc.snapshot()
    gc.observe((0, 1), 5)
    assert snap.edge_taken[("A", "B")] == 1
    assert gc.edge_taken[("A", "B")] == 6


def test_covers_block_matches_masks():
    rng = np.random.default_rng(0)
    log = RecordLog()
    masks = rng.integers(1, 64, size=200)
    for i, m in enumerate(masks):
        log.add(i, 0, 0, 0, 0, 4, int(m), 0, 0)
    for b in range(6):
        assert np.array_equal(log.covers_block(b), (masks >> b) & 1 == 1)
