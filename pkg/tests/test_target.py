import random
import struct

import numpy as np
import pytest

from heatfuzz.target import (CRASH, TargetSyntaxError, build_cfg, demo_targets, execute, execute_batch,
                             interpret, parse_target, random_program, to_source)


def motivating_input(a, b=0, c=0, buf=b""):
    return struct.pack("<iii", a, b, c) + buf


@pytest.fixture(scope="module")
def motivating():
    return demo_targets()["motivating"]


def test_motivating_parses_to_nine_blocks(motivating):
    assert len(motivating.block_ids) == 9
    assert motivating.init == "L1"
    assert motivating.crash_blocks == ["L8"]


def test_minimal_program():
    prog = parse_target("init A\nblock A {}\n")
    assert prog.block_ids == ["A"]
    assert build_cfg(prog).edges == frozenset()
    assert build_cfg(prog).pre_dominants("A") == set()


def test_unknown_destination_rejected():
    with pytest.raises(TargetSyntaxError, match="unknown destination"):
        parse_target("init A\nblock A {\n  else -> Z\n}\n")


def test_else_must_be_last():
    src = "init A\nblock A {\n  else -> B\n  if byte[0] == 1 -> B\n}\nblock B {}\n"
    with pytest.raises(TargetSyntaxError):
        parse_target(src)


def test_all_conditions_hold_reaches_crash(motivating):
    trace = execute(motivating, motivating_input(200, -1, -10, b"XXX"))
    assert trace.block_seq == ("L1", "L2", "L3", "L4", "L5", "L6", "L7", "L8")
    assert trace.crashed and trace.termination == CRASH


def test_small_a_falls_through(motivating):
    # Flag is carried by the CFG shape, so a failed first check goes straight to L9.
    trace = execute(motivating, motivating_input(0))
    assert trace.block_seq == ("L1", "L2", "L9")
    assert not trace.crashed


def test_flag_without_buffer_stops_at_l6(motivating):
    trace = execute(motivating, motivating_input(200, -1, -10, b"XXY"))
    assert trace.block_seq[-2:] == ("L6", "L9")
    assert not trace.crashed


def test_all_zero_input_does_not_crash(motivating):
    assert not execute(motivating, bytes(16)).crashed


def test_reads_past_end_are_zero(motivating):
    # a=200 with nothing after it: b reads as 0, so L3 fails.
    assert execute(motivating, struct.pack("<i", 200)).block_seq == ("L1", "L2", "L3", "L9")


def test_step_limit_one_caps_edges():
    rng = random.Random(5)
    for _ in range(20):
        prog = random_program(rng, 8, acyclic=False)
        data = bytes(rng.randrange(256) for _ in range(8))
        assert len(execute(prog, data, step_limit=1).edge_seq) <= 1


def test_pre_dominants(motivating):
    cfg = build_cfg(motivating)
    assert cfg.pre_dominants("L8") == {"L7"}
    assert cfg.pre_dominants("L9") == {"L2", "L3", "L4", "L6"}


def test_diamond_pre_dominants():
    src = """init A
block A {
  if byte[0] == 1 -> B
  else -> C
}
block B {
  else -> D
}
block C {
  else -> D
}
block D {}
"""
    assert build_cfg(parse_target(src)).pre_dominants("D") == {"B", "C"}


def test_demo_targets_keys():
    targets = demo_targets()
    assert {"motivating", "deep-nest", "figure3"} <= set(targets)
    assert len(targets["motivating"].crash_blocks) == 1


def test_source_round_trip():
    for prog in demo_targets().values():
        assert parse_target(to_source(prog)) == prog


def test_compiled_matches_interpreter():
    rng = random.Random(11)
    for _ in range(60):
        prog = random_program(rng, rng.randint(2, 15), crash_prob=0.2, acyclic=rng.random() < 0.5)
        for _ in range(10):
            data = bytes(rng.randrange(256) for _ in range(rng.randint(0, 10)))
            assert execute(prog, data, 50) == interpret(prog, data, 50)


def test_batch_matches_scalar():
    rng = random.Random(3)
    for _ in range(40):
        prog = random_program(rng, rng.randint(2, 12), crash_prob=0.2, acyclic=rng.random() < 0.5)
        X = np.array([[rng.randrange(256) for _ in range(8)] for _ in range(64)], dtype=np.uint8)
        traces = execute_batch(prog, X, 30)
        for row, trace in zip(X, traces):
            assert trace == execute(prog, row.tobytes(), 30)
