"""What the L6 model looks at, and which bytes the plan protects.

Trains one model on a short unguided log, averages its attention over every
recorded ArithMinus mutation of the Flag seed and prints the heat per byte
next to the variable it belongs to.  Bytes 0-7 (a and b) gate L6, the buffer
bytes 12-14 do not, so the heat should lean towards the front.
"""

import struct

import numpy as np

from heatfuzz import attention
from heatfuzz.guidance import compute_plan
from heatfuzz.mutation import MutatorId
from heatfuzz.orchestrator import FuzzerConfig, run_campaign
from heatfuzz.target import demo_targets

target = demo_targets()["motivating"]
flag = struct.pack("<iii", 200, -1, -10) + b"YYY"
L6 = target.index["L6"]

log = run_campaign(FuzzerConfig(rng_seed=0, mode="baseline", max_execs=200_000), target, [flag])
data = attention.build_dataset(log.records, log.seeds, L6, np.random.default_rng(0), max_per_class=1000)
model, metrics = attention.train(data, attention.TrainConfig(seed=0))
print(f"L6 model: {metrics.n_train} training samples, holdout accuracy {metrics.holdout_acc:.3f}")

names = ["a"] * 4 + ["b"] * 4 + ["c"] * 4 + ["buf"] * 3
maps = {}
for mut in MutatorId:
    samples = attention.pair_samples(log.records, log.seeds, 0, int(mut), model.n)
    hm = attention.extract_heatmap(model, 0, mut, samples)
    if hm is not None:
        maps[int(mut)] = hm

hm = maps[int(MutatorId.ARITH_MINUS)]
print("\nArithMinus heat on the Flag seed")
for i in range(hm.valid_len):
    print(f"  byte {i:2d} ({names[i]:3s}) {hm.heat[i]:.4f} " + "#" * int(hm.heat[i] * 200))
print(f"a,b mass {hm.mass(range(8)):.3f}   c,buf mass {hm.mass(range(8, hm.valid_len)):.3f}")

plan = compute_plan({"L6": maps}, ["L6"], p_hot=0.05, seed_id=0)
print("\nprotected positions per mutator")
for mut in sorted(plan.planned):
    print(f"  {MutatorId(mut).label:8s} {sorted(plan.hot_set(mut))}")
