"""Guided and unguided campaigns side by side on the motivating target.

Both start from the single Flag seed.  The guided run detects the coverage
plateau, marks L6 as critical and starts protecting the bytes its model
attends to.  The interesting number is how often fuzz inputs still reach
L6 after guidance switches on, compared with the unguided run over the
same stretch of executions.

Usage: python demos/02_bottleneck_campaign.py [max_execs] [rng_seed]
"""

import struct
import sys

import numpy as np

from heatfuzz.orchestrator import FuzzerConfig, run_campaign
from heatfuzz.target import demo_targets

budget = int(float(sys.argv[1])) if len(sys.argv) > 1 else 400_000
seed = int(sys.argv[2]) if len(sys.argv) > 2 else 0

target = demo_targets()["motivating"]
flag = struct.pack("<iii", 200, -1, -10) + b"YYY"
L6 = target.index["L6"]

reports = {}
for mode in ("baseline", "attuzz"):
    reports[mode] = run_campaign(FuzzerConfig(rng_seed=seed, mode=mode, max_execs=budget), target, [flag])
    print(f"== {mode} ({reports[mode].elapsed:.1f}s)")
    print(reports[mode].summary())

start = reports["attuzz"].first_guided_exec
if start is None:
    print("guidance never activated; raise the budget")
    sys.exit(0)

for mode, r in reports.items():
    ids = np.asarray(r.records.exec_id)
    hits = r.records.covers_block(L6)[ids >= start]
    print(f"{mode:8s} L6 ratio from exec {start}: {hits.mean():.3f} over {hits.size} executions")
