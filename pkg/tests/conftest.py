import struct

import numpy as np
import pytest

from heatfuzz.markov import Dtmc
from heatfuzz.orchestrator import FuzzerConfig, run_campaign
from heatfuzz.target import demo_targets

# a = 200, b = -1, c = -10: every check before the buffer holds (Flag = 1).
FLAG_SEED = struct.pack("<iii", 200, -1, -10) + b"YYY"


def random_dag_dtmc(rng: np.random.Generator, n: int) -> Dtmc:
    """Random DAG on ``n`` blocks with Dirichlet edge weights; sinks have no edges."""
    states = [f"S{i}" for i in range(n)]
    prob = {}
    for i in range(n - 1):
        if i > 0 and rng.random() < 0.15:
            continue  # an extra sink
        k = int(rng.integers(1, min(3, n - 1 - i) + 1))
        dests = rng.choice(np.arange(i + 1, n), size=k, replace=False)
        w = rng.dirichlet(np.ones(k))
        w = np.maximum(w, 1e-3)
        w /= w.sum()
        for d, p in zip(dests, w):
            prob[(states[i], states[int(d)])] = float(p)
    return Dtmc.from_probabilities(states, prob)


@pytest.fixture(scope="session")
def motivating():
    return demo_targets()["motivating"]


@pytest.fixture(scope="session")
def warmup(motivating):
    """A 200k-execution unguided campaign from the Flag seed (the warm-up log)."""
    config = FuzzerConfig(rng_seed=0, mode="baseline", max_execs=200_000)
    return run_campaign(config, motivating, [FLAG_SEED])


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    verdicts = getattr(mod, "VERDICTS", None)
    if verdicts:
        terminalreporter.section("acceptance criteria")
        for n in sorted(verdicts):
            terminalreporter.write_line(verdicts[n])
