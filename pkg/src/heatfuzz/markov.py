"""DTMC abstraction of a target, reward analysis and critical-block selection.

Transition probabilities are add-one smoothed edge frequencies:

    Pr(b1, b2) = (1 + #(b1, b2)) / (#b1 + n)

with ``#b1`` the number of transitions taken out of ``b1`` and ``n`` its
out-degree in the CFG.  The reward of a block is the expected number of
visits to uncovered blocks on a random walk starting there, which satisfies
``R = c + P R`` with ``c`` the indicator of "uncovered".
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

from .coverage import GlobalCoverage
from .target import Cfg, TargetProgram, build_cfg, demo_targets

__all__ = [
    "Dtmc",
    "RewardVector",
    "CriticalSelection",
    "estimate_dtmc",
    "solve_rewards",
    "mc_reward_oracle",
    "mc_reach_oracle",
    "reach_probability",
    "reach_probabilities",
    "select_critical_blocks",
    "write_rewards_csv",
    "read_rewards_csv",
    "figure3_inputs",
    "figure3_coverage",
    "figure3_rewards",
]

DEFAULT_TOL = 1e-9
DEFAULT_MAX_ITERS = 10**6


@dataclass(frozen=True)
class Dtmc:
    """Row-stochastic transition structure over the CFG blocks.

    ``matrix[i, j]`` is the probability of moving from ``states[i]`` to
    ``states[j]``; rows of blocks without successors are all zero.
    """

    states: tuple
    prob: Mapping[tuple[str, str], float]
    edge_taken: Mapping[tuple[str, str], int]
    out_taken: Mapping[str, int]
    matrix: np.ndarray = field(repr=False)

    @property
    def index(self) -> dict[str, int]:
        return {b: i for i, b in enumerate(self.states)}

    def successors(self, b: str) -> list[tuple[str, float]]:
        i = self.index[b]
        return [(self.states[j], float(self.matrix[i, j])) for j in np.flatnonzero(self.matrix[i])]

    def out_degree(self) -> np.ndarray:
        return np.count_nonzero(self.matrix, axis=1)

    @classmethod
    def from_probabilities(cls, states: Iterable[str], prob: Mapping[tuple[str, str], float]) -> "Dtmc":
        """Wrap explicit probabilities; each non-empty row must sum to 1."""
        states = tuple(states)
        idx = {b: i for i, b in enumerate(states)}
        mat = np.zeros((len(states), len(states)))
        for (a, b), p in prob.items():
            if not 0 < p <= 1:
                raise ValueError(f"probability of {a}->{b} must be in (0, 1], got {p}")
            mat[idx[a], idx[b]] = p
        sums = mat.sum(axis=1)
        bad = [states[i] for i in np.flatnonzero((sums > 0) & (np.abs(sums - 1) > 1e-9))]
        if bad:
            raise ValueError(f"rows of {bad} do not sum to 1")
        return cls(states, dict(prob), {}, {}, mat)


def estimate_dtmc(gc: GlobalCoverage, cfg: Cfg) -> Dtmc:
    """Smoothed DTMC from campaign counts.

    Edges observed at run time but missing from ``cfg`` are added first, so
    every taken transition has a row entry.
    """
    taken = gc.edge_taken
    cfg = cfg.with_edges(e for e, n in taken.items() if n > 0 and e not in cfg.edges)
    states = cfg.blocks
    idx = {b: i for i, b in enumerate(states)}
    mat = np.zeros((len(states), len(states)))
    prob: dict[tuple[str, str], float] = {}
    out_taken: dict[str, int] = {}
    for b, succ in cfg.successors.items():
        total = sum(taken.get((b, t), 0) for t in succ)
        out_taken[b] = total
        n = len(succ)
        for t in succ:
            p = (1 + taken.get((b, t), 0)) / (total + n)
            prob[(b, t)] = p
            mat[idx[b], idx[t]] = p
    return Dtmc(states, prob, {e: taken.get(e, 0) for e in cfg.edges}, out_taken, mat)


@dataclass(frozen=True)
class RewardVector:
    reward: dict[str, float]
    converged: bool
    iterations: int
    residual: float

    def __getitem__(self, b: str) -> float:
        return self.reward[b]

    def ranked(self, among: Iterable[str], order: Mapping[str, int]) -> list[str]:
        return sorted(among, key=lambda b: (-self.reward[b], order[b]))


def _uncovered_vector(dtmc: Dtmc, covered: Iterable[str]) -> np.ndarray:
    covered = set(covered)
    return np.array([0.0 if b in covered else 1.0 for b in dtmc.states])


def _value_iterate(mat: np.ndarray, c: np.ndarray, tol: float, max_iters: int
                   ) -> tuple[np.ndarray, bool, int, float]:
    """Iterate ``x <- c + mat @ x`` from zero."""
    x = np.zeros_like(c)
    residual = math.inf
    for it in range(1, max_iters + 1):
        nxt = c + mat @ x
        residual = float(np.max(np.abs(nxt - x))) if len(x) else 0.0
        x = nxt
        if residual < tol:
            return x, True, it, residual
    return x, False, max_iters, residual


def solve_rewards(dtmc: Dtmc, covered: Iterable[str], tol: float = DEFAULT_TOL,
                  max_iters: int = DEFAULT_MAX_ITERS) -> RewardVector:
    """Fixed point of ``R = c + P R`` by value iteration.

    Non-convergence is reported through ``converged`` and ``residual``
    rather than raised.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    c = _uncovered_vector(dtmc, covered)
    x, ok, iters, residual = _value_iterate(dtmc.matrix, c, tol, max_iters)
    return RewardVector({b: float(v) for b, v in zip(dtmc.states, x)}, ok, iters, residual)


def reach_probability(dtmc: Dtmc, target: str, init: str, tol: float = DEFAULT_TOL,
                      max_iters: int = DEFAULT_MAX_ITERS) -> float:
    """Probability that a walk from ``init`` ever visits ``target``."""
    return reach_probabilities(dtmc, [target], init, tol, max_iters)[target]


def reach_probabilities(dtmc: Dtmc, targets: Iterable[str], init: str, tol: float = DEFAULT_TOL,
                        max_iters: int = DEFAULT_MAX_ITERS) -> dict[str, float]:
    idx = dtmc.index
    out = {}
    for target in targets:
        t = idx[target]
        mat = dtmc.matrix.copy()
        mat[t, :] = 0.0  # absorbing
        h, _, _, _ = _hitting(mat, t, tol, max_iters)
        out[target] = float(h[idx[init]])
    return out


def _hitting(mat: np.ndarray, t: int, tol: float, max_iters: int):
    h = np.zeros(mat.shape[0])
    h[t] = 1.0
    residual = math.inf
    for it in range(1, max_iters + 1):
        nxt = mat @ h
        nxt[t] = 1.0
        residual = float(np.max(np.abs(nxt - h)))
        h = nxt
        if residual < tol:
            return h, True, it, residual
    return h, False, max_iters, residual


# ---------------------------------------------------------------------------
# Monte-Carlo oracles


class _Walker:
    """Vectorised random walks over a DTMC.

    Each row's cumulative probabilities are shifted by the row number, so
    one ``searchsorted`` of ``row + u`` locates the successor for every
    walk at once.
    """

    def __init__(self, dtmc: Dtmc):
        mat = dtmc.matrix
        n = mat.shape[0]
        dests, cums, starts, degs = [], [], [], []
        for i in range(n):
            cols = np.flatnonzero(mat[i])
            starts.append(len(dests))
            degs.append(len(cols))
            if len(cols):
                cp = np.cumsum(mat[i, cols])
                cp /= cp[-1]
                dests.extend(cols.tolist())
                cums.extend((i + cp).tolist())
        self.dest = np.asarray(dests, dtype=np.int64)
        self.cum = np.asarray(cums)
        self.start = np.asarray(starts, dtype=np.int64)
        self.deg = np.asarray(degs, dtype=np.int64)

    def step(self, cur: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        u = rng.random(len(cur))
        flat = np.searchsorted(self.cum, cur + u, side="right")
        flat = np.clip(flat, self.start[cur], self.start[cur] + self.deg[cur] - 1)
        return self.dest[flat]


def mc_reward_oracle(dtmc: Dtmc, covered: Iterable[str], b: str, walks: int,
                     rng: np.random.Generator, step_cap: int = 10**4) -> tuple[float, float]:
    """Sample mean and standard error of uncovered-block visits from ``b``.

    A walk counts every uncovered block it visits, ``b`` included, and stops
    at a block with no successors or after ``step_cap`` moves.
    """
    if walks < 1:
        raise ValueError("walks must be >= 1")
    unc = _uncovered_vector(dtmc, covered)
    walker = _Walker(dtmc)
    cur = np.full(walks, dtmc.index[b], dtype=np.int64)
    counts = unc[cur].copy()
    alive = np.flatnonzero(walker.deg[cur] > 0)
    steps = 0
    while alive.size and steps < step_cap:
        nxt = walker.step(cur[alive], rng)
        cur[alive] = nxt
        counts[alive] += unc[nxt]
        alive = alive[walker.deg[nxt] > 0]
        steps += 1
    mean = float(counts.mean())
    se = float(counts.std(ddof=1) / math.sqrt(walks)) if walks > 1 else 0.0
    return mean, se


def mc_reach_oracle(dtmc: Dtmc, target: str, init: str, walks: int, rng: np.random.Generator,
                    step_cap: int = 10**4) -> tuple[float, float]:
    """Monte-Carlo frequency (and standard error) of ever hitting ``target``."""
    walker = _Walker(dtmc)
    t = dtmc.index[target]
    cur = np.full(walks, dtmc.index[init], dtype=np.int64)
    hit = cur == t
    alive = np.flatnonzero(~hit & (walker.deg[cur] > 0))
    steps = 0
    while alive.size and steps < step_cap:
        nxt = walker.step(cur[alive], rng)
        cur[alive] = nxt
        got = nxt == t
        hit[alive[got]] = True
        keep = ~got & (walker.deg[nxt] > 0)
        alive = alive[keep]
        steps += 1
    p = float(hit.mean())
    return p, math.sqrt(p * (1 - p) / walks)


# ---------------------------------------------------------------------------
# critical blocks


@dataclass(frozen=True)
class CriticalSelection:
    target_uncovered: tuple
    critical: tuple
    target_of: dict[str, set[str]]
    reach: dict[str, float]
    k_percent: float
    k_prime: float

    def __bool__(self) -> bool:
        return bool(self.target_uncovered)

    @classmethod
    def empty(cls, k_percent: float, k_prime: float) -> "CriticalSelection":
        return cls((), (), {}, {}, k_percent, k_prime)


def select_critical_blocks(rewards: RewardVector, covered: Iterable[str], cfg: Cfg, dtmc: Dtmc,
                           k_percent: float = 10.0, k_prime: float = 0.5,
                           init: str | None = None) -> CriticalSelection:
    """Pick high-reward uncovered targets and the hard-to-reach blocks guarding them.

    ``B_c`` holds the top ``ceil(k_percent% * |uncovered|)`` uncovered blocks
    by reward, ties going to the earlier-declared block.  A covered direct
    predecessor of some ``B_c`` member is critical when its probability of
    being reached from ``init`` (default: first state) is at most ``k_prime``.
    """
    if not 0 < k_percent <= 100:
        raise ValueError("k_percent must be in (0, 100]")
    if not 0 < k_prime <= 1:
        raise ValueError("k_prime must be in (0, 1]")
    covered = set(covered)
    order = {b: i for i, b in enumerate(cfg.blocks)}
    uncovered = [b for b in cfg.blocks if b not in covered]
    if not uncovered:
        return CriticalSelection.empty(k_percent, k_prime)
    count = math.ceil(k_percent * len(uncovered) / 100 - 1e-9)
    targets = tuple(rewards.ranked(uncovered, order)[:count])
    init = init if init is not None else dtmc.states[0]
    candidates = sorted({p for b in targets for p in cfg.pre_dominants(b) if p in covered}, key=order.get)
    reach = reach_probabilities(dtmc, candidates, init)
    critical = tuple(p for p in candidates if reach[p] <= k_prime)
    target_of = {p: {b for b in targets if p in cfg.pre_dominants(b)} for p in critical}
    return CriticalSelection(targets, critical, target_of, reach, k_percent, k_prime)


# ---------------------------------------------------------------------------
# export


def write_rewards_csv(path, dtmc: Dtmc, rewards: RewardVector, covered: Iterable[str],
                      selection: CriticalSelection | None = None, init: str | None = None) -> None:
    """One row per block: block_id, covered, reward, reach_probability, is_critical."""
    covered = set(covered)
    init = init if init is not None else dtmc.states[0]
    reach = reach_probabilities(dtmc, dtmc.states, init)
    critical = set(selection.critical) if selection else set()
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["block_id", "covered", "reward", "reach_probability", "is_critical"])
        for b in dtmc.states:
            w.writerow([b, int(b in covered), f"{rewards[b]:.12g}", f"{reach[b]:.12g}", int(b in critical)])


def read_rewards_csv(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return [
            {"block_id": r["block_id"], "covered": r["covered"] == "1", "reward": float(r["reward"]),
             "reach_probability": float(r["reach_probability"]), "is_critical": r["is_critical"] == "1"}
            for r in csv.DictReader(fh)
        ]


# ---------------------------------------------------------------------------
# the small worked example


def figure3_inputs() -> list[bytes]:
    """998 two-byte inputs ``(x, y)`` for the bundled ``figure3`` program.

    They split into 499 runs B1-B7, 491 runs B1-B2-B7, 3 runs B1-B2-B3-B6
    and 5 runs B1-B2-B3-B5-B6.
    """
    def enc(x: int, y: int) -> bytes:
        return bytes([x & 0xFF, y & 0xFF])

    inputs = [enc(-(i % 128), i % 97) for i in range(499)]
    inputs += [enc(1 + i % 120, -(i % 128)) for i in range(491)]
    inputs += [enc(10 + 10 * i, 1 + i) for i in range(3)]
    inputs += [enc(60 + 10 * i, 5 + i) for i in range(5)]
    return inputs


def figure3_coverage(program: TargetProgram | None = None) -> tuple[TargetProgram, GlobalCoverage]:
    """Execute :func:`figure3_inputs` on the bundled program and count."""
    program = program or demo_targets()["figure3"]
    gc = GlobalCoverage(program.block_ids)
    run = program.runner()
    for data in figure3_inputs():
        path, _ = run(data, 4096)
        gc.observe(path)
    return program, gc


def figure3_rewards() -> tuple[Dtmc, RewardVector]:
    program, gc = figure3_coverage()
    dtmc = estimate_dtmc(gc, build_cfg(program))
    return dtmc, solve_rewards(dtmc, gc.covered)
