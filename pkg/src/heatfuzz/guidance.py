"""Hot-byte plans and heat-guided mutation.

A byte is hot for a (seed, mutator) pair when its heat is strictly above the
mean heat of that seed's valid positions.  Hot bytes are the ones whose
mutation tends to knock an input off the critical block, so the guided
stream leaves them alone except with a small probability ``p_hot``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, Iterable, Iterator, Mapping, Sequence

import numpy as np

from .attention import HeatMap
from .mutation import Mutation, MutatorId, deterministic_schedule, schedule_arrays

__all__ = [
    "DEFAULT_P_HOT",
    "PlanEntry",
    "GuidancePlan",
    "compute_plan",
    "should_mutate_position",
    "guided_mutation_stream",
    "guided_schedule_arrays",
    "schedule_seeds",
    "write_plan_csv",
]

DEFAULT_P_HOT = 0.05


@dataclass(frozen=True)
class PlanEntry:
    """One block model's verdict for one mutator."""

    block: str
    heat: np.ndarray
    threshold: float
    hot: frozenset


@dataclass
class GuidancePlan:
    seed_id: int | None
    valid_len: int
    p_hot: float = DEFAULT_P_HOT
    entries: dict[int, list[PlanEntry]] = field(default_factory=dict)

    def __post_init__(self):
        if not 0 <= self.p_hot <= 1:
            raise ValueError("p_hot must be in [0, 1]")
        self._mask: dict[int, bytearray] = {}
        for mut, items in self.entries.items():
            self._index(mut, items)

    def _index(self, mutator: int, items: list[PlanEntry]) -> None:
        mask = bytearray(self.valid_len)
        for e in items:
            for p in e.hot:
                mask[p] = 1
        self._mask[int(mutator)] = mask

    @property
    def planned(self) -> set[MutatorId]:
        return {MutatorId(m) for m in self._mask}

    def hot_set(self, mutator: int) -> frozenset:
        mask = self._mask.get(int(mutator))
        return frozenset(i for i, v in enumerate(mask) if v) if mask is not None else frozenset()

    def threshold(self, mutator: int) -> list[float]:
        return [e.threshold for e in self.entries.get(int(mutator), [])]

    def is_protected(self, mutator: int, position: int, width: int = 1) -> bool:
        mask = self._mask.get(int(mutator))
        if mask is None:
            return False
        return any(mask[p] for p in range(position, min(position + width, len(mask))))

    def protected_matrix(self, n: int) -> np.ndarray:
        """(mutators x n) boolean array of protected positions."""
        out = np.zeros((len(MutatorId), n), dtype=bool)
        for m, mask in self._mask.items():
            k = min(n, len(mask))
            out[m, :k] = np.frombuffer(bytes(mask[:k]), dtype=np.uint8).astype(bool)
        return out

    def __bool__(self) -> bool:
        return bool(self._mask)

    def gate(self, rng) -> Callable[[int, int], bool]:
        """Fast ``(mutator, position) -> bool`` closure for havoc stacking."""
        masks = [self._mask.get(m) for m in range(len(MutatorId))]
        rand = rng.random
        p_hot = self.p_hot

        def allow(mutator: int, position: int) -> bool:
            mask = masks[mutator]
            if mask is None or position >= len(mask) or not mask[position]:
                return True
            return rand() < p_hot

        return allow


def _as_heat(h) -> tuple[np.ndarray, int]:
    if isinstance(h, HeatMap):
        return np.asarray(h.heat, dtype=np.float64), h.valid_len
    arr = np.asarray(h, dtype=np.float64)
    return arr, len(arr)


def compute_plan(heatmaps, covered_criticals: Iterable[str] | None = None, p_hot: float = DEFAULT_P_HOT,
                 seed_id: int | None = None) -> GuidancePlan:
    """Protect a position for a mutator when it is hot for any covered critical block.

    ``heatmaps`` maps block -> {mutator -> HeatMap or heat vector}; a flat
    {mutator -> heat} mapping is read as a single anonymous block.  Only
    blocks in ``covered_criticals`` contribute (all of them when None).
    An empty plan means every mutator runs unguided.
    """
    if heatmaps and all(isinstance(k, (int, MutatorId)) for k in heatmaps):
        heatmaps = {"": heatmaps}
    allowed = None if covered_criticals is None else set(covered_criticals)
    entries: dict[int, list[PlanEntry]] = {}
    valid_len = 0
    for block, per_mut in (heatmaps or {}).items():
        if allowed is not None and block not in allowed:
            continue
        for mut, h in per_mut.items():
            if h is None:
                continue
            heat, n = _as_heat(h)
            valid = heat[:n]
            threshold = float(valid.mean())
            hot = frozenset(int(i) for i in np.flatnonzero(valid > threshold))
            entries.setdefault(int(mut), []).append(PlanEntry(block, heat, threshold, hot))
            valid_len = max(valid_len, n)
    return GuidancePlan(seed_id, valid_len, p_hot, entries)


def should_mutate_position(plan: GuidancePlan | None, mutator: int, position: int, rng, width: int = 1) -> bool:
    """True for unprotected positions; protected ones pass with probability ``p_hot``."""
    if plan is None or not plan.is_protected(mutator, position, width):
        return True
    return rng.random() < plan.p_hot


def guided_mutation_stream(seed: bytes, plan: GuidancePlan | None, dictionary: Sequence[bytes] = (),
                           rng=None) -> Iterator[Mutation]:
    """The deterministic schedule with protected positions thinned out.

    Mutators the plan does not cover are passed through unchanged.
    """
    for m in deterministic_schedule(seed, dictionary):
        width = len(dictionary[m.param]) if m.mutator == MutatorId.DICTIONARY else 1
        if plan is None or should_mutate_position(plan, m.mutator, m.position, rng, width):
            yield m


def guided_schedule_arrays(n: int, plan: GuidancePlan | None, dictionary: Sequence[bytes] = (),
                           rng: np.random.Generator | None = None):
    """Column form of :func:`guided_mutation_stream` for an input of length ``n``.

    One uniform draw per protected entry decides whether it survives.
    """
    mut, pos, param = schedule_arrays(n, dictionary)
    if plan is None or not plan:
        return mut, pos, param
    prot = plan.protected_matrix(n)
    hot = prot[mut, pos]
    is_dict = np.flatnonzero(mut == MutatorId.DICTIONARY)
    for i in is_dict:
        hot[i] = prot[MutatorId.DICTIONARY, pos[i]:pos[i] + len(dictionary[param[i]])].any()
    rng = rng if rng is not None else np.random.default_rng(0)
    draws = np.ones(len(mut))
    idx = np.flatnonzero(hot)
    draws[idx] = rng.random(len(idx))
    keep = ~hot | (draws < plan.p_hot)
    return mut[keep], pos[keep], param[keep]


def schedule_seeds(pool: Sequence, critical: Iterable[int]) -> list:
    """Seeds covering critical blocks first, then everything else in pool order.

    Pool entries need ``seed_id`` and ``covered_blocks`` (a bitmask over
    block indices); ``critical`` holds block indices.  Seeds covering more
    critical blocks go first, ties by older seed id.
    """
    crit = list(critical)

    def hits(entry) -> int:
        return sum((entry.covered_blocks >> c) & 1 for c in crit)

    scored = [(hits(e), e) for e in pool]
    first = sorted((x for x in scored if x[0] > 0), key=lambda x: (-x[0], x[1].seed_id))
    return [e for _, e in first] + [e for n, e in scored if n == 0]


def write_plan_csv(plan: GuidancePlan, path) -> None:
    """Audit dump: mutator, position, heat, threshold, protected, block."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["mutator", "position", "heat", "threshold", "protected", "block"])
        for mut in sorted(plan.entries):
            for e in plan.entries[mut]:
                for pos in range(plan.valid_len):
                    heat = e.heat[pos] if pos < len(e.heat) else 0.0
                    w.writerow([MutatorId(mut).label, pos, f"{heat:.12g}", f"{e.threshold:.12g}",
                                int(pos in e.hot), e.block])
