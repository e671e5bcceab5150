"""The fuzzing campaign.

A campaign runs an AFL-like carrier loop (a deterministic sweep the first
time a seed is fuzzed, then stacked havoc) and checks for a coverage
bottleneck at every window of ``window_execs`` executions.  In ``attuzz``
mode a bottleneck triggers the analysis pipeline:

    DTMC estimate -> rewards -> critical blocks -> one classifier per
    critical block -> heat maps per (seed, mutator) -> hot-byte plans

after which seeds reaching critical blocks are fuzzed first and their
mutations skip hot bytes.  ``baseline`` mode never runs the pipeline.
"""

from __future__ import annotations

import dataclasses
import logging
import random
import shutil
import time
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import attention, guidance, markov
from .attention import HeatMap, ModelParams, TrainConfig, TrainMetrics, UntrainableBlock
from .coverage import CoverageBitmap, EdgeHashDict, GlobalCoverage, RecordLog, edge_hash_index
from .guidance import GuidancePlan
from .mutation import GUIDED_HAVOC, HavocBatch, Mutation, MutatorId, apply_batch, havoc_batch, load_dictionary, schedule_arrays
from .target import (CRASH, TERM_CRASH, TERM_OVERFLOW, TargetProgram, build_cfg, decode_path, encode_path, execute,
                     to_source)

__all__ = [
    "FuzzerConfig",
    "ConfigError",
    "SeedEntry",
    "CoverageHistory",
    "CrashReport",
    "PipelineRun",
    "CampaignReport",
    "Campaign",
    "run_campaign",
    "detect_bottleneck",
    "triage_crash",
    "export_stats",
    "load_corpus",
]

log = logging.getLogger(__name__)

MODES = ("attuzz", "baseline")
CHUNK = 2048  # children executed per vectorised batch


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class FuzzerConfig:
    rng_seed: int = 0
    map_size: int = 1 << 16
    max_input_len: int = 256
    iter_limit: int = 50_000
    window_execs: int = 100_000
    bottleneck_delta: float = 0.05
    k_percent: float = 10.0
    k_prime: float = 0.5
    p_hot: float = 0.05
    mode: str = "attuzz"
    step_limit: int = 4096
    dict_path: str | None = None
    max_execs: int = 2_000_000
    havoc_stack: int = 8
    unguided_energy: float = 0.1
    max_train_per_class: int = 1000
    heatmap_samples: int = 0  # 0: average over every record of the pair
    guided_havoc: str = "skip"
    train: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        for name in ("bottleneck_delta", "k_prime", "p_hot", "unguided_energy"):
            if not 0 <= getattr(self, name) <= 1:
                raise ConfigError(f"{name} must be in [0, 1]")
        if self.window_execs < 1:
            raise ConfigError("window_execs must be >= 1")
        if self.iter_limit < 1:
            raise ConfigError("iter_limit must be >= 1")
        if self.max_execs < 0:
            raise ConfigError("max_execs must be >= 0")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}")
        if self.guided_havoc not in GUIDED_HAVOC:
            raise ConfigError(f"guided_havoc must be one of {GUIDED_HAVOC}")
        if self.heatmap_samples < 0:
            raise ConfigError("heatmap_samples must be >= 0")
        if self.map_size < 8 or self.map_size & (self.map_size - 1):
            raise ConfigError("map_size must be a power of two")
        if not 0 < self.k_percent <= 100:
            raise ConfigError("k_percent must be in (0, 100]")

    # -- key = value files ------------------------------------------------
    @classmethod
    def keys(cls) -> dict[str, type]:
        out = {}
        for f in dataclasses.fields(cls):
            if f.name == "train":
                for tf in dataclasses.fields(TrainConfig):
                    out[f"train.{tf.name}"] = type(getattr(TrainConfig(), tf.name))
            elif f.name == "dict_path":
                out[f.name] = str
            else:
                out[f.name] = type(getattr(cls(), f.name))
        return out

    def replace(self, **changes) -> "FuzzerConfig":
        """Copy with changes; ``train.<field>`` keys update the training config."""
        train = {k.split(".", 1)[1]: v for k, v in changes.items() if k.startswith("train.")}
        top = {k: v for k, v in changes.items() if not k.startswith("train.")}
        if train:
            top["train"] = dataclasses.replace(top.get("train", self.train), **train)
        try:
            return dataclasses.replace(self, **top)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def parse(cls, text: str, base: "FuzzerConfig | None" = None) -> "FuzzerConfig":
        keys = cls.keys()
        changes = {}
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected 'key = value'")
            key, value = (s.strip() for s in line.split("=", 1))
            key = key.replace("-", "_")
            if key not in keys:
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
            changes[key] = _coerce(keys[key], value, key, lineno)
        return (base or cls()).replace(**changes)

    @classmethod
    def from_file(cls, path, base: "FuzzerConfig | None" = None) -> "FuzzerConfig":
        return cls.parse(Path(path).read_text(encoding="utf-8"), base)

    def to_text(self) -> str:
        lines = []
        for key in self.keys():
            if key.startswith("train."):
                value = getattr(self.train, key.split(".", 1)[1])
            else:
                value = getattr(self, key)
            if value is None:
                continue
            lines.append(f"{key} = {value}")
        return "\n".join(lines) + "\n"


def _coerce(kind: type, value: str, key: str, lineno: int):
    try:
        if kind is bool:
            if value.lower() in ("1", "true", "yes", "on"):
                return True
            if value.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(value)
        if kind is int:
            return int(float(value)) if "e" in value.lower() else int(value)
        if kind is float:
            return float(value)
        return value
    except ValueError:
        raise ConfigError(f"line {lineno}: bad value {value!r} for {key}") from None


# ---------------------------------------------------------------------------
# campaign state


@dataclass
class SeedEntry:
    seed_id: int
    data: bytes
    covered_blocks: int
    exec_id: int


@dataclass(frozen=True)
class _PathInfo:
    path: tuple
    mask: int
    mask_id: int


class CoverageHistory:
    """(exec_count, covered edges, covered blocks) rows at window boundaries."""

    def __init__(self):
        self.rows: list[tuple[int, int, int]] = []

    def append(self, exec_count: int, edges: int, blocks: int) -> None:
        if self.rows:
            last = self.rows[-1]
            if exec_count <= last[0]:
                raise ValueError("exec_count must increase")
            if edges < last[1] or blocks < last[2]:
                raise ValueError("coverage counts cannot decrease")
        self.rows.append((exec_count, edges, blocks))

    def __len__(self) -> int:
        return len(self.rows)

    def __getitem__(self, i):
        return self.rows[i]


def detect_bottleneck(history: CoverageHistory | Sequence[tuple[int, int, int]], window_execs: int = 1,
                      delta: float = 0.05) -> bool:
    """Relative edge growth over the last window fell below ``delta``.

    ``history`` rows are (exec_count, edges, blocks) taken one window apart;
    the latest row is compared with the one before it.
    """
    rows = history.rows if isinstance(history, CoverageHistory) else list(history)
    if not rows:
        raise ValueError("history is empty")
    if len(rows) < 2:
        return False
    before, now = rows[-2][1], rows[-1][1]
    return (now - before) / max(before, 1) < delta


@dataclass(frozen=True)
class CrashReport:
    block: str
    data: bytes
    exec_id: int
    parent_seed: int
    mutations: tuple


def triage_crash(program: TargetProgram, data: bytes, exec_id: int, parent_seed: int,
                 mutations: Sequence[Mutation], seen: set[str], step_limit: int = 4096
                 ) -> CrashReport | None:
    """Return a report for a crash in a not-yet-seen crash block.

    The input is replayed first; a crash that does not reproduce is logged
    and dropped.  Duplicates return None.
    """
    trace = execute(program, data, step_limit)
    if not trace.crashed:
        log.warning("crash at exec %d did not reproduce on replay", exec_id)
        return None
    block = trace.block_seq[-1]
    if block in seen:
        return None
    seen.add(block)
    return CrashReport(block, bytes(data), exec_id, parent_seed, tuple(mutations))


@dataclass
class PipelineRun:
    exec_count: int
    selection: markov.CriticalSelection
    rewards: markov.RewardVector
    dtmc: markov.Dtmc
    metrics: dict[str, TrainMetrics] = field(default_factory=dict)
    models: dict[str, ModelParams] = field(default_factory=dict)
    untrainable: list[str] = field(default_factory=list)
    heatmaps: dict[int, dict[str, dict[int, HeatMap]]] = field(default_factory=dict)
    plans: dict[int, GuidancePlan] = field(default_factory=dict)
    seconds: float = 0.0


@dataclass
class CampaignReport:
    config: FuzzerConfig
    target: TargetProgram
    execs: int
    fuzz_execs: int
    pool: list[SeedEntry]
    crashes: list[CrashReport]
    history: CoverageHistory
    critical_ratio: list[tuple[int, int, int]]
    pipeline_runs: list[PipelineRun]
    counters: Counter
    coverage: GlobalCoverage
    bitmap: CoverageBitmap
    records: RecordLog
    stop_reason: str
    first_guided_exec: int | None
    crash_exec: int | None
    elapsed: float = 0.0

    @property
    def found_crash(self) -> bool:
        return bool(self.crashes)

    @property
    def seeds(self) -> dict[int, bytes]:
        return {e.seed_id: e.data for e in self.pool}

    def summary(self) -> str:
        """Deterministic text summary (no wall-clock values)."""
        cov = self.coverage
        lines = [
            f"target: {self.target.name}",
            f"mode: {self.config.mode}",
            f"rng_seed: {self.config.rng_seed}",
            f"executions: {self.execs}",
            f"fuzz_executions: {self.fuzz_execs}",
            f"stop_reason: {self.stop_reason}",
            f"covered_blocks: {cov.n_blocks}/{len(self.target.block_ids)}",
            f"covered_edges: {cov.n_edges}",
            f"bitmap_bits: {self.bitmap.count()}",
            f"seeds: {len(self.pool)}",
            f"crashes: {len(self.crashes)}",
        ]
        for c in self.crashes:
            lines.append(f"  crash {c.block} at exec {c.exec_id} from seed {c.parent_seed}: {c.data.hex()}")
        lines.append(f"pipeline_runs: {len(self.pipeline_runs)}")
        for run in self.pipeline_runs:
            crit = ",".join(run.selection.critical) or "-"
            tgt = ",".join(run.selection.target_uncovered) or "-"
            lines.append(f"  at exec {run.exec_count}: targets {tgt}; critical {crit}")
            for b, m in run.metrics.items():
                lines.append(f"    model {b}: train_acc {m.train_acc:.4f} holdout_acc {m.holdout_acc:.4f} "
                             f"n_train {m.n_train}")
            for b in run.untrainable:
                lines.append(f"    model {b}: untrainable")
        lines.append(f"first_guided_exec: {self.first_guided_exec}")
        lines.append("operations: " + ", ".join(f"{k}={v}" for k, v in sorted(self.counters.items())))
        return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# the loop


class _Stop(Exception):
    """Unwinds the fuzzing loop (budget spent or campaign finished)."""


class _Restart(Exception):
    """Unwinds to a new scheduling round after the pipeline installed new plans."""


class Campaign:
    def __init__(self, config: FuzzerConfig, target: TargetProgram, corpus: Sequence[bytes],
                 out_dir=None, dictionary: Sequence[bytes] | None = None):
        if not corpus:
            raise ValueError("initial corpus is empty")
        for i, data in enumerate(corpus):
            if len(data) > config.max_input_len:
                raise ValueError(f"corpus entry {i} is longer than max_input_len={config.max_input_len}")
            if len(data) == 0:
                raise ValueError(f"corpus entry {i} is empty")
            if not target.admits(data):
                raise ValueError(f"corpus entry {i} violates the target's initial constraint")
        self.config = config
        self.program = target
        self.corpus = [bytes(c) for c in corpus]
        if dictionary is None:
            dictionary = load_dictionary(config.dict_path) if config.dict_path else []
        self.dictionary = list(dictionary)
        self.out_dir = Path(out_dir) if out_dir is not None else None

        self.rng = np.random.default_rng(config.rng_seed)
        self.run = target.runner()
        self.batch = target.batch_runner()
        self.block_ids = target.block_ids
        self.n_blocks = len(self.block_ids)
        self.cfg = build_cfg(target)
        self.gc = GlobalCoverage(self.block_ids)
        self.bitmap = CoverageBitmap(config.map_size)
        self.hdict = EdgeHashDict.for_cfg(self.cfg, random.Random(config.rng_seed ^ 0x5EED), config.map_size)
        self.paths: dict[int, _PathInfo] = {}
        self.records = RecordLog()
        self.pool: list[SeedEntry] = []
        self.crashes: list[CrashReport] = []
        self.crash_blocks_seen: set[str] = set()
        self.history = CoverageHistory()
        self.critical_ratio: list[tuple[int, int, int]] = []
        self.pipeline_runs: list[PipelineRun] = []
        self.counters: Counter = Counter()
        self.execs = 0
        self.fuzz_execs = 0
        self.stop_reason = "budget"
        self.first_guided_exec: int | None = None
        self.crash_exec: int | None = None

        self.plans: dict[int, GuidancePlan] = {}
        self.critical_idx: list[int] = []
        self.critical_mask = 0
        self.active = False
        self._sweeps: dict[int, list] = {}
        self._guided_sweeps: dict[int, list] = {}
        self._win_generated = 0
        self._win_hits = 0

    # -- execution --------------------------------------------------------
    def _path_info(self, code: int, path: tuple | None = None) -> _PathInfo:
        info = self.paths.get(code)
        if info is None:
            if path is None:
                path = decode_path(code, self.batch.base)
            mask = 0
            for b in path:
                mask |= 1 << b
            ids = self.block_ids
            for a, b in zip(path, path[1:]):
                self.bitmap.set(edge_hash_index(ids[a], ids[b], self.hdict))
            info = self.paths[code] = _PathInfo(path, mask, self.records.intern(mask))
        return info

    def _dry_run(self) -> None:
        base = self.batch.base
        for data in self.corpus:
            self.execs += 1
            path, term = self.run(data, self.config.step_limit)
            info = self._path_info(encode_path(path, base), path)
            self.gc.observe(path)
            if term == CRASH:
                self._triage(data, -1, ())
            self.pool.append(SeedEntry(len(self.pool), data, info.mask, self.execs))
        self.history.append(0, self.gc.n_edges, self.gc.n_blocks)

    def _run_chunk(self, entry: SeedEntry, X: np.ndarray, mut, pos, param, stacks=None) -> None:
        """Execute children of one seed as if one after another.

        Distinct paths are folded into the coverage in order of first
        appearance, so new-coverage flags, pool order and exec ids are the
        ones a one-at-a-time loop would produce.  If every block becomes
        covered mid-chunk the rest of the chunk is discarded.
        """
        cfg = self.config
        res = self.batch(X, cfg.step_limit)
        codes, term = res.codes, res.term
        over = np.flatnonzero(term == TERM_OVERFLOW)
        crashed = term == TERM_CRASH
        if len(over):
            codes = codes.astype(object)
            for r in over:
                path, t = self.run(X[r].tobytes(), cfg.step_limit)
                codes[r] = encode_path(path, res.base)
                crashed[r] = t == CRASH
            self.counters["scalar_fallback"] += len(over)
        uniq, first, inv = np.unique(codes, return_index=True, return_inverse=True)
        order = np.argsort(first, kind="stable")
        infos = [None] * len(uniq)
        new_u = np.zeros(len(uniq), dtype=bool)
        gc, cut = self.gc, len(X)
        for u in order:
            info = infos[u] = self._path_info(int(uniq[u]))
            new_u[u] = gc.observe(info.path, 0)
            if new_u[u] and gc.n_blocks == self.n_blocks:
                cut = int(first[u]) + 1
                self.stop_reason = "all blocks covered"
                break
        inv = inv[:cut]
        counts = np.bincount(inv, minlength=len(uniq))
        for u in np.flatnonzero(counts):
            gc.observe(infos[u].path, int(counts[u]))
        mask_id = np.array([i.mask_id if i is not None else -1 for i in infos], dtype=np.int32)[inv]
        new_row = np.zeros(cut, dtype=bool)
        new_row[first[new_u]] = True
        first_exec = self.execs + 1
        self.records.add_batch(first_exec, entry.seed_id, mut[:cut], param[:cut], pos[:cut], X.shape[1],
                               mask_id, new_row, crashed[:cut])
        self.execs += cut
        self.fuzz_execs += cut
        self._win_generated += cut
        if self.critical_mask:
            hit_u = np.array([i is not None and bool(i.mask & self.critical_mask) for i in infos])
            self._win_hits += int(hit_u[inv].sum())
        for u in order:
            if infos[u] is None:
                break
            r = int(first[u])
            if crashed[r]:
                muts = stacks.stack(r) if stacks is not None else (Mutation(MutatorId(int(mut[r])), int(pos[r]),
                                                                            int(param[r])),)
                self._triage(X[r].tobytes(), entry.seed_id, muts, first_exec + r)
            elif new_u[u]:
                self.pool.append(SeedEntry(len(self.pool), X[r].tobytes(), infos[u].mask, first_exec + r))
        if cut < len(X):
            self._close_window()
            raise _Stop
        if self.fuzz_execs >= cfg.max_execs:
            self._close_window()
            raise _Stop
        if self.fuzz_execs % cfg.window_execs == 0:
            self._boundary()

    def _triage(self, data: bytes, sid: int, muts, exec_id: int | None = None) -> None:
        exec_id = self.execs if exec_id is None else exec_id
        report = triage_crash(self.program, data, exec_id, sid, muts, self.crash_blocks_seen,
                              self.config.step_limit)
        if report is not None:
            self.crashes.append(report)
            if self.crash_exec is None:
                self.crash_exec = exec_id
            if self.out_dir is not None:
                d = self.out_dir / "crashes"
                d.mkdir(parents=True, exist_ok=True)
                (d / f"crash_{report.block}.bin").write_bytes(report.data)

    def _close_window(self) -> None:
        last = self.history.rows[-1][0]
        if self.fuzz_execs > last:
            self.history.append(self.fuzz_execs, self.gc.n_edges, self.gc.n_blocks)
            self.critical_ratio.append((self.fuzz_execs, self._win_generated, self._win_hits))
            self._win_generated = self._win_hits = 0

    def _boundary(self) -> None:
        self._close_window()
        if self.out_dir is not None:
            self.records.flush()
        if self.config.mode != "attuzz":
            return
        if detect_bottleneck(self.history, self.config.window_execs, self.config.bottleneck_delta):
            self._pipeline()
            raise _Restart

    # -- analysis pipeline -------------------------------------------------
    def _pipeline(self) -> None:
        cfg = self.config
        t0 = time.perf_counter()
        snap = self.gc.snapshot()
        dtmc = markov.estimate_dtmc(snap, self.cfg)
        self.counters["estimate_dtmc"] += 1
        rewards = markov.solve_rewards(dtmc, snap.covered)
        self.counters["solve_rewards"] += 1
        selection = markov.select_critical_blocks(rewards, snap.covered, self.cfg, dtmc, cfg.k_percent,
                                                  cfg.k_prime, init=self.program.init)
        self.counters["select_critical_blocks"] += 1
        run = PipelineRun(self.fuzz_execs, selection, rewards, dtmc)
        self.pipeline_runs.append(run)
        if not selection.target_uncovered:
            self.stop_reason = "all blocks covered"
            raise _Stop
        index = self.program.index
        seeds = {e.seed_id: e.data for e in self.pool}
        run_no = len(self.pipeline_runs)
        np_rng = np.random.default_rng([cfg.rng_seed, run_no])
        tcfg = dataclasses.replace(cfg.train, seed=(cfg.train.seed + 7919 * cfg.rng_seed + run_no) % 2**32)
        for block in selection.critical:
            try:
                data = attention.build_dataset(self.records, seeds, index[block], np_rng, self.dictionary,
                                               cfg.max_input_len, cfg.max_train_per_class)
                self.counters["build_dataset"] += 1
            except UntrainableBlock:
                run.untrainable.append(block)
                continue
            model, metrics = attention.train(data, tcfg)
            self.counters["train"] += 1
            run.models[block] = model
            run.metrics[block] = metrics

        crit_idx = [index[b] for b in selection.critical]
        for entry in self.pool:
            covered = [b for b in run.models if entry.covered_blocks >> index[b] & 1]
            if not covered:
                continue
            maps: dict[str, dict[int, HeatMap]] = {}
            for block in covered:
                model = run.models[block]
                per_mut = {}
                for mut in MutatorId:
                    samples = attention.pair_samples(self.records, seeds, entry.seed_id, int(mut), model.n,
                                                     self.dictionary, cfg.heatmap_samples or None, np_rng)
                    hm = attention.extract_heatmap(model, entry.seed_id, mut, samples)
                    self.counters["extract_heatmap"] += 1
                    if hm is not None:
                        per_mut[int(mut)] = hm
                maps[block] = per_mut
            run.heatmaps[entry.seed_id] = maps
            plan = guidance.compute_plan(maps, covered, cfg.p_hot, entry.seed_id)
            self.counters["compute_plan"] += 1
            if plan:
                run.plans[entry.seed_id] = plan
        run.seconds = time.perf_counter() - t0

        self.plans = run.plans
        self.critical_idx = crit_idx
        self.critical_mask = sum(1 << i for i in crit_idx)
        self.active = bool(crit_idx)
        self._guided_sweeps = {}
        if self.plans and self.first_guided_exec is None:
            self.first_guided_exec = self.fuzz_execs

    # -- per-seed fuzzing --------------------------------------------------
    def _energy(self, entry: SeedEntry) -> int:
        if self.active and not entry.covered_blocks & self.critical_mask:
            return max(1, int(self.config.unguided_energy * self.config.iter_limit))
        return self.config.iter_limit

    def _chunk_limit(self, want: int) -> int:
        cfg = self.config
        to_window = cfg.window_execs - self.fuzz_execs % cfg.window_execs
        return max(1, min(want, to_window, cfg.max_execs - self.fuzz_execs, CHUNK))

    def _fuzz_seed(self, entry: SeedEntry) -> None:
        """One scheduling turn: the rest of the seed's sweep, then havoc, up to its energy."""
        cfg = self.config
        data0, sid, n = entry.data, entry.seed_id, len(entry.data)
        energy = self._energy(entry)
        plan = self.plans.get(sid) if self.active else None
        if plan is not None:
            sweep = self._guided_sweeps.get(sid)
            if sweep is None:
                sweep = self._guided_sweeps[sid] = [
                    guidance.guided_schedule_arrays(n, plan, self.dictionary, self.rng), 0]
        else:
            sweep = self._sweeps.get(sid)
            if sweep is None:
                sweep = self._sweeps[sid] = [schedule_arrays(n, self.dictionary), 0]
        done = 0
        (smut, spos, spar), _ = sweep
        while sweep[1] < len(smut) and done < energy:
            k = self._chunk_limit(min(energy - done, len(smut) - sweep[1]))
            sl = slice(sweep[1], sweep[1] + k)
            sweep[1] += k
            done += k
            self.counters["guided_sweep_execs" if plan is not None else "sweep_execs"] += k
            self._run_chunk(entry, apply_batch(data0, smut[sl], spos[sl], spar[sl], self.dictionary),
                            smut[sl], spos[sl], spar[sl])
        protected = plan.protected_matrix(n) if plan is not None else None
        while done < energy:
            k = self._chunk_limit(energy - done)
            hb = havoc_batch(data0, self.rng, k, self.dictionary, protected, cfg.p_hot, cfg.havoc_stack,
                             cfg.guided_havoc)
            done += k
            applied = hb.applied
            keep = np.flatnonzero(applied > 0)
            if len(keep) < k:
                hb = HavocBatch(hb.X[keep], hb.mut[keep], hb.pos[keep], hb.param[keep])
                applied = applied[keep]
                if not len(keep):
                    continue
            mut, pos, param = hb.first()
            pos = np.where(applied == 1, pos, -1)
            self.counters["guided_havoc_execs" if plan is not None else "havoc_execs"] += len(keep)
            self._run_chunk(entry, hb.X, mut, pos, param, hb)

    def run_loop(self) -> None:
        self._dry_run()
        if self.config.max_execs == 0:
            self.stop_reason = "budget"
            return
        if self.gc.n_blocks == self.n_blocks:
            self.stop_reason = "all blocks covered"
            return
        try:
            while True:
                try:
                    if self.active:
                        order = guidance.schedule_seeds(self.pool, self.critical_idx)
                        for entry in order:
                            self._fuzz_seed(entry)
                    else:
                        i = 0
                        while i < len(self.pool):
                            self._fuzz_seed(self.pool[i])
                            i += 1
                except _Restart:
                    continue
        except _Stop:
            pass

    def report(self, elapsed: float = 0.0) -> CampaignReport:
        return CampaignReport(
            self.config, self.program, self.execs, self.fuzz_execs, self.pool, self.crashes, self.history,
            self.critical_ratio, self.pipeline_runs, self.counters, self.gc, self.bitmap, self.records,
            self.stop_reason, self.first_guided_exec, self.crash_exec, elapsed)


def run_campaign(config: FuzzerConfig, target: TargetProgram, initial_corpus: Sequence[bytes],
                 out_dir=None, dictionary: Sequence[bytes] | None = None) -> CampaignReport:
    """Run one campaign to its budget (or until every block is covered).

    With ``out_dir`` the record log, crashes and statistics are written
    there; otherwise everything stays in memory.
    """
    t0 = time.perf_counter()
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for name in ("records.log",):
            if (out / name).exists():
                (out / name).unlink()
        if (out / "crashes").exists():
            shutil.rmtree(out / "crashes")
    camp = Campaign(config, target, initial_corpus, out_dir, dictionary)
    if out_dir is not None:
        camp.records.path = Path(out_dir) / "records.log"
    camp.run_loop()
    report = camp.report(time.perf_counter() - t0)
    if out_dir is not None:
        camp.records.flush()
        export_stats(report, out_dir, dictionary=camp.dictionary)
    return report


# ---------------------------------------------------------------------------
# export


def export_stats(report: CampaignReport, out_dir, dictionary: Sequence[bytes] = ()) -> list[Path]:
    """Write the campaign's statistics and artefacts under ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    def put(name: str, text: str) -> None:
        (out / name).write_text(text, encoding="utf-8")
        written.append(out / name)

    put("coverage.csv", "exec_count,edges,blocks\n" + "".join(f"{e},{g},{b}\n" for e, g, b in report.history.rows))
    put("critical_ratio.csv", "window_end,generated,critical_hits,ratio\n" + "".join(
        f"{w},{n},{h},{(h / n if n else 0.0):.6f}\n" for w, n, h in report.critical_ratio))
    gc = report.coverage
    taken = gc.edge_taken
    put("counts.csv", "src,dst,count\n" + "".join(f"{a},{b},{n}\n" for (a, b), n in sorted(taken.items())))
    cfg = build_cfg(report.target)
    if report.pipeline_runs:
        last = report.pipeline_runs[-1]
        dtmc, rewards, selection = last.dtmc, last.rewards, last.selection
    else:
        dtmc = markov.estimate_dtmc(gc, cfg)
        rewards = markov.solve_rewards(dtmc, gc.covered)
        selection = None
    markov.write_rewards_csv(out / "rewards.csv", dtmc, rewards, gc.covered, selection, report.target.init)
    written.append(out / "rewards.csv")
    put("config.txt", report.config.to_text())
    put("target.tgt", to_source(report.target))
    queue = out / "queue"
    if queue.exists():
        shutil.rmtree(queue)
    queue.mkdir()
    for e in report.pool:
        (queue / f"{e.seed_id:06d}.bin").write_bytes(e.data)
    report.bitmap.dump(out / "bitmap.bin")
    written.append(out / "bitmap.bin")
    for old in list(out.glob("heatmap_*.csv")) + list(out.glob("plan_*.csv")):
        old.unlink()
    models = out / "models"
    if models.exists():
        shutil.rmtree(models)
    if report.pipeline_runs:
        last = report.pipeline_runs[-1]
        if last.models:
            models.mkdir()
            for block, params in last.models.items():
                attention.save_params(params, models / f"{block}.model")
        for sid, per_block in last.heatmaps.items():
            multi = len(per_block) > 1
            for block, per_mut in per_block.items():
                for mut, hm in per_mut.items():
                    suffix = f"_{block}" if multi else ""
                    path = out / f"heatmap_{sid}_{MutatorId(mut).label}{suffix}.csv"
                    attention.write_heatmap_csv(hm, path)
                    written.append(path)
        for sid, plan in last.plans.items():
            guidance.write_plan_csv(plan, out / f"plan_{sid}.csv")
            written.append(out / f"plan_{sid}.csv")
    put("report.txt", report.summary())
    return written


def load_corpus(path) -> list[bytes]:
    """Every regular file of a directory (sorted by name), or a single file."""
    path = Path(path)
    if path.is_file():
        return [path.read_bytes()]
    if not path.is_dir():
        raise FileNotFoundError(f"corpus {path} does not exist")
    return [p.read_bytes() for p in sorted(path.iterdir()) if p.is_file()]
