"""Coverage bookkeeping: AFL bitmaps, edge hashing, hit counters and the record log.

Block-level coverage reported by the interpreter is the ground truth used
for learning.  The hashed bitmap mirrors what an AFL-instrumented binary
would report and exists so the hash-to-edge reconstruction can be tested
against that ground truth.
"""

from __future__ import annotations

import io
import os
from array import array
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from .mutation import MutatorId
from .target import Cfg, ExecutionTrace

__all__ = [
    "DEFAULT_MAP_SIZE",
    "CoverageError",
    "UnknownBlockError",
    "CorruptRecordError",
    "CoverageBitmap",
    "EdgeHashDict",
    "edge_hash_index",
    "GlobalCoverage",
    "update_from_trace",
    "reconstruct_blocks",
    "ExecutionRecord",
    "RecordLog",
    "append_record",
    "load_records",
    "mask_to_hex",
    "hex_to_mask",
]

DEFAULT_MAP_SIZE = 1 << 16


class CoverageError(Exception):
    pass


class UnknownBlockError(CoverageError, KeyError):
    pass


class CorruptRecordError(CoverageError):
    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


# ---------------------------------------------------------------------------
# bitmap + hashing


class CoverageBitmap:
    """Fixed-size bit array indexed by hashed edge ids."""

    __slots__ = ("map_size", "_bits")

    def __init__(self, map_size: int = DEFAULT_MAP_SIZE):
        if map_size < 8 or map_size & (map_size - 1):
            raise ValueError(f"map_size must be a power of two >= 8, got {map_size}")
        self.map_size = map_size
        self._bits = bytearray(map_size // 8)

    def set(self, index: int) -> bool:
        """Set bit ``index``; returns True if it was previously clear."""
        byte, bit = divmod(index, 8)
        mask = 1 << bit
        old = self._bits[byte]
        if old & mask:
            return False
        self._bits[byte] = old | mask
        return True

    def test(self, index: int) -> bool:
        return bool(self._bits[index >> 3] & (1 << (index & 7)))

    def __contains__(self, index: int) -> bool:
        return self.test(index)

    def count(self) -> int:
        return int.from_bytes(self._bits, "little").bit_count()

    def indices(self) -> Iterator[int]:
        for byte_i, value in enumerate(self._bits):
            while value:
                low = value & -value
                yield byte_i * 8 + low.bit_length() - 1
                value ^= low

    def to_bytes(self) -> bytes:
        """Raw dump: bit ``i`` lives in byte ``i // 8`` at bit ``i % 8``."""
        return bytes(self._bits)

    @classmethod
    def from_bytes(cls, raw: bytes) -> "CoverageBitmap":
        bm = cls(len(raw) * 8)
        bm._bits[:] = raw
        return bm

    def dump(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> "CoverageBitmap":
        return cls.from_bytes(Path(path).read_bytes())

    def copy(self) -> "CoverageBitmap":
        return CoverageBitmap.from_bytes(self.to_bytes())

    def __eq__(self, other):
        return isinstance(other, CoverageBitmap) and self._bits == other._bits


class EdgeHashDict:
    """Random per-block ids plus the reverse map from bitmap index to edges."""

    def __init__(self, block_rand_id: dict[str, int], edges: Iterable[tuple[str, str]] = (),
                 map_size: int = DEFAULT_MAP_SIZE):
        self.map_size = map_size
        self.block_rand_id = dict(block_rand_id)
        self.index_to_edges: dict[int, list[tuple[str, str]]] = {}
        for edge in sorted(set(edges)):
            self.add_edge(*edge)

    @classmethod
    def for_cfg(cls, cfg: Cfg, rng, map_size: int = DEFAULT_MAP_SIZE) -> "EdgeHashDict":
        """Draw a random id in ``[0, map_size)`` for each block of ``cfg``."""
        ids = {b: rng.randrange(map_size) for b in cfg.blocks}
        return cls(ids, cfg.edges, map_size)

    def add_edge(self, prev: str, cur: str) -> int:
        idx = edge_hash_index(prev, cur, self)
        bucket = self.index_to_edges.setdefault(idx, [])
        if (prev, cur) not in bucket:
            bucket.append((prev, cur))
        return idx

    def collisions(self) -> dict[int, list[tuple[str, str]]]:
        return {i: e for i, e in self.index_to_edges.items() if len(e) > 1}


def edge_hash_index(prev: str, cur: str, hdict: EdgeHashDict) -> int:
    """AFL's classic edge id: ``((id[prev] >> 1) ^ id[cur]) mod map_size``."""
    try:
        a = hdict.block_rand_id[prev]
        b = hdict.block_rand_id[cur]
    except KeyError as exc:
        raise UnknownBlockError(f"block {exc.args[0]!r} has no random id") from None
    return ((a >> 1) ^ b) % hdict.map_size


def reconstruct_blocks(bitmap: CoverageBitmap, hdict: EdgeHashDict, cfg: Cfg | None = None
                       ) -> tuple[set[str], bool]:
    """Map set bitmap indices back to blocks.

    Returns the blocks incident to every edge hashing to a set index, and
    whether any such index is shared by two or more edges.  ``cfg`` is
    accepted for signature symmetry; the dictionary already holds its edges.
    """
    blocks: set[str] = set()
    ambiguous = False
    for idx in bitmap.indices():
        edges = hdict.index_to_edges.get(idx, ())
        if len(edges) > 1:
            ambiguous = True
        for src, dst in edges:
            blocks.add(src)
            blocks.add(dst)
    return blocks, ambiguous


# ---------------------------------------------------------------------------
# global counters


class GlobalCoverage:
    """Campaign-wide hit counters.

    Counts are accumulated per distinct block path and expanded into block,
    edge and out-degree counts lazily, so the per-execution cost is one dict
    lookup.  Blocks are addressed by name at the API surface and by
    declaration index internally.
    """

    def __init__(self, block_ids: Sequence[str]):
        self.block_ids = list(block_ids)
        self._index = {b: i for i, b in enumerate(self.block_ids)}
        self.path_counts: dict[tuple, int] = {}
        self._pending: dict[tuple, int] = {}
        self._hits = [0] * len(self.block_ids)
        self._edges: dict[tuple[int, int], int] = {}
        self._covered_blocks: set[int] = set()
        self._covered_edges: set[tuple[int, int]] = set()

    # -- updates ----------------------------------------------------------
    def observe(self, path: tuple, count: int = 1) -> bool:
        """Count ``count`` executions of ``path`` (block indices); True on new coverage."""
        pending = self._pending
        if path in self.path_counts:
            self.path_counts[path] += count
            pending[path] = pending.get(path, 0) + count
            return False
        self.path_counts[path] = count
        pending[path] = pending.get(path, 0) + count
        new = False
        for b in path:
            if b not in self._covered_blocks:
                self._covered_blocks.add(b)
                new = True
        for e in zip(path, path[1:]):
            if e not in self._covered_edges:
                self._covered_edges.add(e)
                new = True
        return new

    def _block_index(self, b: str) -> int:
        idx = self._index.get(b)
        if idx is None:
            idx = self._index[b] = len(self.block_ids)
            self.block_ids.append(b)
            self._hits.append(0)
        return idx

    def observe_trace(self, trace: ExecutionTrace) -> bool:
        return self.observe(tuple(self._block_index(b) for b in trace.block_seq))

    def _flush(self) -> None:
        if not self._pending:
            return
        hits, edges = self._hits, self._edges
        for path, count in self._pending.items():
            for b in path:
                hits[b] += count
            for e in zip(path, path[1:]):
                edges[e] = edges.get(e, 0) + count
        self._pending.clear()

    # -- views ------------------------------------------------------------
    @property
    def block_hits(self) -> dict[str, int]:
        self._flush()
        return {b: self._hits[i] for i, b in enumerate(self.block_ids)}

    @property
    def edge_taken(self) -> dict[tuple[str, str], int]:
        self._flush()
        ids = self.block_ids
        return {(ids[a], ids[b]): n for (a, b), n in self._edges.items()}

    @property
    def out_taken(self) -> dict[str, int]:
        self._flush()
        out = dict.fromkeys(self.block_ids, 0)
        for (a, _), n in self._edges.items():
            out[self.block_ids[a]] += n
        return out

    @property
    def covered(self) -> set[str]:
        return {self.block_ids[i] for i in self._covered_blocks}

    @property
    def covered_edges(self) -> set[tuple[str, str]]:
        ids = self.block_ids
        return {(ids[a], ids[b]) for a, b in self._covered_edges}

    @property
    def n_blocks(self) -> int:
        return len(self._covered_blocks)

    @property
    def n_edges(self) -> int:
        return len(self._covered_edges)

    @property
    def executions(self) -> int:
        return sum(self.path_counts.values())

    def snapshot(self) -> "GlobalCoverage":
        """Independent copy (readers never see later updates)."""
        self._flush()
        snap = GlobalCoverage(self.block_ids)
        snap.path_counts = dict(self.path_counts)
        snap._hits = list(self._hits)
        snap._edges = dict(self._edges)
        snap._covered_blocks = set(self._covered_blocks)
        snap._covered_edges = set(self._covered_edges)
        return snap

    @classmethod
    def from_counts(cls, block_ids: Sequence[str], edge_counts: dict[tuple[str, str], int],
                    covered: Iterable[str] | None = None) -> "GlobalCoverage":
        """Build counters directly from edge counts (for analysis and tests)."""
        gc = cls(block_ids)
        for (a, b), n in edge_counts.items():
            ia, ib = gc._block_index(a), gc._block_index(b)
            gc._edges[(ia, ib)] = gc._edges.get((ia, ib), 0) + n
            gc._hits[ib] += n
            if n > 0:
                gc._covered_edges.add((ia, ib))
                gc._covered_blocks.update((ia, ib))
        for b in covered or ():
            gc._covered_blocks.add(gc._block_index(b))
        return gc


def update_from_trace(gc: GlobalCoverage, bitmap: CoverageBitmap | None, trace: ExecutionTrace,
                      hdict: EdgeHashDict | None = None) -> bool:
    """Fold one trace into the counters (and the bitmap, given a hash dict).

    Returns True iff some block or edge is covered for the first time.
    """
    new = gc.observe_trace(trace)
    if bitmap is not None and hdict is not None:
        for prev, cur in trace.edge_seq:
            bitmap.set(edge_hash_index(prev, cur, hdict))
    return new


# ---------------------------------------------------------------------------
# execution records


def mask_to_hex(mask: int) -> str:
    return format(mask, "x")


def hex_to_mask(text: str) -> int:
    return int(text, 16)


@dataclass(frozen=True, slots=True)
class ExecutionRecord:
    exec_id: int
    parent_seed: int
    mutator: MutatorId
    param: int
    position: int
    input_len: int
    covered_blocks: int  # bit i set <=> block with declaration index i was visited
    new_coverage: bool
    crashed: bool

    def __post_init__(self):
        if self.covered_blocks <= 0:
            raise ValueError("covered_blocks must be non-empty")

    def covers(self, block_index: int) -> bool:
        return bool(self.covered_blocks >> block_index & 1)

    def to_line(self) -> str:
        return (f"{self.exec_id},{self.parent_seed},{MutatorId(self.mutator).label},{self.param},"
                f"{self.position},{self.input_len},{self.covered_blocks:x},"
                f"{int(self.new_coverage)},{int(self.crashed)}")

    @classmethod
    def from_line(cls, line: str, lineno: int = 0) -> "ExecutionRecord":
        parts = line.rstrip("\r\n").split(",")
        if len(parts) != 9:
            raise CorruptRecordError(f"expected 9 fields, found {len(parts)}", lineno)
        try:
            flags = [parts[7], parts[8]]
            if any(f not in ("0", "1") for f in flags):
                raise ValueError("boolean fields must be 0 or 1")
            return cls(
                exec_id=int(parts[0]),
                parent_seed=int(parts[1]),
                mutator=MutatorId.from_label(parts[2]),
                param=int(parts[3]),
                position=int(parts[4]),
                input_len=int(parts[5]),
                covered_blocks=hex_to_mask(parts[6]),
                new_coverage=flags[0] == "1",
                crashed=flags[1] == "1",
            )
        except ValueError as exc:
            raise CorruptRecordError(str(exc), lineno) from None


class _MaskView(Sequence):
    """Read-only ``covered_blocks`` column, resolved through the mask table."""

    def __init__(self, log: "RecordLog"):
        self._log = log

    def __len__(self) -> int:
        return len(self._log.mask_id)

    def __getitem__(self, i):
        if isinstance(i, slice):
            return [self._log.masks[k] for k in self._log.mask_id[i]]
        return self._log.masks[self._log.mask_id[i]]


class RecordLog:
    """Append-only columnar store of execution records.

    Columns are kept in typed arrays so millions of records stay compact.
    Block masks repeat heavily, so each distinct mask is stored once in
    ``masks`` and rows refer to it by index.  With a ``path``,
    :meth:`flush` appends the not-yet-written tail to disk.
    """

    def __init__(self, path=None):
        self.path = Path(path) if path is not None else None
        self.exec_id = array("q")
        self.parent_seed = array("i")
        self.mutator = array("b")
        self.param = array("i")
        self.position = array("i")
        self.input_len = array("i")
        self.mask_id = array("i")
        self.new_coverage = array("b")
        self.crashed = array("b")
        self.masks: list[int] = []
        self._mask_index: dict[int, int] = {}
        self._written = 0

    def intern(self, mask: int) -> int:
        """Table index of ``mask`` (added on first use)."""
        k = self._mask_index.get(mask)
        if k is None:
            if mask <= 0:
                raise CoverageError("covered_blocks must be non-empty")
            k = self._mask_index[mask] = len(self.masks)
            self.masks.append(mask)
        return k

    @property
    def covered(self) -> Sequence[int]:
        return _MaskView(self)

    def covers_block(self, block_index: int) -> np.ndarray:
        """Boolean column: did each execution visit ``block_index``?"""
        table = np.array([(m >> block_index) & 1 for m in self.masks], dtype=bool)
        ids = np.frombuffer(self.mask_id, dtype=np.int32) if len(self.mask_id) else np.zeros(0, np.int32)
        return table[ids] if len(table) else np.zeros(0, dtype=bool)

    def add(self, exec_id, parent_seed, mutator, param, position, input_len, covered, new_cov, crashed):
        if self.exec_id and exec_id <= self.exec_id[-1]:
            raise CoverageError("exec_id must increase")
        self.exec_id.append(exec_id)
        self.parent_seed.append(parent_seed)
        self.mutator.append(mutator)
        self.param.append(param)
        self.position.append(position)
        self.input_len.append(input_len)
        self.mask_id.append(self.intern(covered))
        self.new_coverage.append(new_cov)
        self.crashed.append(crashed)

    def add_batch(self, first_exec_id: int, parent_seed: int, mutator, param, position, input_len: int,
                  mask_id, new_cov, crashed) -> None:
        """Append consecutive executions ``first_exec_id, first_exec_id + 1, ...``.

        ``mask_id`` holds indices returned by :meth:`intern`.
        """
        n = len(mutator)
        if n == 0:
            return
        if self.exec_id and first_exec_id <= self.exec_id[-1]:
            raise CoverageError("exec_id must increase")
        self.exec_id.frombytes(np.arange(first_exec_id, first_exec_id + n, dtype=np.int64).tobytes())
        self.parent_seed.frombytes(np.full(n, parent_seed, dtype=np.int32).tobytes())
        self.mutator.frombytes(np.asarray(mutator, dtype=np.int8).tobytes())
        self.param.frombytes(np.asarray(param, dtype=np.int32).tobytes())
        self.position.frombytes(np.asarray(position, dtype=np.int32).tobytes())
        self.input_len.frombytes(np.full(n, input_len, dtype=np.int32).tobytes())
        self.mask_id.frombytes(np.asarray(mask_id, dtype=np.int32).tobytes())
        self.new_coverage.frombytes(np.asarray(new_cov, dtype=np.int8).tobytes())
        self.crashed.frombytes(np.asarray(crashed, dtype=np.int8).tobytes())

    def append(self, record: ExecutionRecord) -> None:
        self.add(record.exec_id, record.parent_seed, int(record.mutator), record.param, record.position,
                 record.input_len, record.covered_blocks, int(record.new_coverage), int(record.crashed))

    def __len__(self) -> int:
        return len(self.exec_id)

    def __getitem__(self, i: int) -> ExecutionRecord:
        return ExecutionRecord(self.exec_id[i], self.parent_seed[i], MutatorId(self.mutator[i]),
                               self.param[i], self.position[i], self.input_len[i], self.masks[self.mask_id[i]],
                               bool(self.new_coverage[i]), bool(self.crashed[i]))

    def __iter__(self) -> Iterator[ExecutionRecord]:
        for i in range(len(self)):
            yield self[i]

    def lines(self, start: int = 0, stop: int | None = None) -> Iterator[str]:
        labels = [m.label for m in MutatorId]
        hexes = [format(m, "x") for m in self.masks]
        stop = len(self) if stop is None else stop
        cols = (self.exec_id, self.parent_seed, self.mutator, self.param, self.position, self.input_len,
                self.mask_id, self.new_coverage, self.crashed)
        for e, s, m, a, p, n, k, new, c in zip(*(col[start:stop] for col in cols)):
            yield f"{e},{s},{labels[m]},{a},{p},{n},{hexes[k]},{new},{c}\n"

    def flush(self) -> None:
        if self.path is None or self._written == len(self):
            return
        with open(self.path, "a", encoding="ascii", newline="\n") as fh:
            fh.writelines(self.lines(self._written))
            fh.flush()
            os.fsync(fh.fileno())
        self._written = len(self)

    def write(self, path) -> None:
        with open(path, "w", encoding="ascii", newline="\n") as fh:
            fh.writelines(self.lines())


def append_record(store, record: ExecutionRecord | Iterable[ExecutionRecord]) -> None:
    """Append one or more records to a :class:`RecordLog` or a log file path."""
    records = [record] if isinstance(record, ExecutionRecord) else list(record)
    if isinstance(store, RecordLog):
        for r in records:
            store.append(r)
        return
    with open(store, "a", encoding="ascii", newline="\n") as fh:
        fh.writelines(r.to_line() + "\n" for r in records)


def load_records(source, strict: bool = True, errors: list | None = None) -> list[ExecutionRecord]:
    """Read a record log, returned in exec_id order.

    In strict mode the first malformed line raises :class:`CorruptRecordError`.
    Otherwise malformed lines are skipped and, if ``errors`` is given, the
    exceptions are appended to it.
    """
    if isinstance(source, RecordLog):
        return list(source)
    text = source.getvalue() if isinstance(source, io.StringIO) else Path(source).read_text(encoding="ascii")
    records = []
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    elif lines:
        # the final line lacks its terminator: a torn append
        last = len(lines)
        exc = CorruptRecordError("truncated final record", last)
        if strict:
            raise exc
        if errors is not None:
            errors.append(exc)
        lines.pop()
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            records.append(ExecutionRecord.from_line(line, lineno))
        except CorruptRecordError as exc:
            if strict:
                raise
            if errors is not None:
                errors.append(exc)
    records.sort(key=lambda r: r.exec_id)
    return records


def load_record_log(path, strict: bool = True) -> RecordLog:
    """Read a record log file straight into columns.

    Fields are validated as in :func:`load_records`; rows must already be
    in exec_id order, which is how campaigns write them.
    """
    if not strict:
        log = RecordLog()
        for r in load_records(path, strict=False):
            log.append(r)
        return log
    codes = {m.label: int(m) for m in MutatorId}
    codes.update({m.name: int(m) for m in MutatorId})
    log = RecordLog()
    add = log.add
    masks: dict[str, int] = {}
    with open(path, encoding="ascii", newline="") as fh:
        lineno = 0
        for lineno, line in enumerate(fh, start=1):
            if not line.endswith("\n"):
                raise CorruptRecordError("truncated final record", lineno)
            if not line.strip():
                continue
            parts = line.rstrip("\r\n").split(",")
            if len(parts) != 9:
                raise CorruptRecordError(f"expected 9 fields, found {len(parts)}", lineno)
            try:
                mut = codes.get(parts[2])
                if mut is None:
                    mut = int(MutatorId.from_label(parts[2]))
                if parts[7] not in ("0", "1") or parts[8] not in ("0", "1"):
                    raise ValueError("boolean fields must be 0 or 1")
                mask = masks.get(parts[6])
                if mask is None:
                    mask = masks[parts[6]] = hex_to_mask(parts[6])
                add(int(parts[0]), int(parts[1]), mut, int(parts[3]), int(parts[4]), int(parts[5]),
                    mask, int(parts[7]), int(parts[8]))
            except (ValueError, CoverageError) as exc:
                raise CorruptRecordError(str(exc), lineno) from None
    return log
