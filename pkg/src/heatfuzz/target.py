"""Guarded-CFG target programs.

A target is a labelled transition system over basic blocks.  Every block
owns an ordered list of guarded edges; at run time the first guard that
holds on the input bytes is taken.  Guards only read the input (there is
no mutable program state), so an execution is a pure function of the
input bytes.

Concrete syntax::

    init L1
    assume i32le[0] != 7          # optional initial constraint
    block L1 {
      if byte[0] == 0x41 and i16le[2] < -3 -> L2
      else -> L3
    }
    block L2 crash {}
    block L3 {}
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np

__all__ = [
    "TargetSyntaxError",
    "Const",
    "Read",
    "Compare",
    "And",
    "Or",
    "Not",
    "ELSE",
    "BlockDef",
    "TargetProgram",
    "Cfg",
    "ExecutionTrace",
    "parse_target",
    "to_source",
    "execute",
    "execute_batch",
    "interpret",
    "BatchResult",
    "build_cfg",
    "demo_targets",
    "load_target",
    "DEFAULT_STEP_LIMIT",
]

DEFAULT_STEP_LIMIT = 4096

NO_MATCH = "no-matching-guard"
CRASH = "crash-block"
STEP_LIMIT = "step-limit"


class TargetSyntaxError(ValueError):
    """Raised for malformed target source or an invalid program."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


# ---------------------------------------------------------------------------
# guard expressions

_WIDTH = {"byte": 1, "i8": 1, "i16le": 2, "i32le": 4}


@dataclass(frozen=True)
class Const:
    value: int

    def eval(self, data: bytes) -> int:
        return self.value

    def source(self) -> str:
        return str(self.value)

    def py(self) -> str:
        return repr(self.value)

    def npy(self) -> str:
        return repr(self.value)

    def reads(self) -> Iterator["Read"]:
        return iter(())


@dataclass(frozen=True)
class Read:
    """Integer view of the input at ``offset``; missing bytes read as 0."""

    kind: str
    offset: int

    def __post_init__(self):
        if self.kind not in _WIDTH:
            raise ValueError(f"unknown operand kind {self.kind!r}")
        if self.offset < 0:
            raise ValueError("offsets must be non-negative")

    @property
    def end(self) -> int:
        return self.offset + _WIDTH[self.kind]

    def eval(self, data: bytes) -> int:
        raw = bytes(data[self.offset:self.end])
        raw += bytes(_WIDTH[self.kind] - len(raw))
        if self.kind == "byte":
            return raw[0]
        return int.from_bytes(raw, "little", signed=True)

    def source(self) -> str:
        return f"{self.kind}[{self.offset}]"

    def py(self) -> str:
        return f"_{self.kind}_{self.offset}"

    def npy(self) -> str:
        return self.py()

    def reads(self) -> Iterator["Read"]:
        yield self


_CMP_OPS = ("<=", ">=", "==", "!=", "<", ">")


@dataclass(frozen=True)
class Compare:
    op: str
    left: Const | Read
    right: Const | Read

    def eval(self, data: bytes) -> bool:
        a, b = self.left.eval(data), self.right.eval(data)
        op = self.op
        if op == "<":
            return a < b
        if op == "<=":
            return a <= b
        if op == "==":
            return a == b
        if op == "!=":
            return a != b
        if op == ">=":
            return a >= b
        return a > b

    def source(self) -> str:
        return f"{self.left.source()} {self.op} {self.right.source()}"

    def py(self) -> str:
        return f"({self.left.py()} {self.op} {self.right.py()})"

    def npy(self) -> str:
        return f"({self.left.npy()} {self.op} {self.right.npy()})"

    def reads(self) -> Iterator[Read]:
        yield from self.left.reads()
        yield from self.right.reads()


@dataclass(frozen=True)
class And:
    items: tuple

    def eval(self, data: bytes) -> bool:
        return all(item.eval(data) for item in self.items)

    def source(self) -> str:
        return " and ".join(_wrap(item, (Or,)) for item in self.items)

    def py(self) -> str:
        return "(" + " and ".join(item.py() for item in self.items) + ")"

    def npy(self) -> str:
        return "_and(" + ", ".join(item.npy() for item in self.items) + ")"

    def reads(self) -> Iterator[Read]:
        for item in self.items:
            yield from item.reads()


@dataclass(frozen=True)
class Or:
    items: tuple

    def eval(self, data: bytes) -> bool:
        return any(item.eval(data) for item in self.items)

    def source(self) -> str:
        return " or ".join(item.source() for item in self.items)

    def py(self) -> str:
        return "(" + " or ".join(item.py() for item in self.items) + ")"

    def npy(self) -> str:
        return "_or(" + ", ".join(item.npy() for item in self.items) + ")"

    def reads(self) -> Iterator[Read]:
        for item in self.items:
            yield from item.reads()


@dataclass(frozen=True)
class Not:
    item: object

    def eval(self, data: bytes) -> bool:
        return not self.item.eval(data)

    def source(self) -> str:
        return "not " + _wrap(self.item, (And, Or))

    def py(self) -> str:
        return f"(not {self.item.py()})"

    def npy(self) -> str:
        return f"_not({self.item.npy()})"

    def reads(self) -> Iterator[Read]:
        yield from self.item.reads()


class _Else:
    """The catch-all guard; only legal as the last edge of a block."""

    def eval(self, data: bytes) -> bool:
        return True

    def source(self) -> str:
        return "else"

    def py(self) -> str:
        return "True"

    def npy(self) -> str:
        return "True"

    def reads(self) -> Iterator[Read]:
        return iter(())

    def __repr__(self):
        return "ELSE"

    def __reduce__(self):
        return "ELSE"


ELSE = _Else()


def _wrap(expr, kinds) -> str:
    text = expr.source()
    return f"({text})" if isinstance(expr, kinds) else text


_TOKEN = re.compile(
    r"\s*(?:(?P<num>-?0[xX][0-9a-fA-F]+|-?\d+)"
    r"|(?P<read>(?:byte|i8|i16le|i32le)\[\s*\d+\s*\])"
    r"|(?P<op><=|>=|==|!=|<|>)"
    r"|(?P<word>and|or|not)\b"
    r"|(?P<paren>[()]))"
)


def _tokenize(text: str, line: int) -> list[tuple[str, str]]:
    tokens = []
    pos = 0
    text = text.rstrip()
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None or m.end() == pos:
            raise TargetSyntaxError(f"unexpected input in guard: {text[pos:].strip()!r}", line)
        kind = m.lastgroup
        tokens.append((kind, m.group(kind)))
        pos = m.end()
    return tokens


class _GuardParser:
    def __init__(self, text: str, line: int):
        self.tokens = _tokenize(text, line)
        self.pos = 0
        self.line = line

    def peek(self):
        return self.tokens[self.pos] if self.pos < len(self.tokens) else (None, None)

    def take(self):
        tok = self.peek()
        if tok[0] is None:
            raise TargetSyntaxError("guard ended unexpectedly", self.line)
        self.pos += 1
        return tok

    def parse(self):
        expr = self.disjunction()
        if self.pos != len(self.tokens):
            raise TargetSyntaxError(f"trailing tokens in guard: {self.peek()[1]!r}", self.line)
        return expr

    def disjunction(self):
        items = [self.conjunction()]
        while self.peek() == ("word", "or"):
            self.take()
            items.append(self.conjunction())
        return items[0] if len(items) == 1 else Or(tuple(items))

    def conjunction(self):
        items = [self.unary()]
        while self.peek() == ("word", "and"):
            self.take()
            items.append(self.unary())
        return items[0] if len(items) == 1 else And(tuple(items))

    def unary(self):
        if self.peek() == ("word", "not"):
            self.take()
            return Not(self.unary())
        if self.peek() == ("paren", "("):
            self.take()
            expr = self.disjunction()
            if self.take() != ("paren", ")"):
                raise TargetSyntaxError("expected ')'", self.line)
            return expr
        left = self.operand()
        kind, op = self.take()
        if kind != "op":
            raise TargetSyntaxError(f"expected comparison operator, got {op!r}", self.line)
        return Compare(op, left, self.operand())

    def operand(self):
        kind, text = self.take()
        if kind == "num":
            return Const(int(text, 0))
        if kind == "read":
            name, off = text.split("[")
            return Read(name, int(off.rstrip("]").strip()))
        raise TargetSyntaxError(f"expected operand, got {text!r}", self.line)


def parse_guard(text: str, line: int = 0):
    return _GuardParser(text, line).parse()


# ---------------------------------------------------------------------------
# programs


@dataclass(frozen=True)
class BlockDef:
    block_id: str
    is_crash: bool = False
    edges: tuple = ()  # ((guard, dest), ...)


@dataclass(frozen=True, eq=False)
class TargetProgram:
    """A validated guarded-CFG program.

    ``blocks`` keeps declaration order; that order defines the block index
    used by bitsets, logs and compiled code.
    """

    blocks: Mapping[str, BlockDef]
    init: str
    input_len_max: int = 256
    initial_constraint: object = None
    name: str = ""
    _compiled: list = field(default_factory=list, repr=False, compare=False)

    def __post_init__(self):
        if self.init not in self.blocks:
            raise TargetSyntaxError(f"init block {self.init!r} is not declared")
        for block in self.blocks.values():
            for i, (guard, dest) in enumerate(block.edges):
                if dest not in self.blocks:
                    raise TargetSyntaxError(f"unknown destination {dest!r} in block {block.block_id!r}")
                if guard is ELSE and i != len(block.edges) - 1:
                    raise TargetSyntaxError(f"'else' must be the last edge of block {block.block_id!r}")

    @property
    def block_ids(self) -> list[str]:
        return list(self.blocks)

    @property
    def index(self) -> dict[str, int]:
        return {b: i for i, b in enumerate(self.blocks)}

    @property
    def crash_blocks(self) -> list[str]:
        return [b for b, d in self.blocks.items() if d.is_crash]

    def admits(self, data: bytes) -> bool:
        """Whether ``data`` satisfies the initial constraint (always true if none)."""
        return self.initial_constraint is None or bool(self.initial_constraint.eval(data))

    def __eq__(self, other):
        if not isinstance(other, TargetProgram):
            return NotImplemented
        return (
            list(self.blocks.items()) == list(other.blocks.items())
            and self.init == other.init
            and self.input_len_max == other.input_len_max
            and self.initial_constraint == other.initial_constraint
        )

    def __hash__(self):
        return hash((tuple(self.blocks), self.init))

    def runner(self):
        """Compiled executor: ``run(data, step_limit) -> (path, termination)``.

        ``path`` is a tuple of block indices.  Built once per program.
        """
        if not self._compiled:
            self._compiled.append(_compile(self))
            self._compiled.append(_BatchRunner(self))
        return self._compiled[0]

    def batch_runner(self) -> "_BatchRunner":
        """Vectorised executor over a 2-D uint8 array of equal-length inputs."""
        self.runner()
        return self._compiled[1]


_BLOCK_RE = re.compile(r"^block\s+(?P<id>[A-Za-z_][\w.-]*)(?P<crash>\s+crash)?\s*\{\s*(?P<close>\})?$")
_EDGE_RE = re.compile(r"^(?:if\s+(?P<guard>.+?)|(?P<else>else))\s*->\s*(?P<dest>[A-Za-z_][\w.-]*)$")
_ID_RE = re.compile(r"^[A-Za-z_][\w.-]*$")


def parse_target(text: str, name: str = "") -> TargetProgram:
    """Parse target source into a validated program.

    Raises:
        TargetSyntaxError: with the offending line number for syntax
            errors, duplicate block ids and unknown destinations.
    """
    init = None
    init_line = 0
    constraint = None
    input_len_max = 256
    blocks: dict[str, BlockDef] = {}
    dest_lines: dict[tuple[str, str], int] = {}
    current = None  # [id, crash, edges, line]
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if current is not None:
            if line == "}":
                _close_block(blocks, dest_lines, current)
                current = None
                continue
            m = _EDGE_RE.match(line)
            if m is None:
                raise TargetSyntaxError(f"expected edge or '}}', got {line!r}", lineno)
            guard = ELSE if m.group("else") else parse_guard(m.group("guard"), lineno)
            if current[2] and current[2][-1][0] is ELSE:
                raise TargetSyntaxError("edge after 'else'", lineno)
            current[2].append((guard, m.group("dest"), lineno))
            continue
        words = line.split(None, 1)
        head = words[0]
        if head == "init":
            if init is not None:
                raise TargetSyntaxError("duplicate init", lineno)
            if len(words) != 2 or not _ID_RE.match(words[1].strip()):
                raise TargetSyntaxError("expected 'init <block-id>'", lineno)
            init, init_line = words[1].strip(), lineno
        elif head == "assume":
            if len(words) != 2:
                raise TargetSyntaxError("expected 'assume <guard>'", lineno)
            constraint = parse_guard(words[1], lineno)
        elif head == "maxlen":
            try:
                input_len_max = int(words[1])
            except (IndexError, ValueError):
                raise TargetSyntaxError("expected 'maxlen <int>'", lineno) from None
        elif head == "block":
            if init is None:
                raise TargetSyntaxError("'init' must precede blocks", lineno)
            m = _BLOCK_RE.match(line)
            if m is None:
                raise TargetSyntaxError(f"malformed block header {line!r}", lineno)
            current = [m.group("id"), bool(m.group("crash")), [], lineno]
            if m.group("close"):
                _close_block(blocks, dest_lines, current)
                current = None
        else:
            raise TargetSyntaxError(f"unexpected {line!r}", lineno)
    if current is not None:
        raise TargetSyntaxError(f"block {current[0]!r} is not closed", current[3])
    if init is None:
        raise TargetSyntaxError("missing 'init'")
    if not blocks:
        raise TargetSyntaxError("program declares no blocks")
    for (block_id, dest), line in sorted(dest_lines.items(), key=lambda kv: kv[1]):
        if dest not in blocks:
            raise TargetSyntaxError(f"unknown destination {dest!r}", line)
    if init not in blocks:
        raise TargetSyntaxError(f"unknown init block {init!r}", init_line)
    return TargetProgram(blocks, init, input_len_max, constraint, name)


def _close_block(blocks, dest_lines, current):
    block_id, crash, edges, lineno = current
    if block_id in blocks:
        raise TargetSyntaxError(f"duplicate block id {block_id!r}", lineno)
    for _, dest, line in edges:
        dest_lines.setdefault((block_id, dest), line)
    blocks[block_id] = BlockDef(block_id, crash, tuple((g, d) for g, d, _ in edges))


def to_source(program: TargetProgram) -> str:
    """Serialize a program; ``parse_target(to_source(p)) == p``."""
    out = [f"init {program.init}"]
    if program.input_len_max != 256:
        out.append(f"maxlen {program.input_len_max}")
    if program.initial_constraint is not None:
        out.append(f"assume {program.initial_constraint.source()}")
    for block in program.blocks.values():
        head = f"block {block.block_id}" + (" crash" if block.is_crash else "")
        if not block.edges:
            out.append(head + " {}")
            continue
        out.append(head + " {")
        for guard, dest in block.edges:
            lead = "else" if guard is ELSE else f"if {guard.source()}"
            out.append(f"  {lead} -> {dest}")
        out.append("}")
    return "\n".join(out) + "\n"


# ---------------------------------------------------------------------------
# execution


@dataclass(frozen=True)
class ExecutionTrace:
    block_seq: tuple
    crashed: bool
    termination: str

    @property
    def edge_seq(self) -> list[tuple[str, str]]:
        seq = self.block_seq
        return [(seq[i], seq[i + 1]) for i in range(len(seq) - 1)]


def interpret(program: TargetProgram, data: bytes, step_limit: int = DEFAULT_STEP_LIMIT) -> ExecutionTrace:
    """Reference tree-walking interpreter (slow; used as a test oracle)."""
    if step_limit < 1:
        raise ValueError("step_limit must be >= 1")
    data = bytes(data)
    cur = program.init
    seq = [cur]
    steps = 0
    while True:
        block = program.blocks[cur]
        if block.is_crash:
            return ExecutionTrace(tuple(seq), True, CRASH)
        if steps >= step_limit:
            return ExecutionTrace(tuple(seq), False, STEP_LIMIT)
        for guard, dest in block.edges:
            if guard.eval(data):
                cur = dest
                break
        else:
            return ExecutionTrace(tuple(seq), False, NO_MATCH)
        seq.append(cur)
        steps += 1


def execute(program: TargetProgram, data: bytes, step_limit: int = DEFAULT_STEP_LIMIT) -> ExecutionTrace:
    """Run ``program`` on ``data`` (first true guard wins; total)."""
    if step_limit < 1:
        raise ValueError("step_limit must be >= 1")
    path, term = program.runner()(bytes(data), step_limit)
    ids = program.block_ids
    return ExecutionTrace(tuple(ids[i] for i in path), term == CRASH, term)


def _compile(program: TargetProgram):
    """Generate a straight Python function for ``program``.

    Every operand the guards read is decoded once on entry; the body is an
    index dispatch loop.  Semantics match :func:`interpret` exactly.
    """
    index = program.index
    reads = sorted({r for b in program.blocks.values() for g, _ in b.edges for r in g.reads()},
                   key=lambda r: (r.offset, r.kind))
    need = max((r.end for r in reads), default=0)
    lines = ["def run(data, step_limit):"]
    if need:
        lines.append(f"    if len(data) < {need}:")
        lines.append(f"        data = data + bytes({need} - len(data))")
    for r in reads:
        if r.kind == "byte":
            expr = f"data[{r.offset}]"
        elif r.kind == "i8":
            expr = f"(data[{r.offset}] ^ 128) - 128"
        else:
            expr = f"_fb(data[{r.offset}:{r.end}], 'little', signed=True)"
        lines.append(f"    {r.py()} = {expr}")
    crash = [program.blocks[b].is_crash for b in program.blocks]
    lines.append(f"    cur = {index[program.init]}")
    lines.append("    path = [cur]")
    lines.append("    steps = 0")
    if crash[index[program.init]]:
        lines.append("    return (cur,), CRASH")
    lines.append("    while steps < step_limit:")
    first = True
    for b, block in program.blocks.items():
        if block.is_crash:
            continue
        kw = "if" if first else "elif"
        first = False
        lines.append(f"        {kw} cur == {index[b]}:")
        if not block.edges:
            lines.append("            return tuple(path), NO_MATCH")
            continue
        for i, (guard, dest) in enumerate(block.edges):
            if guard is ELSE:
                lines.append("            else:" if i else "            if True:")
            else:
                lines.append(f"            {'if' if i == 0 else 'elif'} {guard.py()}:")
            lines.append(f"                cur = {index[dest]}")
        if block.edges[-1][0] is not ELSE:
            lines.append("            else:")
            lines.append("                return tuple(path), NO_MATCH")
    lines.append("        path.append(cur)")
    lines.append("        steps += 1")
    lines.append("        if CRASHES[cur]:")
    lines.append("            return tuple(path), CRASH")
    lines.append("    return tuple(path), STEP_LIMIT")
    namespace = {
        "_fb": int.from_bytes,
        "CRASHES": tuple(crash),
        "CRASH": CRASH,
        "NO_MATCH": NO_MATCH,
        "STEP_LIMIT": STEP_LIMIT,
    }
    exec(compile("\n".join(lines), f"<target {program.name or program.init}>", "exec"), namespace)
    return namespace["run"]


# ---------------------------------------------------------------------------
# batched execution

TERM_RUNNING, TERM_NO_MATCH, TERM_CRASH, TERM_STEP_LIMIT, TERM_OVERFLOW = 0, 1, 2, 3, 4
TERM_NAMES = {TERM_NO_MATCH: NO_MATCH, TERM_CRASH: CRASH, TERM_STEP_LIMIT: STEP_LIMIT}


def _np_and(*items):
    return np.logical_and.reduce(np.broadcast_arrays(*items))


def _np_or(*items):
    return np.logical_or.reduce(np.broadcast_arrays(*items))


@dataclass(frozen=True)
class BatchResult:
    """Paths of a batch, each packed into one integer.

    ``codes[r]`` lists block indices ``b`` as base-``(n_blocks + 1)`` digits
    ``b + 1``, oldest first.  Rows whose path was too long to pack have
    ``term == TERM_OVERFLOW`` and must be run one by one.
    """

    codes: np.ndarray
    term: np.ndarray
    base: int

    def decode(self, code: int) -> tuple:
        return decode_path(int(code), self.base)


def decode_path(code: int, base: int) -> tuple:
    out = []
    while code:
        code, digit = divmod(code, base)
        out.append(digit - 1)
    return tuple(reversed(out))


def encode_path(path: Sequence[int], base: int) -> int:
    code = 0
    for b in path:
        code = code * base + b + 1
    return code


class _BatchRunner:
    """Evaluates every block's guards once per batch, then walks a table.

    ``dest[b, r]`` is the block row ``r`` moves to from ``b`` (-1: no guard
    holds), so the walk itself is pure integer indexing.
    """

    def __init__(self, program: TargetProgram):
        self.program = program
        index = program.index
        self.n_blocks = len(index)
        self.base = self.n_blocks + 1
        self.max_len = max(1, int(62 / math.log2(self.base)))
        self.init = index[program.init]
        self.crash = np.array([program.blocks[b].is_crash for b in program.blocks], dtype=bool)
        reads = sorted({r for b in program.blocks.values() for g, _ in b.edges for r in g.reads()},
                       key=lambda r: (r.offset, r.kind))
        self.need = max((r.end for r in reads), default=0)
        lits = [abs(c.value) for b in program.blocks.values() for g, _ in b.edges for c in _consts(g)]
        self.supported = all(v < 2**62 for v in lits)
        lines = ["def tables(X):", "    B = X.shape[0]", "    dest = np.full((%d, B), -1, dtype=np.int64)" % self.n_blocks]
        for r in reads:
            cols = [f"X[:, {r.offset + k}].astype(np.int64)" for k in range(r.end - r.offset)]
            if r.kind == "byte":
                expr = cols[0]
            else:
                bits = 8 * len(cols)
                packed = " | ".join(f"({c} << {8 * k})" for k, c in enumerate(cols))
                expr = f"(({packed}) ^ {1 << (bits - 1)}) - {1 << (bits - 1)}"
            lines.append(f"    {r.py()} = {expr}")
        for b, block in program.blocks.items():
            if block.is_crash or not block.edges:
                continue
            k = index[b]
            conds = ", ".join(f"np.broadcast_to({g.npy()}, (B,))" for g, _ in block.edges)
            dests = ", ".join(str(index[d]) for _, d in block.edges)
            lines.append(f"    dest[{k}] = np.select([{conds}], [{dests}], -1)")
        lines.append("    return dest")
        ns = {"np": np, "_and": _np_and, "_or": _np_or, "_not": np.logical_not}
        exec(compile("\n".join(lines), f"<batch {program.name or program.init}>", "exec"), ns)
        self._tables = ns["tables"]

    def __call__(self, X: np.ndarray, step_limit: int = DEFAULT_STEP_LIMIT) -> BatchResult:
        if X.ndim != 2:
            raise ValueError("expected a 2-D array of inputs")
        if step_limit < 1:
            raise ValueError("step_limit must be >= 1")
        B = X.shape[0]
        if X.shape[1] < self.need:
            X = np.pad(X, ((0, 0), (0, self.need - X.shape[1])))
        dest = self._tables(X)
        cur = np.full(B, self.init, dtype=np.int64)
        codes = np.full(B, self.init + 1, dtype=np.int64)
        term = np.zeros(B, dtype=np.int8)
        if self.crash[self.init]:
            term[:] = TERM_CRASH
            return BatchResult(codes, term, self.base)
        active = np.arange(B)
        steps = 0
        while active.size:
            if steps >= step_limit:
                term[active] = TERM_STEP_LIMIT
                break
            if steps + 2 > self.max_len:
                term[active] = TERM_OVERFLOW
                break
            nxt = dest[cur[active], active]
            stuck = nxt < 0
            term[active[stuck]] = TERM_NO_MATCH
            active, nxt = active[~stuck], nxt[~stuck]
            cur[active] = nxt
            codes[active] = codes[active] * self.base + nxt + 1
            crashed = self.crash[nxt]
            term[active[crashed]] = TERM_CRASH
            active = active[~crashed]
            steps += 1
        return BatchResult(codes, term, self.base)


def _consts(g):
    if isinstance(g, Const):
        yield g
    elif isinstance(g, Compare):
        yield from _consts(g.left)
        yield from _consts(g.right)
    elif isinstance(g, (And, Or)):
        for item in g.items:
            yield from _consts(item)
    elif isinstance(g, Not):
        yield from _consts(g.item)


def execute_batch(program: TargetProgram, inputs: np.ndarray, step_limit: int = DEFAULT_STEP_LIMIT
                  ) -> list[ExecutionTrace]:
    """Run equal-length inputs (rows of a uint8 array) and return their traces."""
    res = program.batch_runner()(np.asarray(inputs, dtype=np.uint8), step_limit)
    ids = program.block_ids
    out = []
    for r in range(len(res.codes)):
        if res.term[r] == TERM_OVERFLOW:
            out.append(execute(program, inputs[r].tobytes(), step_limit))
            continue
        path = res.decode(res.codes[r])
        name = TERM_NAMES[int(res.term[r])]
        out.append(ExecutionTrace(tuple(ids[i] for i in path), name == CRASH, name))
    return out


# ---------------------------------------------------------------------------
# static CFG


@dataclass(frozen=True)
class Cfg:
    blocks: tuple
    edges: frozenset

    @property
    def successors(self) -> dict[str, list[str]]:
        out = {b: [] for b in self.blocks}
        for src, dst in sorted(self.edges, key=lambda e: (self._order[e[0]], self._order[e[1]])):
            out[src].append(dst)
        return out

    @property
    def _order(self) -> dict[str, int]:
        return {b: i for i, b in enumerate(self.blocks)}

    def pre_dominants(self, block: str) -> set[str]:
        """Blocks that can move to ``block`` in one step."""
        return {src for src, dst in self.edges if dst == block}

    def with_edges(self, extra: Iterable[tuple[str, str]]) -> "Cfg":
        extra = set(extra)
        blocks = list(self.blocks)
        for src, dst in extra:
            for b in (src, dst):
                if b not in blocks:
                    blocks.append(b)
        return Cfg(tuple(blocks), self.edges | extra)


def build_cfg(program: TargetProgram) -> Cfg:
    edges = {(b, dest) for b, block in program.blocks.items() for _, dest in block.edges}
    return Cfg(tuple(program.blocks), frozenset(edges))


# ---------------------------------------------------------------------------
# bundled targets

_TARGET_FILES = {
    "motivating": "motivating.tgt",
    "deep-nest": "deep_nest.tgt",
    "figure3": "figure3.tgt",
}


def load_target(path) -> TargetProgram:
    from pathlib import Path

    path = Path(path)
    return parse_target(path.read_text(encoding="utf-8"), name=path.stem)


def demo_targets() -> dict[str, TargetProgram]:
    """The bundled demonstration programs keyed by name."""
    from importlib.resources import files

    root = files("heatfuzz") / "targets"
    return {
        name: parse_target((root / fname).read_text(encoding="utf-8"), name=name)
        for name, fname in _TARGET_FILES.items()
    }


def random_program(rng, n_blocks: int, max_out: int = 3, input_len: int = 8, crash_prob: float = 0.0,
                   acyclic: bool = True) -> TargetProgram:
    """Random guarded program over ``input_len`` bytes (test helper).

    ``rng`` is a :class:`random.Random`.  With ``acyclic`` every edge goes
    from a lower to a higher block index.
    """
    ids = [f"B{i}" for i in range(n_blocks)]
    blocks = {}
    for i, b in enumerate(ids):
        pool = ids[i + 1:] if acyclic else ids
        edges = []
        if pool:
            k = rng.randint(1, min(max_out, len(pool)))
            dests = rng.sample(pool, k)
            for j, dest in enumerate(dests):
                if j == len(dests) - 1 and rng.random() < 0.7:
                    edges.append((ELSE, dest))
                else:
                    op = rng.choice(_CMP_OPS)
                    edges.append((Compare(op, Read("byte", rng.randrange(input_len)), Const(rng.randrange(256))), dest))
        crash = i > 0 and rng.random() < crash_prob
        blocks[b] = BlockDef(b, crash, tuple(edges))
    return TargetProgram(blocks, ids[0], input_len)
