"""Length-preserving AFL-style mutators.

Every mutator rewrites bytes in place of the original ones, so the output
always has the input's length and byte positions keep their meaning
across mutations (the heat maps rely on that).
"""

from __future__ import annotations

import enum
from pathlib import Path
from typing import Callable, Iterator, NamedTuple, Sequence

import numpy as np

__all__ = [
    "MutatorId",
    "Mutation",
    "MutationError",
    "INTERESTING_8",
    "ARITH_MAX",
    "apply_mutation",
    "footprint",
    "param_count",
    "deterministic_schedule",
    "schedule_length",
    "havoc_step",
    "HavocBatch",
    "havoc_batch",
    "GUIDED_HAVOC",
    "schedule_arrays",
    "apply_batch",
    "load_dictionary",
    "save_dictionary",
]

ARITH_MAX = 35
INTERESTING_8 = (-128, -1, 0, 1, 16, 32, 64, 100, 127)


class MutatorId(enum.IntEnum):
    BIT_FLIP1 = 0
    BYTE_FLIP = 1
    ARITH_PLUS = 2
    ARITH_MINUS = 3
    INTERESTING = 4
    DICTIONARY = 5
    RANDOM_BYTE = 6

    @property
    def label(self) -> str:
        return _LABELS[self]

    @classmethod
    def from_label(cls, text: str) -> "MutatorId":
        text = text.strip()
        for m, label in _LABELS.items():
            if text == label or text.upper() == m.name:
                return m
        if text.isdigit():
            return cls(int(text))
        raise ValueError(f"unknown mutator {text!r}")


_LABELS = {
    MutatorId.BIT_FLIP1: "bitflip",
    MutatorId.BYTE_FLIP: "byteflip",
    MutatorId.ARITH_PLUS: "arth+",
    MutatorId.ARITH_MINUS: "arth-",
    MutatorId.INTERESTING: "interesting",
    MutatorId.DICTIONARY: "dictionary",
    MutatorId.RANDOM_BYTE: "random",
}

_N_MUTATORS = len(MutatorId)
_MAX_REDRAWS = 1000
_BY_CODE = tuple(MutatorId)


class Mutation(NamedTuple):
    mutator: MutatorId
    position: int
    param: int


class MutationError(ValueError):
    pass


def param_count(mutator: MutatorId, dictionary: Sequence[bytes] = ()) -> int:
    """Size of the parameter range of ``mutator``."""
    if mutator == MutatorId.BIT_FLIP1:
        return 8
    if mutator == MutatorId.BYTE_FLIP:
        return 1
    if mutator in (MutatorId.ARITH_PLUS, MutatorId.ARITH_MINUS):
        return ARITH_MAX
    if mutator == MutatorId.INTERESTING:
        return len(INTERESTING_8)
    if mutator == MutatorId.DICTIONARY:
        return len(dictionary)
    return 256


def _params(mutator: MutatorId, dictionary: Sequence[bytes]) -> range:
    if mutator in (MutatorId.ARITH_PLUS, MutatorId.ARITH_MINUS):
        return range(1, ARITH_MAX + 1)
    return range(param_count(mutator, dictionary))


def apply_mutation(seed: bytes, m: Mutation, dictionary: Sequence[bytes] = ()) -> bytes:
    """Apply one mutation and return the new input; ``seed`` is untouched.

    Raises:
        MutationError: position or parameter out of range, or a dictionary
            token that would run past the end of the input.
    """
    mutator, pos, param = MutatorId(m[0]), m[1], m[2]
    if not 0 <= pos < len(seed):
        raise MutationError(f"position {pos} outside input of length {len(seed)}")
    out = bytearray(seed)
    if mutator == MutatorId.BIT_FLIP1:
        if not 0 <= param < 8:
            raise MutationError(f"bit index {param} out of range")
        out[pos] ^= 1 << param
    elif mutator == MutatorId.BYTE_FLIP:
        out[pos] ^= 0xFF
    elif mutator == MutatorId.ARITH_PLUS:
        if not 1 <= param <= ARITH_MAX:
            raise MutationError(f"arith delta {param} out of range")
        out[pos] = (out[pos] + param) & 0xFF
    elif mutator == MutatorId.ARITH_MINUS:
        if not 1 <= param <= ARITH_MAX:
            raise MutationError(f"arith delta {param} out of range")
        out[pos] = (out[pos] - param) & 0xFF
    elif mutator == MutatorId.INTERESTING:
        if not 0 <= param < len(INTERESTING_8):
            raise MutationError(f"interesting index {param} out of range")
        out[pos] = INTERESTING_8[param] & 0xFF
    elif mutator == MutatorId.DICTIONARY:
        if not 0 <= param < len(dictionary):
            raise MutationError(f"dictionary index {param} out of range")
        token = dictionary[param]
        if pos + len(token) > len(seed):
            raise MutationError("dictionary token runs past the end of the input")
        out[pos:pos + len(token)] = token
    else:
        if not 0 <= param < 256:
            raise MutationError(f"byte value {param} out of range")
        out[pos] = param
    return bytes(out)


def footprint(m: Mutation, dictionary: Sequence[bytes] = ()) -> range:
    width = len(dictionary[m.param]) if m.mutator == MutatorId.DICTIONARY else 1
    return range(m.position, m.position + width)


def deterministic_schedule(seed: bytes | int, dictionary: Sequence[bytes] = ()) -> Iterator[Mutation]:
    """Every (mutator, position, parameter) in catalog order.

    ``seed`` may be the input itself or just its length.  Dictionary
    tokens are only scheduled where they fit.
    """
    n = seed if isinstance(seed, int) else len(seed)
    for mutator in MutatorId:
        params = _params(mutator, dictionary)
        for pos in range(n):
            for param in params:
                if mutator == MutatorId.DICTIONARY and pos + len(dictionary[param]) > n:
                    continue
                yield Mutation(mutator, pos, param)


def schedule_length(n: int, dictionary: Sequence[bytes] = ()) -> int:
    """Closed form of ``len(list(deterministic_schedule(n, dictionary)))``."""
    per_pos = 8 + 1 + 2 * ARITH_MAX + len(INTERESTING_8) + 256
    fits = sum(max(0, n - len(tok) + 1) for tok in dictionary)
    return n * per_pos + fits


def havoc_step(seed: bytes, rng, dictionary: Sequence[bytes] = (),
               gate: Callable[[int, int], bool] | None = None,
               max_stack: int = 8, guided: str = "skip") -> tuple[bytes, list[Mutation]]:
    """Stack 1..``max_stack`` random single-site mutations.

    ``rng`` is a :class:`random.Random`.  ``gate(mutator, position)`` may
    veto a position.  With ``guided="skip"`` a vetoed mutation is dropped;
    with ``"redirect"`` the position is redrawn, and dropped only after
    ``_MAX_REDRAWS`` vetoes in a row.  The returned list holds the
    mutations actually applied and may be empty.
    """
    n = len(seed)
    if n < 1:
        raise MutationError("havoc needs a non-empty seed")
    rand = rng.random
    out = bytearray(seed)
    done: list[Mutation] = []
    fits = [i for i, tok in enumerate(dictionary) if 0 < len(tok) <= n]
    n_mut = _N_MUTATORS if fits else _N_MUTATORS - 1
    for _ in range(1 + int(rand() * max_stack)):
        mut = int(rand() * n_mut)
        if not fits and mut >= MutatorId.DICTIONARY:
            mut += 1
        if mut == MutatorId.DICTIONARY:
            param = fits[int(rand() * len(fits))]
            span = n - len(dictionary[param]) + 1
        else:
            span = n
        pos = int(rand() * span)
        if gate is not None:
            for _attempt in range(_MAX_REDRAWS if guided == "redirect" else 1):
                if gate(mut, pos):
                    break
                pos = int(rand() * span)
            else:
                continue
        if mut == 0:
            param = int(rand() * 8)
            out[pos] ^= 1 << param
        elif mut == 1:
            param = 0
            out[pos] ^= 0xFF
        elif mut == 2:
            param = 1 + int(rand() * ARITH_MAX)
            out[pos] = (out[pos] + param) & 0xFF
        elif mut == 3:
            param = 1 + int(rand() * ARITH_MAX)
            out[pos] = (out[pos] - param) & 0xFF
        elif mut == 4:
            param = int(rand() * 9)
            out[pos] = INTERESTING_8[param] & 0xFF
        elif mut == 5:
            token = dictionary[param]
            out[pos:pos + len(token)] = token
        else:
            param = int(rand() * 256)
            out[pos] = param
        done.append(Mutation(_BY_CODE[mut], pos, param))
    return bytes(out), done


# ---------------------------------------------------------------------------
# batched forms (numpy); the scalar functions above are their reference


_INTERESTING_BYTES = np.array([v & 0xFF for v in INTERESTING_8], dtype=np.uint8)


def schedule_arrays(n: int, dictionary: Sequence[bytes] = ()) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``deterministic_schedule(n, dictionary)`` as (mutator, position, param) columns."""
    muts, poss, pars = [], [], []
    for mutator in MutatorId:
        params = np.array(_params(mutator, dictionary), dtype=np.int32)
        if mutator == MutatorId.DICTIONARY:
            rows = [(p, k) for p in range(n) for k in range(len(dictionary)) if p + len(dictionary[k]) <= n]
            pos = np.array([r[0] for r in rows], dtype=np.int32)
            par = np.array([r[1] for r in rows], dtype=np.int32)
        else:
            pos = np.repeat(np.arange(n, dtype=np.int32), len(params))
            par = np.tile(params, n)
        muts.append(np.full(len(pos), int(mutator), dtype=np.int8))
        poss.append(pos)
        pars.append(par)
    return np.concatenate(muts), np.concatenate(poss), np.concatenate(pars)


def _apply_rows(X: np.ndarray, rows: np.ndarray, mut: np.ndarray, pos: np.ndarray, param: np.ndarray,
                dictionary: Sequence[bytes]) -> None:
    """In-place: row ``rows[i]`` of ``X`` gets mutation ``(mut[i], pos[i], param[i])``."""
    if len(rows) == 0:
        return
    old = X[rows, pos].astype(np.int64)
    new = np.select(
        [mut == 0, mut == 1, mut == 2, mut == 3, mut == 4, mut == 6],
        [old ^ (1 << np.clip(param, 0, 7)), old ^ 0xFF, old + param, old - param,
         _INTERESTING_BYTES[np.clip(param, 0, len(INTERESTING_8) - 1)], param],
        old,
    )
    X[rows, pos] = (new & 0xFF).astype(np.uint8)
    is_dict = np.flatnonzero(mut == MutatorId.DICTIONARY)
    for k in np.unique(param[is_dict]) if len(is_dict) else ():
        sel = is_dict[param[is_dict] == k]
        tok = np.frombuffer(dictionary[int(k)], dtype=np.uint8)
        cols = pos[sel][:, None] + np.arange(len(tok))
        X[rows[sel][:, None], cols] = tok


def apply_batch(seed: bytes, mut, pos, param, dictionary: Sequence[bytes] = ()) -> np.ndarray:
    """One single-site child of ``seed`` per row; inputs are assumed valid."""
    mut = np.asarray(mut, dtype=np.int64)
    pos = np.asarray(pos, dtype=np.int64)
    param = np.asarray(param, dtype=np.int64)
    X = np.tile(np.frombuffer(seed, dtype=np.uint8), (len(mut), 1))
    _apply_rows(X, np.arange(len(mut)), mut, pos, param, dictionary)
    return X


class HavocBatch(NamedTuple):
    """Children of one seed plus the mutation stack of each.

    ``mut[r, s]`` is -1 where slot ``s`` of row ``r`` applied nothing.
    """

    X: np.ndarray
    mut: np.ndarray
    pos: np.ndarray
    param: np.ndarray

    @property
    def applied(self) -> np.ndarray:
        return (self.mut >= 0).sum(axis=1)

    def first(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(mutator, position, param) of each row's first applied mutation."""
        slot = np.argmax(self.mut >= 0, axis=1)
        r = np.arange(len(slot))
        return self.mut[r, slot], self.pos[r, slot], self.param[r, slot]

    def stack(self, row: int) -> list[Mutation]:
        return [Mutation(_BY_CODE[m], int(p), int(a))
                for m, p, a in zip(self.mut[row], self.pos[row], self.param[row]) if m >= 0]


GUIDED_HAVOC = ("skip", "redirect")


def _position_cdfs(n: int, dictionary: Sequence[bytes], fits, protected, p_hot: float):
    """Cumulative position weights per mutator and per dictionary token.

    Unprotected positions weigh 1 and protected ones ``p_hot``; a token
    start is protected when any byte the token overwrites is.
    """
    cdf = {}
    for m in range(_N_MUTATORS):
        if m != MutatorId.DICTIONARY:
            cdf[m] = np.cumsum(np.where(protected[m], p_hot, 1.0))
    dmask = protected[MutatorId.DICTIONARY]
    for k in fits:
        starts = np.lib.stride_tricks.sliding_window_view(dmask, len(dictionary[k])).any(axis=1)
        cdf[("tok", int(k))] = np.cumsum(np.where(starts, p_hot, 1.0))
    return cdf


def havoc_batch(seed: bytes, rng: np.random.Generator, count: int, dictionary: Sequence[bytes] = (),
                protected: np.ndarray | None = None, p_hot: float = 1.0, max_stack: int = 8,
                guided: str = "skip") -> HavocBatch:
    """``count`` stacked-havoc children of ``seed``.

    Mirrors :func:`havoc_step`: 1..``max_stack`` mutations per child, each
    with a uniform mutator (dictionary only when some token fits) and a
    position.  Without ``protected`` (a mutators x len(seed) boolean mask)
    positions are uniform.  With it, ``guided="redirect"`` draws positions
    with weight ``p_hot`` for protected bytes and 1 for the rest (the
    distribution of redrawing until :func:`should_mutate_position` style
    acceptance), while ``guided="skip"`` keeps the uniform draw and drops a
    protected mutation unless a ``p_hot`` coin says otherwise.  A mutation
    with nowhere to go is dropped, so rows may end up with no mutation.
    """
    if guided not in GUIDED_HAVOC:
        raise ValueError(f"guided must be one of {GUIDED_HAVOC}")
    n = len(seed)
    if n < 1:
        raise MutationError("havoc needs a non-empty seed")
    fits = np.array([i for i, tok in enumerate(dictionary) if 0 < len(tok) <= n], dtype=np.int64)
    n_mut = _N_MUTATORS if len(fits) else _N_MUTATORS - 1
    tok_len = np.array([len(t) for t in dictionary] or [1], dtype=np.int64)
    cdf = None
    if protected is not None:
        cdf = _position_cdfs(n, dictionary, fits, protected, p_hot)
    X = np.tile(np.frombuffer(seed, dtype=np.uint8), (count, 1))
    depth = 1 + rng.integers(0, max_stack, size=count)
    M = np.full((count, max_stack), -1, dtype=np.int8)
    P = np.zeros((count, max_stack), dtype=np.int32)
    A = np.zeros((count, max_stack), dtype=np.int32)
    for s in range(max_stack):
        rows = np.flatnonzero(depth > s)
        if len(rows) == 0:
            break
        k = len(rows)
        mut = rng.integers(0, n_mut, size=k)
        if not len(fits):
            mut[mut >= MutatorId.DICTIONARY] += 1
        is_dict = mut == MutatorId.DICTIONARY
        param = np.select(
            [mut == 0, mut == 1, (mut == 2) | (mut == 3), mut == 4, mut == 6],
            [rng.integers(0, 8, size=k), 0, rng.integers(1, ARITH_MAX + 1, size=k),
             rng.integers(0, len(INTERESTING_8), size=k), rng.integers(0, 256, size=k)],
            0,
        )
        if is_dict.any():
            param[is_dict] = fits[rng.integers(0, len(fits), size=int(is_dict.sum()))]
        u = rng.random(k)
        keep = np.ones(k, dtype=bool)
        if cdf is None or guided == "skip":
            span = np.where(is_dict, n - tok_len[np.where(is_dict, param, 0)] + 1, n)
            pos = (u * span).astype(np.int64)
            if cdf is not None:
                hot = protected[np.where(is_dict, 0, mut), pos]
                for t in np.unique(param[is_dict]) if is_dict.any() else ():
                    sel = np.flatnonzero(is_dict & (param == t))
                    L = len(dictionary[int(t)])
                    hot[sel] = [protected[MutatorId.DICTIONARY, p:p + L].any() for p in pos[sel]]
                keep = ~hot | (rng.random(k) < p_hot)
        else:
            pos = np.zeros(k, dtype=np.int64)
            keys = np.where(is_dict, -1 - param, mut)
            for key in np.unique(keys):
                sel = np.flatnonzero(keys == key)
                c = cdf[("tok", int(-1 - key))] if key < 0 else cdf[int(key)]
                if c[-1] <= 0:
                    keep[sel] = False
                    continue
                pos[sel] = np.minimum(np.searchsorted(c, u[sel] * c[-1], side="right"), len(c) - 1)
        rows, mut, pos, param = rows[keep], mut[keep], pos[keep], param[keep]
        _apply_rows(X, rows, mut, pos, param, dictionary)
        M[rows, s] = mut
        P[rows, s] = pos
        A[rows, s] = param
    return HavocBatch(X, M, P, A)


def load_dictionary(path) -> list[bytes]:
    """One token per line; ``\\xNN`` escapes for non-printable bytes."""
    tokens = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        if not line or line.startswith("#"):
            continue
        try:
            token = line.encode("latin-1").decode("unicode_escape").encode("latin-1")
        except (UnicodeError, ValueError) as exc:
            raise MutationError(f"{path}:{lineno}: bad token escape ({exc})") from None
        if not token:
            raise MutationError(f"{path}:{lineno}: empty token")
        tokens.append(token)
    return tokens


def save_dictionary(tokens: Sequence[bytes], path) -> None:
    lines = []
    for tok in tokens:
        lines.append("".join(chr(b) if 0x20 < b < 0x7F and b != 0x5C else f"\\x{b:02x}" for b in tok))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
