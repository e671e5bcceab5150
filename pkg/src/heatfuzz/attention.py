"""Attention classifier over mutated inputs, written directly in numpy.

The model predicts whether a mutated input covers one critical block.  Its
attention weights over byte positions, averaged per (seed, mutator), are the
heat maps that steer mutation.

Architecture, for an input of ``N`` byte tokens (PAD = 256 beyond the valid
length)::

    H0 = embed[x]                          N x D
    H1..H3 = relu(conv_k3(H_{l-1}))        N x D'   (same padding)
    e_i = u . H3_i + b_u + m[mut] + b_m + w_p * param + b_p     (-inf at PAD)
    alpha = softmax(e);  W = alpha / sum(alpha)
    logits = C . flatten_channel_major(W * H3) + c

Gradients are derived by hand; :func:`finite_difference_check` verifies them.
"""

from __future__ import annotations

import csv
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .mutation import ARITH_MAX, INTERESTING_8, MutatorId, apply_batch

__all__ = [
    "PAD",
    "VOCAB",
    "N_MUTATORS",
    "UntrainableBlock",
    "TrainingError",
    "CheckpointError",
    "EncodedSample",
    "Batch",
    "ModelParams",
    "TrainConfig",
    "TrainMetrics",
    "HeatMap",
    "param_norm",
    "encode",
    "stack",
    "build_dataset",
    "init_params",
    "forward",
    "forward_batch",
    "loss_and_grads",
    "train",
    "predict",
    "finite_difference_check",
    "extract_heatmap",
    "save_params",
    "load_params",
    "write_heatmap_csv",
    "read_heatmap_csv",
]

PAD = 256
VOCAB = 257
N_MUTATORS = len(MutatorId)

_MAGIC = b"HFZM"
_VERSION = 1


class UntrainableBlock(ValueError):
    """The records hold only one class for the requested block."""


class TrainingError(RuntimeError):
    pass


class CheckpointError(ValueError):
    pass


def param_norm(mutator: int, param: int, dict_size: int = 0) -> float:
    """Scale a mutation parameter into [0, 1]."""
    m = MutatorId(mutator)
    if m == MutatorId.BIT_FLIP1:
        return param / 8
    if m == MutatorId.BYTE_FLIP:
        return 0.0
    if m in (MutatorId.ARITH_PLUS, MutatorId.ARITH_MINUS):
        return param / ARITH_MAX
    if m == MutatorId.INTERESTING:
        return param / len(INTERESTING_8)
    if m == MutatorId.DICTIONARY:
        return param / max(dict_size, 1)
    return param / 255


# ---------------------------------------------------------------------------
# samples


@dataclass(frozen=True)
class EncodedSample:
    x: np.ndarray  # int64 tokens, length N
    mutator_token: int
    param_norm: float
    label: int
    valid_len: int

    def __post_init__(self):
        if self.label not in (0, 1):
            raise ValueError("label must be 0 or 1")
        if not 1 <= self.valid_len <= len(self.x):
            raise ValueError("valid_len must be in [1, N]")


def encode(data: bytes, mutator: int, pnorm: float, label: int, n: int) -> EncodedSample:
    if len(data) > n:
        raise ValueError(f"input of {len(data)} bytes exceeds N={n}")
    x = np.full(n, PAD, dtype=np.int64)
    x[:len(data)] = np.frombuffer(data, dtype=np.uint8)
    return EncodedSample(x, int(mutator), float(pnorm), int(label), len(data))


@dataclass
class Batch:
    """Column form of a list of samples."""

    x: np.ndarray
    mut: np.ndarray
    pnorm: np.ndarray
    label: np.ndarray
    valid_len: np.ndarray

    def __len__(self) -> int:
        return len(self.label)

    @property
    def valid(self) -> np.ndarray:
        return np.arange(self.x.shape[1])[None, :] < self.valid_len[:, None]

    def take(self, idx) -> "Batch":
        return Batch(self.x[idx], self.mut[idx], self.pnorm[idx], self.label[idx], self.valid_len[idx])


def stack(samples: Sequence[EncodedSample]) -> Batch:
    if not samples:
        raise ValueError("no samples")
    return Batch(
        np.stack([s.x for s in samples]),
        np.array([s.mutator_token for s in samples], dtype=np.int64),
        np.array([s.param_norm for s in samples], dtype=np.float64),
        np.array([s.label for s in samples], dtype=np.int64),
        np.array([s.valid_len for s in samples], dtype=np.int64),
    )


def _columns(records):
    """(parent, mutator, param, position, covers) of a log or a list of records.

    ``covers(block_index)`` returns the boolean label column for a block.
    """
    if hasattr(records, "covers_block"):
        return (np.frombuffer(records.parent_seed, dtype=np.int32).astype(np.int64),
                np.frombuffer(records.mutator, dtype=np.int8).astype(np.int64),
                np.frombuffer(records.param, dtype=np.int32).astype(np.int64),
                np.frombuffer(records.position, dtype=np.int32).astype(np.int64),
                records.covers_block)
    records = list(records)
    masks = [r.covered_blocks for r in records]
    return (np.array([r.parent_seed for r in records], dtype=np.int64),
            np.array([int(r.mutator) for r in records], dtype=np.int64),
            np.array([r.param for r in records], dtype=np.int64),
            np.array([r.position for r in records], dtype=np.int64),
            lambda b: np.array([(m >> b) & 1 for m in masks], dtype=bool))


def _replay(seeds: Mapping[int, bytes], parent, mut, pos, param, labels, dictionary, n: int) -> Batch:
    """Rebuild single-site inputs and encode them, truncated/padded to ``n``."""
    x = np.full((len(mut), n), PAD, dtype=np.int64)
    valid = np.zeros(len(mut), dtype=np.int64)
    for sid in np.unique(parent):
        rows = np.flatnonzero(parent == sid)
        seed = seeds[int(sid)]
        X = apply_batch(seed, mut[rows], pos[rows], param[rows], dictionary)[:, :n]
        x[rows, :X.shape[1]] = X
        valid[rows] = X.shape[1]
    pnorm = np.array([param_norm(int(m), int(a), len(dictionary)) for m, a in zip(mut, param)], dtype=np.float64)
    return Batch(x, mut.astype(np.int64), pnorm, np.asarray(labels, dtype=np.int64), valid)


def build_dataset(records, seeds: Mapping[int, bytes], target_block: int, rng: np.random.Generator,
                  dictionary: Sequence[bytes] = (), max_input_len: int = 256,
                  max_per_class: int | None = None) -> Batch:
    """Balanced training samples for ``target_block`` (a block index).

    Each single-site record is turned back into its mutated input by
    replaying the mutation on the parent seed; the label says whether the
    execution visited the target.  The majority class is undersampled to
    the minority count (optionally capped at ``max_per_class``) and the
    result is shuffled with ``rng``.

    Raises:
        UntrainableBlock: the single-site records contain only one class.
    """
    parent, mut, param, pos, covers = _columns(records)
    single = pos >= 0
    labels = covers(target_block)
    pos_idx = np.flatnonzero(single & labels)
    neg_idx = np.flatnonzero(single & ~labels)
    if len(pos_idx) == 0 or len(neg_idx) == 0:
        raise UntrainableBlock(
            f"block {target_block}: {len(pos_idx)} positive and {len(neg_idx)} negative records")
    k = min(len(pos_idx), len(neg_idx))
    if max_per_class is not None:
        k = min(k, max_per_class)
    chosen = np.concatenate([
        rng.choice(pos_idx, size=k, replace=False),
        rng.choice(neg_idx, size=k, replace=False),
    ])
    chosen = chosen[rng.permutation(len(chosen))]
    n = min(max(len(seeds[int(p)]) for p in np.unique(parent[chosen])), max_input_len)
    return _replay(seeds, parent[chosen], mut[chosen], pos[chosen], param[chosen],
                   labels[chosen], dictionary, n)


# ---------------------------------------------------------------------------
# parameters


_SHAPES = (
    "embed", "conv1_w", "conv1_b", "conv2_w", "conv2_b", "conv3_w", "conv3_b",
    "att_u_w", "att_u_b", "att_m", "att_m_b", "att_p_w", "att_p_b", "cls_w", "cls_b",
)


@dataclass
class ModelParams:
    """All weights, in checkpoint (declaration) order."""

    n: int
    d: int
    d_prime: int
    embed: np.ndarray
    conv1_w: np.ndarray
    conv1_b: np.ndarray
    conv2_w: np.ndarray
    conv2_b: np.ndarray
    conv3_w: np.ndarray
    conv3_b: np.ndarray
    att_u_w: np.ndarray
    att_u_b: np.ndarray
    att_m: np.ndarray
    att_m_b: np.ndarray
    att_p_w: np.ndarray
    att_p_b: np.ndarray
    cls_w: np.ndarray
    cls_b: np.ndarray

    names = _SHAPES

    def arrays(self) -> list[np.ndarray]:
        return [getattr(self, k) for k in _SHAPES]

    def copy(self) -> "ModelParams":
        return ModelParams(self.n, self.d, self.d_prime, *[a.copy() for a in self.arrays()])

    def zeros_like(self) -> "ModelParams":
        return ModelParams(self.n, self.d, self.d_prime, *[np.zeros_like(a) for a in self.arrays()])

    def size(self) -> int:
        return sum(a.size for a in self.arrays())

    def all_finite(self) -> bool:
        return all(np.isfinite(a).all() for a in self.arrays())


def init_params(n: int, d: int = 8, d_prime: int = 16, rng: np.random.Generator | None = None,
                zero: bool = False) -> ModelParams:
    """Uniform(-s, s) initialisation with ``s = 1/sqrt(fan_in)`` per layer."""
    rng = rng if rng is not None else np.random.default_rng(0)

    def u(shape, fan_in):
        if zero:
            return np.zeros(shape)
        s = 1.0 / math.sqrt(fan_in)
        return rng.uniform(-s, s, size=shape)

    return ModelParams(
        n, d, d_prime,
        embed=u((VOCAB, d), 1),
        conv1_w=u((d_prime, d, 3), 3 * d), conv1_b=u((d_prime,), 3 * d),
        conv2_w=u((d_prime, d_prime, 3), 3 * d_prime), conv2_b=u((d_prime,), 3 * d_prime),
        conv3_w=u((d_prime, d_prime, 3), 3 * d_prime), conv3_b=u((d_prime,), 3 * d_prime),
        att_u_w=u((d_prime,), d_prime), att_u_b=u((1,), d_prime),
        att_m=u((N_MUTATORS,), 1), att_m_b=u((1,), 1),
        att_p_w=u((1,), 1), att_p_b=u((1,), 1),
        cls_w=u((2, d_prime * n), d_prime * n), cls_b=u((2,), d_prime * n),
    )


# ---------------------------------------------------------------------------
# forward / backward


def _im2col(h: np.ndarray) -> np.ndarray:
    """(B, N, C) -> (B, N, 3C): each position with its left and right neighbours."""
    b, n, c = h.shape
    out = np.zeros((b, n, 3 * c))
    out[:, 1:, 0:c] = h[:, :-1]
    out[:, :, c:2 * c] = h
    out[:, :-1, 2 * c:] = h[:, 1:]
    return out


def _col2im(dcols: np.ndarray, c: int) -> np.ndarray:
    dh = dcols[..., c:2 * c].copy()
    dh[:, :-1] += dcols[:, 1:, 0:c]
    dh[:, 1:] += dcols[:, :-1, 2 * c:]
    return dh


def _conv_matrix(w: np.ndarray) -> np.ndarray:
    """(Cout, Cin, 3) kernel -> (3*Cin, Cout) matrix matching :func:`_im2col`."""
    return w.transpose(2, 1, 0).reshape(-1, w.shape[0])


def _softmax_rows(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    ez = np.exp(z)
    return ez / ez.sum(axis=-1, keepdims=True)


def forward_batch(params: ModelParams, batch: Batch, keep: bool = False):
    """Logits (B, 2) and attention (B, N); with ``keep`` also the backward cache."""
    x = batch.x
    h = params.embed[x]
    cache = {"h0": h}
    for layer in (1, 2, 3):
        w = getattr(params, f"conv{layer}_w")
        b = getattr(params, f"conv{layer}_b")
        cols = _im2col(h)
        z = cols @ _conv_matrix(w) + b
        h = np.maximum(z, 0.0)
        cache[f"cols{layer}"] = cols
        cache[f"z{layer}"] = z
    u = h
    e = (u @ params.att_u_w + params.att_u_b[0]
         + (params.att_m[batch.mut] + params.att_m_b[0] + params.att_p_w[0] * batch.pnorm + params.att_p_b[0])[:, None])
    valid = batch.valid
    e = np.where(valid, e, -np.inf)
    alpha = _softmax_rows(e)
    s = alpha.sum(axis=1, keepdims=True)
    wgt = alpha / s  # the explicit renormalisation; an identity after softmax
    masked = wgt[:, :, None] * u
    flat = masked.transpose(0, 2, 1).reshape(len(x), -1)
    logits = flat @ params.cls_w.T + params.cls_b
    if keep:
        cache.update(u=u, alpha=alpha, s=s, wgt=wgt, flat=flat)
        return logits, alpha, cache
    return logits, alpha


def forward(params: ModelParams, sample: EncodedSample) -> tuple[np.ndarray, np.ndarray]:
    """Logits (2,) and attention weights (N,) for one sample."""
    logits, alpha = forward_batch(params, stack([sample]))
    return logits[0], alpha[0]


def _cross_entropy(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    loss = -float(logp[np.arange(len(labels)), labels].mean())
    dlogits = np.exp(logp)
    dlogits[np.arange(len(labels)), labels] -= 1.0
    return loss, dlogits / len(labels)


def loss_and_grads(params: ModelParams, batch: Batch) -> tuple[float, ModelParams]:
    """Mean cross-entropy over ``batch`` and its gradient for every parameter."""
    logits, alpha, c = forward_batch(params, batch, keep=True)
    loss, dlogits = _cross_entropy(logits, batch.label)
    g = params.zeros_like()
    bsz, n = batch.x.shape
    dp = params.d_prime

    g.cls_w = dlogits.T @ c["flat"]
    g.cls_b = dlogits.sum(axis=0)
    dmasked = (dlogits @ params.cls_w).reshape(bsz, dp, n).transpose(0, 2, 1)
    u, wgt, s = c["u"], c["wgt"], c["s"]
    dwgt = (dmasked * u).sum(axis=2)
    du = dmasked * wgt[:, :, None]
    dalpha = (dwgt - (dwgt * wgt).sum(axis=1, keepdims=True)) / s
    de = alpha * (dalpha - (dalpha * alpha).sum(axis=1, keepdims=True))

    g.att_u_w = np.einsum("bn,bnc->c", de, u)
    g.att_u_b = np.array([de.sum()])
    de_row = de.sum(axis=1)
    g.att_m = np.bincount(batch.mut, weights=de_row, minlength=N_MUTATORS)
    g.att_m_b = np.array([de_row.sum()])
    g.att_p_w = np.array([(de_row * batch.pnorm).sum()])
    g.att_p_b = np.array([de_row.sum()])
    du = du + de[:, :, None] * params.att_u_w

    dh = du
    for layer in (3, 2, 1):
        w = getattr(params, f"conv{layer}_w")
        dz = dh * (c[f"z{layer}"] > 0)
        cols = c[f"cols{layer}"]
        cin = w.shape[1]
        dmat = cols.reshape(-1, 3 * cin).T @ dz.reshape(-1, w.shape[0])
        setattr(g, f"conv{layer}_w", dmat.reshape(3, cin, w.shape[0]).transpose(2, 1, 0))
        setattr(g, f"conv{layer}_b", dz.sum(axis=(0, 1)))
        dh = _col2im(dz @ _conv_matrix(w).T, cin)
    flat_x = batch.x.ravel()
    flat_dh = dh.reshape(-1, dh.shape[2])
    g.embed = np.stack([np.bincount(flat_x, weights=flat_dh[:, j], minlength=VOCAB)
                        for j in range(flat_dh.shape[1])], axis=1)
    return loss, g


# ---------------------------------------------------------------------------
# training


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    epochs: int = 60
    batch_size: int = 256
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    holdout: float = 0.2
    seed: int = 0
    embed_dim: int = 8
    channels: int = 16

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not 0 < self.holdout < 1:
            raise ValueError("holdout must be in (0, 1)")
        if self.batch_size < 1 or self.learning_rate <= 0:
            raise ValueError("batch_size and learning_rate must be positive")


@dataclass
class TrainMetrics:
    train_acc: float
    holdout_acc: float
    loss_curve: list[float] = field(default_factory=list)
    n_train: int = 0
    n_holdout: int = 0


class _Adam:
    def __init__(self, params: ModelParams, cfg: TrainConfig):
        self.cfg = cfg
        self.m = params.zeros_like()
        self.v = params.zeros_like()
        self.t = 0

    def step(self, params: ModelParams, grads: ModelParams) -> None:
        cfg = self.cfg
        self.t += 1
        corr1 = 1 - cfg.beta1 ** self.t
        corr2 = 1 - cfg.beta2 ** self.t
        for name in _SHAPES:
            p, gr = getattr(params, name), getattr(grads, name)
            m, v = getattr(self.m, name), getattr(self.v, name)
            m *= cfg.beta1
            m += (1 - cfg.beta1) * gr
            v *= cfg.beta2
            v += (1 - cfg.beta2) * gr * gr
            p -= cfg.learning_rate * (m / corr1) / (np.sqrt(v / corr2) + cfg.adam_eps)


def predict(params: ModelParams, batch: Batch, chunk: int = 1024) -> np.ndarray:
    out = []
    for i in range(0, len(batch), chunk):
        logits, _ = forward_batch(params, batch.take(slice(i, i + chunk)))
        out.append(logits.argmax(axis=1))
    return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)


def train(dataset: Sequence[EncodedSample] | Batch, config: TrainConfig = TrainConfig(),
          params: ModelParams | None = None) -> tuple[ModelParams, TrainMetrics]:
    """Fit the classifier with Adam on cross-entropy.

    A ``holdout`` fraction of the shuffled data is kept aside for the
    reported held-out accuracy.  Results depend only on the data and
    ``config.seed``.

    Raises:
        TrainingError: the loss became NaN or infinite.
    """
    data = dataset if isinstance(dataset, Batch) else stack(list(dataset))
    total = len(data)
    if total < 2:
        raise ValueError("need at least two samples")
    rng = np.random.default_rng(config.seed)
    order = rng.permutation(total)
    n_hold = min(max(1, int(round(config.holdout * total))), total - 1)
    hold, tr = data.take(order[:n_hold]), data.take(order[n_hold:])
    n = data.x.shape[1]
    if params is None:
        params = init_params(n, config.embed_dim, config.channels, rng)
    opt = _Adam(params, config)
    curve = []
    for epoch in range(config.epochs):
        perm = rng.permutation(len(tr))
        losses = []
        for i in range(0, len(tr), config.batch_size):
            idx = perm[i:i + config.batch_size]
            loss, grads = loss_and_grads(params, tr.take(idx))
            if not math.isfinite(loss):
                raise TrainingError(
                    f"loss became {loss} at epoch {epoch}: learning_rate={config.learning_rate}, "
                    f"parameters finite={params.all_finite()}, batch={len(idx)}")
            opt.step(params, grads)
            losses.append(loss * len(idx))
        curve.append(sum(losses) / len(tr))
    train_acc = float((predict(params, tr) == tr.label).mean())
    hold_acc = float((predict(params, hold) == hold.label).mean())
    return params, TrainMetrics(train_acc, hold_acc, curve, len(tr), len(hold))


# ---------------------------------------------------------------------------
# gradient check


def _flat_views(params: ModelParams) -> list[tuple[str, int]]:
    return [(name, i) for name in _SHAPES for i in range(getattr(params, name).size)]


def _relu_pattern(params: ModelParams, batch: Batch) -> tuple:
    _, _, c = forward_batch(params, batch, keep=True)
    return tuple((c[f"z{k}"] > 0).tobytes() for k in (1, 2, 3))


def finite_difference_check(params: ModelParams, sample: EncodedSample | Batch, epsilon: float = 1e-5,
                            n_checks: int = 200, rng: np.random.Generator | None = None,
                            floor: float = 1e-6) -> float:
    """Largest relative gap between analytic and central-difference gradients.

    ``n_checks`` coordinates are drawn at random (all of them if the model is
    smaller).  The relative error is ``|a - f| / max(|a| + |f|, floor)``; the
    floor keeps coordinates whose true gradient is zero from dividing
    rounding noise by itself.  A coordinate whose perturbation flips some
    ReLU on or off is skipped and redrawn, since the loss is not
    differentiable across that kink.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    batch = sample if isinstance(sample, Batch) else stack([sample])
    _, grads = loss_and_grads(params, batch)
    coords = _flat_views(params)
    order = rng.permutation(len(coords))
    base = _relu_pattern(params, batch)
    worst = 0.0
    checked = 0
    for k in order:
        if checked >= n_checks:
            break
        name, i = coords[k]
        arr = getattr(params, name).reshape(-1)
        old = arr[i]
        arr[i] = old + epsilon
        lp, _ = loss_and_grads(params, batch)
        kink = _relu_pattern(params, batch) != base
        arr[i] = old - epsilon
        lm, _ = loss_and_grads(params, batch)
        kink = kink or _relu_pattern(params, batch) != base
        arr[i] = old
        if kink:
            continue
        fd = (lp - lm) / (2 * epsilon)
        an = getattr(grads, name).reshape(-1)[i]
        worst = max(worst, abs(an - fd) / max(abs(an) + abs(fd), floor))
        checked += 1
    return worst


# ---------------------------------------------------------------------------
# heat maps


@dataclass(frozen=True)
class HeatMap:
    seed_id: int
    mutator: MutatorId
    heat: np.ndarray
    valid_len: int

    def mass(self, positions: Iterable[int]) -> float:
        return float(sum(self.heat[p] for p in positions))


def extract_heatmap(params: ModelParams, seed_id: int, mutator: int,
                    samples: Sequence[EncodedSample] | Batch) -> HeatMap | None:
    """Mean attention over all inputs generated from ``seed_id`` with ``mutator``.

    Returns None when there is nothing to average.
    """
    if not isinstance(samples, Batch):
        if not samples:
            return None
        samples = stack(list(samples))
    if len(samples) == 0:
        return None
    total = np.zeros(samples.x.shape[1])
    for i in range(0, len(samples), 1024):
        _, alpha = forward_batch(params, samples.take(slice(i, i + 1024)))
        total += alpha.sum(axis=0)
    heat = total / len(samples)
    valid_len = int(samples.valid_len.max())
    heat[valid_len:] = 0.0
    return HeatMap(seed_id, MutatorId(mutator), heat, valid_len)


def pair_samples(records, seeds: Mapping[int, bytes], seed_id: int, mutator: int, n: int,
                 dictionary: Sequence[bytes] = (), limit: int | None = None,
                 rng: np.random.Generator | None = None) -> Batch:
    """Reconstructed single-site inputs of one (seed, mutator) pair (label 0 placeholder)."""
    parent, mut, param, pos, _ = _columns(records)
    idx = np.flatnonzero((parent == seed_id) & (mut == mutator) & (pos >= 0))
    if limit is not None and len(idx) > limit:
        rng = rng if rng is not None else np.random.default_rng(0)
        idx = np.sort(rng.choice(idx, size=limit, replace=False))
    return _replay(seeds, parent[idx], mut[idx], pos[idx], param[idx], np.zeros(len(idx)), dictionary, n)


# ---------------------------------------------------------------------------
# persistence


def save_params(params: ModelParams, path) -> None:
    """Header (magic, version, N, D, D', mutator count) then float64 arrays."""
    header = _MAGIC + struct.pack("<5I", _VERSION, params.n, params.d, params.d_prime, N_MUTATORS)
    body = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for a in params.arrays())
    Path(path).write_bytes(header + body)


def load_params(path) -> ModelParams:
    raw = Path(path).read_bytes()
    if raw[:4] != _MAGIC:
        raise CheckpointError("not a heatfuzz model checkpoint")
    if len(raw) < 24:
        raise CheckpointError("truncated header")
    version, n, d, dp, n_mut = struct.unpack("<5I", raw[4:24])
    if version != _VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    if n_mut != N_MUTATORS:
        raise CheckpointError(f"checkpoint has {n_mut} mutators, expected {N_MUTATORS}")
    template = init_params(n, d, dp, zero=True)
    offset = 24
    arrays = []
    for a in template.arrays():
        size = a.size * 8
        if offset + size > len(raw):
            raise CheckpointError("truncated parameter data")
        arrays.append(np.frombuffer(raw, dtype="<f8", count=a.size, offset=offset).reshape(a.shape).astype(np.float64))
        offset += size
    if offset != len(raw):
        raise CheckpointError("trailing bytes after parameter data")
    return ModelParams(n, d, dp, *arrays)


def write_heatmap_csv(hm: HeatMap, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["position", "heat"])
        for i, h in enumerate(hm.heat):
            w.writerow([i, f"{h:.12g}"])


def read_heatmap_csv(path, seed_id: int, mutator: int) -> HeatMap:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    heat = np.array([float(r["heat"]) for r in rows])
    nz = np.flatnonzero(heat)
    valid = int(nz[-1]) + 1 if len(nz) else len(heat)
    return HeatMap(seed_id, MutatorId(mutator), heat, valid)
