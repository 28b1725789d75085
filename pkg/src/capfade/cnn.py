"""A small 1-D convolutional regressor written directly against numpy.

Layer stack: [conv -> ReLU -> max-pool] * stages -> flatten -> dropout
-> [dense -> ReLU -> dropout] * hidden -> dense(1). Convolutions are
same-length with zero padding and use the flipped-kernel convention
``y[n] = sum_k x[n - k] w[k]`` for ``k = -p..p``.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import _kernels
from .errors import CapfadeError, InvalidArgument, TrainingFailure
from .rng import substream


@dataclass(frozen=True)
class ConvStage:
    kernel: int = 3
    channels: int = 8
    pool: int = 2


@dataclass(frozen=True)
class CnnArch:
    input_length: int
    conv_stages: tuple[ConvStage, ...] = (ConvStage(3, 8, 2), ConvStage(3, 16, 2))
    # site 0: flattened conv features, site 1: every hidden dense output
    dropout: tuple[float, float] = (0.1, 0.1)
    dense: tuple[int, ...] = (32, 1)

    def __post_init__(self):
        object.__setattr__(self, "conv_stages", tuple(
            s if isinstance(s, ConvStage) else ConvStage(*s) for s in self.conv_stages
        ))
        object.__setattr__(self, "dropout", tuple(float(r) for r in self.dropout))
        object.__setattr__(self, "dense", tuple(int(w) for w in self.dense))
        if self.input_length < 1:
            raise InvalidArgument("input_length must be >= 1")
        if not self.dense or self.dense[-1] != 1:
            raise InvalidArgument("dense widths must end with a single output")
        if len(self.dropout) != 2 or not all(0 <= r < 1 for r in self.dropout):
            raise InvalidArgument("dropout must be two rates in [0, 1)")
        m = self.input_length
        for s in self.conv_stages:
            if s.kernel < 1 or s.kernel % 2 == 0:
                raise InvalidArgument(f"kernel width must be odd, got {s.kernel}")
            if s.kernel > m:
                raise InvalidArgument(f"kernel width {s.kernel} exceeds input length {m}")
            if s.channels < 1 or s.pool < 1:
                raise InvalidArgument("channels and pool width must be >= 1")
            m //= s.pool
            if m < 1:
                raise InvalidArgument("pooling shrinks the series to zero length")

    def flat_size(self) -> int:
        m, c = self.input_length, 1
        for s in self.conv_stages:
            m //= s.pool
            c = s.channels
        return m * c

    def without_dropout(self) -> "CnnArch":
        return CnnArch(self.input_length, self.conv_stages, (0.0, 0.0), self.dense)

    def to_dict(self) -> dict:
        return {
            "input_length": self.input_length,
            "conv_stages": [asdict(s) for s in self.conv_stages],
            "dropout": list(self.dropout),
            "dense": list(self.dense),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CnnArch":
        return cls(
            d["input_length"],
            tuple(ConvStage(**s) for s in d["conv_stages"]),
            tuple(d["dropout"]),
            tuple(d["dense"]),
        )


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 700
    learning_rate: float = 0.01
    momentum: float = 0.9
    batch_size: int = 16
    validation_fraction: float = 0.2
    seed: int = 0
    input_scale: float = 1.0

    def __post_init__(self):
        if self.epochs < 1:
            raise InvalidArgument("epochs must be >= 1")
        if not 0 < self.validation_fraction < 1:
            raise InvalidArgument("validation_fraction must lie in (0, 1)")
        if self.batch_size < 1 or self.learning_rate <= 0:
            raise InvalidArgument("batch_size and learning_rate must be positive")
        if self.input_scale <= 0:
            raise InvalidArgument("input_scale must be > 0")


Params = dict[str, np.ndarray]


def init_params(arch: CnnArch, rng: np.random.Generator) -> Params:
    """He-normal weights, zero biases."""
    p: Params = {}
    c_in = 1
    for i, s in enumerate(arch.conv_stages):
        fan_in = c_in * s.kernel
        p[f"conv{i}.w"] = rng.normal(0.0, np.sqrt(2.0 / fan_in), (s.channels, c_in, s.kernel))
        p[f"conv{i}.b"] = np.zeros(s.channels)
        c_in = s.channels
    width = arch.flat_size()
    for i, out in enumerate(arch.dense):
        p[f"dense{i}.w"] = rng.normal(0.0, np.sqrt(2.0 / width), (out, width))
        p[f"dense{i}.b"] = np.zeros(out)
        width = out
    return p


def zero_params(arch: CnnArch) -> Params:
    return {k: np.zeros_like(v) for k, v in init_params(arch, np.random.default_rng(0)).items()}


@dataclass
class _Cache:
    conv_in: list = field(default_factory=list)
    conv_pre: list = field(default_factory=list)
    pool_idx: list = field(default_factory=list)
    pool_len: list = field(default_factory=list)
    flat_shape: tuple = ()
    drop0: np.ndarray | None = None
    dense_in: list = field(default_factory=list)
    dense_pre: list = field(default_factory=list)
    drop1: list = field(default_factory=list)


def _dropout_mask(shape, rate, rng) -> np.ndarray | None:
    if rate <= 0 or rng is None:
        return None
    keep = rng.random(shape) >= rate
    return keep / (1.0 - rate)


def forward_batch(arch: CnnArch, params: Params, x, train: bool = False,
                  rng: np.random.Generator | None = None):
    """Predictions for a batch ``x`` of shape (batch, input_length).

    Returns ``(y, cache)``; dropout is applied only when ``train`` is true.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[1] != arch.input_length:
        raise InvalidArgument(
            f"expected rows of length {arch.input_length}, got shape {x.shape}"
        )
    cache = _Cache()
    drng = rng if train else None
    h = x[:, None, :]
    for i, s in enumerate(arch.conv_stages):
        cache.conv_in.append(h)
        z = _kernels.conv1d_forward(h, params[f"conv{i}.w"], params[f"conv{i}.b"])
        cache.conv_pre.append(z)
        a = np.maximum(z, 0.0)
        m = a.shape[2]
        mp = m // s.pool
        cache.pool_len.append(m)
        if s.pool == 1:
            cache.pool_idx.append(None)
            h = a
        else:
            win = a[:, :, : mp * s.pool].reshape(a.shape[0], a.shape[1], mp, s.pool)
            idx = win.argmax(axis=3)
            cache.pool_idx.append(idx)
            h = np.take_along_axis(win, idx[..., None], axis=3)[..., 0]
    cache.flat_shape = h.shape
    h = h.reshape(h.shape[0], -1)
    mask = _dropout_mask(h.shape, arch.dropout[0], drng)
    cache.drop0 = mask
    if mask is not None:
        h = h * mask
    n_dense = len(arch.dense)
    for i in range(n_dense):
        cache.dense_in.append(h)
        z = h @ params[f"dense{i}.w"].T + params[f"dense{i}.b"]
        if i == n_dense - 1:
            h = z
            break
        cache.dense_pre.append(z)
        h = np.maximum(z, 0.0)
        mask = _dropout_mask(h.shape, arch.dropout[1], drng)
        cache.drop1.append(mask)
        if mask is not None:
            h = h * mask
    return h[:, 0], cache


def backward_batch(arch: CnnArch, params: Params, cache: _Cache, grad_out) -> Params:
    """Parameter gradients given d(loss)/d(output) for each batch row."""
    grads: Params = {}
    g = np.asarray(grad_out, dtype=float)[:, None]
    n_dense = len(arch.dense)
    for i in reversed(range(n_dense)):
        if i < n_dense - 1:
            mask = cache.drop1[i]
            if mask is not None:
                g = g * mask
            g = g * (cache.dense_pre[i] > 0)
        h = cache.dense_in[i]
        grads[f"dense{i}.w"] = g.T @ h
        grads[f"dense{i}.b"] = g.sum(axis=0)
        g = g @ params[f"dense{i}.w"]
    if cache.drop0 is not None:
        g = g * cache.drop0
    g = g.reshape(cache.flat_shape)
    for i in reversed(range(len(arch.conv_stages))):
        s = arch.conv_stages[i]
        z = cache.conv_pre[i]
        if s.pool == 1:
            ga = g
        else:
            idx = cache.pool_idx[i]
            batch, ch, mp = idx.shape
            ga = np.zeros_like(z)
            win = np.zeros((batch, ch, mp, s.pool))
            np.put_along_axis(win, idx[..., None], g[..., None], axis=3)
            ga[:, :, : mp * s.pool] = win.reshape(batch, ch, mp * s.pool)
        gz = ga * (z > 0)
        gx, gw, gb = _kernels.conv1d_backward(cache.conv_in[i], params[f"conv{i}.w"], gz)
        grads[f"conv{i}.w"] = gw
        grads[f"conv{i}.b"] = gb
        g = gx
    return grads


def activation_pattern(cache: _Cache) -> bytes:
    """Fingerprint of every ReLU gate and pooling choice in a forward pass."""
    parts = [(z > 0).tobytes() for z in cache.conv_pre]
    parts += [idx.tobytes() for idx in cache.pool_idx if idx is not None]
    parts += [(z > 0).tobytes() for z in cache.dense_pre]
    return b"".join(parts)


@dataclass
class CnnModel:
    arch: CnnArch
    params: Params
    target_scale: float = 1.0
    input_scale: float = 1.0
    best_epoch: int = 0
    best_val_mae: float = float("inf")
    history: list[tuple[int, float, float]] = field(default_factory=list)

    def predict(self, rows) -> np.ndarray:
        x = np.atleast_2d(np.asarray(rows, dtype=float)) / self.input_scale
        y, _ = forward_batch(self.arch, self.params, x, train=False)
        return y * self.target_scale


def forward(model: CnnModel, x, mode: str = "infer", rng: np.random.Generator | None = None):
    """Single-row prediction in cycles; ``mode='train'`` also returns the cache."""
    if mode not in ("train", "infer"):
        raise InvalidArgument("mode must be 'train' or 'infer'")
    row = np.asarray(x, dtype=float)
    if row.ndim != 1:
        raise InvalidArgument("forward takes a single 1-D row")
    y, cache = forward_batch(
        model.arch, model.params, row[None, :] / model.input_scale, mode == "train", rng
    )
    out = float(y[0] * model.target_scale)
    return (out, cache) if mode == "train" else out


def _validation_split(n: int, fraction: float, rng) -> tuple[np.ndarray, np.ndarray]:
    order = rng.permutation(n)
    n_val = min(max(1, int(round(fraction * n))), n - 1)
    return np.sort(order[: n - n_val]), np.sort(order[n - n_val:])


def train(rows, targets, arch: CnnArch, cfg: TrainConfig = TrainConfig(),
          validation: tuple | None = None,
          on_epoch: Callable[[int, float, float], None] | None = None) -> CnnModel:
    """Momentum-SGD training on scaled MSE with a best-validation snapshot.

    ``validation=(rows, targets)`` supplies an explicit checkpoint set; by
    default a seeded ``validation_fraction`` of the rows is held out.
    """
    x = np.atleast_2d(np.asarray(rows, dtype=float)) / cfg.input_scale
    y = np.asarray(targets, dtype=float)
    if len(x) < 2 or len(y) != len(x):
        raise InvalidArgument("need >= 2 rows with one target each")
    if x.shape[1] != arch.input_length:
        raise InvalidArgument(f"rows have {x.shape[1]} features, arch expects {arch.input_length}")
    scale = float(np.max(np.abs(y))) or 1.0
    ys = y / scale
    if validation is None:
        tr, va = _validation_split(len(x), cfg.validation_fraction, substream(cfg.seed, "cnn-split"))
        x_val, y_val = x[va], y[va]
    else:
        tr = np.arange(len(x))
        x_val = np.atleast_2d(np.asarray(validation[0], dtype=float)) / cfg.input_scale
        y_val = np.asarray(validation[1], dtype=float)
    params = init_params(arch, substream(cfg.seed, "cnn-init"))
    velocity = {k: np.zeros_like(v) for k, v in params.items()}
    shuffle = substream(cfg.seed, "cnn-shuffle")
    drop = substream(cfg.seed, "cnn-dropout")

    model = CnnModel(arch, {k: v.copy() for k, v in params.items()}, scale, cfg.input_scale)
    for epoch in range(1, cfg.epochs + 1):
        order = tr[shuffle.permutation(len(tr))]
        total = 0.0
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            pred, cache = forward_batch(arch, params, x[idx], train=True, rng=drop)
            resid = pred - ys[idx]
            total += float(np.sum(resid * resid))
            grads = backward_batch(arch, params, cache, 2.0 * resid / len(idx))
            for k in params:
                velocity[k] = cfg.momentum * velocity[k] - cfg.learning_rate * grads[k]
                params[k] = params[k] + velocity[k]
        train_loss = total / len(tr)
        if not np.isfinite(train_loss):
            raise TrainingFailure(epoch)
        val_pred, _ = forward_batch(arch, params, x_val, train=False)
        val_mae = float(np.mean(np.abs(val_pred * scale - y_val)))
        if not np.isfinite(val_mae):
            raise TrainingFailure(epoch, "non-finite validation error")
        model.history.append((epoch, train_loss, val_mae))
        if val_mae < model.best_val_mae:
            model.best_val_mae = val_mae
            model.best_epoch = epoch
            model.params = {k: v.copy() for k, v in params.items()}
        if on_epoch is not None:
            on_epoch(epoch, train_loss, val_mae)
    return model


@dataclass
class GradCheckReport:
    passed: bool
    max_rel_error: float
    checked: int
    excluded: list[tuple[str, tuple[int, ...]]]
    worst: tuple[str, tuple[int, ...]] | None = None


def loss_and_grads(arch: CnnArch, params: Params, x, target):
    """Squared error 0.5 * (f(x) - t)^2 for a single row, and its gradients."""
    pred, cache = forward_batch(arch, params, np.asarray(x, dtype=float)[None, :])
    r = pred[0] - target
    return 0.5 * r * r, backward_batch(arch, params, cache, np.array([r])), cache


def gradient_check(arch: CnnArch, x, target: float, tolerance: float = 1e-4,
                   params: Params | None = None, seed: int = 0, step: float = 1e-5,
                   grad_fn: Callable[[CnnArch, Params, np.ndarray, float], Params] | None = None
                   ) -> GradCheckReport:
    """Compare backprop gradients against central finite differences.

    Coordinates whose +/- step perturbation flips a ReLU gate or a pooling
    choice sit on a kink; they are listed in ``excluded`` instead of scored.
    """
    arch = arch.without_dropout()
    x = np.asarray(x, dtype=float)
    if params is None:
        params = init_params(arch, substream(seed, "gradcheck"))
    params = {k: v.copy() for k, v in params.items()}
    if grad_fn is None:
        analytic = loss_and_grads(arch, params, x, target)[1]
    else:
        analytic = grad_fn(arch, params, x, target)
    excluded, worst_err, worst, checked = [], 0.0, None, 0
    for name, arr in params.items():
        for pos in np.ndindex(arr.shape):
            orig = arr[pos]
            arr[pos] = orig + step
            lp, _, cp = loss_and_grads(arch, params, x, target)
            arr[pos] = orig - step
            lm, _, cm = loss_and_grads(arch, params, x, target)
            arr[pos] = orig
            if activation_pattern(cp) != activation_pattern(cm):
                excluded.append((name, pos))
                continue
            numeric = (lp - lm) / (2.0 * step)
            a = analytic[name][pos]
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-7)
            checked += 1
            if err > worst_err:
                worst_err, worst = err, (name, pos)
    return GradCheckReport(worst_err < tolerance, worst_err, checked, excluded, worst)


MAGIC = b"CAPFADEW"
FORMAT_VERSION = 1


class SnapshotError(CapfadeError, ValueError):
    pass


def save_model(path, model: CnnModel) -> None:
    """Write ``MAGIC | version | sha256(payload) | payload`` where payload is an npz."""
    meta = {
        "arch": model.arch.to_dict(),
        "target_scale": model.target_scale,
        "input_scale": model.input_scale,
        "best_epoch": model.best_epoch,
        "best_val_mae": model.best_val_mae,
    }
    buf = io.BytesIO()
    np.savez(buf, __meta__=np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8),
             **model.params)
    payload = buf.getvalue()
    with Path(path).open("wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<H", FORMAT_VERSION))
        fh.write(hashlib.sha256(payload).digest())
        fh.write(payload)


def load_model(path) -> CnnModel:
    raw = Path(path).read_bytes()
    head = len(MAGIC) + 2 + 32
    if len(raw) < head or raw[: len(MAGIC)] != MAGIC:
        raise SnapshotError("not a capfade weight snapshot")
    (version,) = struct.unpack("<H", raw[len(MAGIC): len(MAGIC) + 2])
    if version != FORMAT_VERSION:
        raise SnapshotError(f"unsupported snapshot version {version}")
    digest, payload = raw[len(MAGIC) + 2: head], raw[head:]
    if hashlib.sha256(payload).digest() != digest:
        raise SnapshotError("snapshot checksum mismatch")
    with np.load(io.BytesIO(payload), allow_pickle=False) as npz:
        meta = json.loads(npz["__meta__"].tobytes().decode())
        params = {k: npz[k] for k in npz.files if k != "__meta__"}
    return CnnModel(
        CnnArch.from_dict(meta["arch"]), params, meta["target_scale"], meta["input_scale"],
        meta["best_epoch"], meta["best_val_mae"],
    )


def write_history_csv(path, model: CnnModel) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "val_mae"])
        for epoch, loss, mae in model.history:
            w.writerow([epoch, repr(float(loss)), repr(float(mae))])
