"""Compact reference CNN with hand-written backprop and the mixup/MixAugment losses.

Topology (NHWC throughout)::

    conv3x3(8) + ReLU + maxpool2
    conv3x3(16) + ReLU + maxpool2
    flatten -> dense(64) + ReLU -> [inverted dropout, train only] -> dense(K) -> softmax

Convolutions use zero "same" padding and are computed by im2col.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .augment import Batch, MixBatch
from .errors import ArgumentError, DimensionError, DomainError, LoadError, NumericError
from .numerics import Rng

LOG_FLOOR = 1e-12
SIMPLEX_TOL = 1e-6

PARAM_NAMES = (
    "conv1_w", "conv1_b",
    "conv2_w", "conv2_b",
    "dense1_w", "dense1_b",
    "dense2_w", "dense2_b",
)
CONV1_OUT = 8
CONV2_OUT = 16
HIDDEN = 64


def param_shapes(height: int, width: int, channels: int, classes: int) -> dict[str, tuple[int, ...]]:
    flat = (height // 4) * (width // 4) * CONV2_OUT
    if flat == 0:
        raise DimensionError(f"input {height}x{width} is too small for two 2x2 pools")
    return {
        "conv1_w": (3, 3, channels, CONV1_OUT),
        "conv1_b": (CONV1_OUT,),
        "conv2_w": (3, 3, CONV1_OUT, CONV2_OUT),
        "conv2_b": (CONV2_OUT,),
        "dense1_w": (flat, HIDDEN),
        "dense1_b": (HIDDEN,),
        "dense2_w": (HIDDEN, classes),
        "dense2_b": (classes,),
    }


@dataclass
class NetworkParams:
    """Weights of the reference CNN for a fixed input size and class count."""

    height: int
    width: int
    channels: int
    classes: int
    tensors: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        shapes = self.shapes()
        if not self.tensors:
            self.tensors = {k: np.zeros(s) for k, s in shapes.items()}
        if tuple(self.tensors) != PARAM_NAMES:
            self.tensors = {k: self.tensors[k] for k in PARAM_NAMES}
        for k, s in shapes.items():
            t = np.ascontiguousarray(self.tensors[k], dtype=np.float64)
            if t.shape != s:
                raise DimensionError(f"{k}: expected shape {s}, got {t.shape}")
            if not np.all(np.isfinite(t)):
                raise NumericError(f"{k}: non-finite parameter")
            self.tensors[k] = t

    def shapes(self):
        return param_shapes(self.height, self.width, self.channels, self.classes)

    @property
    def arch(self) -> tuple[int, int, int, int]:
        return (self.height, self.width, self.channels, self.classes)

    def __getitem__(self, name):
        return self.tensors[name]

    def items(self):
        return self.tensors.items()

    def copy(self):
        return type(self)(*self.arch, {k: v.copy() for k, v in self.items()})

    def like(self, tensors: dict[str, np.ndarray]):
        return type(self)(*self.arch, tensors)

    def num_values(self) -> int:
        return sum(v.size for v in self.tensors.values())


class GradientSet(NetworkParams):
    """One gradient tensor per parameter tensor, same shapes."""

    def check_congruent(self, params: NetworkParams) -> None:
        if self.arch != params.arch:
            raise DimensionError(f"gradient arch {self.arch} does not match params {params.arch}")


def init_params(height: int, width: int, channels: int, classes: int, rng: Rng) -> NetworkParams:
    """He-normal weights, zero biases."""
    tensors = {}
    for name, shape in param_shapes(height, width, channels, classes).items():
        if name.endswith("_b"):
            tensors[name] = np.zeros(shape)
        else:
            fan_in = int(np.prod(shape[:-1]))
            tensors[name] = rng.normal(shape) * np.sqrt(2.0 / fan_in)
    return NetworkParams(height, width, channels, classes, tensors)


# ---- layers ---------------------------------------------------------------

def _im2col(x):
    b, h, w, c = x.shape
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    win = sliding_window_view(xp, (3, 3), axis=(1, 2))  # B,H,W,C,3,3
    return win.transpose(0, 1, 2, 4, 5, 3).reshape(b * h * w, 9 * c)


def _col2im(dcols, shape):
    b, h, w, c = shape
    d = dcols.reshape(b, h, w, 3, 3, c)
    dxp = np.zeros((b, h + 2, w + 2, c))
    for i in range(3):
        for j in range(3):
            dxp[:, i:i + h, j:j + w, :] += d[:, :, :, i, j, :]
    return dxp[:, 1:-1, 1:-1, :]


def _conv(x, weight, bias):
    b, h, w, _ = x.shape
    cols = _im2col(x)
    out = cols @ weight.reshape(-1, weight.shape[-1]) + bias
    return out.reshape(b, h, w, -1), cols


def _pool(x):
    # idx records which of the four window slots won (first max on ties)
    ho, wo = x.shape[1] // 2, x.shape[2] // 2
    q = [x[:, a:2 * ho:2, b:2 * wo:2, :] for a in (0, 1) for b in (0, 1)]
    out = np.maximum(np.maximum(q[0], q[1]), np.maximum(q[2], q[3]))
    idx = np.full(out.shape, 3, dtype=np.int8)
    for k in (2, 1, 0):
        idx[q[k] == out] = k
    return out, idx


def _unpool(dout, idx, shape):
    ho, wo = shape[1] // 2, shape[2] // 2
    dx = np.zeros(shape)
    for k, (a, b) in enumerate(((0, 0), (0, 1), (1, 0), (1, 1))):
        dx[:, a:2 * ho:2, b:2 * wo:2, :] = np.where(idx == k, dout, 0.0)
    return dx


def softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _finite(name, arr):
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite activation in layer {name}")
    return arr


@dataclass
class ForwardTrace:
    """Cached activations of one forward pass; ``probs`` is B x K."""

    input_shape: tuple
    cols1: np.ndarray
    z1: np.ndarray
    idx1: np.ndarray
    cols2: np.ndarray
    z2: np.ndarray
    idx2: np.ndarray
    flat: np.ndarray
    h: np.ndarray
    mask: np.ndarray | None
    hd: np.ndarray
    logits: np.ndarray
    probs: np.ndarray
    arch: tuple = ()


def forward(params: NetworkParams, images, mode: str = "eval", dropout_rate: float = 0.0,
            rng: Rng | None = None) -> ForwardTrace:
    if mode not in ("train", "eval"):
        raise ArgumentError(f"mode must be 'train' or 'eval', got {mode!r}")
    if not 0.0 <= dropout_rate < 1.0:
        raise DomainError(f"dropout_rate must lie in [0, 1), got {dropout_rate}")
    x = np.asarray(images, dtype=np.float64)
    h, w, c, _ = params.arch
    if x.ndim != 4 or x.shape[1:] != (h, w, c):
        raise DimensionError(f"images {x.shape} do not match network input (B, {h}, {w}, {c})")

    with np.errstate(over="ignore", invalid="ignore"):
        z1, cols1 = _conv(x, params["conv1_w"], params["conv1_b"])
        p1, idx1 = _pool(np.maximum(_finite("conv1", z1), 0.0))
        z2, cols2 = _conv(p1, params["conv2_w"], params["conv2_b"])
        p2, idx2 = _pool(np.maximum(_finite("conv2", z2), 0.0))
        flat = p2.reshape(x.shape[0], -1)
        hid = _finite("dense1", flat @ params["dense1_w"] + params["dense1_b"])
    a = np.maximum(hid, 0.0)
    mask = None
    if mode == "train" and dropout_rate > 0.0:
        if rng is None:
            raise ArgumentError("train-mode dropout needs an Rng")
        mask = (rng.uniform(a.shape) >= dropout_rate) / (1.0 - dropout_rate)
        a = a * mask
    with np.errstate(over="ignore", invalid="ignore"):
        logits = _finite("dense2", a @ params["dense2_w"] + params["dense2_b"])
    probs = softmax(logits)
    return ForwardTrace(x.shape, cols1, z1, idx1, cols2, z2, idx2, flat, hid, mask, a, logits, probs,
                        params.arch)


def predict(params: NetworkParams, images, chunk: int = 256) -> np.ndarray:
    """Eval-mode class probabilities, computed in fixed-size chunks."""
    images = np.asarray(images, dtype=np.float64)
    out = [forward(params, images[s:s + chunk]).probs for s in range(0, images.shape[0], chunk)]
    return np.concatenate(out, axis=0)


def _backprop(params: NetworkParams, tr: ForwardTrace, dlogits) -> dict[str, np.ndarray]:
    if tr.arch != params.arch:
        raise DimensionError(f"trace arch {tr.arch} does not match params {params.arch}")
    g = {}
    g["dense2_w"] = tr.hd.T @ dlogits
    g["dense2_b"] = dlogits.sum(axis=0)
    da = dlogits @ params["dense2_w"].T
    if tr.mask is not None:
        da = da * tr.mask
    dh = da * (tr.h > 0)
    g["dense1_w"] = tr.flat.T @ dh
    g["dense1_b"] = dh.sum(axis=0)
    dflat = dh @ params["dense1_w"].T

    b = tr.input_shape[0]
    s1 = tr.z1.shape
    s2 = tr.z2.shape
    dp2 = dflat.reshape(b, s2[1] // 2, s2[2] // 2, s2[3])
    dz2 = _unpool(dp2, tr.idx2, s2) * (tr.z2 > 0)
    dz2f = dz2.reshape(-1, s2[3])
    g["conv2_w"] = (tr.cols2.T @ dz2f).reshape(params["conv2_w"].shape)
    g["conv2_b"] = dz2f.sum(axis=0)
    dcols2 = dz2f @ params["conv2_w"].reshape(-1, s2[3]).T
    dp1 = _col2im(dcols2, (b, s1[1] // 2, s1[2] // 2, s1[3]))
    dz1 = _unpool(dp1, tr.idx1, s1) * (tr.z1 > 0)
    dz1f = dz1.reshape(-1, s1[3])
    g["conv1_w"] = (tr.cols1.T @ dz1f).reshape(params["conv1_w"].shape)
    g["conv1_b"] = dz1f.sum(axis=0)
    return g


# ---- losses ---------------------------------------------------------------

def _check_simplex(name, rows):
    rows = np.asarray(rows, dtype=np.float64)
    if rows.ndim != 2:
        raise DimensionError(f"{name} must be B x K, got {rows.shape}")
    if np.any(rows < -SIMPLEX_TOL) or np.any(np.abs(rows.sum(axis=1) - 1.0) > SIMPLEX_TOL):
        raise ArgumentError(f"{name}: rows are not on the probability simplex")
    return rows


def cce_loss(probs, soft_labels) -> float:
    """Batch-mean categorical cross entropy, log argument floored at 1e-12."""
    p = _check_simplex("probs", probs)
    y = _check_simplex("soft_labels", soft_labels)
    if p.shape != y.shape:
        raise DimensionError(f"probs {p.shape} vs labels {y.shape}")
    return float(-(y * np.log(np.maximum(p, LOG_FLOOR))).sum(axis=1).mean())


def cce_logit_grad(probs, labels) -> np.ndarray:
    """d cce_loss / d logits, exact for the floored loss."""
    live = probs > LOG_FLOOR
    ym = labels * live
    return (probs * ym.sum(axis=1, keepdims=True) - ym) / probs.shape[0]


def _check_lambda(lam):
    lam = float(lam)
    if not 0.0 <= lam <= 1.0:
        raise DomainError(f"lambda must lie in [0, 1], got {lam}")
    return lam


def mixaugment_loss_sum(probs_v, probs_i, probs_j, labels_i, labels_j, lam) -> float:
    """Virtual-sample CCE plus the CCE of both real sources, unweighted."""
    lam = _check_lambda(lam)
    yi = _check_simplex("labels_i", labels_i)
    yj = _check_simplex("labels_j", labels_j)
    soft = lam * yi + (1.0 - lam) * yj
    return cce_loss(probs_v, soft) + cce_loss(probs_i, yi) + cce_loss(probs_j, yj)


def mixaugment_loss_factored(probs_v, probs_i, probs_j, labels_i, labels_j, lam) -> float:
    """Same quantity as :func:`mixaugment_loss_sum`, as -E[y_i.log(p_i p_v^lam) + y_j.log(p_j p_v^(1-lam))]."""
    lam = _check_lambda(lam)
    pv = np.maximum(_check_simplex("probs_v", probs_v), LOG_FLOOR)
    pi = np.maximum(_check_simplex("probs_i", probs_i), LOG_FLOOR)
    pj = np.maximum(_check_simplex("probs_j", probs_j), LOG_FLOOR)
    yi = _check_simplex("labels_i", labels_i)
    yj = _check_simplex("labels_j", labels_j)
    if not (pv.shape == pi.shape == pj.shape == yi.shape == yj.shape):
        raise DimensionError("mixaugment_loss_factored: argument shapes differ")
    per_row = yi * np.log(pi * pv ** lam) + yj * np.log(pj * pv ** (1.0 - lam))
    return float(-per_row.sum(axis=1).mean())


def _add(*grads):
    out = {k: v.copy() for k, v in grads[0].items()}
    for g in grads[1:]:
        for k in out:
            out[k] += g[k]
    return out


def backward(params, trace_v, trace_i, trace_j, labels_i, labels_j, lam) -> GradientSet:
    """Exact gradient of :func:`mixaugment_loss_sum` w.r.t. every parameter.

    Dropout masks stored in the traces are reused.
    """
    lam = _check_lambda(lam)
    yi = np.asarray(labels_i, dtype=np.float64)
    yj = np.asarray(labels_j, dtype=np.float64)
    soft = lam * yi + (1.0 - lam) * yj
    g = _add(
        _backprop(params, trace_v, cce_logit_grad(trace_v.probs, soft)),
        _backprop(params, trace_i, cce_logit_grad(trace_i.probs, yi)),
        _backprop(params, trace_j, cce_logit_grad(trace_j.probs, yj)),
    )
    return GradientSet(*params.arch, g)


def cce_loss_and_grad(params, batch: Batch, mode="train", dropout_rate=0.0, rng=None):
    """Plain classification step on a (real or virtual) batch."""
    tr = forward(params, batch.images, mode, dropout_rate, rng)
    loss = cce_loss(tr.probs, batch.labels)
    g = _backprop(params, tr, cce_logit_grad(tr.probs, batch.labels))
    return loss, GradientSet(*params.arch, g)


def mixup_only_loss_and_grad(params, mix: MixBatch, mode="train", dropout_rate=0.0, rng=None):
    """Baseline Mixup: the virtual-sample CCE replaces the classification loss."""
    return cce_loss_and_grad(params, mix.virtual, mode, dropout_rate, rng)


def mixaugment_loss_and_grad(params, mix: MixBatch, mode="train", dropout_rate=0.0, rng=None):
    """Forward virtual, real_i and real_j separately (independent masks) and sum the three losses."""
    tv = forward(params, mix.virtual.images, mode, dropout_rate, rng)
    ti = forward(params, mix.real_i.images, mode, dropout_rate, rng)
    tj = forward(params, mix.real_j.images, mode, dropout_rate, rng)
    loss = mixaugment_loss_sum(tv.probs, ti.probs, tj.probs, mix.real_i.labels, mix.real_j.labels, mix.lam)
    grads = backward(params, tv, ti, tj, mix.real_i.labels, mix.real_j.labels, mix.lam)
    return loss, grads


# ---- checkpoint -----------------------------------------------------------

CHECKPOINT_MAGIC = b"MIXAUGCK"
CHECKPOINT_VERSION = 1


def checkpoint_bytes(params: NetworkParams) -> bytes:
    """Serialize: magic, version, (H, W, C, K), tensor count, then per tensor extents + float64 LE data."""
    parts = [CHECKPOINT_MAGIC, struct.pack("<I", CHECKPOINT_VERSION), struct.pack("<4I", *params.arch),
             struct.pack("<I", len(PARAM_NAMES))]
    for name in PARAM_NAMES:
        t = params[name]
        parts.append(struct.pack("<I", t.ndim))
        parts.append(struct.pack(f"<{t.ndim}I", *t.shape))
        parts.append(t.astype("<f8").tobytes())
    return b"".join(parts)


def params_from_bytes(data: bytes) -> NetworkParams:
    try:
        if data[:8] != CHECKPOINT_MAGIC:
            raise LoadError("not a mixaug checkpoint (bad magic)")
        (version,) = struct.unpack_from("<I", data, 8)
        if version != CHECKPOINT_VERSION:
            raise LoadError(f"unsupported checkpoint version {version}")
        arch = struct.unpack_from("<4I", data, 12)
        (count,) = struct.unpack_from("<I", data, 28)
        if count != len(PARAM_NAMES):
            raise LoadError(f"expected {len(PARAM_NAMES)} tensors, found {count}")
        off = 32
        tensors = {}
        for name in PARAM_NAMES:
            (ndim,) = struct.unpack_from("<I", data, off)
            off += 4
            shape = struct.unpack_from(f"<{ndim}I", data, off)
            off += 4 * ndim
            n = int(np.prod(shape))
            if off + 8 * n > len(data):
                raise LoadError(f"checkpoint truncated in tensor {name}")
            tensors[name] = np.frombuffer(data, dtype="<f8", count=n, offset=off).reshape(shape).astype(np.float64)
            off += 8 * n
        if off != len(data):
            raise LoadError("trailing bytes after last tensor")
    except struct.error as exc:
        raise LoadError(f"checkpoint truncated: {exc}") from exc
    return NetworkParams(*arch, tensors)


def save_checkpoint(path, params: NetworkParams) -> None:
    Path(path).write_bytes(checkpoint_bytes(params))


def load_checkpoint(path) -> NetworkParams:
    return params_from_bytes(Path(path).read_bytes())
