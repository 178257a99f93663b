"""Softmax cross-entropy, analytic backward pass and plain mini-batch SGD."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .model import ForwardTrace, GateCNNConfig, Gradients, ModelWeights, forward, frame_data, init_weights


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.01
    epochs: int = 30
    batch_size: int = 8
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ValueError("learning_rate must be >= 0")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


def softmax(logits):
    e = np.exp(logits - np.max(logits))
    return e / e.sum()


def loss(logits, label: int) -> float:
    """``-log softmax(logits)[label]`` with max subtraction."""
    logits = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(logits)):
        raise ValueError("non-finite logits")
    if not 0 <= label < logits.size:
        raise ValueError(f"label {label} outside [0, {logits.size})")
    shifted = logits - np.max(logits)
    return float(np.log(np.sum(np.exp(shifted))) - shifted[label])


# --- layer backward helpers ---------------------------------------------

def conv2d_backward(x, w, dout, padding=(0, 0), stride=(1, 1)):
    """Gradients of a zero-padded cross-correlation w.r.t. input, kernel and bias."""
    ph, pw = padding
    sh, sw = stride
    _, OH, OW = dout.shape
    KH, KW = w.shape[2:]
    xp = np.pad(x, ((0, 0), (ph, ph), (pw, pw)))
    dxp = np.zeros_like(xp)
    dw = np.zeros_like(w)
    for i in range(KH):
        for j in range(KW):
            rows = slice(i, i + sh * (OH - 1) + 1, sh)
            cols = slice(j, j + sw * (OW - 1) + 1, sw)
            dw[:, :, i, j] = np.tensordot(dout, xp[:, rows, cols], axes=([1, 2], [1, 2]))
            dxp[:, rows, cols] += np.tensordot(w[:, :, i, j], dout, axes=([0], [0]))
    dx = dxp[:, ph:ph + x.shape[1], pw:pw + x.shape[2]]
    return dx, dw, dout.sum(axis=(1, 2))


def conv1d_time_backward(x, w, dout):
    D, L = x.shape
    K = w.shape[1]
    half = K // 2
    xp = np.pad(x, ((0, 0), (half, half)))
    dxp = np.zeros_like(xp)
    dw = np.empty_like(w)
    for k in range(K):
        dw[:, k] = np.sum(dout * xp[:, k:k + L], axis=1)
        dxp[:, k:k + L] += w[:, k, None] * dout
    return dxp[:, half:half + L], dw, dout.sum(axis=1)


def maxpool2d_backward(x, dout, window):
    """Route each window's gradient to its first maximum in row-major order."""
    wh, ww = window
    _, OH, OW = dout.shape
    dx = np.zeros_like(x)
    out = None
    for i in range(wh):
        for j in range(ww):
            tap = x[:, i:i + wh * (OH - 1) + 1:wh, j:j + ww * (OW - 1) + 1:ww]
            out = tap if out is None else np.maximum(out, tap)
    taken = np.zeros(dout.shape, dtype=bool)
    for i in range(wh):
        for j in range(ww):
            tap = x[:, i:i + wh * (OH - 1) + 1:wh, j:j + ww * (OW - 1) + 1:ww]
            hit = (tap == out) & ~taken
            dx[:, i:i + wh * (OH - 1) + 1:wh, j:j + ww * (OW - 1) + 1:ww] += np.where(hit, dout, 0.0)
            taken |= hit
    return dx


def backward_from_trace(cfg: GateCNNConfig, w: ModelWeights, t: ForwardTrace, label: int):
    """Loss and exact gradients for one sample given its forward trace."""
    value = loss(t.logits, label)
    g = {}
    dlogits = softmax(t.logits)
    dlogits[label] -= 1.0

    g["w_cls"] = np.outer(dlogits, t.v)
    g["b_cls"] = dlogits
    dv = w.w_cls.T @ dlogits

    g["w_avg"] = (t.y @ dv).reshape(w.w_avg.shape)
    g["b_avg"] = np.array([dv.sum()])
    dy = w.w_avg[0, 0, :, 0, None] * dv[None, :]

    open_gate = t.z > 0
    dx5 = dy * np.where(open_gate, t.z, 0.0)
    dz = dy * t.x_conv5 * open_gate
    dx1 = dy.copy()

    pad = cfg.cascade_padding
    dx4, g["w_c4"], g["b_c4"] = conv2d_backward(t.x_conv4, w.w_c4, dx5[None], pad)
    dx4 = dx4 * (t.x_conv4 > 0)
    dx3, g["w_c3"], g["b_c3"] = conv2d_backward(t.x_conv3, w.w_c3, dx4, pad)
    dx3 = dx3 * (t.x_conv3 > 0)
    dx2, g["w_c2"], g["b_c2"] = conv2d_backward(t.x_conv2[None], w.w_c2, dx3, pad)

    d, g["w_p"], g["b_p"] = conv1d_time_backward(t.x_conv1, w.w_p, dx2[0])
    dx1 += d
    d, g["w_g"], g["b_g"] = conv1d_time_backward(t.x_conv1, w.w_g, dz)
    dx1 += d

    D, Wp = dx1.shape
    dds, g["w_c1"], g["b_c1"] = conv2d_backward(t.x_ds, w.w_c1, dx1.reshape(D, 1, Wp))
    dfuse = maxpool2d_backward(t.x1, dds, cfg.pool)
    _, g["w_c0"], g["b_c0"] = conv2d_backward(t.x, w.w_c0, dfuse, cfg.fuse_padding)

    grads = Gradients(**g)
    for name, arr in grads.items():
        if not np.all(np.isfinite(arr)):
            raise FloatingPointError(f"non-finite gradient in {name}")
    return value, grads


def backward(cfg: GateCNNConfig, w: ModelWeights, x, label: int) -> tuple[float, Gradients]:
    return backward_from_trace(cfg, w, forward(cfg, w, x), label)


def batch_gradients(cfg: GateCNNConfig, w: ModelWeights, frames):
    """Summed loss, summed gradients and hit count over ``frames``, in order."""
    total, hits, acc = 0.0, 0, None
    for fr in frames:
        t = forward(cfg, w, frame_data(fr))
        value, g = backward_from_trace(cfg, w, t, fr.label)
        total += value
        hits += int(np.argmax(t.logits) == fr.label)
        acc = g if acc is None else Gradients(**{k: v + getattr(g, k) for k, v in acc.items()})
    return total, acc, hits


def sgd_step(w: ModelWeights, g: Gradients, lr: float) -> ModelWeights:
    return ModelWeights(**{k: v - lr * getattr(g, k) for k, v in w.items()})


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    loss: float
    accuracy: float

    def to_line(self) -> str:
        return json.dumps({"epoch": self.epoch, "loss": round(self.loss, 6),
                           "accuracy": round(self.accuracy, 4)})


def train(cfg: GateCNNConfig, data, tc: TrainConfig = TrainConfig(),
          init: ModelWeights | None = None, log=None):
    """Mini-batch SGD on averaged per-sample gradients.

    ``data`` is a sequence of frames (anything with ``.data`` and ``.label``).
    Loss and accuracy per epoch are measured on the forward passes made
    during that epoch, i.e. before each batch's update.
    """
    data = list(data)
    if not data:
        raise ValueError("empty training set")
    for fr in data:
        if not 0 <= fr.label < cfg.num_classes:
            raise ValueError(f"label {fr.label} outside [0, {cfg.num_classes})")
    w = init_weights(cfg, tc.seed) if init is None else init.copy()
    rng = np.random.default_rng(tc.seed)
    history = []
    for epoch in range(1, tc.epochs + 1):
        order = rng.permutation(len(data))
        total_loss, correct = 0.0, 0
        for start in range(0, len(order), tc.batch_size):
            batch = [data[i] for i in order[start:start + tc.batch_size]]
            value, g, hits = batch_gradients(cfg, w, batch)
            total_loss += value
            correct += hits
            w = sgd_step(w, g, tc.learning_rate / len(batch))
        rec = EpochRecord(epoch, total_loss / len(data), correct / len(data))
        history.append(rec)
        if log is not None:
            log(rec.to_line())
    return w, history


def accuracy(cfg: GateCNNConfig, w: ModelWeights, frames) -> float:
    frames = list(frames)
    hits = sum(int(np.argmax(forward(cfg, w, fr).logits) == fr.label) for fr in frames)
    return hits / len(frames)
