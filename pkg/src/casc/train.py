"""Minimal mini-batch SGD for CQReLU networks using a straight-through estimator.

The forward pass here uses BLAS matmuls for speed; bit-reproducible inference
lives in :mod:`casc.qann`. The STE passes gradient through the activation
where its input lies strictly inside (0, 1) and blocks it elsewhere.
"""

from __future__ import annotations

import copy
import logging
from dataclasses import dataclass
from typing import List, Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .qann import QNetwork

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class Hyper:
    lr: float = 0.05
    epochs: int = 30
    batch: int = 32
    seed: int = 0
    momentum: float = 0.9
    loss: str = "ce"  # "ce" (softmax cross-entropy) or "mse"


def _conv_cols(x, k, stride, padding):
    # x: [B, C, H, W] -> cols [B, OH, OW, C*k*k] in (channel, row, column) order
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    win = sliding_window_view(x, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    b, c, oh, ow = win.shape[:4]
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(b, oh, ow, c * k * k), x.shape


def _forward(net: QNetwork, x: np.ndarray, params):
    caches = []
    a = x
    for layer, (w, b) in zip(net.layers, params):
        if layer.kind == "linear":
            inp = a.reshape(a.shape[0], -1)
            z = inp @ w.T + (b if b is not None else 0.0)
            cache = (inp, a.shape)
        elif layer.kind == "conv2d":
            cols, padded_shape = _conv_cols(a, layer.k, layer.stride, layer.padding)
            z = cols @ w.reshape(w.shape[0], -1).T
            if b is not None:
                z = z + b
            z = z.transpose(0, 3, 1, 2)
            cache = (cols, a.shape, padded_shape)
        else:
            k, s = layer.k, layer.stride
            win = sliding_window_view(a, (k, k), axis=(2, 3))[:, :, ::s, ::s]
            z = win.mean(axis=(4, 5))
            cache = (a.shape,)
        if layer.activated:
            q = net.q
            mask = (z > 0) & (z < 1)
            a = np.clip(np.floor(z * q) / q, 0.0, 1.0)
        else:
            mask = None
            a = z
        caches.append((cache, mask))
    return a, caches


def _backward(net: QNetwork, params, caches, grad_out):
    grads = [None] * len(params)
    g = grad_out
    for idx in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[idx]
        w, b = params[idx]
        cache, mask = caches[idx]
        if mask is not None:
            g = g * mask
        if layer.kind == "linear":
            inp, in_shape = cache
            gw = g.T @ inp
            gb = g.sum(axis=0) if b is not None else None
            g = (g @ w).reshape(in_shape)
        elif layer.kind == "conv2d":
            cols, in_shape, padded_shape = cache
            f = w.shape[0]
            g2 = g.transpose(0, 2, 3, 1)  # [B, OH, OW, F]
            gw = np.tensordot(g2, cols, axes=([0, 1, 2], [0, 1, 2])).reshape(w.shape)
            gb = g2.sum(axis=(0, 1, 2)) if b is not None else None
            gcols = g2 @ w.reshape(f, -1)  # [B, OH, OW, C*k*k]
            bsz, oh, ow, _ = gcols.shape
            c, k, s, p = in_shape[1], layer.k, layer.stride, layer.padding
            gcols = gcols.reshape(bsz, oh, ow, c, k, k)
            gpad = np.zeros(padded_shape)
            for ki in range(k):
                for kj in range(k):
                    gpad[:, :, ki:ki + s * oh:s, kj:kj + s * ow:s] += gcols[:, :, :, :, ki, kj].transpose(0, 3, 1, 2)
            g = gpad[:, :, p:p + in_shape[2], p:p + in_shape[3]]
        else:
            (in_shape,) = cache
            k, s = layer.k, layer.stride
            oh, ow = g.shape[2], g.shape[3]
            gin = np.zeros(in_shape)
            for ki in range(k):
                for kj in range(k):
                    gin[:, :, ki:ki + s * oh:s, kj:kj + s * ow:s] += g / (k * k)
            g = gin
            gw = gb = None
        grads[idx] = (gw, gb)
    return grads


def _loss(out, target, kind):
    n = out.shape[0]
    if kind == "mse":
        diff = out - target
        return 0.5 * float(np.sum(diff * diff)) / n, diff / n
    shifted = out - out.max(axis=1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    loss = -float(np.mean(logp[np.arange(n), target]))
    grad = np.exp(logp)
    grad[np.arange(n), target] -= 1.0
    return loss, grad / n


def evaluate(net: QNetwork, x: np.ndarray, y: np.ndarray, loss: str = "ce"):
    """Return ``(loss, accuracy)`` using the training forward pass."""
    params = [(l.weight, l.bias) for l in net.layers]
    out, _ = _forward(net, x, params)
    value, _ = _loss(out, y, loss)
    acc = float(np.mean(out.argmax(axis=1) == y)) if loss == "ce" else float("nan")
    return value, acc


def train_ste(net: QNetwork, x, y, hyper: Optional[Hyper] = None, history: Optional[List[dict]] = None) -> QNetwork:
    """Train a copy of ``net`` on ``(x, y)`` and return it.

    ``y`` holds integer labels for ``loss="ce"`` or target arrays for
    ``loss="mse"``. When ``history`` is a list, one dict per epoch (plus the
    initial state as epoch 0) is appended.
    """
    hyper = hyper or Hyper()
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y)
    if len(x) == 0 or len(x) != len(y):
        raise ValueError("dataset must be nonempty with one target per sample")
    x = x.reshape((len(x),) + net.input_shape)
    net = copy.deepcopy(net)
    params = [(l.weight, l.bias) for l in net.layers]
    vel = [tuple(None if p is None else np.zeros_like(p) for p in pair) for pair in params]
    rng = np.random.default_rng(hyper.seed)

    def record(epoch):
        loss, acc = evaluate(net, x, y, hyper.loss)
        if history is not None:
            history.append({"epoch": epoch, "loss": loss, "accuracy": acc})
        return loss

    record(0)
    for epoch in range(1, hyper.epochs + 1):
        order = rng.permutation(len(x))
        for start in range(0, len(x), hyper.batch):
            idx = order[start:start + hyper.batch]
            out, caches = _forward(net, x[idx], params)
            loss, grad = _loss(out, y[idx], hyper.loss)
            if not np.isfinite(loss):
                raise TrainingDiverged(f"loss became {loss} in epoch {epoch}, batch starting at {start}")
            grads = _backward(net, params, caches, grad)
            for i, ((w, b), (gw, gb)) in enumerate(zip(params, grads)):
                if gw is None:
                    continue
                vw, vb = vel[i]
                vw *= hyper.momentum
                vw += gw
                w -= hyper.lr * vw
                if b is not None:
                    vb *= hyper.momentum
                    vb += gb
                    b -= hyper.lr * vb
        loss = record(epoch)
        if not np.isfinite(loss):
            raise TrainingDiverged(f"loss became {loss} after epoch {epoch}")
        log.debug("epoch %d loss %.6f", epoch, loss)
    return net
