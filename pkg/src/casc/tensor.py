"""Dense kernels used by the ANN forward pass, the spiking simulator and training.

Tensors are plain ``numpy.ndarray`` objects of dtype float64. Every kernel
sums its terms strictly left to right so results are bit-reproducible and
match a naive loop implementation exactly. ``numpy.add.accumulate`` is used
for that purpose, since ``np.sum``/``@`` may reorder (pairwise or BLAS).
"""

from __future__ import annotations

from typing import Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ShapeError

__all__ = ["as_tensor", "linear", "conv2d", "avgpool2d", "conv2d_output_shape", "pool_output_shape"]


def as_tensor(values, shape=None) -> np.ndarray:
    """Return ``values`` as a float64 array, rejecting NaN/Inf."""
    arr = np.asarray(values, dtype=np.float64)
    if shape is not None:
        arr = arr.reshape(shape)
    if not np.all(np.isfinite(arr)):
        raise ValueError("tensor contains non-finite values")
    return arr


def _ordered_sum(terms: np.ndarray, axis: int) -> np.ndarray:
    # sequential accumulation along ``axis``; the last slice is the full sum
    if terms.shape[axis] == 0:
        shape = list(terms.shape)
        del shape[axis]
        return np.zeros(shape)
    return np.take(np.add.accumulate(terms, axis=axis), -1, axis=axis)


def linear(x: np.ndarray, weight: np.ndarray, bias: Optional[np.ndarray] = None) -> np.ndarray:
    """``out[i] = sum_j W[i, j] * x[j] (+ b[i])``; ``x`` is flattened row-major."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    weight = np.asarray(weight, dtype=np.float64)
    if weight.ndim != 2 or weight.shape[1] != x.size:
        raise ShapeError(f"linear: weight {weight.shape} does not accept input of length {x.size}")
    out = _ordered_sum(weight * x[None, :], axis=1)
    if bias is not None:
        bias = np.asarray(bias, dtype=np.float64)
        if bias.shape != (weight.shape[0],):
            raise ShapeError(f"linear: bias {bias.shape} does not match {weight.shape[0]} outputs")
        out = out + bias
    return out


def conv2d_output_shape(in_shape, weight_shape, stride: int, padding: int) -> tuple:
    if len(in_shape) != 3 or len(weight_shape) != 4:
        raise ShapeError(f"conv2d: need input [C,H,W] and weight [F,C,k,k], got {tuple(in_shape)} and {tuple(weight_shape)}")
    c, h, w = in_shape
    f, wc, kh, kw = weight_shape
    if wc != c:
        raise ShapeError(f"conv2d: weight expects {wc} channels, input has {c}")
    if kh != kw:
        raise ShapeError(f"conv2d: kernel must be square, got {kh}x{kw}")
    if stride < 1 or padding < 0:
        raise ShapeError(f"conv2d: invalid stride={stride} padding={padding}")
    if kh > h + 2 * padding or kw > w + 2 * padding:
        raise ShapeError(f"conv2d: kernel {kh} larger than padded input {h + 2 * padding}x{w + 2 * padding}")
    return (f, (h + 2 * padding - kh) // stride + 1, (w + 2 * padding - kw) // stride + 1)


def conv2d(
    x: np.ndarray,
    weight: np.ndarray,
    bias: Optional[np.ndarray] = None,
    stride: int = 1,
    padding: int = 0,
) -> np.ndarray:
    """Zero-padded 2-D cross-correlation of a ``[C,H,W]`` input.

    Per output element the sum runs over channel, then kernel row, then kernel
    column, with the bias added last.
    """
    x = np.asarray(x, dtype=np.float64)
    weight = np.asarray(weight, dtype=np.float64)
    f, oh, ow = conv2d_output_shape(x.shape, weight.shape, stride, padding)
    c, k = weight.shape[1], weight.shape[2]
    if padding:
        x = np.pad(x, ((0, 0), (padding, padding), (padding, padding)))
    # windows: [C, OH, OW, k, k] -> [C, k, k, OH, OW] -> [C*k*k, OH, OW]
    win = sliding_window_view(x, (k, k), axis=(1, 2))[:, ::stride, ::stride][:, :oh, :ow]
    patches = win.transpose(0, 3, 4, 1, 2).reshape(c * k * k, oh, ow)
    terms = weight.reshape(f, c * k * k)[:, :, None, None] * patches[None]
    out = _ordered_sum(terms, axis=1)
    if bias is not None:
        bias = np.asarray(bias, dtype=np.float64)
        if bias.shape != (f,):
            raise ShapeError(f"conv2d: bias {bias.shape} does not match {f} filters")
        out = out + bias[:, None, None]
    return out


def pool_output_shape(in_shape, k: int, stride: int) -> tuple:
    if len(in_shape) != 3:
        raise ShapeError(f"avgpool2d: need input [C,H,W], got {tuple(in_shape)}")
    c, h, w = in_shape
    if k < 1 or stride < 1 or k > h or k > w:
        raise ShapeError(f"avgpool2d: invalid window k={k} stride={stride} for {h}x{w}")
    if (h - k) % stride or (w - k) % stride:
        raise ShapeError(f"avgpool2d: {h}x{w} not tiled by k={k} stride={stride}")
    return (c, (h - k) // stride + 1, (w - k) // stride + 1)


def avgpool2d(x: np.ndarray, k: int, stride: Optional[int] = None) -> np.ndarray:
    """Window means; the window is summed row-major, then divided by ``k*k``."""
    x = np.asarray(x, dtype=np.float64)
    stride = k if stride is None else stride
    c, oh, ow = pool_output_shape(x.shape, k, stride)
    win = sliding_window_view(x, (k, k), axis=(1, 2))[:, ::stride, ::stride]
    terms = win.reshape(c, oh, ow, k * k)
    return _ordered_sum(terms, axis=3) / (k * k)
