"""Brute-force references used as ground truth by the test-suite.

Nothing here imports the package's kernels or activation: the forward pass,
the neuron update rules and the quantizer are re-written with plain Python
loops over floats.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Sequence, Tuple

import numpy as np

__all__ = [
    "CurrentSequence",
    "SpikeTrain",
    "NeuronStep",
    "ref_linear",
    "ref_conv2d",
    "ref_avgpool2d",
    "ref_forward",
    "neuron_oracle",
    "poisson_train",
    "case2_experiment",
    "Case2Stats",
]


@dataclass
class CurrentSequence:
    currents: List[float]
    wake: int = 0

    def __post_init__(self):
        self.currents = [float(c) for c in self.currents]
        if not all(math.isfinite(c) for c in self.currents):
            raise ValueError("current sequence contains non-finite values")
        if not self.wake:
            self.wake = len(self.currents)


@dataclass
class SpikeTrain:
    spikes: List[int]
    seed: object

    @property
    def T(self) -> int:
        return len(self.spikes)


@dataclass(frozen=True)
class NeuronStep:
    I: float
    X: float
    V: float
    s: int
    Y: int


# -- naive kernels -------------------------------------------------------------


def ref_linear(x: Sequence[float], weight, bias=None) -> List[float]:
    w = np.asarray(weight, dtype=np.float64).tolist()
    x = [float(v) for v in np.asarray(x, dtype=np.float64).reshape(-1)]
    out = []
    for i in range(len(w)):
        acc = 0.0
        for j in range(len(x)):
            acc = acc + w[i][j] * x[j]
        if bias is not None:
            acc = acc + float(bias[i])
        out.append(acc)
    return out


def ref_conv2d(x, weight, bias=None, stride=1, padding=0) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(weight, dtype=np.float64)
    C, H, W = x.shape
    F, _, K, _ = w.shape
    OH = (H + 2 * padding - K) // stride + 1
    OW = (W + 2 * padding - K) // stride + 1
    xs = x.tolist()
    ws = w.tolist()
    out = np.zeros((F, OH, OW))
    for f in range(F):
        for oh in range(OH):
            for ow in range(OW):
                acc = 0.0
                for c in range(C):
                    for ki in range(K):
                        for kj in range(K):
                            r = oh * stride + ki - padding
                            q = ow * stride + kj - padding
                            if 0 <= r < H and 0 <= q < W:
                                acc = acc + ws[f][c][ki][kj] * xs[c][r][q]
                if bias is not None:
                    acc = acc + float(bias[f])
                out[f, oh, ow] = acc
    return out


def ref_avgpool2d(x, k, stride=None) -> np.ndarray:
    stride = k if stride is None else stride
    x = np.asarray(x, dtype=np.float64)
    C, H, W = x.shape
    OH = (H - k) // stride + 1
    OW = (W - k) // stride + 1
    out = np.zeros((C, OH, OW))
    for c in range(C):
        for oh in range(OH):
            for ow in range(OW):
                acc = 0.0
                for ki in range(k):
                    for kj in range(k):
                        acc = acc + float(x[c, oh * stride + ki, ow * stride + kj])
                out[c, oh, ow] = acc / (k * k)
    return out


def _ref_quantize(z: float, q: int) -> float:
    level = math.floor(z * q)
    if level < 0:
        level = 0
    if level > q:
        level = q
    return level / q


def ref_forward(net, x) -> Tuple[np.ndarray, List[np.ndarray]]:
    """Naive forward pass of a ``QNetwork``: ``(logits, hidden activations)``."""
    a = np.asarray(x, dtype=np.float64).reshape(net.input_shape)
    acts = []
    for i, layer in enumerate(net.layers):
        if layer.kind == "linear":
            z = np.array(ref_linear(a.reshape(-1), layer.weight, layer.bias))
        elif layer.kind == "conv2d":
            z = ref_conv2d(a, layer.weight, layer.bias, layer.stride, layer.padding)
        elif layer.kind == "avgpool2d":
            z = ref_avgpool2d(a, layer.k, layer.stride)
        else:
            raise ValueError(f"unknown layer kind {layer.kind!r}")
        if not layer.activated:
            return z, acts
        flat = [_ref_quantize(v, net.q) for v in z.reshape(-1).tolist()]
        a = np.array(flat).reshape(z.shape)
        acts.append(a)
    raise ValueError("network has no un-activated output layer")


# -- single neuron ---------------------------------------------------------------


def neuron_oracle(seq, mode: str, q: int, t_max: int) -> Tuple[int, List[NeuronStep]]:
    """Step-by-step IF/CIF update of one neuron with threshold 1.

    The potential before emission is ``X[t] - Y[t-1]`` and after emission
    ``X[t] - Y[t]``. Currents past the end of ``seq`` are zero. CIF positive
    spikes are capped at a cumulative count of ``q``.
    """
    currents = seq.currents if isinstance(seq, CurrentSequence) else [float(c) for c in seq]
    if t_max < len(currents):
        raise ValueError("t_max must cover the whole current sequence")
    if mode not in ("if", "cif"):
        raise ValueError(f"mode must be 'if' or 'cif', got {mode!r}")
    x_tot = 0.0
    y = 0
    trace = []
    for t in range(t_max):
        i_t = currents[t] if t < len(currents) else 0.0
        x_tot = x_tot + i_t
        v = x_tot - y
        s = 0
        if mode == "if":
            if v >= 1.0:
                s = 1
        else:
            if v >= 1.0 and y < q:
                s = 1
            elif v < 0.0 and y > 0:
                s = -1
        y = y + s
        v = x_tot - y
        trace.append(NeuronStep(i_t, x_tot, v, s, y))
    return y, trace


def poisson_train(rate: float, T: int, seed) -> SpikeTrain:
    """Bernoulli(rate) spike per step, the bounded-rate stand-in for a Poisson train."""
    if not 0.0 <= rate <= 1.0:
        raise ValueError(f"rate must lie in [0, 1], got {rate}")
    rng = np.random.default_rng(seed)
    return SpikeTrain((rng.random(T) < rate).astype(int).tolist(), seed)


@dataclass
class Case2Stats:
    trials: int
    seed: int
    mismatch: dict = field(default_factory=dict)
    more: dict = field(default_factory=dict)
    less: dict = field(default_factory=dict)


def case2_experiment(weights, rates, q: int, T: int, trials: int, seed: int) -> Case2Stats:
    """Drive one neuron with ``W . s[t]`` from independent Bernoulli trains.

    Four arms are measured: ``if`` and ``cif`` run exactly ``T`` steps;
    ``if_sleep`` and ``cif_sleep`` add zero-input steps until the neuron is
    silent. A trial mismatches when the final count differs from
    ``floor(clip(X_total, 0, q))``.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    weights = [float(w) for w in np.asarray(weights).reshape(-1)]
    rates = [float(r) for r in np.asarray(rates).reshape(-1)]
    if len(weights) != len(rates):
        raise ValueError("weights and rates must have the same length")
    arms = ("if", "cif", "if_sleep", "cif_sleep")
    stats = Case2Stats(trials, seed, {a: 0 for a in arms}, {a: 0 for a in arms}, {a: 0 for a in arms})
    for trial in range(trials):
        trains = [poisson_train(r, T, [seed, trial, j]).spikes for j, r in enumerate(rates)]
        currents = []
        for t in range(T):
            acc = 0.0
            for j, w in enumerate(weights):
                acc = acc + w * trains[j][t]
            currents.append(acc)
        x_tot = 0.0
        for c in currents:
            x_tot = x_tot + c
        target = math.floor(min(max(x_tot, 0.0), float(q)))
        # once input stops, a neuron moves by one count per step and its
        # count is at most max(q, T) away from the target
        sleep_budget = T + max(q, T) + math.ceil(abs(x_tot)) + 2
        for arm in arms:
            mode = "cif" if arm.startswith("cif") else "if"
            y, _ = neuron_oracle(currents, mode, q, sleep_budget if arm.endswith("sleep") else T)
            if y != target:
                stats.mismatch[arm] += 1
                if y > target:
                    stats.more[arm] += 1
                else:
                    stats.less[arm] += 1
    for d in (stats.mismatch, stats.more, stats.less):
        for arm in arms:
            d[arm] /= trials
    return stats
