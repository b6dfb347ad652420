"""Clocked spiking simulation of a converted network.

Hidden layers are arrays of IF or CIF neurons (threshold 1, soft reset); the
output layer is a non-spiking integrator. Within a step, layers are evaluated
front to back and each layer consumes the spikes its predecessor emitted in
the same step.
"""

from __future__ import annotations

import copy
import logging
from dataclasses import dataclass, field
from typing import Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from . import tensor as tc
from .errors import InvariantError, ShapeError
from .qann import V_TH, LayerSpec, QNetwork

log = logging.getLogger(__name__)

MODES = ("if", "cif")
# regime name -> (neuron mode, wake-sleep scheduling)
REGIMES = {
    "baseline-if": ("if", False),
    "cif-only": ("cif", False),
    "wsc-only": ("if", True),
    "casc": ("cif", True),
}


class NeuronArray:
    """Per-layer neuron state: potential ``v``, signed count ``y``, total input ``x_total``.

    The potential is kept as ``x_total - y`` instead of being updated in
    place. The two are equal in exact arithmetic, but only the former makes
    every spike decision an exact comparison of the float total input with an
    integer (the difference is exact near both thresholds), so the final count
    is ``floor`` of the accumulated input with no drift.
    """

    def __init__(self, shape, mode: str = "cif", cap: Optional[int] = None):
        if mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
        self.shape = tuple(shape)
        self.mode = mode
        self.cap = cap
        self.v_th = V_TH
        self.reset()

    def reset(self):
        self.v = np.zeros(self.shape)
        self.y = np.zeros(self.shape, dtype=np.int64)
        self.x_total = np.zeros(self.shape)
        self.t = 0

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    def step(self, current) -> np.ndarray:
        if self.mode == "if":
            return step_if(self, current)
        return step_cif(self, current)


def _check_current(arr: NeuronArray, current) -> np.ndarray:
    current = np.asarray(current, dtype=np.float64)
    if current.shape != arr.shape:
        if current.size != arr.size:
            raise ShapeError(f"current of shape {current.shape} does not fit neuron array {arr.shape}")
        current = current.reshape(arr.shape)
    if not np.all(np.isfinite(current)):
        raise FloatingPointError("non-finite input current; step aborted")
    return current


def step_if(arr: NeuronArray, current) -> np.ndarray:
    """IF update: integrate, spike where ``v >= 1``, soft reset by subtracting the spike."""
    if arr.mode != "if":
        raise ValueError("step_if needs an IF array")
    current = _check_current(arr, current)
    arr.x_total += current
    v = arr.x_total - arr.y
    s = (v >= arr.v_th).astype(np.int64)
    arr.y += s
    arr.v = arr.x_total - arr.y
    arr.t += 1
    return s


def step_cif(arr: NeuronArray, current) -> np.ndarray:
    """CIF update: as IF, plus a negative spike when ``v < 0`` and ``y > 0``.

    Positive spikes stop once the cumulative count reaches ``arr.cap``.
    """
    if arr.mode != "cif":
        raise ValueError("step_cif needs a CIF array")
    current = _check_current(arr, current)
    arr.x_total += current
    v = arr.x_total - arr.y
    up = v >= arr.v_th
    if arr.cap is not None:
        up &= arr.y < arr.cap
    down = (v < 0.0) & (arr.y > 0)
    s = up.astype(np.int64) - down.astype(np.int64)
    arr.y += s
    arr.v = arr.x_total - arr.y
    arr.t += 1
    return s


@dataclass(frozen=True)
class WscSchedule:
    q_wake: int
    t_max: int
    quiescence_stop: bool = True

    def __post_init__(self):
        if self.q_wake < 1:
            raise ValueError("q_wake must be >= 1")
        if self.t_max < self.q_wake:
            raise ValueError(f"t_max >= Q required (t_max={self.t_max}, Q={self.q_wake})")

    @classmethod
    def for_q(cls, q: int, t_max: Optional[int] = None, quiescence_stop: bool = True) -> "WscSchedule":
        return cls(q, 8 * q if t_max is None else t_max, quiescence_stop)


@dataclass
class SnnNetwork:
    layers: List[LayerSpec]
    arrays: List[NeuronArray]
    q: int
    input_shape: Tuple[int, ...]
    mode: str
    output: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.output is None:
            self.output = np.zeros(0)

    def reset(self):
        for arr in self.arrays:
            arr.reset()
        self.output = np.zeros(0)

    @property
    def thresholds(self) -> List[float]:
        return [arr.v_th for arr in self.arrays]


def convert(net: QNetwork, mode: str = "cif") -> SnnNetwork:
    """Map a trained ``QNetwork`` onto a spiking network with the same weights.

    CIF arrays cap cumulative positive output at ``net.q``; IF arrays are uncapped.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    layers = [copy.deepcopy(layer) for layer in net.layers]
    cap = net.q if mode == "cif" else None
    arrays = [NeuronArray(shape, mode, cap) for shape in net.shapes[:-1]]
    return SnnNetwork(layers, arrays, net.q, net.input_shape, mode)


@dataclass
class SimTrace:
    """Per-step records of a simulation.

    ``watched`` lists ``(layer, flat_index)`` pairs; ``I``, ``X``, ``V``, ``s``
    and ``Y`` are ``[steps, len(watched)]`` arrays. ``fired`` is
    ``[steps, layers]`` counting neurons with a nonzero spike, ``net_spikes``
    the signed spike sum per layer and step.
    """

    watched: List[Tuple[int, int]]
    layer_sizes: List[int]
    I: np.ndarray
    X: np.ndarray
    V: np.ndarray
    s: np.ndarray
    Y: np.ndarray
    fired: np.ndarray
    net_spikes: np.ndarray
    steps: int
    quiescence_step: Optional[int]
    wake_steps: int

    @property
    def reached_quiescence(self) -> bool:
        return self.quiescence_step is not None

    def column(self, neuron: Tuple[int, int]) -> int:
        try:
            return self.watched.index(tuple(neuron))
        except ValueError:
            raise KeyError(f"neuron {tuple(neuron)} is not watched in this trace") from None


@dataclass
class SimResult:
    decoded: np.ndarray
    hidden: List[np.ndarray]
    counts: List[np.ndarray]
    output_charge: np.ndarray
    horizon: int
    trace: SimTrace
    regime: str = ""


Watch = Union[None, str, Iterable[Tuple[int, int]]]


def _resolve_watch(snn: SnnNetwork, watch: Watch) -> List[Tuple[int, int]]:
    if watch is None:
        return []
    if isinstance(watch, str):
        if watch != "all":
            raise ValueError(f"watch must be None, 'all' or a list of (layer, neuron), got {watch!r}")
        return [(l, i) for l, arr in enumerate(snn.arrays) for i in range(arr.size)]
    out = []
    for layer, idx in watch:
        if not 0 <= layer < len(snn.arrays) or not 0 <= idx < snn.arrays[layer].size:
            raise KeyError(f"no neuron {idx} in hidden layer {layer}")
        out.append((int(layer), int(idx)))
    return out


def simulate(
    snn: SnnNetwork,
    x,
    sched: WscSchedule,
    wsc_enabled: bool = True,
    watch: Watch = None,
) -> SimResult:
    """Run the network on a real-valued input held constant while awake.

    With ``wsc_enabled`` the input and every bias are applied only during the
    first ``sched.q_wake`` steps; afterwards layers see only spikes from the
    layer before. Quiescence is a sleep step with no spike in any layer, after
    which nothing can change. Without WSC the input is applied for all
    ``sched.t_max`` steps and no quiescence is recorded.

    Outputs are normalised by the input horizon: ``q_wake`` under WSC, the
    number of steps run otherwise.
    """
    x = tc.as_tensor(x)
    if x.shape != snn.input_shape:
        if x.size == int(np.prod(snn.input_shape)) and len(snn.input_shape) == 1:
            x = x.reshape(snn.input_shape)
        else:
            raise ShapeError(f"input shape {x.shape} does not match network input {snn.input_shape}")
    snn.reset()
    cols = _resolve_watch(snn, watch)
    n_hidden = len(snn.arrays)
    rec = {k: [] for k in ("I", "X", "V", "s", "Y")}
    fired, net_spikes = [], []
    first, hidden_layers, out_layer = snn.layers[0], snn.layers[:-1], snn.layers[-1]

    wake_first = first.apply(x)  # constant drive of the first layer
    acc = np.zeros(out_layer.output_shape(snn.arrays[-1].shape if n_hidden else snn.input_shape))
    quiescence = None
    steps = 0
    for t in range(sched.t_max):
        awake = (not wsc_enabled) or t < sched.q_wake
        prev = x if awake else None
        step_spikes = []
        step_currents = []
        for l, layer in enumerate(hidden_layers):
            if l == 0:
                cur = wake_first if awake else np.zeros(snn.arrays[0].shape)
            elif prev is None or (not np.any(prev) and not (awake and layer.bias is not None)):
                cur = np.zeros(snn.arrays[l].shape)
            else:
                cur = layer.apply(prev, with_bias=awake)
            s = snn.arrays[l].step(cur)
            step_currents.append(cur)
            step_spikes.append(s)
            prev = s
        if n_hidden == 0:
            acc = acc + (wake_first if awake else 0.0)
        elif np.any(prev) or (awake and out_layer.bias is not None):
            acc = acc + out_layer.apply(prev, with_bias=awake)
        steps = t + 1

        fired.append([int(np.count_nonzero(s)) for s in step_spikes])
        net_spikes.append([int(s.sum()) for s in step_spikes])
        if cols:
            rec["I"].append([step_currents[l].reshape(-1)[i] for l, i in cols])
            rec["X"].append([snn.arrays[l].x_total.reshape(-1)[i] for l, i in cols])
            rec["V"].append([snn.arrays[l].v.reshape(-1)[i] for l, i in cols])
            rec["s"].append([step_spikes[l].reshape(-1)[i] for l, i in cols])
            rec["Y"].append([snn.arrays[l].y.reshape(-1)[i] for l, i in cols])

        if wsc_enabled and not awake and sum(fired[-1]) == 0 and quiescence is None:
            quiescence = t
            log.debug("quiescent at step %d", t)
            if sched.quiescence_stop:
                break

    if wsc_enabled and quiescence is None:
        log.info("t_max=%d exhausted before quiescence", sched.t_max)
    for arr in snn.arrays:
        if not np.array_equal(arr.v, arr.x_total - arr.y):
            raise InvariantError("soft-reset identity v = x_total - y violated")
    snn.output = acc
    horizon = sched.q_wake if wsc_enabled else steps
    counts = [arr.y.copy() for arr in snn.arrays]
    n_w = len(cols)

    def _arr(key, dtype=np.float64):
        return np.array(rec[key], dtype=dtype).reshape(len(rec[key]), n_w)

    trace = SimTrace(
        watched=cols,
        layer_sizes=[arr.size for arr in snn.arrays],
        I=_arr("I"),
        X=_arr("X"),
        V=_arr("V"),
        s=_arr("s", np.int64),
        Y=_arr("Y", np.int64),
        fired=np.array(fired, dtype=np.int64).reshape(steps, n_hidden),
        net_spikes=np.array(net_spikes, dtype=np.int64).reshape(steps, n_hidden),
        steps=steps,
        quiescence_step=quiescence,
        wake_steps=min(sched.q_wake, steps) if wsc_enabled else steps,
    )
    return SimResult(
        decoded=acc / horizon,
        hidden=[c / horizon for c in counts],
        counts=counts,
        output_charge=acc,
        horizon=horizon,
        trace=trace,
    )


def decode(counts, q: int) -> np.ndarray:
    """Map cumulative spike counts in ``[0, q]`` to activations ``counts / q``."""
    counts = np.asarray(counts)
    if np.any(counts < 0) or np.any(counts > q):
        raise InvariantError(f"spike counts outside [0, {q}] cannot be decoded")
    return counts / q


def run_regime(
    net: QNetwork,
    x,
    regime: str = "casc",
    t_max: Optional[int] = None,
    quiescence_stop: bool = True,
    watch: Watch = None,
) -> SimResult:
    """Convert ``net`` and simulate it under one of the four named regimes."""
    if regime not in REGIMES:
        raise ValueError(f"unknown regime {regime!r}; choose from {sorted(REGIMES)}")
    mode, wsc = REGIMES[regime]
    sched = WscSchedule.for_q(net.q, t_max, quiescence_stop)
    res = simulate(convert(net, mode), x, sched, wsc_enabled=wsc, watch=watch)
    res.regime = regime
    return res
