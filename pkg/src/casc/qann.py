"""Quantized ANN: CQReLU activation, layer stack, forward pass and model files."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from . import tensor as tc
from .errors import ModelFormatError, ShapeError

FORMAT_VERSION = 1
V_TH = 1.0
LAYER_KINDS = ("linear", "conv2d", "avgpool2d")


@dataclass(frozen=True)
class QuantConfig:
    q: int
    v_th: float = V_TH

    def __post_init__(self):
        if isinstance(self.q, bool) or not isinstance(self.q, (int, np.integer)) or self.q < 1:
            raise ValueError(f"quantization level must be a positive integer, got {self.q!r}")
        if self.v_th != V_TH:
            raise ValueError("threshold is fixed at 1.0")


@dataclass
class LayerSpec:
    kind: str
    weight: Optional[np.ndarray] = None
    bias: Optional[np.ndarray] = None
    stride: int = 1
    padding: int = 0
    k: int = 0
    activated: bool = True

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.kind == "avgpool2d":
            if self.weight is not None or self.bias is not None:
                raise ValueError("avgpool2d carries no parameters")
            if self.k < 1:
                raise ValueError("avgpool2d needs a window size k >= 1")
            if self.stride < 1:
                raise ValueError("avgpool2d needs stride >= 1")
            return
        if self.weight is None:
            raise ValueError(f"{self.kind} layer needs a weight tensor")
        self.weight = tc.as_tensor(self.weight)
        if self.bias is not None:
            self.bias = tc.as_tensor(self.bias)
        if self.kind == "linear" and self.weight.ndim != 2:
            raise ValueError(f"linear weight must be 2-D, got shape {self.weight.shape}")
        if self.kind == "conv2d":
            if self.weight.ndim != 4:
                raise ValueError(f"conv2d weight must be 4-D, got shape {self.weight.shape}")
            self.k = self.weight.shape[2]
        if self.bias is not None and self.bias.shape != (self.weight.shape[0],):
            raise ValueError(f"bias shape {self.bias.shape} does not match weight {self.weight.shape}")

    def output_shape(self, in_shape: Tuple[int, ...]) -> Tuple[int, ...]:
        if self.kind == "linear":
            n = int(np.prod(in_shape))
            if self.weight.shape[1] != n:
                raise ShapeError(f"linear layer expects {self.weight.shape[1]} inputs, got {n} from {in_shape}")
            return (self.weight.shape[0],)
        if self.kind == "conv2d":
            return tc.conv2d_output_shape(in_shape, self.weight.shape, self.stride, self.padding)
        return tc.pool_output_shape(in_shape, self.k, self.stride)

    def apply(self, x: np.ndarray, with_bias: bool = True) -> np.ndarray:
        """Affine map of this layer; pooling ignores ``with_bias``."""
        bias = self.bias if with_bias else None
        if self.kind == "linear":
            return tc.linear(x, self.weight, bias)
        if self.kind == "conv2d":
            return tc.conv2d(x, self.weight, bias, self.stride, self.padding)
        return tc.avgpool2d(x, self.k, self.stride)


@dataclass
class QNetwork:
    layers: List[LayerSpec]
    config: QuantConfig
    input_shape: Tuple[int, ...]
    name: str = "net"
    seed: Optional[int] = None
    shapes: List[Tuple[int, ...]] = field(init=False, repr=False)

    def __post_init__(self):
        if not self.layers:
            raise ValueError("a network needs at least one layer")
        self.input_shape = tuple(int(s) for s in self.input_shape)
        for i, layer in enumerate(self.layers):
            last = i == len(self.layers) - 1
            if layer.activated == last:
                raise ValueError(f"layer {i}: exactly the final layer must be un-activated")
        self.shapes = []
        shape = self.input_shape
        for i, layer in enumerate(self.layers):
            try:
                shape = layer.output_shape(shape)
            except ShapeError as exc:
                raise ShapeError(f"layer {i}: {exc}") from exc
            self.shapes.append(shape)

    @property
    def q(self) -> int:
        return self.config.q

    @property
    def num_activated(self) -> int:
        return len(self.layers) - 1

    def with_q(self, q: int) -> "QNetwork":
        """Same weights, different quantization level."""
        return QNetwork(self.layers, QuantConfig(q), self.input_shape, self.name, self.seed)


def cqrelu(x, q: int):
    """Clip-quantized ReLU: ``clip(floor(x*q)/q, 0, 1)``. Works on scalars and arrays."""
    if q < 1:
        raise ValueError("q must be >= 1")
    if np.isscalar(x):
        return float(min(max(math.floor(x * q) / q, 0.0), 1.0))
    return np.clip(np.floor(np.asarray(x, dtype=np.float64) * q) / q, 0.0, 1.0)


def ann_forward(net: QNetwork, x) -> Tuple[np.ndarray, List[np.ndarray]]:
    """Return ``(logits, activations)``; ``activations`` holds one array per hidden layer."""
    a = tc.as_tensor(x)
    if a.shape != net.input_shape:
        if a.size == int(np.prod(net.input_shape)) and len(net.input_shape) == 1:
            a = a.reshape(net.input_shape)
        else:
            raise ShapeError(f"input shape {a.shape} does not match network input {net.input_shape}")
    acts = []
    for layer in net.layers[:-1]:
        a = cqrelu(layer.apply(a), net.q)
        acts.append(a)
    return net.layers[-1].apply(a), acts


def fold_batchnorm(weight, bias, gamma, beta, mean, var, eps: float = 1e-5):
    """Fold a per-output-channel batch norm that follows a linear/conv layer into it."""
    weight = np.asarray(weight, dtype=np.float64)
    n_out = weight.shape[0]
    bias = np.zeros(n_out) if bias is None else np.asarray(bias, dtype=np.float64)
    gamma, beta, mean, var = (np.broadcast_to(np.asarray(v, dtype=np.float64), (n_out,)) for v in (gamma, beta, mean, var))
    denom = var + eps
    if np.any(denom <= 0):
        raise ValueError(f"batch norm has non-positive var+eps in channel(s) {np.flatnonzero(denom <= 0).tolist()}")
    scale = gamma / np.sqrt(denom)
    w = weight * scale.reshape((n_out,) + (1,) * (weight.ndim - 1))
    b = (bias - mean) * scale + beta
    return w, b


# ---------------------------------------------------------------------------
# model files


def _layer_to_dict(layer: LayerSpec) -> dict:
    has_w = layer.weight is not None
    return {
        "kind": layer.kind,
        "shape": list(layer.weight.shape) if has_w else None,
        "weight": layer.weight.reshape(-1).tolist() if has_w else None,
        "bias": layer.bias.tolist() if layer.bias is not None else None,
        "stride": layer.stride,
        "padding": layer.padding,
        "k": layer.k,
        "activated": layer.activated,
    }


def network_to_dict(net: QNetwork) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "q": net.q,
        "name": net.name,
        "seed": net.seed,
        "input_shape": list(net.input_shape),
        "layers": [_layer_to_dict(layer) for layer in net.layers],
    }


def _require(d: dict, key: str, where: str):
    if key not in d:
        raise ModelFormatError(f"{where}: missing field {key!r}")
    return d[key]


def _layer_from_dict(d: dict, where: str) -> LayerSpec:
    if not isinstance(d, dict):
        raise ModelFormatError(f"{where}: expected an object")
    kind = _require(d, "kind", where)
    if kind not in LAYER_KINDS:
        raise ModelFormatError(f"{where}: unknown layer kind {kind!r}")
    weight = bias = None
    if kind != "avgpool2d":
        shape = _require(d, "shape", where)
        flat = _require(d, "weight", where)
        if not isinstance(shape, list) or not isinstance(flat, list):
            raise ModelFormatError(f"{where}: shape and weight must be arrays")
        expected = int(np.prod(shape))
        if len(flat) != expected:
            raise ModelFormatError(f"{where}: weight has {len(flat)} values, shape {shape} needs {expected}")
        weight = np.array(flat, dtype=np.float64).reshape(shape)
        raw_bias = d.get("bias")
        if raw_bias is not None:
            if len(raw_bias) != shape[0]:
                raise ModelFormatError(f"{where}: bias has {len(raw_bias)} values, expected {shape[0]}")
            bias = np.array(raw_bias, dtype=np.float64)
    try:
        return LayerSpec(
            kind=kind,
            weight=weight,
            bias=bias,
            stride=int(d.get("stride", 1)),
            padding=int(d.get("padding", 0)),
            k=int(d.get("k", 0)),
            activated=bool(_require(d, "activated", where)),
        )
    except (TypeError, ValueError) as exc:
        raise ModelFormatError(f"{where}: {exc}") from exc


def network_from_dict(doc: dict, source: str = "<model>") -> QNetwork:
    if not isinstance(doc, dict):
        raise ModelFormatError(f"{source}: top level must be an object")
    version = _require(doc, "format_version", source)
    if version != FORMAT_VERSION:
        raise ModelFormatError(f"{source}: format_version {version!r} unsupported (expected {FORMAT_VERSION})")
    q = _require(doc, "q", source)
    if not isinstance(q, int) or isinstance(q, bool) or q < 1:
        raise ModelFormatError(f"{source}: q must be a positive integer, got {q!r}")
    raw_layers = _require(doc, "layers", source)
    if not isinstance(raw_layers, list):
        raise ModelFormatError(f"{source}: layers must be an array")
    layers = [_layer_from_dict(d, f"{source}: layers[{i}]") for i, d in enumerate(raw_layers)]
    try:
        return QNetwork(
            layers=layers,
            config=QuantConfig(q),
            input_shape=tuple(_require(doc, "input_shape", source)),
            name=doc.get("name", "net"),
            seed=doc.get("seed"),
        )
    except (ShapeError, ValueError) as exc:
        raise ModelFormatError(f"{source}: {exc}") from exc


def save_model(net: QNetwork, path) -> None:
    Path(path).write_text(json.dumps(network_to_dict(net), indent=1) + "\n", encoding="utf-8")


def load_model(path) -> QNetwork:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"{path}: invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    return network_from_dict(doc, str(path))


def networks_equal(a: QNetwork, b: QNetwork) -> bool:
    """Field-by-field bit-exact comparison."""
    if (a.q, a.input_shape, a.name, a.seed, len(a.layers)) != (b.q, b.input_shape, b.name, b.seed, len(b.layers)):
        return False
    for la, lb in zip(a.layers, b.layers):
        if (la.kind, la.stride, la.padding, la.k, la.activated) != (lb.kind, lb.stride, lb.padding, lb.k, lb.activated):
            return False
        for ta, tb in ((la.weight, lb.weight), (la.bias, lb.bias)):
            if (ta is None) != (tb is None):
                return False
            if ta is not None and (ta.shape != tb.shape or not np.array_equal(ta, tb)):
                return False
    return True


def build_network(
    input_shape: Sequence[int],
    layers: Sequence[dict],
    q: int,
    seed: int = 0,
    name: str = "net",
    bias: bool = True,
) -> QNetwork:
    """Create a network with He-style normal initialisation.

    ``layers`` entries look like ``{"kind": "linear", "out": 16}``,
    ``{"kind": "conv2d", "out": 4, "k": 3, "stride": 1, "padding": 1}`` or
    ``{"kind": "avgpool2d", "k": 2}``. The last entry is the un-activated output.
    """
    rng = np.random.default_rng(seed)
    shape = tuple(input_shape)
    specs = []
    for i, d in enumerate(layers):
        activated = i < len(layers) - 1
        kind = d["kind"]
        if kind == "avgpool2d":
            spec = LayerSpec("avgpool2d", k=d["k"], stride=d.get("stride", d["k"]), activated=activated)
        else:
            if kind == "linear":
                fan_in = int(np.prod(shape))
                w_shape = (d["out"], fan_in)
            else:
                k = d["k"]
                fan_in = shape[0] * k * k
                w_shape = (d["out"], shape[0], k, k)
            std = d.get("std", math.sqrt(2.0 / fan_in))
            w = rng.normal(0.0, std, size=w_shape)
            b = rng.normal(0.0, d.get("bias_std", 0.1), size=w_shape[0]) if bias else None
            spec = LayerSpec(kind, w, b, stride=d.get("stride", 1), padding=d.get("padding", 0), activated=activated)
        shape = spec.output_shape(shape)
        specs.append(spec)
    return QNetwork(specs, QuantConfig(q), tuple(input_shape), name=name, seed=seed)
