"""Bundled toy models and the adversarial inputs shipped with them.

Run ``python -m casc.zoo`` to regenerate the files under ``casc/data``.
"""

from __future__ import annotations

import json
from importlib import resources
from pathlib import Path
from typing import Dict, List

import numpy as np

from .datasets import bars, blobs
from .qann import LayerSpec, QNetwork, QuantConfig, build_network, load_model, save_model
from .train import Hyper, train_ste

BUNDLED = ("scalar", "mlp", "cnn")
DATA_DIR = Path(__file__).with_name("data")

MLP_LAYERS = [{"kind": "linear", "out": 16}, {"kind": "linear", "out": 16}, {"kind": "linear", "out": 2}]
CNN_LAYERS = [
    {"kind": "conv2d", "out": 4, "k": 3, "padding": 1},
    {"kind": "avgpool2d", "k": 2},
    {"kind": "conv2d", "out": 8, "k": 3, "padding": 1},
    {"kind": "avgpool2d", "k": 2},
    {"kind": "linear", "out": 2},
]


def scalar_model(q: int = 8) -> QNetwork:
    """One hidden neuron fed the raw input through a unit weight, read out unchanged."""
    hidden = LayerSpec("linear", np.array([[1.0]]), None, activated=True)
    out = LayerSpec("linear", np.array([[1.0]]), None, activated=False)
    return QNetwork([hidden, out], QuantConfig(q), (1,), name="scalar", seed=0)


def train_mlp(q: int = 8, seed: int = 7) -> QNetwork:
    x, y = blobs(seed=seed)
    net = build_network((2,), MLP_LAYERS, q, seed=seed, name="mlp")
    return train_ste(net, x, y, Hyper(lr=0.05, epochs=30, batch=32, seed=seed))


def train_cnn(q: int = 8, seed: int = 7) -> QNetwork:
    x, y = bars(seed=seed)
    net = build_network((1, 8, 8), CNN_LAYERS, q, seed=seed, name="cnn")
    return train_ste(net, x, y, Hyper(lr=0.05, epochs=30, batch=32, seed=seed))


def load_bundled(name: str) -> QNetwork:
    if name not in BUNDLED:
        raise KeyError(f"unknown bundled model {name!r}; choose from {BUNDLED}")
    return load_model(resources.files("casc").joinpath("data").joinpath(f"{name}.json"))


def adversarial_inputs(name: str) -> List[np.ndarray]:
    """Inputs on which the baseline IF conversion overshoots in the first layer."""
    doc = json.loads(resources.files("casc").joinpath("data").joinpath("adversarial.json").read_text(encoding="utf-8"))
    net = load_bundled(name)
    return [np.array(v, dtype=np.float64).reshape(net.input_shape) for v in doc[name]]


def _pick_adversarial(net: QNetwork, candidates: np.ndarray, n: int = 3) -> List[list]:
    # rank by first-layer overshoot of the baseline rate at T = 2Q; keep only
    # inputs where every layer is still firing at the last step
    from .diagnostics import spike_mismatch
    from .qann import ann_forward
    from .snn import run_regime

    scored = []
    for i, x in enumerate(candidates):
        _, acts = ann_forward(net, x)
        res = run_regime(net, x, "baseline-if", t_max=2 * net.q)
        more = spike_mismatch(res.counts[:1], acts[:1], net.q, res.horizon)[0].more_ratio
        if more > 0 and np.all(res.trace.fired[-1] > 0):
            scored.append((-more, i))
    scored.sort()
    return [np.asarray(candidates[i]).reshape(-1).tolist() for _, i in scored[:n]]


def build_bundled(out_dir: Path = DATA_DIR) -> Dict[str, QNetwork]:
    out_dir.mkdir(parents=True, exist_ok=True)
    nets = {"scalar": scalar_model(), "mlp": train_mlp(), "cnn": train_cnn()}
    for name, net in nets.items():
        save_model(net, out_dir / f"{name}.json")
    adversarial = {
        "scalar": [[0.58]],
        "mlp": _pick_adversarial(nets["mlp"], blobs(n=64, seed=11)[0]),
        "cnn": _pick_adversarial(nets["cnn"], bars(n=64, seed=11)[0]),
    }
    (out_dir / "adversarial.json").write_text(json.dumps(adversarial, indent=1) + "\n", encoding="utf-8")
    return nets


if __name__ == "__main__":
    build_bundled()
