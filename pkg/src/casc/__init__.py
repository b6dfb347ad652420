"""Quantized ANN to spiking network conversion with consistent IF neurons and wake-sleep scheduling."""

from .qann import QNetwork, QuantConfig, LayerSpec, ann_forward, cqrelu, fold_batchnorm, load_model, save_model
from .snn import REGIMES, NeuronArray, WscSchedule, convert, decode, run_regime, simulate, step_cif, step_if

__version__ = "0.1.0"
