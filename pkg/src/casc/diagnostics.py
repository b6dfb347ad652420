"""Conversion-error analyses over simulation traces, plus CSV export."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Set

import numpy as np

from .errors import InvariantError, ShapeError
from .snn import SimTrace

CSV_COLUMNS = {
    "firing_ratio": ("layer", "step", "ratio"),
    "mismatch": ("layer", "more_ratio", "less_ratio"),
    "relerr": ("layer", "mean", "median", "p5", "p95"),
    "trace": ("step", "layer", "neuron", "I", "X", "V", "s", "Y"),
    "mse": ("step", "mse"),
}


def _series(trace: SimTrace, neuron):
    col = trace.column(neuron)
    return trace.X[:, col], trace.Y[:, col]


def stable_points(trace: SimTrace, neuron) -> Set[int]:
    """Steps where the cumulative count equals ``floor`` of the cumulative input."""
    X, Y = _series(trace, neuron)
    return {t for t in range(len(X)) if Y[t] == math.floor(X[t])}


@dataclass
class BoundViolations:
    upper: Set[int]
    lower: bool
    target: int
    last_stable: int


def bound_violations(trace: SimTrace, neuron, target: Optional[int] = None) -> BoundViolations:
    """Check the two conditions a neuron needs for its final count to be exact.

    ``upper`` holds steps where the count exceeds ``target`` (by default
    ``floor(X[T])``). ``lower`` is true when the steps remaining after the
    last stable point are fewer than the spikes still owed. The state before
    the first step (``X = Y = 0``) counts as a stable point at step -1.
    """
    X, Y = _series(trace, neuron)
    if len(X) == 0:
        return BoundViolations(set(), False, 0 if target is None else target, -1)
    final_floor = math.floor(X[-1])
    if target is None:
        target = final_floor
    upper = {t for t in range(len(Y)) if Y[t] > target}
    stable = [t for t in range(len(X)) if Y[t] == math.floor(X[t])]
    last = stable[-1] if stable else -1
    owed = final_floor - (math.floor(X[last]) if last >= 0 else 0)
    budget = (len(X) - 1) - last
    return BoundViolations(upper, budget < owed, target, last)


def _expected_counts(ann_act: np.ndarray, q: int) -> np.ndarray:
    scaled = np.asarray(ann_act, dtype=np.float64) * q
    levels = np.rint(scaled)
    if np.any(np.abs(scaled - levels) > 1e-9 * q):
        raise InvariantError("ANN activation is not a multiple of 1/Q")
    return levels.astype(np.int64)


@dataclass
class Mismatch:
    more_ratio: float
    less_ratio: float


def spike_mismatch(snn_counts: Sequence, ann_acts: Sequence, q: int, horizon: Optional[int] = None) -> List[Mismatch]:
    """Fraction of neurons per layer with more / fewer spikes than the ANN implies.

    The expected count is ``horizon * a`` with ``horizon`` defaulting to ``q``;
    comparisons are done in integers as ``counts * q`` versus ``horizon * (q * a)``.
    """
    horizon = q if horizon is None else horizon
    out = []
    for l, (c, a) in enumerate(zip(snn_counts, ann_acts)):
        c = np.asarray(c)
        if c.shape != np.shape(a):
            raise ShapeError(f"layer {l}: counts {c.shape} vs activations {np.shape(a)}")
        lhs = c.astype(np.int64) * q
        rhs = _expected_counts(a, q) * horizon
        n = max(c.size, 1)
        out.append(Mismatch(float(np.count_nonzero(lhs > rhs)) / n, float(np.count_nonzero(lhs < rhs)) / n))
    return out


@dataclass
class ErrorSummary:
    mean: float
    median: float
    p5: float
    p95: float


def relative_error(snn_counts: Sequence, ann_acts: Sequence, q: int, horizon: Optional[int] = None) -> List[ErrorSummary]:
    """Per-layer summary of ``(counts/horizon - a) / max(a, 1/q)``."""
    horizon = q if horizon is None else horizon
    out = []
    for l, (c, a) in enumerate(zip(snn_counts, ann_acts)):
        c = np.asarray(c, dtype=np.float64)
        a = np.asarray(a, dtype=np.float64)
        if c.shape != a.shape:
            raise ShapeError(f"layer {l}: counts {c.shape} vs activations {a.shape}")
        e = ((c / horizon - a) / np.maximum(a, 1.0 / q)).reshape(-1)
        if e.size == 0:
            e = np.zeros(1)
        p5, med, p95 = np.percentile(e, [5, 50, 95])
        out.append(ErrorSummary(float(e.mean()), float(med), float(p5), float(p95)))
    return out


def firing_ratio(trace: SimTrace) -> np.ndarray:
    """``[layers, steps]`` fraction of each layer emitting a spike of either sign."""
    sizes = np.asarray(trace.layer_sizes, dtype=np.float64)
    if trace.fired.size == 0:
        return np.zeros((len(sizes), trace.steps))
    return (trace.fired / sizes[None, :]).T


def output_mse(decoded, ann_logits) -> float:
    d = np.asarray(decoded, dtype=np.float64) - np.asarray(ann_logits, dtype=np.float64)
    return float(np.mean(d * d)) if d.size else 0.0


@dataclass
class DiagnosticsReport:
    mismatch: List[Mismatch] = field(default_factory=list)
    relerr: List[ErrorSummary] = field(default_factory=list)
    mse: Dict[int, float] = field(default_factory=dict)
    firing: Optional[np.ndarray] = None
    seed: Optional[int] = None


def build_report(result, ann_logits, ann_acts, q: int, seed: Optional[int] = None) -> DiagnosticsReport:
    """Assemble the standard report for one ``SimResult``."""
    return DiagnosticsReport(
        mismatch=spike_mismatch(result.counts, ann_acts, q, result.horizon),
        relerr=relative_error(result.counts, ann_acts, q, result.horizon),
        mse={result.trace.steps: output_mse(result.decoded, ann_logits)},
        firing=firing_ratio(result.trace),
        seed=seed,
    )


# -- CSV -----------------------------------------------------------------------


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return format(float(v), ".9g")


def _write(path, kind: str, rows) -> Path:
    path = Path(path)
    try:
        with path.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CSV_COLUMNS[kind])
            for row in rows:
                w.writerow([_fmt(v) for v in row])
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc
    return path


def export_csv(obj, path, kind: Optional[str] = None) -> Path:
    """Write a report section or a trace as CSV.

    ``kind`` selects the schema (see ``CSV_COLUMNS``). A ``SimTrace`` defaults
    to ``trace``; a ``DiagnosticsReport`` must name its section.
    """
    if isinstance(obj, SimTrace):
        kind = kind or "trace"
        if kind == "firing_ratio":
            return _write(path, kind, _firing_rows(firing_ratio(obj)))
        if kind != "trace":
            raise ValueError(f"a trace exports as 'trace' or 'firing_ratio', not {kind!r}")
        rows = (
            (t, l, i, obj.I[t, c], obj.X[t, c], obj.V[t, c], obj.s[t, c], obj.Y[t, c])
            for t in range(obj.steps)
            for c, (l, i) in enumerate(obj.watched)
        )
        return _write(path, kind, rows)
    if not isinstance(obj, DiagnosticsReport):
        raise TypeError(f"cannot export {type(obj).__name__}")
    if kind == "mismatch":
        rows = ((l, m.more_ratio, m.less_ratio) for l, m in enumerate(obj.mismatch))
    elif kind == "relerr":
        rows = ((l, e.mean, e.median, e.p5, e.p95) for l, e in enumerate(obj.relerr))
    elif kind == "firing_ratio":
        rows = _firing_rows(obj.firing if obj.firing is not None else np.zeros((0, 0)))
    elif kind == "mse":
        rows = sorted(obj.mse.items())
    else:
        raise ValueError(f"unknown report section {kind!r}")
    return _write(path, kind, rows)


def _firing_rows(ratio: np.ndarray):
    for l in range(ratio.shape[0]):
        for t in range(ratio.shape[1]):
            yield l, t, ratio[l, t]


def read_csv(path) -> List[dict]:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))
