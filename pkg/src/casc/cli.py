"""Command-line entry point: ``casc {train,simulate,demo-eq7,qsweep}``.

Exit codes: 0 success, 2 usage/config error, 3 data/shape error,
4 internal invariant breach.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import diagnostics as dg
from .datasets import TASKS
from .errors import InvariantError, ModelFormatError, ShapeError
from .qann import QNetwork, ann_forward, build_network, cqrelu, load_model, save_model
from .snn import REGIMES, WscSchedule, run_regime
from .train import Hyper, TrainingDiverged, train_ste
from .zoo import BUNDLED, CNN_LAYERS, MLP_LAYERS, adversarial_inputs, load_bundled, scalar_model

log = logging.getLogger("casc")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 2, 3, 4
LOG_LEVELS = {"quiet": logging.WARNING, "info": logging.INFO, "trace": logging.DEBUG}
LOGIT_TOL = 1e-6


class UsageError(Exception):
    pass


def _setup_logging():
    level = os.environ.get("CASC_LOG", "quiet")
    if level not in LOG_LEVELS:
        raise UsageError(f"CASC_LOG must be one of {sorted(LOG_LEVELS)}, got {level!r}")
    logging.basicConfig(level=LOG_LEVELS[level], format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def _out_dir(path) -> Path:
    out = Path(path)
    if out.exists() and not out.is_dir():
        raise UsageError(f"--out {out} exists and is not a directory")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _resolve_model(spec: str, q: Optional[int]) -> QNetwork:
    if spec in BUNDLED:
        net = load_bundled(spec)
    else:
        path = Path(spec)
        if not path.is_file():
            raise UsageError(f"--model {spec}: no such file (or bundled model name: {', '.join(BUNDLED)})")
        net = load_model(path)
    return net.with_q(q) if q is not None and q != net.q else net


def _resolve_input(spec: Optional[str], net: QNetwork, seed: int) -> np.ndarray:
    if spec is None:
        return np.random.default_rng(seed).uniform(0.0, 1.0, size=net.input_shape)
    text = spec
    if not spec.lstrip().startswith(("[", "{")) and not spec.lstrip()[:1].isdigit() and not spec.lstrip().startswith("-"):
        path = Path(spec)
        if not path.is_file():
            raise UsageError(f"--input {spec}: not a file and not inline JSON")
        text = path.read_text(encoding="utf-8")
    try:
        value = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ShapeError(f"--input is not valid JSON: {exc.msg}") from exc
    arr = np.asarray(value, dtype=np.float64)
    if arr.size != int(np.prod(net.input_shape)):
        raise ShapeError(f"input has {arr.size} values, model expects shape {net.input_shape}")
    return arr.reshape(net.input_shape)


def _check_schedule(net: QNetwork, t_max: Optional[int]):
    if t_max is not None:
        try:
            WscSchedule(net.q, t_max)
        except ValueError as exc:
            raise UsageError(str(exc)) from exc


def _run_one(net: QNetwork, x, regime: str, t_max: Optional[int], quiescence_stop: bool = True, watch=None):
    logits, acts = ann_forward(net, x)
    res = run_regime(net, x, regime, t_max=t_max, quiescence_stop=quiescence_stop, watch=watch)
    mism = dg.spike_mismatch(res.counts, acts, net.q, res.horizon)
    layer_exact = [m.more_ratio == 0 and m.less_ratio == 0 for m in mism]
    logits_ok = bool(np.all(np.abs(res.decoded - logits) <= LOGIT_TOL))
    return logits, acts, res, layer_exact, logits_ok


def _fmt_list(a) -> list:
    return np.asarray(a, dtype=np.float64).reshape(-1).tolist()


# -- commands -------------------------------------------------------------------


def cmd_train(args) -> int:
    out = _out_dir(args.out)
    make = TASKS[args.task]
    x, y = make(n=args.n, seed=args.seed)
    arch = args.arch or ("cnn" if args.task == "bars" else "mlp")
    if arch == "cnn":
        if x.ndim != 4:
            raise UsageError(f"task {args.task} does not produce images for a CNN")
        net = build_network(x.shape[1:], CNN_LAYERS, args.q, seed=args.seed, name=f"{args.task}-cnn")
    else:
        x = x.reshape(len(x), -1)
        net = build_network(x.shape[1:], MLP_LAYERS, args.q, seed=args.seed, name=f"{args.task}-mlp")
    history: List[dict] = []
    hyper = Hyper(lr=args.lr, epochs=args.epochs, batch=args.batch, seed=args.seed)
    net = train_ste(net, x, y, hyper, history)
    save_model(net, out / "model.json")
    with (out / "train_curve.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "loss", "accuracy"])
        for h in history:
            w.writerow([h["epoch"], format(h["loss"], ".9g"), format(h["accuracy"], ".9g")])
    metrics = {
        "task": args.task,
        "arch": arch,
        "q": args.q,
        "seed": args.seed,
        "epochs": args.epochs,
        "initial_loss": history[0]["loss"],
        "final_loss": history[-1]["loss"],
        "final_accuracy": history[-1]["accuracy"],
    }
    (out / "metrics.json").write_text(json.dumps(metrics, indent=1) + "\n", encoding="utf-8")
    print(f"trained {net.name}: loss {metrics['initial_loss']:.4f} -> {metrics['final_loss']:.4f}, "
          f"accuracy {metrics['final_accuracy']:.4f}; wrote {out / 'model.json'}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    net = _resolve_model(args.model, args.q)
    _check_schedule(net, args.t_max)
    out = _out_dir(args.out)
    x = _resolve_input(args.input, net, args.seed)
    logits, acts, res, layer_exact, logits_ok = _run_one(net, x, args.regime, args.t_max, watch="all")
    results = {
        "decoded": _fmt_list(res.decoded),
        "ann_logits": _fmt_list(logits),
        "layer_exact": layer_exact,
        "quiescence_step": res.trace.quiescence_step,
        "regime": args.regime,
        "seed": args.seed,
        "q": net.q,
        "steps": res.trace.steps,
        "horizon": res.horizon,
        "hidden_rates": [_fmt_list(h) for h in res.hidden],
        "lossless": bool(all(layer_exact) and logits_ok),
    }
    (out / "results.json").write_text(json.dumps(results, indent=1) + "\n", encoding="utf-8")
    report = dg.build_report(res, logits, acts, net.q, seed=args.seed)
    for kind in ("mismatch", "relerr", "firing_ratio", "mse"):
        dg.export_csv(report, out / f"{kind}.csv", kind)
    dg.export_csv(res.trace, out / "trace.csv")
    print(json.dumps({k: results[k] for k in ("regime", "lossless", "quiescence_step", "layer_exact")}))
    return EXIT_OK


def eq7_rows(xs, q: int = 8, T: int = 16):
    """``(x, q, T, cqrelu, IF rate, CASC decoded)`` for each x on the scalar model."""
    net = scalar_model(q)
    rows = []
    for x in xs:
        base = run_regime(net, [x], "baseline-if", t_max=T)
        casc = run_regime(net, [x], "casc", t_max=T)
        rows.append((float(x), q, T, cqrelu(float(x), q), float(base.hidden[0][0]), float(casc.hidden[0][0])))
    return rows


def cmd_demo_eq7(args) -> int:
    xs = [0.58] + [float(v) for v in args.sweep]
    print(f"{'x':>8} {'Q':>4} {'T':>4} {'cqrelu':>8} {'IF rate':>8} {'CASC':>8}")
    for x, q, T, cq, rate, casc in eq7_rows(xs, args.q, args.t):
        print(f"{x:8.4f} {q:4d} {T:4d} {cq:8.4f} {rate:8.4f} {casc:8.4f}")
    return EXIT_OK


def qsweep_row(net: QNetwork, inputs, regime: str, q: int) -> dict:
    """One Q-sweep row: exactness over all inputs and the slowest settling time."""
    mode_wsc = REGIMES[regime][1]
    net = net.with_q(q)
    t_max = 8 * q if mode_wsc else 2 * q
    exact = True
    steps: Optional[int] = 0
    for x in inputs:
        _, _, res, layer_exact, logits_ok = _run_one(net, x, regime, t_max)
        exact = exact and all(layer_exact) and logits_ok
        if mode_wsc:
            qs = res.trace.quiescence_step
            steps = None if qs is None or steps is None else max(steps, qs)
        else:
            steps = None
    bound = 2 * q + net.num_activated
    return {
        "q": q,
        "regime": regime,
        "steps_to_quiescence": steps,
        "exact_match": exact,
        "bound": bound,
        "margin": None if steps is None else bound - steps,
    }


def run_qsweep(net: QNetwork, inputs, qs, regimes, workers: int = 1, retrain=None) -> List[dict]:
    jobs = [(q, r) for q in qs for r in regimes]

    def job(qr):
        q, r = qr
        model = retrain(q) if retrain is not None else net
        try:
            return qsweep_row(model, inputs, r, q)
        except (ValueError, InvariantError) as exc:
            log.warning("qsweep row Q=%d regime=%s failed: %s", q, r, exc)
            return {"q": q, "regime": r, "steps_to_quiescence": None, "exact_match": False,
                    "bound": 2 * q + net.num_activated, "margin": None, "error": str(exc)}

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(job, jobs))
    return [job(j) for j in jobs]


def cmd_qsweep(args) -> int:
    net = _resolve_model(args.model, None)
    out = _out_dir(args.out)
    if args.input is not None:
        inputs = [_resolve_input(args.input, net, args.seed)]
    elif args.model in BUNDLED:
        inputs = adversarial_inputs(args.model)
    else:
        rng = np.random.default_rng(args.seed)
        inputs = [rng.uniform(0.0, 1.0, size=net.input_shape) for _ in range(args.n_inputs)]
    retrain = None
    if args.retrain:
        task = TASKS[args.retrain]

        def retrain(q):
            x, y = task(seed=args.seed)
            layers = CNN_LAYERS if x.ndim == 4 else MLP_LAYERS
            fresh = build_network(x.shape[1:], layers, q, seed=args.seed, name=f"{args.retrain}-q{q}")
            return train_ste(fresh, x, y, Hyper(seed=args.seed))

    rows = run_qsweep(net, inputs, args.qs, args.regimes, args.workers, retrain)
    cols = ["q", "regime", "steps_to_quiescence", "exact_match", "bound", "margin"]
    with (out / "qsweep.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for row in rows:
            w.writerow(["" if row[c] is None else str(row[c]).lower() if isinstance(row[c], bool) else row[c] for c in cols])
    for row in rows:
        note = ""
        if row["margin"] is not None and row["margin"] < 0:
            note = f"  (exceeds 2Q+L by {-row['margin']})"
        print(f"Q={row['q']:<3d} {row['regime']:<12s} steps={row['steps_to_quiescence']} exact={row['exact_match']}{note}")
    return EXIT_OK


# -- parser ---------------------------------------------------------------------


def _positive(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}")
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {v}")
    return v


def _int_list(text: str) -> List[int]:
    return [_positive(t) for t in text.split(",") if t]


def _regime_list(text: str) -> List[str]:
    names = [t for t in text.split(",") if t]
    for n in names:
        if n not in REGIMES:
            raise argparse.ArgumentTypeError(f"unknown regime {n!r}; choose from {', '.join(REGIMES)}")
    return names


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="casc", description="Quantized ANN to SNN conversion with CIF neurons and wake-sleep scheduling.")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a toy CQReLU network on a synthetic task")
    t.add_argument("--task", choices=sorted(TASKS), default="blobs")
    t.add_argument("--arch", choices=["mlp", "cnn"])
    t.add_argument("--q", type=_positive, default=8)
    t.add_argument("--epochs", type=int, default=30)
    t.add_argument("--lr", type=float, default=0.05)
    t.add_argument("--batch", type=_positive, default=32)
    t.add_argument("--n", type=_positive, default=400, help="dataset size")
    t.add_argument("--seed", type=int, default=7)
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("simulate", help="convert a model and simulate one input")
    s.add_argument("--model", required=True, help=f"model JSON path or bundled name ({', '.join(BUNDLED)})")
    s.add_argument("--input", help="JSON file or inline JSON array; random in [0,1) when omitted")
    s.add_argument("--regime", choices=list(REGIMES), default="casc")
    s.add_argument("--q", type=_positive, help="override the model's quantization level")
    s.add_argument("--t-max", type=_positive, dest="t_max", help="step budget (default 8Q)")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate)

    d = sub.add_parser("demo-eq7", help="first-layer overshoot of plain IF versus CQReLU")
    d.add_argument("--q", type=_positive, default=8)
    d.add_argument("--t", type=_positive, default=16)
    d.add_argument("--sweep", type=float, nargs="*", default=[0.0, 0.1, 0.25, 0.33, 0.5, 0.7, 0.95, 1.3])
    d.set_defaults(func=cmd_demo_eq7)

    w = sub.add_parser("qsweep", help="settling time and exactness across quantization levels")
    w.add_argument("--model", default="mlp")
    w.add_argument("--qs", type=_int_list, default=[4, 8, 16, 32])
    w.add_argument("--regimes", type=_regime_list, default=["casc", "baseline-if"])
    w.add_argument("--input")
    w.add_argument("--n-inputs", type=_positive, default=8, dest="n_inputs")
    w.add_argument("--retrain", choices=sorted(TASKS), help="train a fresh model per Q on this task")
    w.add_argument("--workers", type=_positive, default=1)
    w.add_argument("--seed", type=int, default=0)
    w.add_argument("--out", required=True)
    w.set_defaults(func=cmd_qsweep)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _setup_logging()
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"casc: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ShapeError, ModelFormatError) as exc:
        print(f"casc: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except TrainingDiverged as exc:
        print(f"casc: training failed: {exc}", file=sys.stderr)
        return EXIT_DATA
    except InvariantError as exc:
        print(f"casc: internal invariant breached: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except OSError as exc:
        print(f"casc: I/O error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
