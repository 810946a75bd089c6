"""Command-line front end: ``convex-relu {train,decompose,synth,bench}``."""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .data import Dataset, normalize_columns
from .decomp import CdaConfig, decompose_model
from .fista import VARIANTS, GReLUConfig
from .grelu import objective as grelu_objective
from .grelu import solve_grelu
from .io import DataError, load_csv, save_csv
from .network import (
    accuracy,
    grelu_to_network,
    load_model,
    model_from_dict,
    model_to_dict,
    nc_objective,
    predict,
    to_normalized_features,
    to_raw_features,
)
from .patterns import patterns_from_weights, sample_gate_patterns, union, with_witness_gates
from .relu import ALConfig, constraint_gap, relu_to_network, solve_relu
from .synth import synth_realizable

logger = logging.getLogger("convex_relu")

EXIT_OK, EXIT_ERROR, EXIT_MAX_ITERS = 0, 1, 2


def _add_data_args(p: argparse.ArgumentParser) -> None:
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--data", type=Path, help="training CSV")
    src.add_argument("--synth", action="store_true", help="generate a realizable synthetic problem")
    p.add_argument("--target", default="-1", help="target column name or index (default: last)")
    p.add_argument("--one-hot", action="store_true", help="one-hot encode multi-class targets")
    p.add_argument("--test-data", type=Path, help="optional held-out CSV")
    p.add_argument("--n", type=int, default=250, help="synthetic training rows")
    p.add_argument("--n-test", type=int, default=250, help="synthetic test rows")
    p.add_argument("--d", type=int, default=50, help="synthetic feature count")
    p.add_argument("--teacher-width", type=int, default=100)
    p.add_argument("--cond", type=float, default=10.0, help="covariance condition number")


def _add_solver_args(p: argparse.ArgumentParser, solver: bool = True) -> None:
    if solver:
        p.add_argument("--solver", choices=("grelu", "relu"), default="relu")
    p.add_argument("--variant", choices=VARIANTS, default="rfista")
    p.add_argument("--lambda", dest="lam", type=float, default=1e-4)
    p.add_argument("--patterns", type=int, default=100, help="number of sampled gates")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=1e-3,
                   help="stationarity tolerance on the subgradient norm (and constraint gap for relu)")
    p.add_argument("--max-iters", type=int, default=10000,
                   help="iteration cap (total inner budget for relu)")
    p.add_argument("--gate-sampler", default="gaussian", help="'gaussian' or 'patch:<h>x<w>'")
    p.add_argument("--image-shape", help="HxW or HxWxC for patch sampling")
    p.add_argument("--patterns-from", type=Path, help="model JSON whose first layer adds harvested patterns")
    p.add_argument("--out", type=Path, help="report JSON (default: stdout)")
    p.add_argument("--model-out", type=Path, help="model JSON")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="convex-relu", description=__doc__)
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train", help="fit a Gated-ReLU or ReLU model")
    _add_data_args(train)
    _add_solver_args(train)

    dec = sub.add_parser("decompose", help="fit Gated-ReLU then decompose into a ReLU model")
    _add_data_args(dec)
    _add_solver_args(dec, solver=False)
    dec.add_argument("--rho", type=float, default=1e-10)
    dec.add_argument("--method", choices=("auto", "closed_form", "cd_approx"), default="auto")

    syn = sub.add_parser("synth", help="write a synthetic dataset to CSV")
    syn.add_argument("--n", type=int, default=250)
    syn.add_argument("--d", type=int, default=50)
    syn.add_argument("--teacher-width", type=int, default=100)
    syn.add_argument("--cond", type=float, default=10.0)
    syn.add_argument("--seed", type=int, default=0)
    syn.add_argument("--out", type=Path, required=True)

    bench = sub.add_parser("bench", help="solve several synthetic problems concurrently")
    bench.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    bench.add_argument("--workers", type=int, default=1)
    bench.add_argument("--out-dir", type=Path, required=True)
    bench.add_argument("--n", type=int, default=250)
    bench.add_argument("--n-test", type=int, default=250)
    bench.add_argument("--d", type=int, default=50)
    bench.add_argument("--teacher-width", type=int, default=100)
    bench.add_argument("--cond", type=float, default=10.0)
    _add_solver_args(bench)
    return parser


def _parse_shape(text: str | None):
    if text is None:
        return None
    return tuple(int(s) for s in text.lower().split("x"))


def _load_data(args) -> tuple[Dataset, Dataset | None]:
    if args.synth:
        full = synth_realizable(args.n + args.n_test, args.d, args.teacher_width, args.cond, args.seed)
        return full.split(args.n) if args.n_test > 0 else (full, None)
    train = load_csv(args.data, args.target, args.one_hot)
    test = load_csv(args.test_data, args.target, args.one_hot) if args.test_data else None
    return train, test


def _patterns(args, X: np.ndarray, scaler):
    ps = sample_gate_patterns(X, args.patterns, args.seed, args.gate_sampler, _parse_shape(args.image_shape))
    if args.patterns_from is not None:
        net, model_scaler = load_model(args.patterns_from)
        net = to_normalized_features(net, model_scaler or scaler)
        harvested = patterns_from_weights(X, net.W1.T)
        ps = union(ps, harvested)
    if ps.gates is None:
        ps = with_witness_gates(ps, X)
    return ps


def _summary(trace: list[float]) -> dict:
    return {"first": trace[0], "last": trace[-1], "length": len(trace), "min": min(trace)} if trace else {}


def _finite(x: float):
    return x if math.isfinite(x) else None


def _evaluate(doc: dict, train_n: Dataset, test: Dataset | None, scaler, lam: float) -> dict:
    """Metrics recomputed from the serialized model document."""
    net_raw, _ = model_from_dict(json.loads(json.dumps(doc)))
    net = to_normalized_features(net_raw, scaler)
    out = {
        "objective": nc_objective(net, train_n, lam),
        "train_accuracy": accuracy(predict(net, train_n.features), train_n.targets),
        "width": net.width,
    }
    if test is not None:
        out["test_accuracy"] = accuracy(predict(net_raw, test.features), test.targets)
    return out


def run(args) -> tuple[dict, dict | None, int]:
    """Execute one ``train``/``decompose`` spec; returns ``(report, model, exit code)``."""
    train, test = _load_data(args)
    train_n, scaler = normalize_columns(train)
    X = train_n.features
    ps = _patterns(args, X, scaler)
    if len(ps) == 0:
        raise DataError("no nonzero activation patterns could be sampled")
    grad_tol = args.tol**2
    report: dict = {
        "command": args.command,
        "n": train.n, "d": train.d, "c": train.c, "patterns": len(ps),
        "lambda": args.lam, "seed": args.seed, "variant": args.variant,
    }
    solver = getattr(args, "solver", "grelu")

    if args.command == "train" and solver == "relu":
        config = ALConfig(lam=args.lam, gap_tol=args.tol, stat_tol=args.tol,
                          total_inner_budget=args.max_iters,
                          inner=GReLUConfig(max_iters=1000, variant=args.variant))
        weights, _, rep = solve_relu(train_n, ps, config)
        net = relu_to_network(weights)
        report["constraint_gap"] = constraint_gap(weights.v, weights.w, ps, X)
        report["convex_objective"] = rep.objective_trace[-1]
        report["group_norm"] = weights.group_norm()
        report["delta"] = rep.delta
        report["outer_iterations"] = rep.outer_iterations
    else:
        config = GReLUConfig(lam=args.lam, max_iters=args.max_iters, grad_tol=grad_tol, variant=args.variant)
        U, rep = solve_grelu(train_n, ps, config)
        report["convex_objective"] = grelu_objective(U, ps, X, train_n.targets, args.lam)
        report["group_norm"] = float(np.sum(np.linalg.norm(U, axis=1)))
        if args.command == "decompose":
            weights, drep = decompose_model(U, ps, X, CdaConfig(rho=args.rho), args.method)
            net = relu_to_network(weights)
            report["solver"] = "decompose"
            report["blowup"] = _finite(drep.blowup)
            report["max_residual"] = drep.max_residual
            report["failed_blocks"] = drep.failed
            report["decomposition_method"] = drep.method
            report["constraint_gap"] = constraint_gap(weights.v, weights.w, ps, X)
            report["decomposed_group_norm"] = weights.group_norm()
        else:
            net = grelu_to_network(U, ps)
    report.setdefault("solver", solver)

    doc = model_to_dict(to_raw_features(net, scaler), scaler)
    report.update(_evaluate(doc, train_n, test, scaler, args.lam))
    report.update({
        "status": rep.status,
        "iterations": rep.iterations,
        "data_passes": rep.data_passes,
        "stationarity": math.sqrt(rep.final_subgrad_sq),
        "objective_trace": _summary(rep.objective_trace),
        "wall_time": rep.wall_time,
    })
    code = EXIT_OK if rep.status == "converged" else EXIT_MAX_ITERS
    return report, doc, code


def _write_json(doc: dict, path: Path | None) -> None:
    text = json.dumps(doc, sort_keys=True, indent=1, allow_nan=False) + "\n"
    if path is None:
        sys.stdout.write(text)
    else:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)


def _cmd_run(args) -> int:
    report, doc, code = run(args)
    if args.model_out is not None:
        _write_json(doc, args.model_out)
    _write_json(report, args.out)
    return code


def _cmd_synth(args) -> int:
    save_csv(args.out, synth_realizable(args.n, args.d, args.teacher_width, args.cond, args.seed))
    return EXIT_OK


def _cmd_bench(args) -> int:
    args.out_dir.mkdir(parents=True, exist_ok=True)

    def one(seed: int) -> int:
        spec = argparse.Namespace(**vars(args))
        spec.command, spec.synth, spec.seed = "train", True, seed
        spec.out = args.out_dir / f"report_seed{seed}.json"
        spec.model_out = args.out_dir / f"model_seed{seed}.json"
        return _cmd_run(spec)

    with ThreadPoolExecutor(max_workers=max(1, args.workers)) as pool:
        codes = list(pool.map(one, args.seeds))
    return max(codes)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    handlers = {"train": _cmd_run, "decompose": _cmd_run, "synth": _cmd_synth, "bench": _cmd_bench}
    try:
        return handlers[args.command](args)
    except (DataError, ValueError, OSError, FloatingPointError) as exc:
        logger.error("%s", exc)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
