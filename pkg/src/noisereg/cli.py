"""Command-line interface.

Exit codes: 0 success, 1 data or runtime error, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from . import experiments
from .data import (
    Dataset,
    DataFormatError,
    ScalingReport,
    UnlabeledSet,
    apply_scaling,
    normalize_columns,
    read_sparse_dataset,
    write_sparse_dataset,
)
from .glm import GlmFamily, PartitionRangeError, predict_dataset
from .noising import NoiseModel
from .optim import BatchConfig, NonFiniteObjectiveError, PenaltyMode, fit_glm
from .semisup import fit_semisup
from .simgen import SimConfig, generate_rare_feature_dataset

log = logging.getLogger("noisereg")


class CliError(Exception):
    """Data or runtime failure reported with exit code 1."""


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _report(name: str, params: dict, row: dict) -> experiments.ExperimentReport:
    return experiments.ExperimentReport(name, params, [row])


# --------------------------------------------------------------------------
# model files
# --------------------------------------------------------------------------


def save_model(path, family: GlmFamily, noise: NoiseModel | None, penalty: str, beta, scaling: ScalingReport,
               vocabulary_path: str | None = None) -> None:
    model = {
        "family": family.value,
        "penalty": penalty,
        "noise": noise.to_dict() if noise else None,
        "dim": int(len(beta)),
        "beta": [float(b) for b in beta],
        "scaling": [float(f) for f in scaling.factors],
    }
    if vocabulary_path:
        model["vocabulary_path"] = vocabulary_path
    Path(path).write_text(json.dumps(model, indent=2) + "\n", encoding="utf-8")


def load_model(path) -> dict:
    model = json.loads(Path(path).read_text(encoding="utf-8"))
    for key in ("family", "dim", "beta", "scaling"):
        if key not in model:
            raise CliError(f"model file {path} lacks field {key!r}")
    if len(model["beta"]) != model["dim"] or len(model["scaling"]) != model["dim"]:
        raise CliError(f"model file {path}: beta/scaling length differs from dim")
    return model


def _fit_to_dim(data, dim: int):
    """Pad trailing all-zero columns; reject data wider than the model."""
    if data.dim > dim:
        raise CliError(f"dimension mismatch: data has d={data.dim}, model has d={dim}")
    if data.dim == dim:
        return data
    X = sp.csr_matrix((data.X.data, data.X.indices, data.X.indptr), shape=(data.X.shape[0], dim))
    return Dataset(X, data.y) if isinstance(data, Dataset) else UnlabeledSet(X)


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------


def _noise_from_args(args) -> NoiseModel | None:
    if args.penalty == "dropout":
        return NoiseModel.dropout(args.delta)
    if args.penalty == "additive":
        return NoiseModel.additive(args.sigma2)
    return None


def cmd_train(args) -> int:
    family = GlmFamily(args.family)
    raw = read_sparse_dataset(args.data)
    noise = _noise_from_args(args)
    config = BatchConfig(args.max_iterations, args.tolerance, multistart=args.multistart, seed=args.seed)
    if args.unlabeled:
        if noise is None:
            raise CliError("--unlabeled needs a noising penalty (dropout or additive)")
        dim = max(raw.dim, read_sparse_dataset(args.unlabeled).dim)
        raw = _fit_to_dim(raw, dim)
        unlabeled = _fit_to_dim(UnlabeledSet.from_dataset(read_sparse_dataset(args.unlabeled)), dim)
        # scaling factors come from the union of labelled and unlabelled rows
        union = Dataset(sp.vstack([raw.X, unlabeled.X]), np.zeros(raw.n + unlabeled.m))
        _, scaling = normalize_columns(union, args.normalize)
        data = apply_scaling(raw, scaling)
        report = fit_semisup(family, data, apply_scaling(unlabeled, scaling), noise, args.alpha, config)
        penalty = "semisup-quad"
    else:
        data, scaling = normalize_columns(raw, args.normalize)
        if args.penalty == "l2":
            mode = PenaltyMode.l2(args.lam)
        elif noise is not None:
            mode = PenaltyMode.quad_noising(noise)
        else:
            mode = PenaltyMode.none()
        report = fit_glm(family, data, mode, config)
        penalty = args.penalty if noise is None else f"{args.penalty}-quad"
    save_model(args.out, family, noise, penalty, report.beta_hat, scaling, args.vocabulary)
    summary = {
        "penalty": penalty,
        "family": family.value,
        "objective": report.objective,
        "converged": report.converged,
        "iterations": report.iterations,
        "gradient_norm": report.gradient_norm,
        "model": str(args.out),
    }
    params = {k: v for k, v in vars(args).items() if k != "func"}
    sys.stdout.write(_report("train", params, summary).render(args.format))
    return 0


def _read_mask(path, n: int) -> np.ndarray:
    values = [line.strip() for line in Path(path).read_text(encoding="utf-8").splitlines() if line.strip()]
    if len(values) != n or any(v not in ("0", "1") for v in values):
        raise CliError(f"mask file {path} must hold {n} lines of 0/1")
    return np.array([v == "1" for v in values])


def evaluate_model(model: dict, data: Dataset, mask=None) -> dict:
    family = GlmFamily(model["family"])
    data = _fit_to_dim(data, model["dim"])
    data = apply_scaling(data, ScalingReport(np.asarray(model["scaling"], dtype=float)))
    if mask is not None:
        data = data.subset(np.flatnonzero(mask))
    beta = np.asarray(model["beta"], dtype=float)
    z = data.X @ beta
    mean, label = predict_dataset(family, data.X, beta)
    row = {"n_rows": int(data.n), "mean_loss": float(np.mean(family.A(z) - data.y * z)) if data.n else float("nan")}
    if family is GlmFamily.LOGISTIC:
        row["accuracy"] = float(np.mean(label == data.y)) if data.n else float("nan")
    elif family is GlmFamily.LINEAR:
        row["mse"] = float(np.mean((mean - data.y) ** 2)) if data.n else float("nan")
    return row


def cmd_eval(args) -> int:
    model = load_model(args.model)
    data = read_sparse_dataset(args.data)
    mask = _read_mask(args.mask, data.n) if args.mask else None
    row = evaluate_model(model, data, mask)
    params = {"model": args.model, "data": args.data, "mask": args.mask}
    _emit(_report("eval", params, row).render(args.format), args.out)
    return 0


def cmd_simulate(args) -> int:
    config = SimConfig(n=args.n, seed=args.seed)
    data, _, mask = generate_rare_feature_dataset(config)
    write_sparse_dataset(data, args.out)
    if args.mask_out:
        Path(args.mask_out).write_text("".join("1\n" if m else "0\n" for m in mask), encoding="utf-8")
    row = {"n_rows": data.n, "dim": data.dim, "signal_rows": int(mask.sum()), "positive_labels": int(data.y.sum())}
    sys.stdout.write(_report("simulate", {"n": args.n, "seed": args.seed}, row).render(args.format))
    return 0


def _run_experiment(args, report: experiments.ExperimentReport) -> int:
    _emit(report.render(args.format), args.out)
    failed = [k for k, ok in report.checks.items() if not ok]
    if failed:
        log.warning("%s checks not met: %s", report.name, ", ".join(failed))
    return 0


def cmd_table3(args) -> int:
    config = BatchConfig(args.max_iterations, args.tolerance)
    return _run_experiment(args, experiments.run_table3(args.runs, args.seed, n_test=args.n_test, lam=args.lam,
                                                        delta=args.delta, config=config, jobs=args.jobs))


def cmd_trace(args) -> int:
    return _run_experiment(args, experiments.run_penalty_trace(args.seed, args.n, args.d, args.delta, args.samples))


def cmd_fisher(args) -> int:
    return _run_experiment(args, experiments.run_fisher_compare(args.seed, args.n, args.passes))


def cmd_fig1a(args) -> int:
    return _run_experiment(args, experiments.run_fig1a())


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------


def _bounded(lo: float, hi: float | None = None, lo_open: bool = False, hi_open: bool = True):
    def parse(text: str) -> float:
        try:
            v = float(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
        if v < lo or (lo_open and v == lo) or (hi is not None and (v > hi or (hi_open and v == hi))):
            raise argparse.ArgumentTypeError(f"{v} is out of range")
        return v

    return parse


def _positive_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"{v} must be positive")
    return v


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=1)
    common.add_argument("--out", default=None, help="output path (stdout when omitted)")
    common.add_argument("--format", choices=("json", "csv"), default="json")
    common.add_argument("-v", "--verbose", action="store_true")

    optim = argparse.ArgumentParser(add_help=False)
    optim.add_argument("--max-iterations", type=_positive_int, default=BatchConfig.max_iterations)
    optim.add_argument("--tolerance", type=_bounded(0.0, lo_open=True), default=BatchConfig.gradient_tolerance)

    parser = argparse.ArgumentParser(prog="noisereg", description="Feature-noising regularization for GLMs.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", parents=[common, optim], help="fit a model")
    p.add_argument("--data", required=True)
    p.add_argument("--family", choices=[f.value for f in GlmFamily], default="logistic")
    p.add_argument("--penalty", choices=("none", "l2", "dropout", "additive"), default="dropout")
    p.add_argument("--lambda", dest="lam", type=_bounded(0.0), default=1.0)
    p.add_argument("--delta", type=_bounded(0.0, 1.0), default=0.5)
    p.add_argument("--sigma2", type=_bounded(0.0), default=1.0)
    p.add_argument("--unlabeled", default=None)
    p.add_argument("--alpha", type=_bounded(0.0, 1.0, lo_open=True, hi_open=False), default=0.4)
    p.add_argument("--normalize", choices=("none", "unit_second_moment"), default="none")
    p.add_argument("--vocabulary", default=None, help="vocabulary file recorded in the model")
    p.add_argument("--multistart", type=_positive_int, default=1)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="evaluate a model")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--mask", default=None, help="file of 0/1 lines selecting rows")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("simulate", parents=[common], help="write a rare-feature simulation dataset")
    p.add_argument("--n", type=_positive_int, default=75)
    p.add_argument("--mask-out", default=None)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("table3", parents=[common, optim], help="L2 vs dropout on the rare-feature simulation")
    p.add_argument("--runs", type=_positive_int, default=100)
    p.add_argument("--n-test", type=_positive_int, default=10000)
    p.add_argument("--lambda", dest="lam", type=_bounded(0.0), default=32.0)
    p.add_argument("--delta", type=_bounded(0.0, 1.0), default=0.9)
    p.add_argument("--jobs", type=_positive_int, default=1)
    p.set_defaults(func=cmd_table3)

    p = sub.add_parser("trace", parents=[common], help="exact vs quadratic dropout penalty along a fit")
    p.add_argument("--n", type=_positive_int, default=200)
    p.add_argument("--d", type=_positive_int, default=50)
    p.add_argument("--delta", type=_bounded(0.0, 1.0), default=0.5)
    p.add_argument("--samples", type=_positive_int, default=2000)
    p.set_defaults(func=cmd_trace)

    p = sub.add_parser("fisher", parents=[common], help="AdaGrad vs dropout-descent Fisher estimates")
    p.add_argument("--n", type=_positive_int, default=50000)
    p.add_argument("--passes", type=_positive_int, default=1)
    p.set_defaults(func=cmd_fisher)

    p = sub.add_parser("fig1a", parents=[common], help="exact vs quadratic Gaussian logistic penalty grid")
    p.set_defaults(func=cmd_fig1a)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command in ("train", "simulate") and not args.out:
        parser.error(f"{args.command} requires --out")
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s %(message)s")
    start = time.perf_counter()
    try:
        code = args.func(args)
    except (CliError, DataFormatError, ValueError, OSError, PartitionRangeError, NonFiniteObjectiveError) as exc:
        print(f"noisereg {args.command}: error: {exc}", file=sys.stderr)
        return 1
    log.debug("%s finished in %.2fs", args.command, time.perf_counter() - start)
    return code


if __name__ == "__main__":
    sys.exit(main())
