"""Command-line surface: train, predict, evaluate, bench, factorize.

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import statistics
import sys
import time
from dataclasses import asdict, replace

import numpy as np

from . import _kernels
from .boost import (
    ALGORITHMS,
    BoostConfig,
    TrainingError,
    _class_indices_from_scores,
    accuracy,
    predict_scores,
    predict_scores_batch,
    train_model,
    write_training_log,
)
from .data import (
    DataFormatError,
    Dataset,
    SplitSpec,
    monte_carlo_split,
    parse_csv_dataset,
    parse_libsvm_dataset,
    read_csv_matrix,
    read_libsvm_features,
)
from .factorize import (
    FactorizationError,
    SalsConfig,
    exact_rank_one_oracle,
    factorization_quality,
    sals_rank_one,
)
from .model_io import ModelFormatError, dataset_hash, load_model, save_model, serialize_model
from .mlr import class_probabilities
from .tree import TreeConfig

_RUNTIME_ERRORS = (
    DataFormatError,
    ModelFormatError,
    FactorizationError,
    TrainingError,
    ValueError,
    OSError,
)


def _add_data_flags(p: argparse.ArgumentParser, label_default: str = "0") -> None:
    p.add_argument("--data", required=True, help="input dataset path")
    p.add_argument("--format", choices=("csv", "libsvm"), default="csv")
    p.add_argument("--label-column", default=label_default,
                   help="CSV label column: index, name (with --header), or 'none'")
    p.add_argument("--header", action="store_true", help="CSV file has a header row")
    p.add_argument("--delimiter", default=",", help="CSV delimiter (default ',')")
    p.add_argument("--num-features", type=int, default=None,
                   help="fixed feature count for libsvm files")
    p.add_argument("--num-classes", type=int, default=None,
                   help="expected class count (inferred when absent)")


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--algo", choices=ALGORITHMS, default="fmcb")
    p.add_argument("--iterations", type=int, default=100, help="boosting steps T")
    p.add_argument("--step", type=float, default=0.1, help="cursor step alpha")
    p.add_argument("--depth", type=int, default=6, help="tree max depth")
    p.add_argument("--bins", type=int, default=255, help="histogram bins per feature")
    p.add_argument("--min-leaf", type=int, default=1, help="min samples per leaf")
    p.add_argument("--min-gain", type=float, default=0.0, help="min split gain")
    p.add_argument("--sals-step", type=float, default=0.01, help="SALS SGD step w")
    p.add_argument("--sals-epochs", type=int, default=50, help="SALS max epochs")
    p.add_argument("--sals-sample", type=float, default=1.0,
                   help="SALS row sample fraction per epoch")
    p.add_argument("--no-warm-start", action="store_true",
                   help="do not seed SALS from the previous step's b vector")
    p.add_argument("--diag", default=None, metavar="PATH",
                   help="write per-step factorization diagnostics CSV (fmcb only)")


def _add_common_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=None,
                   help="worker cap for data-parallel sections "
                        "(env FMCB_THREADS; output is thread-count independent)")


def _add_split_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--repeats", type=int, default=5, help="Monte Carlo repeats")
    p.add_argument("--train-fraction", type=float, default=0.6)
    p.add_argument("--validation-fraction", type=float, default=0.2)
    p.add_argument("--test-fraction", type=float, default=0.2)
    p.add_argument("--stratify", action="store_true", help="stratify splits by class")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fmcb",
        description="Multiclass gradient boosting with rank-one gradient factorization",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train a model and write it to disk")
    _add_data_flags(p_train)
    _add_train_flags(p_train)
    _add_common_flags(p_train)
    p_train.add_argument("--model-out", default=None, metavar="PATH")
    p_train.add_argument("--log", default=None, metavar="PATH", help="training log CSV")
    p_train.add_argument("--valid-fraction", type=float, default=0.0,
                         help="carve this share of rows out as a validation set")
    p_train.add_argument("--stop-at-valid-acc", type=float, default=None)
    p_train.add_argument("--patience", type=int, default=None,
                         help="stop after this many steps without validation improvement")
    p_train.set_defaults(func=cmd_train)

    p_predict = sub.add_parser("predict", help="score rows with a saved model")
    _add_data_flags(p_predict, label_default="none")
    _add_common_flags(p_predict)
    p_predict.add_argument("--model", required=True, metavar="PATH")
    p_predict.add_argument("--probs", action="store_true",
                           help="also emit K class-probability columns")
    p_predict.add_argument("--out", default=None, metavar="PATH", help="default stdout")
    p_predict.set_defaults(func=cmd_predict)

    p_eval = sub.add_parser("evaluate",
                            help="test accuracy of a model file, or the full "
                                 "repeated-split protocol for a training config")
    _add_data_flags(p_eval)
    _add_train_flags(p_eval)
    _add_common_flags(p_eval)
    _add_split_flags(p_eval)
    p_eval.add_argument("--model", default=None, metavar="PATH",
                        help="score this model instead of training")
    p_eval.set_defaults(func=cmd_evaluate)

    p_bench = sub.add_parser("bench", help="compare algorithms under a shared budget or target")
    _add_data_flags(p_bench)
    _add_train_flags(p_bench)
    _add_common_flags(p_bench)
    _add_split_flags(p_bench)
    p_bench.add_argument("--algos", default="fmcb,mlr,ovr",
                         help="comma-separated subset of fmcb,mlr,ovr")
    mode = p_bench.add_mutually_exclusive_group(required=True)
    mode.add_argument("--budget-trees", type=int, default=None,
                      help="total weak-model budget shared by every algorithm")
    mode.add_argument("--target-accuracy", type=float, default=None,
                      help="validation accuracy each algorithm must reach")
    p_bench.add_argument("--max-iterations", type=int, default=20000,
                         help="iteration cap in target mode")
    p_bench.add_argument("--latency-samples", type=int, default=10000,
                         help="single-row predictions for the decision-latency median")
    p_bench.add_argument("--out", default=None, metavar="PATH", help="write the table as CSV")
    p_bench.set_defaults(func=cmd_bench)

    p_fact = sub.add_parser("factorize", help="rank-one factorization of a CSV matrix")
    p_fact.add_argument("--matrix", required=True, metavar="PATH")
    p_fact.add_argument("--header", action="store_true")
    p_fact.add_argument("--delimiter", default=",")
    p_fact.add_argument("--sals-step", type=float, default=0.01)
    p_fact.add_argument("--sals-epochs", type=int, default=50)
    p_fact.add_argument("--sals-sample", type=float, default=1.0)
    p_fact.add_argument("--exact", action="store_true",
                        help="also run the exact oracle and report agreement")
    p_fact.add_argument("--out", default=None, metavar="PATH", help="write factors as JSON")
    _add_common_flags(p_fact)
    p_fact.set_defaults(func=cmd_factorize)

    return parser


def _resolve_threads(args) -> int:
    threads = args.threads
    if threads is None:
        env = os.environ.get("FMCB_THREADS")
        threads = int(env) if env else (os.cpu_count() or 1)
    if threads < 1:
        raise ValueError("--threads must be >= 1")
    # The numeric kernels run a fixed sequential order regardless of this
    # cap, so any thread count produces identical output.
    return threads


def _parse_label_column(value: str):
    if value.lower() == "none":
        return None
    try:
        return int(value)
    except ValueError:
        return value


def _load_dataset(args) -> Dataset:
    label_column = _parse_label_column(args.label_column)
    if label_column is None:
        raise DataFormatError("this command needs labelled data; give --label-column")
    if args.format == "csv":
        ds, report = parse_csv_dataset(
            args.data,
            label_column=label_column,
            num_classes=args.num_classes,
            has_header=args.header,
            delimiter=args.delimiter,
        )
    else:
        ds, report = parse_libsvm_dataset(
            args.data, num_features=args.num_features, num_classes=args.num_classes
        )
    if report.rejected_rows:
        print(f"warning: rejected {report.rejected_rows} unparseable rows", file=sys.stderr)
        for example in report.rejected_examples:
            print(f"  {example}", file=sys.stderr)
    return ds


def _load_features(args, expected: int) -> np.ndarray:
    if args.format == "csv":
        label_column = _parse_label_column(args.label_column)
        drop = None
        if label_column is not None:
            if isinstance(label_column, str):
                raise DataFormatError("predict needs a numeric --label-column index or 'none'")
            drop = label_column
        return read_csv_matrix(args.data, has_header=args.header,
                               delimiter=args.delimiter, drop_column=drop)
    return read_libsvm_features(args.data, num_features=args.num_features or expected)


def _configs_from_args(args) -> BoostConfig:
    return BoostConfig(
        step=args.step,
        iterations=args.iterations,
        tree=TreeConfig(
            max_depth=args.depth,
            min_leaf_samples=args.min_leaf,
            max_bins=args.bins,
            min_gain=args.min_gain,
        ),
        sals=SalsConfig(
            step_size=args.sals_step,
            max_epochs=args.sals_epochs,
            row_sample_fraction=args.sals_sample,
            seed=args.seed,
        ),
        algorithm=args.algo,
        seed=args.seed,
        diagnostics_path=args.diag,
        warm_start_sals=not args.no_warm_start,
        stop_at_valid_accuracy=getattr(args, "stop_at_valid_acc", None),
        patience=getattr(args, "patience", None),
    )


def _provenance(config: BoostConfig, ds: Dataset) -> dict:
    # Deliberately no timestamps or wall time: identically seeded runs must
    # produce byte-identical model files.
    return {
        "seed": config.seed,
        "config": {
            "algorithm": config.algorithm,
            "iterations": config.iterations,
            "step": config.step,
            "tree": asdict(config.tree),
            "sals": asdict(config.sals),
            "warm_start_sals": config.warm_start_sals,
        },
        "dataset_hash": dataset_hash(ds),
    }


def cmd_train(args) -> int:
    _resolve_threads(args)
    ds = _load_dataset(args)
    config = _configs_from_args(args)
    if config.diagnostics_path and config.algorithm != "fmcb":
        print("warning: --diag only applies to fmcb; ignoring", file=sys.stderr)
        config = replace(config, diagnostics_path=None)

    train_ds, valid_ds = ds, None
    if args.valid_fraction:
        if not 0.0 < args.valid_fraction < 1.0:
            raise ValueError("--valid-fraction must be in (0, 1)")
        rng = np.random.default_rng(config.seed)
        perm = rng.permutation(ds.num_rows)
        n_valid = max(1, int(round(args.valid_fraction * ds.num_rows)))
        valid_ds = ds.subset(np.sort(perm[:n_valid]))
        train_ds = ds.subset(np.sort(perm[n_valid:]))

    _kernels.warm_up()
    started = time.perf_counter()
    model, records = train_model(train_ds, config, valid_ds)
    wall = time.perf_counter() - started

    if args.model_out:
        save_model(model, args.model_out, _provenance(config, train_ds))
    if args.log:
        write_training_log(args.log, records)

    final_ll = records[-1].train_ll if records else float("nan")
    print(f"algorithm: {model.algorithm}")
    print(f"iterations completed: {len(records)}")
    print(f"weak models: {model.num_weak_models}")
    print(f"final train log-likelihood: {final_ll:.6f}")
    if valid_ds is not None and records and records[-1].valid_acc is not None:
        print(f"validation accuracy: {records[-1].valid_acc:.4f}")
    print(f"training time: {wall:.2f}s")
    if args.model_out:
        print(f"model written to {args.model_out}")
    return 0


def cmd_predict(args) -> int:
    _resolve_threads(args)
    model = load_model(args.model)
    features = _load_features(args, model.num_features)
    if features.shape[1] != model.num_features:
        raise DataFormatError(
            f"model expects {model.num_features} features but input rows have {features.shape[1]}"
        )
    scores = predict_scores_batch(model, features)
    indices = _class_indices_from_scores(scores, model.num_classes)

    out = open(args.out, "w") if args.out else sys.stdout
    try:
        for i in range(len(indices)):
            fields = [model.label_names[indices[i]]]
            if args.probs:
                if model.algorithm == "ovr":
                    # Chains are independent binary models; normalize their
                    # per-chain probabilities so the row sums to one.
                    sig = 1.0 / (1.0 + np.exp(-np.clip(scores[i], -30, 30)))
                    probs = sig / sig.sum()
                else:
                    probs = class_probabilities(scores[i])
                fields.extend(format(p, ".12g") for p in probs)
            print(",".join(fields), file=out)
    finally:
        if args.out:
            out.close()
    return 0


def cmd_evaluate(args) -> int:
    _resolve_threads(args)
    ds = _load_dataset(args)
    if args.model:
        model = load_model(args.model)
        acc = accuracy(model, ds)
        print(f"test accuracy: {acc:.4f} ({ds.num_rows} rows)")
        return 0

    spec = SplitSpec(
        train_fraction=args.train_fraction,
        validation_fraction=args.validation_fraction,
        test_fraction=args.test_fraction,
        num_repeats=args.repeats,
        seed=args.seed,
        stratify=args.stratify,
    )
    config = _configs_from_args(args)
    _kernels.warm_up()
    accs = []
    for i, (train_ds, valid_ds, test_ds) in enumerate(monte_carlo_split(ds, spec), start=1):
        model, _ = train_model(train_ds, config, valid_ds)
        acc = accuracy(model, test_ds)
        accs.append(acc)
        print(f"repeat {i}: test accuracy {acc:.4f} "
              f"(train {train_ds.num_rows}, test {test_ds.num_rows})")
    mean = statistics.fmean(accs)
    std = statistics.stdev(accs) if len(accs) > 1 else 0.0
    print(f"accuracy: {mean:.3f} ± {std:.3f} ({len(accs)} repeats)")
    return 0


def _median_decision_latency_ms(model, features: np.ndarray, samples: int) -> float:
    n = len(features)
    for i in range(min(200, n)):
        predict_scores(model, features[i % n])
    times = []
    for i in range(samples):
        row = features[i % n]
        t0 = time.perf_counter()
        predict_scores(model, row)
        times.append(time.perf_counter() - t0)
    return statistics.median(times) * 1e3


def cmd_bench(args) -> int:
    _resolve_threads(args)
    algos = [a.strip() for a in args.algos.split(",") if a.strip()]
    for a in algos:
        if a not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {a!r} in --algos")
    if args.budget_trees is not None and args.budget_trees < 1:
        raise ValueError("--budget-trees must be >= 1")

    ds = _load_dataset(args)
    spec = SplitSpec(
        train_fraction=args.train_fraction,
        validation_fraction=args.validation_fraction,
        test_fraction=args.test_fraction,
        num_repeats=1,
        seed=args.seed,
        stratify=args.stratify,
    )
    train_ds, valid_ds, test_ds = monte_carlo_split(ds, spec)[0]
    k = ds.num_classes
    base = _configs_from_args(args)
    _kernels.warm_up()

    rows = []
    unreachable = []
    for algo in algos:
        if args.budget_trees is not None:
            # One tree per step for fmcb; K-1 or K per step otherwise, so the
            # budget is rounded down to a whole number of steps.
            per_step = {"fmcb": 1, "mlr": k - 1, "ovr": k}[algo]
            iterations = args.budget_trees // per_step
            if iterations < 1:
                raise ValueError(
                    f"budget {args.budget_trees} is below one {algo} step ({per_step} trees)"
                )
            cfg = replace(base, algorithm=algo, iterations=iterations, diagnostics_path=None)
        else:
            cfg = replace(base, algorithm=algo, iterations=args.max_iterations,
                          stop_at_valid_accuracy=args.target_accuracy,
                          diagnostics_path=None)

        started = time.perf_counter()
        model, records = train_model(train_ds, cfg, valid_ds)
        train_s = time.perf_counter() - started
        acc = accuracy(model, test_ds)
        final_valid = records[-1].valid_acc if records else None
        size_bytes = len(serialize_model(model).encode())
        latency = _median_decision_latency_ms(model, test_ds.features, args.latency_samples)
        reached = (args.target_accuracy is None
                   or (final_valid is not None and final_valid >= args.target_accuracy))
        if not reached:
            unreachable.append(algo)
        rows.append({
            "algorithm": algo,
            "boosting_steps": len(records),
            "weak_models": model.num_weak_models,
            "test_accuracy": acc,
            "valid_accuracy": final_valid,
            "training_s": train_s,
            "decision_ms": latency,
            "model_mb": size_bytes / 1e6,
        })

    header = ["algorithm", "boosting_steps", "weak_models", "test_accuracy",
              "valid_accuracy", "training_s", "decision_ms", "model_mb"]
    widths = {h: max(len(h), 12) for h in header}
    print("  ".join(h.ljust(widths[h]) for h in header))
    for row in rows:
        cells = []
        for h in header:
            v = row[h]
            if isinstance(v, float):
                cells.append(f"{v:.4f}".ljust(widths[h]))
            else:
                cells.append(str(v if v is not None else "-").ljust(widths[h]))
        print("  ".join(cells))

    if args.out:
        with open(args.out, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=header)
            writer.writeheader()
            writer.writerows(rows)

    if unreachable:
        print(f"error: target accuracy {args.target_accuracy} not reached by: "
              f"{', '.join(unreachable)}", file=sys.stderr)
        return 1
    return 0


def cmd_factorize(args) -> int:
    _resolve_threads(args)
    matrix = read_csv_matrix(args.matrix, has_header=args.header, delimiter=args.delimiter)
    config = SalsConfig(
        step_size=args.sals_step,
        max_epochs=args.sals_epochs,
        row_sample_fraction=args.sals_sample,
        seed=args.seed,
    )
    factors = sals_rank_one(matrix, config)
    quality = factorization_quality(matrix, factors)
    print(f"matrix: {matrix.shape[0]} x {matrix.shape[1]}")
    print(f"residual_ratio: {quality.residual_ratio:.6f}")
    print(f"energy_fraction: {quality.energy_fraction:.6f}")
    print(f"sigma_ratio: {quality.sigma_ratio:.6f}")

    doc = {
        "r": factors.r.tolist(),
        "b": factors.b.tolist(),
        "residual_ratio": quality.residual_ratio,
        "energy_fraction": quality.energy_fraction,
        "sigma_ratio": quality.sigma_ratio,
    }
    if args.exact:
        oracle = exact_rank_one_oracle(matrix)
        cosine = abs(float(np.dot(factors.b, oracle.b)))
        print(f"oracle sigma1: {oracle.sigma1:.6f}  sigma2: {oracle.sigma2:.6f}")
        print(f"|cos(b, b_oracle)|: {cosine:.6f}")
        doc.update({
            "oracle_b": oracle.b.tolist(),
            "oracle_sigma1": oracle.sigma1,
            "oracle_sigma2": oracle.sigma2,
            "cosine_b_oracle": cosine,
        })
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(doc, fh)
            fh.write("\n")
        print(f"factors written to {args.out}")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except _RUNTIME_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
