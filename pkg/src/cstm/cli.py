"""Command-line entry points.

Subcommands: simulate, decompose, fit, predict, benchmark, inspect.
Exit codes: 0 success, 1 configuration error, 2 I/O error, 3 numerical
abort, 4 file-format error.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import os
import sys
import time

import numpy as np

from . import container, experiments, stm
from .acmtf import AcmtfHyperParams, NumericalError, acmtf_decompose
from .config import (
    ConfigError,
    config_hash,
    parse_config_file,
    serialize_acmtf_params,
)
from .container import FormatError
from .experiments import derive_seed
from .kernels import default_coupled_spec, gram_matrix

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_IO = 2
EXIT_NUMERICAL = 3
EXIT_FORMAT = 4

_VERSION = "cstm 0.1.0"


def _sample_paths(directory: str) -> list[str]:
    try:
        names = sorted(os.listdir(directory))
    except OSError as exc:
        raise OSError(f"cannot list {directory}: {exc}") from exc
    paths = [
        os.path.join(directory, n)
        for n in names
        if n.endswith(".cstm") and not n.endswith(".factors.cstm")
    ]
    if not paths:
        raise FileNotFoundError(f"no .cstm sample files in {directory}")
    return paths


def cmd_simulate(args) -> int:
    samples = experiments.gen_case(args.case, args.n_per_class, args.seed)
    os.makedirs(args.out, exist_ok=True)
    for i, s in enumerate(samples):
        container.write_sample(os.path.join(args.out, f"sample_{i:04d}.cstm"), s)
    container.write_manifest(
        os.path.join(args.out, "manifest.txt"),
        {
            "version": _VERSION,
            "command": "simulate",
            "case": args.case,
            "n_per_class": args.n_per_class,
            "seed": args.seed,
            "n_files": len(samples),
        },
    )
    print(f"wrote {len(samples)} samples to {args.out}")
    return EXIT_OK


def cmd_decompose(args) -> int:
    sample = container.read_sample(args.infile)
    params = AcmtfHyperParams(
        gamma=args.gamma,
        beta=args.beta,
        xi=args.xi,
        theta=args.theta,
        rank=args.rank,
        cg_tol=args.cg_tol,
        max_iters=args.max_iters,
    )
    t0 = time.perf_counter()
    factors = acmtf_decompose(sample, params, seed=args.seed)
    elapsed = time.perf_counter() - t0
    container.write_factors(args.out, factors)
    entries = {"version": _VERSION, "command": "decompose", "input": args.infile,
               "seed": args.seed, "wall_clock_s": f"{elapsed:.3f}",
               "final_objective": repr(factors.objective_history[-1]),
               "iterations": len(factors.objective_history) - 1,
               "converged": factors.converged}
    for line in serialize_acmtf_params(params).strip().splitlines():
        key, value = line.split(" = ", 1)
        entries[f"acmtf.{key}"] = value
    container.write_manifest(args.out + ".manifest.txt", entries)
    print(f"decomposed {args.infile} -> {args.out} "
          f"(objective {factors.objective_history[-1]:.6g})")
    return EXIT_OK


def cmd_fit(args) -> int:
    cfg = parse_config_file(args.config)
    paths = _sample_paths(args.train)
    samples = [container.read_sample(p) for p in paths]
    labels = np.array([s.label for s in samples], dtype=np.float64)
    if np.any(labels == 0):
        bad = paths[int(np.flatnonzero(labels == 0)[0])]
        raise ConfigError(f"unlabeled training sample: {bad}")
    t0 = time.perf_counter()
    factors = [
        acmtf_decompose(s, cfg.acmtf, derive_seed(cfg.seed, 1, i)).pruned(cfg.prune_rel)
        for i, s in enumerate(samples)
    ]
    t_decompose = time.perf_counter() - t0
    spec = experiments._coupled_spec_for(cfg, factors, cfg.kernel_weights)
    gram = gram_matrix(factors, spec)
    lam = stm.select_lambda(gram, labels, cfg.lambda_grid, k=cfg.cv_folds,
                            seed=derive_seed(cfg.seed, 4, 0))
    model = stm.fit(factors, labels, spec, lam, gram=gram)
    t_total = time.perf_counter() - t0
    container.write_model(args.out, model, cfg.acmtf, cfg.prune_rel)
    container.write_manifest(
        args.out + ".manifest.txt",
        {
            "version": _VERSION,
            "command": "fit",
            "config_hash": config_hash(cfg),
            "seed": cfg.seed,
            "n_train": len(samples),
            "lambda": repr(lam),
            "weights": ", ".join(repr(w) for w in spec.weights),
            "wall_clock_decompose_s": f"{t_decompose:.3f}",
            "wall_clock_total_s": f"{t_total:.3f}",
        },
    )
    print(f"fit {len(samples)} samples -> {args.out} (lambda {lam:g})")
    return EXIT_OK


def cmd_predict(args) -> int:
    model, params, prune_rel = container.read_model(args.model)
    paths = _sample_paths(args.infile)
    samples = [container.read_sample(p) for p in paths]
    train_dims = model.factors[0].dims
    for p, s in zip(paths, samples):
        if s.dims != train_dims:
            raise FormatError(
                f"{p}: sample dims {s.dims} do not match model dims {train_dims}"
            )
    factors = [
        acmtf_decompose(s, params, seed=derive_seed(args.seed, 1, i)).pruned(prune_rel)
        for i, s in enumerate(samples)
    ]
    scores = stm.decision_many(model, factors)
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("file", "score", "label"))
        for p, score in zip(paths, scores):
            w.writerow([os.path.basename(p), repr(float(score)),
                        stm.predict_label(float(score))])
    container.write_manifest(
        args.out + ".manifest.txt",
        {
            "version": _VERSION,
            "command": "predict",
            "model": args.model,
            "input": args.infile,
            "seed": args.seed,
            "n_samples": len(paths),
        },
    )
    print(f"wrote predictions for {len(paths)} samples to {args.out}")
    return EXIT_OK


def cmd_benchmark(args) -> int:
    cfg = parse_config_file(args.config)
    if args.threads is not None:
        cfg = dataclasses.replace(cfg, threads=args.threads)
    os.makedirs(args.out, exist_ok=True)
    t0 = time.perf_counter()
    summary = experiments.run_experiment(cfg)
    elapsed = time.perf_counter() - t0
    summary.write_results_csv(os.path.join(args.out, "results.csv"))
    summary.write_summary_csv(os.path.join(args.out, "summary.csv"))
    entries = {
        "version": _VERSION,
        "command": "benchmark",
        "config_hash": config_hash(cfg),
        "seed": cfg.seed,
        "repetitions": cfg.repetitions,
        "wall_clock_s": f"{elapsed:.3f}",
        "wall_clock_decompose_s": f"{summary.decompose_seconds:.3f}",
        "wall_clock_repetitions_s": f"{summary.repetitions_seconds:.3f}",
        "mean_final_objective": repr(summary.mean_final_objective),
        "failures": len(summary.failures),
    }
    for method in summary.methods:
        entries[f"lambda.{method}"] = ", ".join(
            repr(v) for v in summary.lambdas[method]
        )
        entries[f"mean_accuracy.{method}"] = repr(summary.mean(method, "accuracy"))
    container.write_manifest(os.path.join(args.out, "manifest.txt"), entries)
    for method in summary.methods:
        print(f"{method}: accuracy {summary.mean(method, 'accuracy'):.4f} "
              f"+/- {summary.sd(method, 'accuracy'):.4f}")
    return EXIT_OK


def cmd_inspect(args) -> int:
    info = container.inspect_file(args.infile)
    for key, value in info.items():
        print(f"{key}: {value}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cstm",
        description="Coupled matrix-tensor factorization and classification",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic dataset")
    p.add_argument("--case", type=int, required=True)
    p.add_argument("--n-per-class", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("decompose", help="factor one coupled sample")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--rank", type=int, default=5)
    p.add_argument("--beta", type=float, default=0.001)
    p.add_argument("--gamma", type=float, default=1.0)
    p.add_argument("--xi", type=float, default=1.0)
    p.add_argument("--theta", type=float, default=1.0)
    p.add_argument("--cg-tol", type=float, default=1e-9)
    p.add_argument("--max-iters", type=int, default=500)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_decompose)

    p = sub.add_parser("fit", help="train a classifier on a sample directory")
    p.add_argument("--train", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("predict", help="score samples with a fitted model")
    p.add_argument("--model", required=True)
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("benchmark", help="run the repeated simulation study")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--threads", type=int, default=None)
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("inspect", help="print container file metadata")
    p.add_argument("--in", dest="infile", required=True)
    p.set_defaults(func=cmd_inspect)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (OSError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
