"""Command-line entry point: ``stignet <command> [options]``."""

import argparse
from concurrent.futures import ProcessPoolExecutor
import csv
import logging
import math
import os
import sys
import time

import numpy as np

from . import layers
from .autodiff import DIFFERENTIABLE_KINDS
from .checks import layer_gradcheck, primitive_gradcheck
from .data import load_mnist, random_split
from .train import (TrainConfig, confidence_interval_99, evaluate, save_checkpoint,
                    train, with_steepness)
from .xor import (default_grid, frozen_grid, truth_table,
                  train_xor, xor_oracle, xor_sp_run)

REFERENCE_COUNTS = {"static": 328_810, "stigmergic": 3_470, "recurrent": 3_482, "lstm": 3_360}
CSV_FIELDS = ["arch", "params", "seed", "epochs", "rate", "wall_time_s"]
GRADCHECK_TOLERANCE = 1e-4


# ---------------------------------------------------------------- xor

def cmd_xor_oracle(args):
    make = frozen_grid if args.frozen else default_grid
    grid = make(args.points, args.low, args.high)
    start = time.perf_counter()
    solutions = xor_oracle(grid)
    elapsed = time.perf_counter() - start
    combos = math.prod(len(v) for v in grid.values())
    print(f"grid points\t{combos}")
    print(f"solutions\t{len(solutions)}")
    print(f"seconds\t{elapsed:.3f}")
    mismatched = [p for p in solutions if truth_table(p, xor_sp_run) != (0, 1, 1, 0)]
    print(f"stepwise mismatches\t{len(mismatched)}")
    for p in solutions[:args.show]:
        print("solution\t" + "\t".join(f"{k}={v:g}" for k, v in vars(p).items()))
    expect_some = not args.frozen if args.expect == "auto" else args.expect == "some"
    ok = (len(solutions) > 0) == expect_some and not mismatched
    print("PASS" if ok else "FAIL")
    return 0 if ok else 1


def cmd_xor_train(args):
    seeds = [args.seed + i for i in range(args.seeds)]
    required = args.min_success if args.min_success is not None else math.ceil(0.8 * len(seeds))
    successes = 0
    for seed in seeds:
        params, metrics = train_xor(seed, args.steps, args.lr, args.steepness)
        solved = metrics.correct == metrics.total
        successes += solved
        learned = "\t".join(f"{k.split('.')[1]}={float(np.ravel(v)[0]):.4f}" for k, v in params.items())
        print(f"seed={seed}\taccuracy={metrics.correct}/{metrics.total}\t{learned}")
    print(f"solved\t{successes}/{len(seeds)}\trequired\t{required}")
    return 0 if successes >= required else 1


# ---------------------------------------------------------------- mnist

def _architecture(name):
    return layers.stigmergic_spec() if name == "stigmergic" else layers.static_spec()


def _run_one(job):
    spec, train_set, test_set, config, checkpoint = job
    params, fit = train(spec, train_set, config)
    result = evaluate(params, spec, test_set)
    if checkpoint:
        save_checkpoint(params, spec, checkpoint)
    return config.seed, result.classification_rate, fit.wall_time + result.wall_time


def _load_sets(args):
    full = load_mnist(args.train_images, args.train_labels, "train", args.binarize)
    if args.test_images:
        test = load_mnist(args.test_images, args.test_labels, "test", args.binarize)
        train_set = full if args.train_count is None else random_split(full, args.train_count, args.seed)[0]
        if args.test_count is not None:
            test = random_split(test, args.test_count, args.seed)[0]
        return train_set, test
    train_count = args.train_count if args.train_count is not None else len(full) - (args.test_count or 0)
    train_set, rest = random_split(full, train_count, args.seed)
    if args.test_count is not None:
        rest = random_split(rest, args.test_count, args.seed)[0]
    return train_set, rest


def cmd_mnist(args):
    if bool(args.test_images) != bool(args.test_labels):
        raise SystemExit("--test-images and --test-labels go together")
    for path in filter(None, [args.train_images, args.train_labels, args.test_images, args.test_labels]):
        if not os.path.exists(path):
            raise SystemExit(f"no such file: {path}")
    spec = _architecture(args.arch)
    config = TrainConfig(epochs=args.epochs, batch_size=args.batch, learning_rate=args.lr,
                         seed=args.seed, steepness=args.steepness, loss=args.loss)
    spec = with_steepness(spec, config.steepness)
    n_params = layers.count_parameters(spec)
    train_set, test_set = _load_sets(args)
    print(f"arch={args.arch}\tparams={n_params}\ttrain={len(train_set)}\ttest={len(test_set)}")

    jobs = []
    for i in range(args.runs):
        cfg = TrainConfig(**{**vars(config), "steepness": None, "seed": args.seed + i})
        ckpt = args.checkpoint if args.runs == 1 else None
        jobs.append((spec, train_set, test_set, cfg, ckpt))
    if args.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(args.jobs) as pool:
            results = list(pool.map(_run_one, jobs))
    else:
        results = [_run_one(job) for job in jobs]

    rows = [{"arch": args.arch, "params": n_params, "seed": seed, "epochs": args.epochs,
             "rate": repr(rate), "wall_time_s": f"{wall:.3f}"} for seed, rate, wall in results]
    for row in rows:
        print("\t".join(f"{k}={row[k]}" for k in CSV_FIELDS))
    if args.out_csv:
        write_metrics_csv(args.out_csv, rows)
    rates = [rate for _, rate, _ in results]
    if len(rates) >= 2:
        mean, half = confidence_interval_99(rates, args.ci)
        print(f"rate_99ci\t{mean:.4f} +- {half:.4f}")
    if args.min_rate is not None and min(rates) < args.min_rate:
        print(f"FAIL: rate below {args.min_rate}")
        return 1
    return 0


def write_metrics_csv(path, rows):
    """Append rows, writing the header only when the file is new or empty."""
    fresh = not os.path.exists(path) or os.path.getsize(path) == 0
    with open(path, "a", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=CSV_FIELDS)
        if fresh:
            writer.writeheader()
        writer.writerows(rows)


def read_metrics_csv(path):
    with open(path, newline="") as f:
        return [{"arch": r["arch"], "params": int(r["params"]), "seed": int(r["seed"]),
                 "epochs": int(r["epochs"]), "rate": float(r["rate"]),
                 "wall_time_s": float(r["wall_time_s"])} for r in csv.DictReader(f)]


# ---------------------------------------------------------------- checks

def check_counts(counts):
    """``[(name, computed, expected, ok)]`` against the reference complexities."""
    return [(name, counts[name], REFERENCE_COUNTS[name], counts[name] == REFERENCE_COUNTS[name])
            for name in REFERENCE_COUNTS]


def cmd_count_params(args):
    counts = layers.baseline_param_counts()
    if args.stigmergic_spec:
        with open(args.stigmergic_spec) as f:
            counts["stigmergic"] = layers.count_parameters(layers.NetworkSpec.from_text(f.read()))
    rows = check_counts(counts)
    for name, got, want, ok in rows:
        print(f"{name}\t{got}\t{want}\t{'PASS' if ok else 'FAIL'}")
    return 0 if all(ok for *_, ok in rows) else 1


def cmd_gradcheck(args):
    rng = np.random.default_rng(args.seed)
    failed = False
    for kind, err in primitive_gradcheck(DIFFERENTIABLE_KINDS, args.eps, rng).items():
        ok = err <= GRADCHECK_TOLERANCE
        failed |= not ok
        print(f"{kind}\t{err:.3e}\t{'PASS' if ok else 'FAIL'}")
    err = layer_gradcheck(args.trials, args.steps, args.eps, rng)
    ok = err <= GRADCHECK_TOLERANCE
    failed |= not ok
    print(f"stig_full(T={args.steps}, trials={args.trials})\t{err:.3e}\t{'PASS' if ok else 'FAIL'}")
    return 1 if failed else 0


# ---------------------------------------------------------------- parser

def build_parser():
    parser = argparse.ArgumentParser(prog="stignet", description="Stigmergic perceptron experiments.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("xor-oracle", help="brute-force search of hard XOR solutions")
    p.add_argument("--points", type=int, default=9, help="grid points per axis")
    p.add_argument("--low", type=float, default=-2.0)
    p.add_argument("--high", type=float, default=2.0)
    p.add_argument("--frozen", action="store_true", help="fix all four deltas at zero")
    p.add_argument("--expect", choices=["auto", "some", "none"], default="auto",
                   help="expected outcome; auto means none when --frozen, some otherwise")
    p.add_argument("--show", type=int, default=5, help="solutions to print")
    p.set_defaults(func=cmd_xor_oracle)

    p = sub.add_parser("xor-train", help="train the soft single-neuron XOR")
    p.add_argument("--seeds", type=int, default=10)
    p.add_argument("--seed", type=int, default=0, help="first seed")
    p.add_argument("--steps", type=int, default=5000)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--steepness", type=float, default=None)
    p.add_argument("--min-success", type=int, default=None,
                   help="seeds that must solve XOR (default 80%% of --seeds)")
    p.set_defaults(func=cmd_xor_train)

    p = sub.add_parser("mnist", help="train and evaluate on MNIST IDX files")
    p.add_argument("--train-images", required=True)
    p.add_argument("--train-labels", required=True)
    p.add_argument("--test-images")
    p.add_argument("--test-labels")
    p.add_argument("--arch", choices=["stigmergic", "static"], default="stigmergic")
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--batch", type=int, default=64)
    p.add_argument("--lr", type=float, default=3e-3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--train-count", type=int, default=None)
    p.add_argument("--test-count", type=int, default=None)
    p.add_argument("--runs", type=int, default=1, help="independent runs, seeds seed..seed+runs-1")
    p.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    p.add_argument("--loss", choices=["softmax_ce", "mse"], default="softmax_ce")
    p.add_argument("--steepness", type=float, default=None)
    p.add_argument("--binarize", action="store_true", help="threshold pixels at 0.5")
    p.add_argument("--ci", choices=["t", "z"], default="t")
    p.add_argument("--out-csv")
    p.add_argument("--checkpoint", help="save the trained parameters (single run only)")
    p.add_argument("--min-rate", type=float, default=None, help="fail if any run scores lower")
    p.set_defaults(func=cmd_mnist)

    p = sub.add_parser("count-params", help="parameter counts of the four reference networks")
    p.add_argument("--stigmergic-spec", help="count this network description instead of the built-in one")
    p.set_defaults(func=cmd_count_params)

    p = sub.add_parser("gradcheck", help="reverse mode versus central differences")
    p.add_argument("--eps", type=float, default=1e-6, help="finite-difference step (default 1e-6)")
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--steps", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
