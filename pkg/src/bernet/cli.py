"""Command-line front end.

Subcommands: train, eval, certify, compare-bounds, reach, inspect.
Exit codes: 0 success, 1 usage error, 2 runtime failure.  Output files are
byte-reproducible for a fixed seed except for timing columns.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import certify as C
from . import data as D
from . import network as N
from . import reach as R
from . import training as T


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse defaults to exit code 2; we want 1
        raise UsageError(message)


def _say(args, *message) -> None:
    if not args.quiet:
        print(*message)


def _parse_eps_list(text: str) -> list[float]:
    try:
        eps = [float(tok) for tok in text.split(",") if tok.strip()]
    except ValueError:
        raise UsageError(f"invalid epsilon list {text!r}") from None
    if not eps or any(e < 0 for e in eps):
        raise UsageError("epsilon list must contain non-negative numbers")
    return eps


def _parse_arch(text: str) -> list[int]:
    try:
        widths = [int(tok) for tok in text.split(",") if tok.strip()]
    except ValueError:
        raise UsageError(f"invalid architecture {text!r}") from None
    if not widths or any(w < 1 for w in widths):
        raise UsageError("architecture needs positive layer widths")
    return widths


def _load_dataset(args, split_seed: int) -> tuple[D.Dataset, D.Dataset]:
    """Resolve --dataset into (train, test) pairs."""
    spec = args.dataset
    n_train = args.train_size
    n_test = args.test_size
    if spec == "two-moons":
        train = D.two_moons(n_train, seed=split_seed)
        test = D.two_moons(n_test, seed=split_seed + 1)
    elif spec == "synth-digits":
        train = D.synthetic_digits(n_train, seed=split_seed)
        test = D.synthetic_digits(n_test, seed=split_seed + 1)
    elif spec == "digits":
        train, test, source = D.load_digit_data(n_train, n_test, seed=split_seed)
        _say(args, f"digit data source: {source}")
    elif spec == "mnist":
        rng = np.random.default_rng(split_seed)
        train_full = D.load_mnist("train")
        test_full = D.load_mnist("test")
        train = train_full.subset(rng.choice(len(train_full), min(n_train, len(train_full)),
                                             replace=False))
        test = test_full.subset(rng.choice(len(test_full), min(n_test, len(test_full)),
                                           replace=False))
    elif spec.startswith("csv:"):
        full = D.load_csv(spec[4:], label_col=args.label_col)
        train, test = _split(full, args.test_frac, split_seed)
    elif spec.startswith("idx:"):
        parts = spec.split(":")
        if len(parts) != 3:
            raise UsageError("idx dataset spec must be idx:IMAGES:LABELS")
        full = D.load_idx(parts[1], parts[2])
        train, test = _split(full, args.test_frac, split_seed)
    else:
        raise UsageError(f"unknown dataset {spec!r}")
    return train, test


def _split(ds: D.Dataset, test_frac: float, seed: int) -> tuple[D.Dataset, D.Dataset]:
    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(ds))
    cut = max(1, int(len(ds) * (1.0 - test_frac)))
    return ds.subset(perm[:cut]), ds.subset(perm[cut:] if cut < len(ds) else perm[:0])


def _add_dataset_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--dataset", required=True,
                   help="two-moons | synth-digits | digits | mnist | csv:PATH | idx:IMG:LAB")
    p.add_argument("--train-size", type=int, default=2000)
    p.add_argument("--test-size", type=int, default=500)
    p.add_argument("--label-col", default="label")
    p.add_argument("--test-frac", type=float, default=0.2)
    p.add_argument("--limit", type=int, default=None,
                   help="evaluate at most this many test samples")


def _test_slice(ds: D.Dataset, limit: int | None) -> D.Dataset:
    if limit is None or limit >= len(ds):
        return ds
    return ds.subset(np.arange(limit))


# --- subcommand implementations ---------------------------------------------------


def _cmd_train(args) -> int:
    train_ds, test_ds = _load_dataset(args, args.seed)
    cfg_dict = {}
    if args.config:
        with open(args.config) as f:
            cfg_dict = json.load(f)
    overrides = {
        "regime": args.regime, "seed": args.seed,
        "epochs": args.epochs, "batch_size": args.batch_size,
        "learning_rate": args.lr, "epsilon": args.epsilon,
        "lambda_max": args.lambda_max, "warmup_epochs": args.warmup_epochs,
        "pgd_steps": args.pgd_steps,
    }
    for key, val in overrides.items():
        if val is not None:
            cfg_dict[key] = val
    cfg = T.TrainConfig.from_dict(cfg_dict)
    lo, hi = train_ds.domain()
    arch = N.fc_arch(_parse_arch(args.arch)[:-1], args.order,
                     _parse_arch(args.arch)[-1])
    net = N.init_network(arch, (lo, hi), seed=cfg.seed)
    probe = None
    if cfg.regime == "certified" and len(test_ds):
        probe_n = min(256, len(test_ds))
        probe = (test_ds.inputs[:probe_n], test_ds.labels[:probe_n])
    log = T.train(net, train_ds.inputs, train_ds.labels, cfg,
                  test_x=test_ds.inputs if len(test_ds) else None,
                  test_y=test_ds.labels if len(test_ds) else None,
                  cert_probe=probe, metrics_path=args.metrics,
                  verbose=not args.quiet)
    N.save_model(net, args.out)
    last = log.records[-1]
    _say(args, f"saved {args.out}: train_acc {last.train_acc:.4f} "
               f"test_acc {last.test_acc:.4f}")
    return 0


def _cmd_eval(args) -> int:
    net = N.load_model(args.model)
    _, test_ds = _load_dataset(args, args.seed)
    test_ds = _test_slice(test_ds, args.limit)
    acc = T.accuracy(net, test_ds.inputs, test_ds.labels)
    print(f"accuracy {acc:.6f} on {len(test_ds)} samples")
    return 0


def _cmd_certify(args) -> int:
    net = N.load_model(args.model)
    _, test_ds = _load_dataset(args, args.seed)
    test_ds = _test_slice(test_ds, args.limit)
    eps_list = _parse_eps_list(args.eps)
    methods = C.METHODS if args.method == "both" else (args.method,)
    results = []
    pgd_ub: dict[float, float] = {}
    for eps in eps_list:
        for method in methods:
            res = C.certified_accuracy(net, test_ds.inputs, test_ds.labels, eps,
                                       method=method, threads=args.threads)
            results.append(res)
            _say(args, f"eps {eps:g} {method}: certified_acc {res.accuracy:.4f}")
        if args.pgd_ub:
            pgd_ub[eps] = C.pgd_upper_bound_accuracy(net, test_ds.inputs,
                                                     test_ds.labels, eps,
                                                     steps=args.pgd_steps)
            _say(args, f"eps {eps:g} pgd upper bound: {pgd_ub[eps]:.4f}")
    if args.out_csv:
        C.write_certification_csv(args.out_csv, test_ds.labels, results)
    if args.out_json:
        C.write_summary_json(args.out_json,
                             C.certification_summary(results, pgd_ub or None))
    return 0


def _cmd_compare_bounds(args) -> int:
    net = N.load_model(args.model)
    _, test_ds = _load_dataset(args, args.seed)
    test_ds = _test_slice(test_ds, args.limit)
    eps_list = _parse_eps_list(args.eps)
    comparisons = [C.compare_margins(net, test_ds.inputs, test_ds.labels, eps,
                                     threads=args.threads)
                   for eps in eps_list]
    for comp in comparisons:
        s_b = C.margin_summary(comp.margins_bern)
        s_n = C.margin_summary(comp.margins_naive)
        _say(args, f"eps {comp.epsilon:g}: refined median {s_b['median']:.4g}, "
                   f"naive median {s_n['median']:.4g}")
    if args.out_csv:
        C.write_comparison_csv(args.out_csv, test_ds.labels, comparisons)
    if args.out_json:
        summary = {
            "per_epsilon": [
                {"epsilon": comp.epsilon,
                 "bern_ibp": C.margin_summary(comp.margins_bern),
                 "naive_ibp": C.margin_summary(comp.margins_naive)}
                for comp in comparisons
            ]
        }
        C.write_summary_json(args.out_json, summary)
    return 0


def _cmd_reach(args) -> int:
    problem = R.load_system(args.system)
    controller = N.load_model(args.model)
    horizon = args.horizon or problem.horizon
    methods = C.METHODS if args.method == "both" else (args.method,)
    for method in methods:
        trace = R.reach_horizon(problem.system, controller, problem.x0_box,
                                horizon, n_samples=args.samples,
                                seed=args.seed, method=method)
        out = Path(args.out_csv)
        path = out if len(methods) == 1 else out.with_suffix(f".{method}{out.suffix}")
        R.write_trace_csv(path, trace)
        _say(args, f"{method}: final volume {trace.volumes[-1]:.6g} "
                   f"(sampled {trace.sampled_volumes[-1]:.6g}) -> {path}")
    return 0


def _cmd_inspect(args) -> int:
    net = N.load_model(args.model)
    print(f"input width {net.in_width}, parameters {net.n_params()}")
    print(f"input domain [{net.input_lo.min():.4g}, {net.input_hi.max():.4g}]")
    for i, layer in enumerate(net.layers):
        if isinstance(layer, N.AffineLayer):
            o, ins = layer.weight.shape
            print(f"  {i}: affine {ins} -> {o} ({layer.weight.size + o} params)")
        elif isinstance(layer, N.Conv2dLayer):
            print(f"  {i}: conv2d {layer.in_shape} -> {layer.out_shape} "
                  f"stride {layer.stride} pad {layer.padding} "
                  f"({layer.kernel.size + layer.bias.size} params)")
        else:
            print(f"  {i}: bernstein order {layer.order}, {layer.out_width} neurons, "
                  f"stored bounds [{layer.stored_lo.min():.4g}, {layer.stored_hi.max():.4g}] "
                  f"({layer.coeffs.size} params)")
    return 0


# --- parser ------------------------------------------------------------------------


def build_parser() -> _Parser:
    parser = _Parser(prog="bernet",
                     description="Train and certify Bernstein-activation networks")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--threads", type=int, default=1)
    parser.add_argument("--quiet", action="store_true")
    # the same globals are accepted after the subcommand; SUPPRESS keeps the
    # subparser from clobbering values given before it
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    common.add_argument("--threads", type=int, default=argparse.SUPPRESS)
    common.add_argument("--quiet", action="store_true", default=argparse.SUPPRESS)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a network", parents=[common])
    _add_dataset_flags(p)
    p.add_argument("--regime", choices=T.REGIMES, default=None)
    p.add_argument("--arch", required=True, help="comma widths, e.g. 20,20,10")
    p.add_argument("--order", type=int, required=True)
    p.add_argument("--config", default=None, help="JSON file of TrainConfig fields")
    p.add_argument("--out", required=True)
    p.add_argument("--metrics", default=None, help="per-epoch CSV log path")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--epsilon", type=float, default=None)
    p.add_argument("--lambda-max", type=float, default=None)
    p.add_argument("--warmup-epochs", type=int, default=None)
    p.add_argument("--pgd-steps", type=int, default=None)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", parents=[common], help="plain accuracy of a saved model")
    _add_dataset_flags(p)
    p.add_argument("--model", required=True)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("certify", parents=[common], help="certified accuracy at given radii")
    _add_dataset_flags(p)
    p.add_argument("--model", required=True)
    p.add_argument("--eps", required=True, help="comma-separated radii")
    p.add_argument("--method", choices=list(C.METHODS) + ["both"], default="bern_ibp")
    p.add_argument("--pgd-ub", action="store_true",
                   help="also compute the PGD upper bound per radius")
    p.add_argument("--pgd-steps", type=int, default=100)
    p.add_argument("--out-csv", default=None)
    p.add_argument("--out-json", default=None)
    p.set_defaults(func=_cmd_certify)

    p = sub.add_parser("compare-bounds", parents=[common],
                       help="per-sample refined vs naive margins")
    _add_dataset_flags(p)
    p.add_argument("--model", required=True)
    p.add_argument("--eps", required=True)
    p.add_argument("--out-csv", default=None)
    p.add_argument("--out-json", default=None)
    p.set_defaults(func=_cmd_compare_bounds)

    p = sub.add_parser("reach", parents=[common], help="closed-loop reachability trace")
    p.add_argument("--system", required=True, help="JSON problem file")
    p.add_argument("--model", required=True, help="controller model")
    p.add_argument("--horizon", type=int, default=None)
    p.add_argument("--samples", type=int, default=10_000)
    p.add_argument("--method", choices=list(C.METHODS) + ["both"], default="bern_ibp")
    p.add_argument("--out-csv", required=True)
    p.set_defaults(func=_cmd_reach)

    p = sub.add_parser("inspect", parents=[common], help="summarize a saved model")
    p.add_argument("--model", required=True)
    p.set_defaults(func=_cmd_inspect)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        parser.print_usage(sys.stderr)
        print(f"error: {e}", file=sys.stderr)
        return 1
    try:
        return args.func(args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except Exception as e:  # runtime failures map to exit 2 with a message
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
