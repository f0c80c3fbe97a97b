"""Command-line front end.

Exit codes: 0 success, 1 usage/configuration error, 2 numerical failure,
3 any failed gate under --strict.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from . import cavity_recursion as cr
from . import lab_harness as lh
from . import order_params as op
from . import sk_model as sk
from .vectorspace import load_disorder, sample_disorder

_NUMERICAL_ERRORS = (
    op.ConvergenceError,
    op.SequenceError,
    cr.DegenerateStateError,
    FloatingPointError,
)


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--beta", type=float, default=0.2, help="inverse temperature")
    parser.add_argument("--h", type=float, default=0.5, help="external field (tilt mean for `toy`)")
    parser.add_argument("--n", type=int, default=256, help="system size N")
    parser.add_argument("--k", type=int, default=4, help="recursion stage count / conditioning level")
    parser.add_argument("--replicas", type=int, default=50, help="number of disorder replicas")
    parser.add_argument("--seed", type=int, default=0, help="base seed; replica r uses seed+r")
    parser.add_argument("--quad-nodes", type=int, default=61, help="Gauss-Hermite node count")
    parser.add_argument("--tol", type=float, default=1e-12, help="fixed-point tolerance")
    parser.add_argument("--out", type=str, default=None, help="write report to this path")
    parser.add_argument("--format", choices=("csv", "json"), default="csv", help="report format")
    parser.add_argument("--disorder-file", type=str, default=None, help="replay a saved disorder sample")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sklab", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, text in [
        ("rs", "replica-symmetric free energy"),
        ("solve-q", "overlap fixed point q"),
        ("at", "stability value (<= 1 means stable)"),
        ("sequences", "gamma/rho sequences and their gaps"),
        ("recursion", "run the cavity recursion and print stage observables"),
        ("free-energy", "exact quenched free energy density at small N"),
        ("moments", "conditionally annealed first/second moments at small N"),
        ("toy", "toy-model second-moment exponent"),
        ("experiment", "run a preset from a JSON config"),
    ]:
        p = sub.add_parser(name, help=text)
        _add_common(p)
        if name == "at":
            p.add_argument("--q", type=float, default=None, help="override the overlap (default: solved)")
        if name == "toy":
            p.add_argument("--m", type=float, default=None, help="tilt mean (defaults to --h)")
        if name == "experiment":
            p.add_argument("--config", type=str, default=None, help="JSON config path")
            p.add_argument("--strict", action="store_true", help="exit 3 when any gate fails")
    return parser


def _params(args: argparse.Namespace) -> op.ModelParams:
    return op.ModelParams(beta=args.beta, h=args.h, quad_nodes=args.quad_nodes, tol=args.tol)


def _disorder(args: argparse.Namespace):
    if args.disorder_file:
        return load_disorder(args.disorder_file)
    return sample_disorder(args.n, args.seed)


def _cmd_rs(args) -> int:
    print(op.rs_free_energy(_params(args)))
    return 0


def _cmd_solve_q(args) -> int:
    print(op.solve_q(_params(args)))
    return 0


def _cmd_at(args) -> int:
    params = _params(args)
    q = args.q
    if q is None:
        q = op.solve_q(params) if args.h != 0 else 0.0
    print(op.at_value(params, q))
    return 0


def _cmd_sequences(args) -> int:
    params = _params(args)
    order = op.build_sequences(params, K=max(args.k, 1))
    print(f"q = {order.q!r}   stability value = {order.at_value!r}")
    print(f"{'k':>3} {'gamma_k':>24} {'rho_k':>24} {'q - rho_k':>14}")
    for j in range(len(order)):
        print(f"{j + 1:>3} {order.gamma[j]!r:>24} {order.rho[j]!r:>24} {order.q_minus_rho[j]:>14.3e}")
    return 0


def _cmd_recursion(args) -> int:
    params = _params(args)
    order = op.build_sequences(params, K=max(args.k, 2))
    d = _disorder(args)
    state = cr.run(d, order, params, K=args.k)
    drifts = cr.check_invariants(state)
    print(f"N={d.n} seed={d.seed} stage k={state.k} reorthogonalizations={state.reorth_count}")
    for name, value in drifts.items():
        print(f"  {name}: {value:.3e}")
    for row in cr.state_stats(state):
        print(f"  {row.observable:>22}: value {row.value:+.6f}  target {row.target:+.6f}")
    return 0


def _cmd_free_energy(args) -> int:
    params = _params(args)
    d = _disorder(args)
    f = sk.log_partition_exact(d, params) / d.n
    rs = op.rs_free_energy(params)
    print(f"(1/N) log Z = {f!r}   RS = {rs!r}   deviation = {f - rs:+.3e}")
    return 0


def _cmd_moments(args) -> int:
    params = _params(args)
    d = _disorder(args)
    order = op.build_sequences(params, K=max(args.k + 1, 2))
    state = cr.run(d, order, params, K=args.k + 1)
    first = sk.conditional_first_moment(state, d)
    print(f"(1/N) log E_k(Z)  = {first!r}   (k={args.k}, N={d.n})")
    if d.n <= sk.MAX_PAIR_N:
        second = sk.conditional_second_moment(state, d)
        print(f"(1/N) log E_k(Z^2) = {second!r}   deficit D = {second - 2 * first:.3e}")
    else:
        print(f"(1/N) log E_k(Z^2) skipped: N={d.n} beyond pair limit {sk.MAX_PAIR_N}")
    return 0


def _cmd_toy(args) -> int:
    m = args.m if args.m is not None else args.h
    print(op.toy_exponent(args.beta, m))
    return 0


def _cmd_experiment(args) -> int:
    if args.config:
        config = lh.load_config(args.config)
    else:
        config = lh.ExperimentConfig(
            experiment="sequences", beta=args.beta, h=args.h, n_values=(args.n,),
            k=args.k, replicas=args.replicas, base_seed=args.seed,
            out_path=args.out, format=args.format, quad_nodes=args.quad_nodes,
            tol=args.tol, disorder_file=args.disorder_file,
        )
    report = lh.run_experiment(config)
    for row in report.rows:
        status = "pass" if row.passed else "FAIL"
        print(f"[{status}] {row.observable} N={row.n} k={row.k} mean={row.mean!r} target={row.target!r}")
    if config.out_path:
        print(f"report written to {config.out_path}")
    if args.strict and not report.all_passed:
        return 3
    return 0


_COMMANDS = {
    "rs": _cmd_rs,
    "solve-q": _cmd_solve_q,
    "at": _cmd_at,
    "sequences": _cmd_sequences,
    "recursion": _cmd_recursion,
    "free-energy": _cmd_free_energy,
    "moments": _cmd_moments,
    "toy": _cmd_toy,
    "experiment": _cmd_experiment,
}


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 0 for --help, 2 for usage errors; fold the latter to 1
        return 0 if exc.code == 0 else 1
    np.seterr(over="raise", invalid="raise", divide="raise", under="ignore")
    try:
        return _COMMANDS[args.command](args)
    except _NUMERICAL_ERRORS as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
