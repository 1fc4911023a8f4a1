"""Command line entry point: ``tvpanel <subcommand> ...``.

Exit codes: 0 success, 1 usage error, 2 invalid input data, 3 estimation failure.
"""
from __future__ import annotations

import argparse
import sys

import numpy as np

from .curve import VARIANCE_FORMS, default_grid, estimate_curve
from .exceptions import (
    AllPointsFailed,
    EstimationError,
    LowConvergence,
    PanelParseError,
    ValidationError,
)
from .kernels import KERNELS, KernelSpec, moments
from .panel_data import format_number, read_csv, write_csv
from .simulator import builtin_setting, constant_setting, generate
from .study import analyze, run_study

EXIT_USAGE, EXIT_VALIDATION, EXIT_ESTIMATION = 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _positive_float(text):
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not value > 0:
        raise argparse.ArgumentTypeError(f"must be positive, got {text}")
    return value


def _positive_int(text):
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be at least 1, got {text}")
    return value


def _level(text):
    value = float(text)
    if not 0 < value < 1:
        raise argparse.ArgumentTypeError(f"level must lie in (0, 1), got {text}")
    return value


def _add_kernel_args(p, bandwidth_required=True):
    p.add_argument("--kernel", choices=sorted(KERNELS), default="epanechnikov")
    p.add_argument("--bandwidth", type=_positive_float, required=bandwidth_required,
                   default=None if bandwidth_required else 0.5)
    p.add_argument("--degree", type=int, choices=(0, 1, 2), default=1)
    p.add_argument("--grid-points", type=_positive_int, default=100)
    p.add_argument("--level", type=_level, default=0.95)
    p.add_argument("--variance", choices=VARIANCE_FORMS, default="poisson-cluster")


def build_parser():
    parser = _Parser(prog="tvpanel", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="draw a synthetic panel count dataset")
    p.add_argument("--setting", type=int, choices=(1, 2), default=1)
    p.add_argument("--constant-beta", type=float, default=None,
                   help="use a time-invariant coefficient instead of the setting's curve")
    p.add_argument("--n", type=_positive_int, default=300)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--time-resolution", type=_positive_float, default=0.1)
    p.add_argument("--censoring", choices=("none", "uniform"), default="none")
    p.add_argument("--out", required=True)

    for name, helptext in (("estimate", "estimate the coefficient curve"),
                           ("analyze", "curve plus constant-coefficient comparator")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--data", required=True)
        p.add_argument("--tau", type=_positive_float, default=None)
        _add_kernel_args(p)
        p.add_argument("--out", required=True)

    p = sub.add_parser("study", help="Monte Carlo replication study")
    p.add_argument("--setting", type=int, choices=(1, 2), default=1)
    p.add_argument("--constant-beta", type=float, default=None)
    p.add_argument("--n", type=_positive_int, default=300)
    p.add_argument("--replications", type=_positive_int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=_positive_int, default=1)
    _add_kernel_args(p, bandwidth_required=False)
    p.add_argument("--out", required=True)

    p = sub.add_parser("kernel-info", help="print kernel moment constants")
    p.add_argument("--kernel", choices=sorted(KERNELS), default="epanechnikov")
    p.add_argument("--degree", type=int, choices=(0, 1, 2), default=1)
    return parser


def _config(args):
    if args.constant_beta is not None:
        return constant_setting(args.constant_beta, n=args.n, seed=args.seed)
    return builtin_setting(args.setting, n=args.n, seed=args.seed)


def _spec(args):
    return KernelSpec(args.kernel, args.bandwidth, args.degree)


def _summarize_curve(curve, out):
    ok = int(np.sum(curve.converged))
    print(f"grid points: {curve.grid.size}, converged: {ok}, "
          f"boundary: {int(np.sum(curve.boundary))}", file=out)
    print(f"beta_hat range: [{np.nanmin(curve.beta_hat):.4g}, "
          f"{np.nanmax(curve.beta_hat):.4g}]", file=out)


def _run(args, out):
    cmd = args.command
    if cmd == "kernel-info":
        m = moments(KernelSpec(args.kernel, 1.0, args.degree))
        print(f"kernel: {args.kernel}", file=out)
        print(f"mu2={float(m.mu2)!r}", file=out)
        print(f"nu0={float(m.nu0)!r}", file=out)
        with np.printoptions(precision=12):
            print(f"Omega1=\n{m.Omega1}", file=out)
            print(f"Omega2=\n{m.Omega2}", file=out)
            print(f"b={m.b}", file=out)
        return 0

    if cmd == "simulate":
        cfg = _config(args).with_(time_resolution=args.time_resolution,
                                  censoring=args.censoring)
        data = generate(cfg)
        write_csv(data, args.out)
        print(f"wrote {data.n} subjects, {data.visits.time.size} visits to {args.out}",
              file=out)
        return 0

    if cmd in ("estimate", "analyze"):
        data = read_csv(args.data, tau=args.tau)
        grid = default_grid(data.tau, args.grid_points)
        if cmd == "estimate":
            curve = estimate_curve(data, _spec(args), grid=grid, level=args.level,
                                   variance=args.variance)
        else:
            res = analyze(data, _spec(args), grid=grid, level=args.level,
                          variance=args.variance)
            curve = res.curve
            c = res.constant
            print(f"constant coefficient: {c.beta:.6g} (se {c.se:.4g}, "
                  f"{args.level:.0%} CI [{c.ci_lower:.6g}, {c.ci_upper:.6g}])", file=out)
        curve.write_csv(args.out)
        _summarize_curve(curve, out)
        print(f"wrote {args.out}", file=out)
        return 0

    if cmd == "study":
        cfg = _config(args)
        report = run_study(cfg, _spec(args),
                           grid=default_grid(cfg.tau, args.grid_points), R=args.replications,
                           seed=args.seed, variance=args.variance, n_jobs=args.threads)
        report.write_csv(args.out)
        m = report.interior
        print(f"replications: {args.replications}, convergence rate: "
              f"{report.convergence_rate:.4f}", file=out)
        print(f"interior mean |bias|: {np.nanmean(np.abs(report.bias[m])):.4g}, "
              f"mean coverage: {np.nanmean(report.coverage[m]):.4g}", file=out)
        print(f"wrote {args.out}", file=out)
        return 0
    raise AssertionError(cmd)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return _run(args, sys.stdout)
    except (PanelParseError, ValidationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (AllPointsFailed, LowConvergence, EstimationError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ESTIMATION


if __name__ == "__main__":
    sys.exit(main())
