"""Command-line entry point: ``lsqgap {verify,run,fit,diagnose}``.

Exit status is 0 on success, 1 when ``verify`` finds a failing identity and
2 on bad input (invalid config, unreadable file, too few rows to fit).
"""
import argparse
from dataclasses import replace
import json
import math
import sys
import warnings

from .errors import ConfigError, InsufficientData, LsqGapError, NonPositiveExcess
from .harness import diagnose_config, emit, fit_scaling_exponent, load_config, read_rows, run_experiment, verify_identities


def _cmd_verify(args):
    report = verify_identities(args.seed, perturb=args.perturb)
    for line in report.lines():
        print(line)
    return 0 if report.passed else 1


def _cmd_run(args):
    config = load_config(args.config)
    if args.workers:
        config = replace(config, workers=args.workers)
    rows = run_experiment(config)
    emit(rows, args.format, args.output)
    return 0


def _cmd_fit(args):
    rows = read_rows(args.results)
    names = [args.estimator] if args.estimator else list(dict.fromkeys(r.estimator for r in rows))
    status = 0
    for name in names:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", NonPositiveExcess)
            try:
                fit = fit_scaling_exponent(rows, name)
            except InsufficientData as exc:
                fit = None
                print(f"{exc}", file=sys.stderr)
                status = 2
        for w in caught:
            print(f"warning: {w.message}", file=sys.stderr)
        if fit is not None:
            print(f"{name}: slope={fit.slope:.6f} intercept={fit.intercept:.6f} residual={fit.residual:.3e}")
    return status


def _json_safe(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    return obj


def _cmd_diagnose(args):
    config = load_config(args.config)
    reports = diagnose_config(config, args.moment_samples)
    json.dump([_json_safe(r) for r in reports], sys.stdout, indent=1)
    sys.stdout.write("\n")
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="lsqgap", description="Excess-risk experiments for bounded linear regression.")
    sub = p.add_subparsers(dest="command", required=True)

    v = sub.add_parser("verify", help="run the exact-identity suite")
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--perturb", action="store_true", help="negative control: perturb the least-squares fit")
    v.set_defaults(func=_cmd_verify)

    r = sub.add_parser("run", help="run an experiment sweep from a YAML config")
    r.add_argument("config")
    r.add_argument("-o", "--output", default="-", help="output path ('-' for stdout)")
    r.add_argument("-f", "--format", choices=("csv", "json"), default="csv")
    r.add_argument("-j", "--workers", type=int, default=None)
    r.set_defaults(func=_cmd_run)

    f = sub.add_parser("fit", help="fit the d-exponent of excess * n from a results file")
    f.add_argument("results")
    f.add_argument("-e", "--estimator", default=None)
    f.set_defaults(func=_cmd_fit)

    d = sub.add_parser("diagnose", help="print diagnostics for every grid point of a config")
    d.add_argument("config")
    d.add_argument("--moment-samples", type=int, default=100000)
    d.set_defaults(func=_cmd_diagnose)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, LsqGapError, OSError, ValueError) as exc:
        print(f"lsqgap {args.command}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
