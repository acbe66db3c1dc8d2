"""Command-line interface.

Commands: gen-data, run-direct, run-indirect, run-baseline, run (method via
--method), report.  Exit codes: 0 success; 2 expected analytic outcomes
(infeasible tightening or program, insufficient calibration data); 1 internal
errors.
"""
from __future__ import annotations

import argparse
import sys as _sys
import traceback

from . import pipeline
from .errors import ConformalControlError, InfeasibleError, StageError

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_INFEASIBLE = 2


def _add_common(parser, data: bool = True):
    parser.add_argument("--config", required=True, help="path to the JSON run configuration")
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--seed", type=int, default=None, help="override all stage seeds (u64)")
    if data:
        parser.add_argument("--data", required=True, help="path to the dataset CSV")
        parser.add_argument("--trials", type=int, default=None, help="override validation trial count")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="conformal-control",
        description="Chance-constrained control of linear stochastic systems "
        "with conformal prediction regions",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write a seeded disturbance dataset CSV")
    _add_common(p, data=False)

    for name in ("run-direct", "run-indirect"):
        p = sub.add_parser(name, help=f"full {name.split('-')[1]} pipeline: "
                           "split, train/synthesize, calibrate, tighten, solve, validate")
        _add_common(p)

    p = sub.add_parser("run", help="run a pipeline selected by --method")
    _add_common(p)
    p.add_argument("--method", choices=("direct", "indirect"), required=True)

    p = sub.add_parser("run-baseline", help="scenario-optimization baseline")
    _add_common(p)
    p.add_argument("--scenarios", type=int, default=None, help="number of scenarios to impose")
    p.add_argument("--beta", type=float, default=1e-3, help="confidence parameter echoed in the report")

    p = sub.add_parser("report", help="merge run manifests into a comparison table")
    p.add_argument("runs", nargs="+", help="run output directories (or manifest paths)")
    p.add_argument("--out", required=True, help="directory for comparison.csv / comparison.txt")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _dispatch(args)
    except StageError as exc:
        print(f"error at {exc}", file=_sys.stderr)
        if isinstance(exc.cause, InfeasibleError):
            return EXIT_INFEASIBLE
        return EXIT_INTERNAL
    except InfeasibleError as exc:
        print(f"error: {exc}", file=_sys.stderr)
        return EXIT_INFEASIBLE
    except ConformalControlError as exc:
        print(f"error: {exc}", file=_sys.stderr)
        return EXIT_INTERNAL
    except Exception:
        traceback.print_exc()
        return EXIT_INTERNAL


def _dispatch(args) -> int:
    if args.command == "report":
        path = pipeline.write_report(args.runs, args.out)
        print(f"wrote {path}")
        return EXIT_OK

    cfg = pipeline.load_config(args.config)
    if args.command == "gen-data":
        path = pipeline.generate_data(cfg, args.out, seed_override=args.seed)
        print(f"wrote {path}")
        return EXIT_OK

    if args.command == "run":
        command = f"run-{args.method}"
    else:
        command = args.command

    if command == "run-direct":
        manifest = pipeline.run_direct(cfg, args.data, args.out, args.seed, args.trials)
    elif command == "run-indirect":
        manifest = pipeline.run_indirect(cfg, args.data, args.out, args.seed, args.trials)
    elif command == "run-baseline":
        manifest = pipeline.run_baseline(
            cfg, args.data, args.out,
            scenarios=args.scenarios, seed_override=args.seed,
            trials_override=args.trials, beta=args.beta,
        )
    else:  # pragma: no cover - argparse restricts choices
        raise ConformalControlError(f"unknown command {command}")
    _summarize(manifest)
    return EXIT_OK


def _summarize(manifest: dict) -> None:
    results = manifest.get("results", {})
    validation = results.get("validation", {})
    bits = [manifest.get("command", "run")]
    for key in ("C_e", "C_Ke"):
        if key in results:
            bits.append(f"{key}={results[key]:.4f}")
    if "objective" in results:
        bits.append(f"objective={results['objective']:.6g}")
    elif "ocp" in results:
        bits.append(f"objective={results['ocp']['objective']:.6g}")
    for key in ("state_sat_rate", "input_sat_rate"):
        if key in validation:
            bits.append(f"{key}={validation[key]:.4f}")
    print("  ".join(bits))


if __name__ == "__main__":
    raise SystemExit(main())
