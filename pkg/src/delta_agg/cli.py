"""Command line entry point: ``delta-agg {run,compare,robustness,selftest}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import harness
from .algorithms import DivergenceError
from .selftest import run_selftest


def _apply_overrides(cfg: harness.RunConfig, args) -> harness.RunConfig:
    updates = {}
    if args.seed is not None:
        updates["seed"] = args.seed
    if args.iters is not None:
        updates["iterations"] = args.iters
    if args.gamma is not None:
        updates["gamma"] = args.gamma
    if args.out is not None:
        updates["output"] = args.out
    return replace(cfg, **updates) if updates else cfg


def _output_path(cfg: harness.RunConfig, default: str) -> Path:
    out = Path(cfg.output or default)
    return out if out.suffix == ".csv" else out.with_suffix(".csv")


def _summary_line(trace: harness.RunTrace) -> dict:
    return {
        "algorithm": trace.config.algorithm,
        "records": len(trace.records),
        "final_rel_cost_error": trace.final_rel_cost_error,
        "plateau_rel_cost_error": harness.plateau(trace.column("rel_cost_error")),
    }


def cmd_run(args) -> int:
    cfg, _ = harness.load_config(args.config)
    cfg = _apply_overrides(cfg, args)
    if cfg.perturbation is not None and args.command == "run":
        logging.getLogger(__name__).info("config carries a perturbation; running robustness schedule")
    trace = harness.run_experiment(cfg) if args.command == "run" else harness.robustness_experiment(cfg)
    path = harness.write_trace(trace, _output_path(cfg, f"{cfg.algorithm}_run"))
    print(json.dumps({"csv": str(path), **_summary_line(trace)}))
    return 0


def cmd_compare(args) -> int:
    cfg, algos = harness.load_config(args.config)
    cfg = _apply_overrides(cfg, args)
    cfgs = [replace(cfg, algorithm=a) for a in algos]
    comp = harness.compare_runs(cfgs, workers=args.workers)
    path = comp.write(_output_path(cfg, "comparison"))
    print(json.dumps({"csv": str(path), "summary": comp.summary}))
    return 0


def cmd_selftest(args) -> int:
    ok = True
    for name, passed, detail in run_selftest():
        ok &= passed
        print(f"{'PASS' if passed else 'FAIL'} {name}: {detail}")
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="delta-agg", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def with_overrides(p):
        p.add_argument("config", help="JSON run configuration")
        p.add_argument("--seed", type=int, help="master seed; unset component seeds derive from it")
        p.add_argument("--iters", type=int, help="number of iterations")
        p.add_argument("--gamma", type=float, help="step size")
        p.add_argument("--out", help="output CSV path (JSON sidecar written next to it)")
        return p

    with_overrides(sub.add_parser("run", help="run one algorithm")).set_defaults(func=cmd_run)
    p = with_overrides(sub.add_parser("compare", help="run the config's algorithms on one instance"))
    p.add_argument("--workers", type=int, default=1, help="process pool size for member runs")
    p.set_defaults(func=cmd_compare)
    with_overrides(sub.add_parser("robustness", help="run with the config's cost perturbation")).set_defaults(
        func=cmd_run
    )
    sub.add_parser("selftest", help="run the invariant checks").set_defaults(func=cmd_selftest)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (harness.ConfigError, DivergenceError, ValueError, RuntimeError, OSError) as exc:
        diag = {"error": type(exc).__name__, "message": str(exc)}
        if isinstance(exc, DivergenceError):
            diag["iteration"] = exc.iteration
        print(json.dumps(diag), file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
