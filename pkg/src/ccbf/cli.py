"""Command-line entry point.

Exit codes:
  0  success (run: completed with a true safety verdict)
  1  configuration or usage error
  2  run terminated by an infeasible adaptation or control QP
  3  run completed but the safety verdict is false, or sample-safety found violations
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
import time
from pathlib import Path

from . import __version__
from .sim import ScenarioError, load_scenario, run, sample_safety
from .sim.output import write_csv, write_json, write_jsonl

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_INFEASIBLE = 2
EXIT_UNSAFE = 3

LOG_ENV = "CCBF_LOG_LEVEL"
COMPARED = ("baseline_qp", "ccbf_decentralized")

log = logging.getLogger("ccbf")


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on usage errors; 2 is reserved for infeasible runs here
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="ccbf",
        description="Consolidated control barrier function simulator.",
        epilog=f"Log verbosity follows ${LOG_ENV} (DEBUG, INFO, WARNING, ERROR; default WARNING). "
               "Exit codes: 0 ok, 1 config error, 2 infeasible QP, 3 unsafe verdict or sampled violation.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, out=True):
        p.add_argument("scenario", type=Path, help="scenario TOML file")
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                       help="override a scenario value, e.g. control.r=2 or agents.0.goal=[1,2] (repeatable)")
        if out:
            p.add_argument("--out", type=Path, default=Path("out"), help="output directory (default: ./out)")

    p = sub.add_parser("run", help="simulate a scenario and write trajectory.csv, steps.jsonl, summary.json")
    common(p)
    p = sub.add_parser("validate", help="load and check a scenario without simulating")
    common(p, out=False)
    p = sub.add_parser("compare", help="run the scenario under the baseline and the consolidated filter")
    common(p)
    p = sub.add_parser("sample-safety", help="Monte Carlo check that H >= 0 implies every h_s > 0")
    common(p)
    p.add_argument("--samples", type=int, default=10_000, help="number of sampled states (default: 10000)")
    p.add_argument("--seed", type=int, default=None, help="sampling seed (default: sim.rng_seed)")
    p.add_argument("--gain", type=float, default=1.0, help="common value of every gain k_s (default: 1)")
    return parser


def _setup_logging() -> None:
    level = os.environ.get(LOG_ENV, "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")


def _config_echo(cfg, overrides) -> dict:
    return {"overrides": list(overrides), "applied": cfg.raw}


def _cmd_run(args) -> int:
    cfg = load_scenario(args.scenario, args.overrides)
    args.out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    res = run(cfg)
    wall = time.perf_counter() - t0
    write_csv(args.out / "trajectory.csv", res.logs, len(cfg.agents), cfg.controlled)
    write_jsonl(args.out / "steps.jsonl", res.logs)
    summary = dict(res.summary, config=_config_echo(cfg, args.overrides))
    write_json(args.out / "summary.json", summary)
    log.info("run took %.2f s wall time", wall)
    print(f"{cfg.name or args.scenario.stem}: completed={res.completed} verdict={res.summary['verdict']} "
          f"steps={len(res.logs)} min_distance={res.summary['min_pairwise_distance']:.4f}")
    if not res.completed:
        print(f"terminated: {res.failure['reason']} at t={res.failure['t']:.2f}", file=sys.stderr)
        return EXIT_INFEASIBLE
    return EXIT_OK if res.summary["verdict"] else EXIT_UNSAFE


def _cmd_validate(args) -> int:
    cfg = load_scenario(args.scenario, args.overrides)
    print(f"{args.scenario}: ok ({len(cfg.agents)} agents, {len(cfg.controlled)} controlled, "
          f"controller={cfg.controller})")
    return EXIT_OK


def _cmd_compare(args) -> int:
    cfg = load_scenario(args.scenario, args.overrides)
    args.out.mkdir(parents=True, exist_ok=True)
    results = {}
    for controller in COMPARED:
        try:
            res = run(cfg.with_controller(controller))
        except Exception as exc:  # recorded, the harness carries on
            log.exception("%s run failed", controller)
            results[controller] = {"error": f"{type(exc).__name__}: {exc}"}
            continue
        s = res.summary
        results[controller] = {
            "completed": s["completed"],
            "verdict": s["verdict"],
            "infeasibility": s["failure"],
            "min_h": {i: a["min_h"] for i, a in s["agents"].items()},
            "min_H": {i: a["min_H"] for i, a in s["agents"].items()},
            "goal_arrival_time": {i: a["goal_arrival_time"] for i, a in s["agents"].items()},
            "min_pairwise_distance": s["min_pairwise_distance"],
            "steps": s["steps"],
            "t_final": s["t_final"],
        }
        print(f"{controller}: completed={s['completed']} verdict={s['verdict']}"
              + (f" infeasible at t={s['failure']['t']:.2f}" if s["failure"] else ""))
    write_json(args.out / "comparison.json", {
        "scenario": cfg.name or args.scenario.stem,
        "config": _config_echo(cfg, args.overrides),
        "runs": results,
    })
    return EXIT_OK


def _cmd_sample(args) -> int:
    cfg = load_scenario(args.scenario, args.overrides)
    if args.samples < 1:
        raise ScenarioError("--samples must be at least 1")
    if not args.gain > 0:
        raise ScenarioError("--gain must be positive")
    report = sample_safety(cfg, args.samples, args.seed, k=args.gain)
    args.out.mkdir(parents=True, exist_ok=True)
    write_json(args.out / "sample_safety.json", dict(report, gain=args.gain))
    print(f"{report['n_samples']} samples, {report['n_H_nonnegative']} with H >= 0, "
          f"{report['violations']} violations")
    return EXIT_OK if report["violations"] == 0 else EXIT_UNSAFE


COMMANDS = {"run": _cmd_run, "validate": _cmd_validate, "compare": _cmd_compare, "sample-safety": _cmd_sample}


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    _setup_logging()
    try:
        return COMMANDS[args.command](args)
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
