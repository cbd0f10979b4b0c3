"""Command-line entry point: ``bfcluster {analyze,simulate,scenario,validate}``."""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace

import numpy as np

from . import experiments as ex
from .distributions import DISTRIBUTIONS, make_distribution
from .simulator import replicate, simulate


def _floats(text: str) -> tuple[float, ...]:
    """Comma-separated list, or start:stop:step for a grid."""
    if ":" in text:
        start, stop, step = (float(v) for v in text.split(":"))
        return tuple(np.round(np.arange(start, stop + step / 2, step), 12))
    return tuple(float(v) for v in text.split(",") if v)


def _scenario(args) -> ex.Scenario:
    sc = ex.load_scenario(args.scenario) if args.scenario else ex.symmetric_toy_scenario()
    changes = {}
    if getattr(args, "dist", None):
        changes["size_dist"] = make_distribution(args.dist)
    for name in ("runs", "events", "warmup", "seed", "tolerance"):
        value = getattr(args, name, None)
        if value is not None:
            changes[name] = value
    if getattr(args, "load", None):
        changes["loads"] = args.load
    if getattr(args, "m", None):
        changes["m_values"] = args.m
    return replace(sc, **changes)


def cmd_analyze(args) -> int:
    sc = _scenario(args)
    rows = ex.sweep_load(sc, simulate=False)
    if args.out:
        ex.run_scenario(sc, args.out, simulate=False)
    print(ex.to_json(rows))
    return 0


def cmd_simulate(args) -> int:
    sc = _scenario(args)
    load = sc.loads[0]
    m = sc.m_values[0]
    config = sc.sim_config(load, m)
    if args.trace:
        with open(args.trace, "w") as fh:
            fh.write("time\tkind\tjob_id\tclass\tqueue_length\tbusy_servers\n")
            stats = simulate(config, trace=fh)
        print(ex.to_json(stats.to_dict()))
        return 0
    rep = replicate(config, sc.runs, workers=args.workers)
    out = {
        "load": load, "m": m, "runs": sc.runs, "seeds": rep.seeds,
        "mean_delay": rep.mean_delay, "delay_ci": rep.delay_ci,
        "mean_rate": rep.mean_rate, "rate_ci": rep.rate_ci,
        "overall_delay": rep.overall_delay, "mean_interruptions": rep.mean_interruptions,
    }
    print(ex.to_json(out))
    return 0


def cmd_scenario(args) -> int:
    sc = _scenario(args)
    result = ex.run_scenario(sc, args.out, workers=args.workers)
    for metric, path in result["paths"].items():
        print(f"{metric}: {path}")
    return 0


def cmd_validate(args) -> int:
    failed = 0
    for name, ok, detail in ex.validate():
        failed += not ok
        print(f"{'PASS' if ok else 'FAIL'}  {name}  {detail}")
    return 1 if failed else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bfcluster", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, sim=True):
        p.add_argument("--scenario", help="scenario JSON file (default: symmetric toy)")
        p.add_argument("--load", type=_floats, help="loads, e.g. 0.2,0.5 or 0.1:0.9:0.1")
        p.add_argument("--dist", choices=sorted(DISTRIBUTIONS), help="job-size distribution (default parameters)")
        p.add_argument("--tolerance", type=float, help="relative truncation tolerance of the level sums")
        p.add_argument("--out", help="output directory")
        if sim:
            p.add_argument("--m", type=_floats, help="mean interruptions per job, e.g. 0,1,5")
            p.add_argument("--runs", type=int)
            p.add_argument("--events", type=int, help="measured events per run")
            p.add_argument("--warmup", type=int, help="warm-up events per run")
            p.add_argument("--seed", type=int)
            p.add_argument("--workers", type=int, default=1, help="parallel processes for replications")

    p = sub.add_parser("analyze", help="balanced-fairness metrics only")
    common(p, sim=False)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("simulate", help="replicated runs of one configuration (first load, first m)")
    common(p)
    p.add_argument("--trace", help="write a one-line-per-event trace of a single run to this file")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("scenario", help="full sweep with CSV output")
    common(p)
    p.set_defaults(func=cmd_scenario)

    p = sub.add_parser("validate", help="run the oracle and property checks")
    p.set_defaults(func=cmd_validate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "scenario" and not args.out:
        print("scenario: --out is required", file=sys.stderr)
        return 2
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
