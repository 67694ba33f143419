"""Command-line entry point: ``qbalance run|verify|replay|list-scenarios``."""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import runner
from .errors import QBalanceError
from .scenarios import list_scenarios, load_scenario


def _add_run_flags(p: argparse.ArgumentParser):
    p.add_argument("scenario", help="scenario TOML path or shipped scenario id")
    p.add_argument("--horizon", type=float)
    p.add_argument("--events", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--replications", type=int)
    p.add_argument("--tie-policy", choices=("reject", "jitter"))
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", help="write the JSON report here (default: stdout for run)")
    p.add_argument("--plotdata", help="directory for per-identity CSV files")


def _load(args):
    sc = load_scenario(args.scenario)
    overrides = dict(horizon=args.horizon, events=args.events, seed=args.seed,
                     replications=args.replications, tie_policy=args.tie_policy)
    # an event budget alone replaces the scenario's horizon
    clear = ("horizon",) if args.events is not None and args.horizon is None else ()
    return sc.with_run(clear=clear, **overrides)


def _emit(report, args, print_json: bool):
    text = report.to_json()
    out = args.out
    if out:
        Path(out).write_text(text + "\n", encoding="utf-8")
    elif print_json:
        sys.stdout.write(text + "\n")
    if args.plotdata:
        runner.write_plotdata(report, args.plotdata)
    return 0 if report.passed else 1


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="qbalance",
                                 description="Simulate queueing models and verify balance identities.")
    sub = ap.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="simulate a scenario and print the JSON report")
    _add_run_flags(p_run)
    p_run.add_argument("--jump-log", help="directory for per-replication jump logs")
    p_ver = sub.add_parser("verify", help="simulate a scenario and print a readable summary")
    _add_run_flags(p_ver)
    p_rep = sub.add_parser("replay", help="re-verify a scenario from stored jump logs")
    p_rep.add_argument("scenario")
    p_rep.add_argument("jump_logs", nargs="+")
    p_rep.add_argument("--out")
    p_rep.add_argument("--plotdata")
    sub.add_parser("list-scenarios", help="list shipped scenarios")
    args = ap.parse_args(argv)

    try:
        if args.command == "list-scenarios":
            for sid, desc in list_scenarios():
                print(f"{sid:<28s} {desc}")
            return 0
        if args.command == "replay":
            report = runner.replay(load_scenario(args.scenario), args.jump_logs)
            print(report.summary())
            return _emit(report, args, print_json=False)
        sc = _load(args)
        report = runner.run_scenario(sc, workers=args.workers,
                                     jump_log_dir=getattr(args, "jump_log", None))
        if args.command == "verify":
            print(report.summary())
            return _emit(report, args, print_json=False)
        return _emit(report, args, print_json=True)
    except QBalanceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
