"""Command-line entry: run, check, replay and report."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import __version__
from .harness import replay as replay_log
from .harness import run_scenario
from .modes import (
    FULL_VERDICT_SPACE,
    Mode,
    SAFE_ALPHABET,
    enumerate_reachable,
)
from .report import ReportError, render, summary_from_log
from .scenario import ScenarioError, load_scenario

POLICY_CHOICES = ["odd_t1", "odd_t2"]
MRM_CHOICES = ["corridor", "straight_line"]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="teleodd",
        description="Teleoperation safety simulator: capability-gated "
                    "domain supervision over an emulated network link.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="execute a scenario")
    run_p.add_argument("scenario", type=Path)
    run_p.add_argument("--policy", choices=POLICY_CHOICES,
                       help="override the scenario's supervision policy")
    run_p.add_argument("--seed", type=int, help="override the master seed")
    run_p.add_argument("--log", type=Path, help="write the run log here")
    run_p.add_argument("--mrm", choices=MRM_CHOICES, default="corridor",
                       help="retreat strategy when a maneuver starts")
    group = run_p.add_mutually_exclusive_group()
    group.add_argument("--headless", action="store_true",
                       help="scripted run, as fast as possible (default)")
    group.add_argument("--serve", metavar="ADDR:PORT",
                       help="real-time session for an operator console")
    run_p.add_argument("--speedup", type=float, default=1.0,
                       help="serve pacing: simulated seconds per wall second")
    run_p.add_argument("--offer", action="append", default=[],
                       metavar="MS:TARGET",
                       help="serve mode: offer a handover at this sim time "
                            "(repeatable, e.g. 2000:teleop)")

    check_p = sub.add_parser(
        "check", help="explore the mode machine for unreasonable risk")
    check_p.add_argument("scenario", type=Path)
    check_p.add_argument("--policy", choices=POLICY_CHOICES)
    check_p.add_argument("--depth", type=int, default=12)
    check_p.add_argument("--witness-out", type=Path,
                         help="write the counterexample trace here")

    replay_p = sub.add_parser(
        "replay", help="re-execute a scenario and compare against a log")
    replay_p.add_argument("log", type=Path)
    replay_p.add_argument("scenario", type=Path)
    replay_p.add_argument("--policy", choices=POLICY_CHOICES)
    replay_p.add_argument("--seed", type=int)
    replay_p.add_argument("--mrm", choices=MRM_CHOICES, default="corridor")

    report_p = sub.add_parser("report", help="summarize run logs")
    report_p.add_argument("logs", nargs="+", type=Path)
    report_p.add_argument("--format", choices=["text", "csv"],
                          default="text", dest="fmt")
    return parser


def _load(path: Path):
    try:
        return load_scenario(path)
    except ScenarioError as exc:
        for problem in exc.problems:
            print(f"error: {problem}", file=sys.stderr)
        return None


def cmd_run(args) -> int:
    scenario = _load(args.scenario)
    if scenario is None:
        return 2
    if args.serve:
        from .gateway import serve  # network stack only when asked for
        host, _, port = args.serve.rpartition(":")
        try:
            offers = [(int(ms), target) for ms, _, target in
                      (o.partition(":") for o in args.offer)]
        except ValueError:
            print("error: bad --offer value (want MS:TARGET)",
                  file=sys.stderr)
            return 2
        return serve(scenario, host or "127.0.0.1", int(port),
                     policy=args.policy, seed=args.seed,
                     mrm_strategy=args.mrm, speedup=args.speedup,
                     offers=offers, log_path=args.log)
    result = run_scenario(scenario, policy=args.policy, seed=args.seed,
                          mrm_strategy=args.mrm)
    if args.log:
        result.write_log(args.log)
    row = dict(result.metrics.to_dict(), name=result.scenario_name)
    print(render([row], "text"), end="")
    return 1 if result.metrics.failed else 0


def cmd_check(args) -> int:
    scenario = _load(args.scenario)
    if scenario is None:
        return 2
    policy = scenario.resolved(policy_override=args.policy).policy()
    result = enumerate_reachable(Mode.ADS_IN_ODD, SAFE_ALPHABET,
                                 FULL_VERDICT_SPACE, policy,
                                 max_depth=args.depth)
    print(f"policy {policy.kind.value}, depth {args.depth}, "
          f"{len(result.reachable)} modes reachable, "
          f"{result.elapsed_s * 1000:.0f} ms")
    for mode in Mode:
        depth = result.reachable.get(mode)
        print(f"  {mode.value:22s} "
              f"{'unreachable' if depth is None else f'depth {depth}'}")
    witness = result.witness(Mode.UNDEFINED)
    if witness is None:
        print("Undefined is unreachable: no unreasonable-risk state")
        return 0
    print(f"Undefined is reachable in {len(witness)} step(s):")
    for step in witness:
        print(f"  {step.mode.value} --{step.event}"
              f"{'' if step.perceived else ':unperceived'} "
              f"(ads_in={int(step.ads_inside)} tel_in={int(step.teleop_inside)} "
              f"capable={int(step.capable)})--> {step.next_mode.value} "
              f"[{'|'.join(step.actions) or 'none'}]")
    if args.witness_out:
        payload = {"policy": policy.kind.value, "depth": args.depth,
                   "witness": [step.to_record() for step in witness]}
        args.witness_out.write_text(json.dumps(payload, indent=2) + "\n")
        print(f"witness written to {args.witness_out}")
    return 1


def cmd_replay(args) -> int:
    scenario = _load(args.scenario)
    if scenario is None:
        return 2
    if not args.log.is_file():
        print(f"error: log {str(args.log)!r} not found", file=sys.stderr)
        return 2
    identical, at = replay_log(args.log, scenario, policy=args.policy,
                               seed=args.seed, mrm_strategy=args.mrm)
    if identical:
        print("replay identical")
        return 0
    print(f"replay diverged at line {at}")
    return 1


def cmd_report(args) -> int:
    try:
        rows = [summary_from_log(path) for path in args.logs]
        print(render(rows, args.fmt), end="")
    except ReportError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    handler = {"run": cmd_run, "check": cmd_check,
               "replay": cmd_replay, "report": cmd_report}[args.command]
    return handler(args)


if __name__ == "__main__":
    sys.exit(main())
