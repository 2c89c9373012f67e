"""Command-line entry point: run, validate, profiles, summarize."""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .errors import RotorstackError, SimulationDiverged
from .flightlog import emit_log, load_log, summarize
from .mission import load_scenario, run
from .platforms import ProfileRegistry, derive_params, load_profiles

PROFILE_DIR_ENV = "ROTORSTACK_PROFILE_DIR"

_SCENARIO_DIR = Path(__file__).parent / "scenarios"

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_DIVERGED = 2


def bundled_scenarios() -> dict[str, Path]:
    return {p.stem: p for p in sorted(_SCENARIO_DIR.glob("*.yaml"))}


def _load_registry(args) -> ProfileRegistry:
    texts = []
    directory = getattr(args, "profile_dir", None) or os.environ.get(PROFILE_DIR_ENV)
    if directory:
        for p in sorted(Path(directory).glob("*.yaml")):
            texts.append(p.read_text(encoding="utf-8"))
    if getattr(args, "profiles_file", None):
        texts.append(Path(args.profiles_file).read_text(encoding="utf-8"))
    registry = load_profiles()
    for text in texts:
        registry = load_profiles(text)
    return registry


def _scenario_text(name_or_path: str) -> str:
    bundled = bundled_scenarios()
    if name_or_path in bundled:
        return bundled[name_or_path].read_text(encoding="utf-8")
    path = Path(name_or_path)
    if not path.exists():
        raise RotorstackError(
            f"scenario {name_or_path!r} is neither bundled "
            f"({', '.join(bundled)}) nor a file")
    return path.read_text(encoding="utf-8")


def _cmd_run(args) -> int:
    registry = _load_registry(args)
    scenario = load_scenario(_scenario_text(args.scenario), registry)
    if args.profile:
        scenario.platform = args.profile
        registry.get(args.profile)  # fail fast on unknown names
    if args.duration is not None:
        scenario.duration = args.duration
        for event in scenario.events:
            if event.t > scenario.duration:
                scenario.events = [e for e in scenario.events if e.t <= scenario.duration]
                break
    if args.seed is not None:
        scenario.seed = args.seed
    if args.controller:
        scenario.controller = args.controller
    log = run(scenario, registry)
    if args.out:
        emit_log(log, args.out)
        print(f"wrote {len(log)} rows to {args.out}", file=sys.stderr)
    print(json.dumps(summarize(log), indent=2, sort_keys=True))
    return EXIT_OK


def _cmd_validate(args) -> int:
    registry = _load_registry(args)
    scenario = load_scenario(_scenario_text(args.scenario), registry)
    print(f"scenario {scenario.name!r} valid: platform {scenario.platform}, "
          f"{scenario.duration:.1f} s, {len(scenario.events)} events, "
          f"{len(scenario.sources)} sources")
    return EXIT_OK


def _cmd_profiles(args) -> int:
    registry = _load_registry(args)
    header = f"{'name':<12}{'mass kg':>9}{'flight min':>12}{'batt Wh':>9}{'rotors':>8}{'coax':>6}{'hover W':>10}"
    print(header)
    for name in registry.names():
        p = registry.get(name)
        d = derive_params(p)
        print(f"{p.name:<12}{p.mass:>9.2f}{p.flight_time:>12.1f}"
              f"{p.battery_capacity:>9.1f}{p.rotor_count:>8d}"
              f"{str(p.coaxial):>6}{d.hover_power:>10.2f}")
    return EXIT_OK


def _cmd_summarize(args) -> int:
    log = load_log(args.log)
    print(json.dumps(summarize(log), indent=2, sort_keys=True))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rotorstack",
        description="Deterministic software-in-the-loop multirotor flight stack",
        allow_abbrev=False)
    parser.add_argument("--profile-dir", help=f"profile document directory "
                        f"(default from ${PROFILE_DIR_ENV})")
    parser.add_argument("--profiles-file", help="extra profile YAML document")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a scenario and emit its flight log")
    p_run.add_argument("--scenario", required=True,
                       help="bundled scenario name or YAML path")
    p_run.add_argument("--profile", help="platform override")
    p_run.add_argument("--duration", type=float, help="duration override, s")
    p_run.add_argument("--seed", type=int, help="rng seed override")
    p_run.add_argument("--out", help="CSV output path (plus .summary.json)")
    p_run.add_argument("--controller", choices=("aggressive", "smooth"))
    p_run.set_defaults(func=_cmd_run)

    p_val = sub.add_parser("validate", help="check a scenario document")
    p_val.add_argument("--scenario", required=True)
    p_val.set_defaults(func=_cmd_validate)

    p_prof = sub.add_parser("profiles", help="list known platforms")
    p_prof.set_defaults(func=_cmd_profiles)

    p_sum = sub.add_parser("summarize", help="summarize an emitted log")
    p_sum.add_argument("log", help="CSV flight log path")
    p_sum.set_defaults(func=_cmd_summarize)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except SimulationDiverged as exc:
        print(f"simulation diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (RotorstackError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    raise SystemExit(main())
