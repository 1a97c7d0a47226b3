"""Command-line entry point: `pacswarm run --scenario ... --trials N --out dir`."""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace

from .experiments import run_monte_carlo, sweep_noise
from .world import Scenario


def _on_off(value: str) -> bool:
    if value not in ("on", "off"):
        raise argparse.ArgumentTypeError("expected 'on' or 'off'")
    return value == "on"


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pacswarm",
                                description="Distributed PAC-NMPC multi-agent planning")
    sub = p.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run Monte Carlo trials of a scenario")
    run.add_argument("--scenario", required=True, help="scenario JSON file")
    run.add_argument("--trials", type=int, default=10)
    run.add_argument("--seed", type=int, default=0)
    run.add_argument("--out", required=True, help="output directory")
    run.add_argument("--paper-scale", action="store_true",
                     help="use full-scale sample/iteration counts")
    run.add_argument("--mode", choices=["distributed", "centralized"])
    run.add_argument("--gyro-agents", type=_on_off, metavar="on|off")
    run.add_argument("--noise-aware", type=_on_off, metavar="on|off")
    run.add_argument("--formation-method",
                     choices=["leader_rrt", "mean_final_state", "follower_rrt"])
    run.add_argument("--sweep-noise", metavar="v0,v1,...",
                     help="comma-separated measurement variances to sweep")
    return p


def _apply_overrides(scenario: Scenario, args) -> Scenario:
    kw = {}
    if args.mode is not None:
        kw["mode"] = args.mode
    if args.gyro_agents is not None:
        kw["agent_gyro_on"] = args.gyro_agents
    if args.noise_aware is not None:
        kw["noise_aware"] = args.noise_aware
    if args.formation_method is not None:
        kw["formation_method"] = args.formation_method
    if args.paper_scale:
        opt = dict(scenario.optimizer)
        opt.update(sample_count=1024, iteration_count=200)
        opt.pop("warm_iteration_count", None)
        kw["optimizer"] = opt
    return replace(scenario, **kw) if kw else scenario


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    scenario = Scenario.load(args.scenario)
    scenario = _apply_overrides(scenario, args)

    if args.sweep_noise:
        variances = [float(v) for v in args.sweep_noise.split(",")]
        results = sweep_noise(scenario, variances, args.trials, args.seed,
                              out_dir=args.out)
        for (gyro, aware), per_var in results.items():
            label = f"gyro={'on' if gyro else 'off'} noise_aware={'on' if aware else 'off'}"
            cells = "  ".join(f"{v:g}:{pct:.0f}%" for v, pct in sorted(per_var.items()))
            print(f"{label}  {cells}")
        return 0

    stats, _ = run_monte_carlo(scenario, args.trials, args.seed, out_dir=args.out)
    print(json.dumps(stats.to_dict(), indent=2))
    return 0


if __name__ == "__main__":
    sys.exit(main())
