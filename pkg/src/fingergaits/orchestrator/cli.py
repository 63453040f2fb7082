"""Command-line entry point: run, validate, and sweep manipulation scenarios."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .config import ConfigError, builtin_scenario_path, load_config
from .runner import run_scenario


def _resolve(scenario: str) -> Path:
    path = Path(scenario)
    if path.suffix in (".yaml", ".yml") or path.exists():
        return path
    return builtin_scenario_path(scenario)


def _load(args: argparse.Namespace):
    cfg = load_config(_resolve(args.scenario))
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "duration", None) is not None:
        if args.duration <= 0:
            raise ConfigError("--duration must be positive")
        cfg.duration_s = args.duration
    if getattr(args, "mass_scale", None) is not None:
        cfg.mass_scale = args.mass_scale
    if getattr(args, "moi_scale", None) is not None:
        cfg.moi_scale = args.moi_scale
    if getattr(args, "no_gaiting", False):
        cfg.planner.enabled = False
    return cfg


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("scenario", help="built-in scenario name or path to a YAML file")
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--duration", type=float, default=None, help="override duration [s]")
    parser.add_argument("--mass-scale", type=float, default=None, dest="mass_scale",
                        help="relative object mass error, e.g. 0.2 for +20%%")
    parser.add_argument("--moi-scale", type=float, default=None, dest="moi_scale",
                        help="relative inertia error, e.g. 0.5 for +50%%")
    parser.add_argument("--no-gaiting", action="store_true", dest="no_gaiting",
                        help="disable the finger-relocation planner")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fingergaits",
        description="In-hand manipulation scenarios: pose tracking with finger gaiting.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="execute one scenario, write trace CSV + summary JSON")
    _add_common(run_p)
    run_p.add_argument("--out", default="out", help="output directory (default: ./out)")
    run_p.add_argument("--quiet", action="store_true")

    val_p = sub.add_parser("validate", help="parse and check a scenario file")
    _add_common(val_p)

    sweep_p = sub.add_parser("sweep", help="grid of uncertainty scales, one run each")
    _add_common(sweep_p)
    sweep_p.add_argument("--out", default="out/sweep")
    sweep_p.add_argument("--mass-scales", type=float, nargs="+", default=[-0.4, 0.0, 0.2],
                         dest="mass_scales")
    sweep_p.add_argument("--moi-scales", type=float, nargs="+", default=[0.0, 0.5],
                         dest="moi_scales")
    return parser


def _cmd_run(args: argparse.Namespace) -> int:
    cfg = _load(args)
    result = run_scenario(cfg, out_dir=args.out)
    if not args.quiet:
        s = result.summary
        track = s["tracking"]
        print(f"scenario={s['scenario']} ticks={s['ticks']} exit={s['exit_code']}")
        print(
            "steady errors:"
            f" pos={track['steady_max_pos_err_m']}" f" rot={track['steady_max_rot_err_rad']}"
        )
        print(f"gait windows: {s['gait_count']}  net yaw: {s['rotation']['net_yaw_rad']:.4f} rad")
        for event in s["events"]:
            print(f"event: {event}")
        print(f"trace: {result.trace_path}")
        print(f"summary: {result.summary_path}")
    return result.exit_code


def _cmd_validate(args: argparse.Namespace) -> int:
    cfg = _load(args)
    print(f"ok: scenario '{cfg.scenario}' ({cfg.duration_s:.3g} s at {cfg.sim.control_hz:g} Hz)")
    return 0


def _cmd_sweep(args: argparse.Namespace) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    index = []
    worst = 0
    for mass in args.mass_scales:
        for moi in args.moi_scales:
            cfg = _load(args)
            cfg.mass_scale = mass
            cfg.moi_scale = moi
            tag = f"m{mass:+.2f}_i{moi:+.2f}".replace("+", "p").replace("-", "n").replace(".", "")
            cfg.scenario = f"{cfg.scenario}_{tag}"
            result = run_scenario(cfg, out_dir=out)
            track = result.summary["tracking"]
            index.append(
                {
                    "mass_scale": mass,
                    "moi_scale": moi,
                    "exit_code": result.exit_code,
                    "steady_max_pos_err_m": track["steady_max_pos_err_m"],
                    "steady_max_rot_err_rad": track["steady_max_rot_err_rad"],
                    "settling_s": result.summary["settling"]["overall_s"],
                    "trace": result.trace_path.name,
                    "summary": result.summary_path.name,
                }
            )
            worst = max(worst, result.exit_code)
            print(f"mass={mass:+.2f} moi={moi:+.2f} exit={result.exit_code}")
    (out / "sweep_index.json").write_text(
        json.dumps(index, indent=2) + "\n", encoding="utf-8", newline="\n"
    )
    return worst


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {"run": _cmd_run, "validate": _cmd_validate, "sweep": _cmd_sweep}
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (FileNotFoundError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
