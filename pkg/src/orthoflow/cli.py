"""Command-line surface: volume-track, marginal-check, bias-bench, replay."""

from __future__ import annotations

import argparse
import json
import sys

from .config import ConfigError, load_config
from .runner import cmd_bias_bench, cmd_marginal_check, cmd_replay, cmd_volume_track


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", required=True, help="experiment config file")
    parser.add_argument("--out", required=True, help="output run directory")
    parser.add_argument("--seed", type=int, help="override [run] seed")
    parser.add_argument("--jobs", type=int, default=1, help="parallel worker count")
    parser.add_argument("--mode", choices=["ode", "sde", "inject"], help="sampler mode")
    parser.add_argument("--steps", type=int, help="integration step count")
    parser.add_argument("--noise-a", type=float, help="noise schedule level a")
    parser.add_argument("--alpha", type=float, help="injection scale")
    parser.add_argument("--proj-eps", type=float, help="projection regularizer")
    parser.add_argument(
        "--start-step",
        type=int,
        help="1-based first injected step (sets inject_steps to that single step)",
    )
    parser.add_argument("--inject-steps", help="0-based injected step indices, space separated")
    parser.add_argument("--mask-tokens", help="token ids hidden from the student")
    parser.add_argument(
        "--score-source", choices=["analytic", "velocity_approx", "none"]
    )
    parser.add_argument("--particles", type=int, help="override [run] particles")


def _overrides(args: argparse.Namespace) -> dict:
    mapping = {
        "seed": "run.seed",
        "particles": "run.particles",
        "mode": "sampler.mode",
        "steps": "sampler.steps",
        "noise_a": "sampler.noise_a",
        "score_source": "sampler.score_source",
        "alpha": "injection.alpha",
        "proj_eps": "injection.proj_eps",
        "inject_steps": "injection.inject_steps",
        "mask_tokens": "injection.mask_tokens",
    }
    out = {}
    for attr, dotted in mapping.items():
        value = getattr(args, attr, None)
        if value is not None:
            out[dotted] = value
    if getattr(args, "start_step", None) is not None:
        if args.start_step < 1:
            raise ConfigError("--start-step is 1-based and must be >= 1")
        out["injection.inject_steps"] = str(args.start_step - 1)
    return out


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="orthoflow",
        description="Gaussian-mixture flow sampling experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("volume-track", "marginal-check", "bias-bench"):
        p = sub.add_parser(name)
        _add_common(p)
    replay = sub.add_parser("replay")
    replay.add_argument("run_dir", help="recorded run directory")
    replay.add_argument("--out", help="scratch directory for the rerun")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "replay":
            report = cmd_replay(args.run_dir, scratch=args.out)
            print(json.dumps(report, indent=2))
            return 0 if report["passed"] else 1
        cfg = load_config(args.config, overrides=_overrides(args))
        if args.command == "volume-track":
            meta = cmd_volume_track(cfg, args.out)
            print(
                f"log-volume: start {meta['initial_log_volume']:.3f} "
                f"-> end {meta['final_log_volume']:.3f}"
            )
        elif args.command == "marginal-check":
            meta = cmd_marginal_check(cfg, args.out)
            print(f"sde pass counts per checkpoint: {meta['sde_pass_counts']}")
            print(
                f"corrupted control detected in {meta['control_detected_trials']}"
                f"/{meta['trials']} trials"
            )
        elif args.command == "bias-bench":
            meta = cmd_bias_bench(cfg, args.out, jobs=args.jobs)
            fmt = lambda r: "n/a" if r is None else f"{r:.3f}"
            print(
                f"baseline hit rate {meta['baseline_hit_rate']:.3f}; "
                f"correction rate treated {fmt(meta['treated_rate'])} "
                f"vs control {fmt(meta['control_rate'])}"
            )
        return 0
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
