"""Command-line interface.

Subcommands:
  train    --config <path> --out <dir>
  eval     --config <path> --params <ckpt> --out <dir>
  compare  --config <path> --params <ckpt> [--baselines a,b] --out <dir>
  plot     --in <csv> --kind {train,episode,compare} --out <file>

Exit code 0 on success, 1 with a message on stderr on any error. Seed
fields honor the WCSALLOC_*_SEED environment variables.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import experiment, plots
from .config import apply_env_overrides, load_config
from .errors import ConfigError, EpisodeError, GainSynthesisError, TrainingError


def _load(path) -> "experiment.ExperimentConfig":
    return apply_env_overrides(load_config(path))


def _cmd_train(args) -> int:
    cfg = _load(args.config)
    result = experiment.train(cfg, out_dir=args.out)
    if result.log:
        first, last = result.log[0], result.log[-1]
        print(
            f"trained {len(result.log)} iterations: mean cost "
            f"{first.mean_cost:.2f} -> {last.mean_cost:.2f}"
        )
    else:
        print("no iterations requested; wrote initial parameters")
    print(f"outputs in {args.out}")
    return 0


def _cmd_eval(args) -> int:
    cfg = _load(args.config)
    plants = experiment.make_plants(cfg)
    allocators = experiment.build_eval_allocators(
        cfg, plants, experiment.load_params(args.params), baselines=[]
    )
    report = experiment.evaluate(cfg, plants, allocators)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    experiment.save_config(cfg, out / "config.cfg")
    experiment.write_eval_costs(report, out / "eval.csv")
    trace = report.traces[experiment.LEARNED]
    experiment.write_episode(trace, out / "episode_learned.csv")
    plots.save_figure(
        plots.episode_panels_figure(trace.x, trace.h, trace.p), out / "episode_learned.pdf"
    )
    name = experiment.LEARNED
    print(
        f"{name}: mean {report.mean(name):.2f}, median {report.median(name):.2f} "
        f"over {report.n_episodes} seeds"
    )
    return 0


def _cmd_compare(args) -> int:
    cfg = _load(args.config)
    baselines = [b.strip() for b in args.baselines.split(",") if b.strip()]
    report = experiment.compare(cfg, args.params, baselines, args.out)
    for name in report.names:
        line = f"{name}: mean {report.mean(name):.2f}, median {report.median(name):.2f}"
        if name != experiment.LEARNED:
            line += f", learned wins {100 * report.win_rate(experiment.LEARNED, name):.0f}%"
        print(line)
    return 0


def _cmd_plot(args) -> int:
    if args.kind == "train":
        log = experiment.read_trainlog(args.infile)
        fig = plots.training_curve_figure(
            log["iteration"], log["mean_cost"], log["mean_cost_undiscounted"]
        )
    elif args.kind == "episode":
        x, h, p = experiment.read_episode(args.infile)
        fig = plots.episode_panels_figure(x, h, p)
    else:
        costs = experiment.read_eval_costs(args.infile)
        fig = plots.compare_bars_figure(costs)
    plots.save_figure(fig, args.out)
    print(f"wrote {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="wcsalloc",
        description="Learned power allocation for wireless control loops",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train an allocation policy")
    p_train.add_argument("--config", required=True, help="experiment config file")
    p_train.add_argument("--out", required=True, help="output directory")
    p_train.set_defaults(func=_cmd_train)

    p_eval = sub.add_parser("eval", help="evaluate a trained policy")
    p_eval.add_argument("--config", required=True)
    p_eval.add_argument("--params", required=True, help="parameter checkpoint")
    p_eval.add_argument("--out", required=True)
    p_eval.set_defaults(func=_cmd_eval)

    p_cmp = sub.add_parser("compare", help="paired comparison against baselines")
    p_cmp.add_argument("--config", required=True)
    p_cmp.add_argument("--params", required=True)
    p_cmp.add_argument(
        "--baselines",
        default="equal,control_aware",
        help="comma-separated baseline names (equal, control_aware)",
    )
    p_cmp.add_argument("--out", required=True)
    p_cmp.set_defaults(func=_cmd_compare)

    p_plot = sub.add_parser("plot", help="render a figure from a report CSV")
    p_plot.add_argument("--in", dest="infile", required=True, help="input CSV")
    p_plot.add_argument("--kind", required=True, choices=["train", "episode", "compare"])
    p_plot.add_argument("--out", required=True, help="output image file")
    p_plot.set_defaults(func=_cmd_plot)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (
        ConfigError,
        TrainingError,
        EpisodeError,
        GainSynthesisError,
        ValueError,
        OSError,
    ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
