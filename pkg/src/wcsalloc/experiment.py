"""End-to-end orchestration: build the scenario from a config, train the
allocation policy, and run paired evaluations against the baselines.

Randomness is organized as keyed substreams: ("plants", plant_seed) for the
roster, ("net-init"/"pretrain", train_seed) for the network, ("train",
train_seed, iteration, episode) for rollouts, and ("eval", eval_seed,
episode) for evaluation. Evaluation recreates the same environment stream
for every policy, so per-seed cost differences isolate policy quality.

Output files (all CSV: header row, UTF-8, LF, float64 via repr):
  trainlog.csv      iteration,mean_cost,grad_norm,mean_cost_undiscounted
  eval.csv /
  compare.csv       policy,seed,cost
  compare_summary.csv  policy,mean_cost,median_cost,learned_win_rate
  episode_<name>.csv   t,x1..,h1..,p1..,cost
Figures (vector) are rendered next to the CSV they visualize.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import plots
from .config import ExperimentConfig, save_config
from .errors import EpisodeError, TrainingError
from .mlp import MlpParams, init_params, load_params, save_params
from .policy import (
    ControlAwareAllocator,
    EqualAllocator,
    GaussianSimplexPolicy,
    MeanPolicyAllocator,
    SampledPolicyAllocator,
)
from .rngstreams import substream
from .system import ChannelModel, ObservationNoise, PlantModel, make_scalar_plants, state_dim
from .training import EpisodeTrace, TrainLogRow, pretrain_supervised, reinforce_update, rollout_episode

TRAINLOG_COLUMNS = ["iteration", "mean_cost", "grad_norm", "mean_cost_undiscounted"]
EVAL_COLUMNS = ["policy", "seed", "cost"]
SUMMARY_COLUMNS = ["policy", "mean_cost", "median_cost", "learned_win_rate"]

LEARNED = "learned"
BASELINE_BUILDERS = {
    "equal": lambda cfg: EqualAllocator(cfg.m, cfg.p_max),
    "control_aware": lambda cfg: ControlAwareAllocator(cfg.m, cfg.p_max),
}


def make_plants(cfg: ExperimentConfig) -> list[PlantModel]:
    """Scalar plant roster, generated once from plant_seed and reused for
    training and evaluation."""
    return make_scalar_plants(cfg.m, substream("plants", cfg.plant_seed))


def make_channel(cfg: ExperimentConfig) -> ChannelModel:
    return ChannelModel(lambda_h=cfg.lambda_h)


def policy_layer_sizes(cfg: ExperimentConfig, plants: list[PlantModel]) -> list[int]:
    return [cfg.m + state_dim(plants), *cfg.layer_sizes, 2 * cfg.m]


def build_policy(
    cfg: ExperimentConfig,
    plants: list[PlantModel],
    params: MlpParams | None = None,
) -> GaussianSimplexPolicy:
    """Policy over the roster; fresh fan-balanced init unless params given."""
    sizes = policy_layer_sizes(cfg, plants)
    if params is None:
        params = init_params(sizes, substream("net-init", cfg.train_seed))
    elif list(params.layer_sizes) != sizes:
        raise ValueError(
            f"checkpoint layer sizes {list(params.layer_sizes)} do not match "
            f"the configured scenario {sizes}"
        )
    return GaussianSimplexPolicy(net=params, m=cfg.m, p_max=cfg.p_max)


@dataclass(eq=False)
class TrainResult:
    policy: GaussianSimplexPolicy
    log: list[TrainLogRow]
    plants: list[PlantModel]
    pretrain_mse: float | None
    max_budget_gap: float  # largest |sum p - p_max| seen in any rollout
    elapsed_s: float


def train(cfg: ExperimentConfig, out_dir=None) -> TrainResult:
    """Run the full training pipeline; write reports when out_dir is given.

    Pipeline: build roster and policy, optionally pre-train against the
    control-aware heuristic, then `iterations` batch REINFORCE updates of N
    episodes each. Deterministic for fixed seeds. Episode or update errors
    abort with the iteration index.
    """
    cfg.validate()
    started = time.time()
    plants = make_plants(cfg)
    channel = make_channel(cfg)
    obs_noise = ObservationNoise(cfg.w_obs_var)
    policy = build_policy(cfg, plants)

    pretrain_mse = None
    if cfg.pretrain and cfg.pretrain_epochs > 0:
        target = ControlAwareAllocator(cfg.m, cfg.p_max)
        params, pretrain_mse = pretrain_supervised(
            policy,
            target,
            channel,
            cfg.pretrain_samples,
            cfg.pretrain_epochs,
            cfg.pretrain_alpha,
            substream("pretrain", cfg.train_seed),
            state_std=cfg.x0_std,
        )
        policy = dataclasses.replace(policy, net=params)

    out = Path(out_dir) if out_dir is not None else None
    ckpt_dir = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        save_config(cfg, out / "config.cfg")
        if cfg.checkpoint_every > 0:
            ckpt_dir = out / "checkpoints"
            ckpt_dir.mkdir(exist_ok=True)

    log: list[TrainLogRow] = []
    max_gap = 0.0
    allocator = SampledPolicyAllocator(policy)
    for it in range(cfg.iterations):
        try:
            traces = []
            for ep in range(cfg.N):
                rng = substream("train", cfg.train_seed, it, ep)
                trace = rollout_episode(
                    plants, channel, allocator, cfg.T_train, obs_noise, rng, x0_std=cfg.x0_std
                )
                max_gap = max(max_gap, trace.budget_gap(cfg.p_max))
                traces.append(trace)
            params, row = reinforce_update(policy.net, traces, cfg.gamma, cfg.alpha)
        except (EpisodeError, TrainingError) as exc:
            raise TrainingError(f"iteration {it}: {exc}") from exc
        row.iteration = it
        log.append(row)
        policy = dataclasses.replace(policy, net=params)
        allocator = SampledPolicyAllocator(policy)
        if ckpt_dir is not None and (it + 1) % cfg.checkpoint_every == 0:
            save_params(policy.net, ckpt_dir / f"params_{it + 1:05d}.ckpt")

    elapsed = time.time() - started
    result = TrainResult(
        policy=policy,
        log=log,
        plants=plants,
        pretrain_mse=pretrain_mse,
        max_budget_gap=max_gap,
        elapsed_s=elapsed,
    )
    if out is not None:
        write_trainlog(log, out / "trainlog.csv")
        save_params(policy.net, out / "params_final.ckpt")
        if log:
            fig = plots.training_curve_figure(
                np.array([r.iteration for r in log]),
                np.array([r.mean_cost for r in log]),
                np.array([r.mean_cost_undiscounted for r in log]),
            )
            plots.save_figure(fig, out / "train_curve.pdf")
        _write_run_meta(out, cfg, elapsed, pretrain_mse)
    return result


def _write_run_meta(out: Path, cfg: ExperimentConfig, elapsed: float, pretrain_mse) -> None:
    # Wall-clock timing lives here, outside the deterministic CSVs.
    meta = {
        "elapsed_s": round(elapsed, 3),
        "finished_utc": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
        "pretrain_mse": pretrain_mse,
        "iterations": cfg.iterations,
        "episodes_per_iteration": cfg.N,
    }
    with open(out / "run_meta.json", "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2)
        fh.write("\n")


@dataclass(eq=False)
class EvalReport:
    """Paired per-seed undiscounted test costs for a named set of policies."""

    costs: dict[str, np.ndarray]
    traces: dict[str, EpisodeTrace]
    max_budget_gap: float

    @property
    def names(self) -> list[str]:
        return list(self.costs)

    @property
    def n_episodes(self) -> int:
        return len(next(iter(self.costs.values())))

    def mean(self, name: str) -> float:
        return float(self.costs[name].mean())

    def median(self, name: str) -> float:
        return float(np.median(self.costs[name]))

    def win_rate(self, name: str, versus: str) -> float:
        """Fraction of seeds where `name` costs strictly less than `versus`."""
        return float(np.mean(self.costs[name] < self.costs[versus]))


def evaluate(
    cfg: ExperimentConfig,
    plants: list[PlantModel],
    allocators: dict[str, object],
    n_episodes: int | None = None,
) -> EvalReport:
    """Paired rollouts over T_test with shared environment streams.

    Every policy replays the same ("eval", eval_seed, episode) stream, and
    the shipped evaluation allocators draw nothing from it, so fading,
    noise, initial states, and success coins match across policies
    seed-for-seed. Costs are undiscounted totals. The first episode's trace
    is kept per policy for reports.
    """
    if not allocators:
        raise ValueError("at least one policy required")
    n = cfg.eval_episodes if n_episodes is None else n_episodes
    channel = make_channel(cfg)
    obs_noise = ObservationNoise(cfg.w_obs_var)
    costs: dict[str, np.ndarray] = {}
    traces: dict[str, EpisodeTrace] = {}
    max_gap = 0.0
    for name, allocator in allocators.items():
        per_seed = np.empty(n)
        for ep in range(n):
            rng = substream("eval", cfg.eval_seed, ep)
            trace = rollout_episode(
                plants, channel, allocator, cfg.T_test, obs_noise, rng, x0_std=cfg.x0_std
            )
            max_gap = max(max_gap, trace.budget_gap(allocator.p_max))
            per_seed[ep] = trace.costs.sum()
            if ep == 0:
                traces[name] = trace
        costs[name] = per_seed
    return EvalReport(costs=costs, traces=traces, max_budget_gap=max_gap)


def build_eval_allocators(
    cfg: ExperimentConfig,
    plants: list[PlantModel],
    params: MlpParams,
    baselines: list[str],
) -> dict[str, object]:
    """Learned mean-allocation policy plus the requested baselines."""
    allocators: dict[str, object] = {
        LEARNED: MeanPolicyAllocator(build_policy(cfg, plants, params=params))
    }
    for name in baselines:
        if name not in BASELINE_BUILDERS:
            raise ValueError(f"unknown baseline {name!r}; choose from {sorted(BASELINE_BUILDERS)}")
        allocators[name] = BASELINE_BUILDERS[name](cfg)
    return allocators


def compare(
    cfg: ExperimentConfig,
    params_path,
    baselines: list[str],
    out_dir,
    n_episodes: int | None = None,
) -> EvalReport:
    """Evaluate a checkpoint against baselines and write the report files."""
    plants = make_plants(cfg)
    allocators = build_eval_allocators(cfg, plants, load_params(params_path), baselines)
    report = evaluate(cfg, plants, allocators, n_episodes=n_episodes)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_config(cfg, out / "config.cfg")
    write_eval_costs(report, out / "compare.csv")
    write_eval_summary(report, out / "compare_summary.csv")
    plots.save_figure(plots.compare_bars_figure(report.costs), out / "compare_bars.pdf")
    for name, trace in report.traces.items():
        write_episode(trace, out / f"episode_{name}.csv")
        fig = plots.episode_panels_figure(trace.x, trace.h, trace.p)
        plots.save_figure(fig, out / f"episode_{name}.pdf")
    return report


def _write_csv(path, header: list[str], rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def _fmt(value: float) -> str:
    return repr(float(value))


def write_trainlog(log: list[TrainLogRow], path) -> None:
    _write_csv(
        path,
        TRAINLOG_COLUMNS,
        (
            [row.iteration, _fmt(row.mean_cost), _fmt(row.grad_norm), _fmt(row.mean_cost_undiscounted)]
            for row in log
        ),
    )


def read_trainlog(path) -> dict[str, np.ndarray]:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        rows = list(reader)
    if reader.fieldnames is None or list(reader.fieldnames) != TRAINLOG_COLUMNS:
        raise ValueError(f"{path}: expected columns {TRAINLOG_COLUMNS}, got {reader.fieldnames}")
    return {col: np.array([float(r[col]) for r in rows]) for col in TRAINLOG_COLUMNS}


def write_eval_costs(report: EvalReport, path) -> None:
    rows = []
    for name in report.names:
        rows.extend(
            [name, seed, _fmt(cost)] for seed, cost in enumerate(report.costs[name])
        )
    _write_csv(path, EVAL_COLUMNS, rows)


def read_eval_costs(path) -> dict[str, np.ndarray]:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or list(reader.fieldnames) != EVAL_COLUMNS:
            raise ValueError(f"{path}: expected columns {EVAL_COLUMNS}, got {reader.fieldnames}")
        costs: dict[str, list[float]] = {}
        for row in reader:
            costs.setdefault(row["policy"], []).append(float(row["cost"]))
    return {name: np.array(values) for name, values in costs.items()}


def write_eval_summary(report: EvalReport, path) -> None:
    rows = []
    for name in report.names:
        win = "" if name == LEARNED or LEARNED not in report.costs else _fmt(
            report.win_rate(LEARNED, name)
        )
        rows.append([name, _fmt(report.mean(name)), _fmt(report.median(name)), win])
    _write_csv(path, SUMMARY_COLUMNS, rows)


def write_episode(trace: EpisodeTrace, path) -> None:
    n_x = trace.x.shape[1]
    m = trace.h.shape[1]
    header = (
        ["t"]
        + [f"x{i + 1}" for i in range(n_x)]
        + [f"h{i + 1}" for i in range(m)]
        + [f"p{i + 1}" for i in range(m)]
        + ["cost"]
    )
    rows = []
    for t in range(trace.T):
        rows.append(
            [t]
            + [_fmt(v) for v in trace.x[t]]
            + [_fmt(v) for v in trace.h[t]]
            + [_fmt(v) for v in trace.p[t]]
            + [_fmt(trace.costs[t])]
        )
    _write_csv(path, header, rows)


def read_episode(path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Read an episode CSV back into (x, h, p) arrays for plotting."""
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise ValueError(f"{path}: empty episode file")
        names = list(reader.fieldnames)
        x_cols = [c for c in names if c.startswith("x")]
        h_cols = [c for c in names if c.startswith("h")]
        p_cols = [c for c in names if c.startswith("p")]
        if not (x_cols and h_cols and p_cols):
            raise ValueError(f"{path}: not an episode CSV (columns {names})")
        rows = list(reader)
    x = np.array([[float(r[c]) for c in x_cols] for r in rows])
    h = np.array([[float(r[c]) for c in h_cols] for r in rows])
    p = np.array([[float(r[c]) for c in p_cols] for r in rows])
    return x, h, p
