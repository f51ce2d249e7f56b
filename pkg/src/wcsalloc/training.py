"""Episode generation, discounted cost-to-go, the policy-gradient update,
and supervised pre-training of the allocation network.

An episode runs the wireless control system forward T steps: draw fading,
observe (possibly noisily), allocate power, flip one success coin per
plant, then step every plant with fresh process noise. The cost recorded
at step t is the quadratic stage cost of the state the step produced.
The update is the score-weighted batch REINFORCE descent step.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EpisodeError, FeasibilityError, PretrainError, TrainingError
from .mlp import (
    DEFAULT_GRAD_CLIP,
    MlpParams,
    accumulate_grads,
    backward,
    forward,
    grad_norm,
    sgd_step,
    zero_grads,
)
from .policy import (
    SIGMA_MAX,
    SIGMA_MIN,
    GaussianSimplexPolicy,
    log_prob_grad,
    policy_input,
)
from .system import (
    ChannelModel,
    ObservationNoise,
    PlantModel,
    SystemState,
    draw_fading,
    observe,
    packet_success_prob,
    plant_slices,
    stage_cost,
    state_dim,
    step_plant,
)

# Per-coordinate clamp on plant states: open-loop blowups under starved
# power budgets otherwise overflow float64. Clamped episodes still score.
STATE_CLAMP = 1e4

# Relative slack on the budget feasibility checks.
BUDGET_RTOL = 1e-9

DEFAULT_X0_STD = 5.0

# Pre-training fits latent logits log(p/p_max + eps); the epsilon bounds the
# target range when the heuristic zeroes a plant out.
PRETRAIN_LOGIT_EPS = 1e-3


@dataclass(eq=False)
class EpisodeTrace:
    """Per-step record of one rollout.

    Arrays are indexed by step t = 0..T-1, except x which also carries the
    final state in row T. z/mu/sigma are None for heuristic allocators.
    """

    h: np.ndarray  # (T, m) fading
    x: np.ndarray  # (T+1, n_total) true stacked states
    s_obs: np.ndarray  # (T, m + n_total) observed [h; x]
    p: np.ndarray  # (T, m) allocations
    success: np.ndarray  # (T, m) bool, loop closed
    costs: np.ndarray  # (T,) stage costs r_1..r_T
    z: np.ndarray | None = None  # (T, m) latent draws
    mu: np.ndarray | None = None  # (T, m)
    sigma: np.ndarray | None = None  # (T, m)

    @property
    def T(self) -> int:
        return self.costs.shape[0]

    @property
    def x0(self) -> np.ndarray:
        return self.x[0]

    def budget_gap(self, p_max: float) -> float:
        """Largest |sum_i p_i - p_max| over the episode."""
        return float(np.abs(self.p.sum(axis=1) - p_max).max())


@dataclass
class TrainLogRow:
    iteration: int
    mean_cost: float
    grad_norm: float
    mean_cost_undiscounted: float


def _check_allocation(p: np.ndarray, p_max: float, require_full_budget: bool) -> None:
    if not np.isfinite(p).all():
        raise FeasibilityError("allocation has non-finite entries")
    if (p < 0).any():
        raise FeasibilityError(f"negative power allocation: min {p.min():.3e}")
    gap = p.sum() - p_max
    if gap > BUDGET_RTOL * p_max:
        raise FeasibilityError(f"allocation exceeds budget by {gap:.3e}")
    if require_full_budget and abs(gap) > BUDGET_RTOL * p_max:
        raise FeasibilityError(f"allocation misses the budget by {gap:.3e}")


def rollout_episode(
    plants: list[PlantModel],
    channel: ChannelModel,
    allocator,
    T: int,
    obs_noise: ObservationNoise,
    rng: np.random.Generator,
    x0_std: float = DEFAULT_X0_STD,
    x0: np.ndarray | None = None,
    require_full_budget: bool = True,
) -> EpisodeTrace:
    """Simulate one T-step episode under the given allocator.

    The allocator must expose allocate(s_obs, rng) -> AllocationSample and a
    p_max attribute. Draw order per step is fixed (fading, observation
    noise, success uniforms, process noise) so two allocators consuming the
    same stream see identical environment randomness. x0 overrides the
    Gaussian(0, x0_std^2) initial-state draw; passing it skips that draw.

    `require_full_budget` enforces |sum p - p_max| <= 1e-9 p_max on every
    step (the allocators shipped here meet it by construction); allocations
    above the budget or negative always raise FeasibilityError.
    """
    if T < 1:
        raise ValueError("T must be >= 1")
    m = len(plants)
    n_total = state_dim(plants)
    slices = plant_slices(plants)
    p_max = allocator.p_max

    if x0 is None:
        x = rng.normal(0.0, x0_std, size=n_total)
    else:
        x = np.asarray(x0, dtype=float).copy()
        if x.shape != (n_total,):
            raise ValueError(f"x0 must have shape ({n_total},)")

    h_hist = np.empty((T, m))
    x_hist = np.empty((T + 1, n_total))
    obs_hist = np.empty((T, m + n_total))
    p_hist = np.empty((T, m))
    success_hist = np.empty((T, m), dtype=bool)
    costs = np.empty(T)
    latent = mu_hist = sigma_hist = None

    x_hist[0] = x
    for t in range(T):
        h = draw_fading(rng, channel, m)
        s_obs = observe(SystemState(h=h, x=x), obs_noise, rng)
        sample = allocator.allocate(s_obs, rng)
        _check_allocation(sample.p, p_max, require_full_budget)

        q = packet_success_prob(h, sample.p)
        success = rng.random(m) < q
        noise = rng.standard_normal(n_total)

        x_next = np.empty(n_total)
        x_obs = s_obs[m:]
        for i, (plant, sl) in enumerate(zip(plants, slices)):
            w = plant.noise_sqrt @ noise[sl]
            u = -(plant.K @ x_obs[sl]) if success[i] else None
            x_next[sl] = step_plant(plant, x[sl], u, bool(success[i]), w)
        np.clip(x_next, -STATE_CLAMP, STATE_CLAMP, out=x_next)
        if not np.isfinite(x_next).all():
            raise EpisodeError(f"non-finite state at step {t}")

        h_hist[t] = h
        obs_hist[t] = s_obs
        p_hist[t] = sample.p
        success_hist[t] = success
        costs[t] = stage_cost(x_next, plants)
        if sample.z is not None:
            if latent is None:
                latent = np.empty((T, m))
                mu_hist = np.empty((T, m))
                sigma_hist = np.empty((T, m))
            latent[t] = sample.z
            mu_hist[t] = sample.mu
            sigma_hist[t] = sample.sigma
        x = x_next
        x_hist[t + 1] = x

    return EpisodeTrace(
        h=h_hist,
        x=x_hist,
        s_obs=obs_hist,
        p=p_hist,
        success=success_hist,
        costs=costs,
        z=latent,
        mu=mu_hist,
        sigma=sigma_hist,
    )


def returns(costs: np.ndarray, gamma: float) -> np.ndarray:
    """Discounted cost-to-go R_t = r_{t+1} + gamma R_{t+1}, R_{T-1} = r_T."""
    if not 0 < gamma <= 1:
        raise ValueError(f"gamma must be in (0, 1], got {gamma}")
    costs = np.asarray(costs, dtype=float)
    out = np.empty_like(costs)
    acc = 0.0
    for t in range(len(costs) - 1, -1, -1):
        acc = costs[t] + gamma * acc
        out[t] = acc
    return out


def episode_cost(trace: EpisodeTrace) -> float:
    """Undiscounted total cost of the episode."""
    return float(trace.costs.sum())


def reinforce_update(
    params: MlpParams,
    traces: list[EpisodeTrace],
    gamma: float,
    alpha: float,
    grad_clip: float | None = DEFAULT_GRAD_CLIP,
    baseline: str = "batch_mean",
) -> tuple[MlpParams, TrainLogRow]:
    """One batch REINFORCE descent step from a batch of episodes.

    Accumulates g = (1/N) sum_episodes sum_t gamma^t (R_t - b_t) grad_theta
    log pi(z_t | s_t), where b_t is the per-step batch-mean return
    (baseline="batch_mean") or zero (baseline="none"), then descends. A
    non-finite gradient skips the update and logs grad_norm = nan.
    """
    if not traces:
        raise ValueError("batch must be nonempty")
    if baseline not in ("batch_mean", "none"):
        raise ValueError(f"unknown baseline {baseline!r}")
    T = traces[0].T
    m = traces[0].p.shape[1]
    if any(tr.T != T for tr in traces):
        raise ValueError("all episodes in a batch must share the horizon")
    if any(tr.z is None for tr in traces):
        raise ValueError("batch contains heuristic traces with no latent draws")

    all_returns = np.stack([returns(tr.costs, gamma) for tr in traces])  # (N, T)
    mean_cost = float(all_returns[:, 0].mean())
    mean_undisc = float(np.mean([tr.costs.sum() for tr in traces]))
    if not np.isfinite(all_returns).all():
        # Gradient would be non-finite: log the iteration and skip the update.
        return params, TrainLogRow(-1, mean_cost, float("nan"), mean_undisc)
    advantages = all_returns.copy()
    if baseline == "batch_mean":
        advantages -= all_returns.mean(axis=0, keepdims=True)
    gamma_pow = gamma ** np.arange(T)

    acc = zero_grads(params)
    for trace, adv in zip(traces, advantages):
        for t in range(T):
            x_in = policy_input(trace.s_obs[t], m)
            y, cache = forward(params, x_in)
            mu = y[:m]
            sigma = np.clip(np.exp(y[m:]), SIGMA_MIN, SIGMA_MAX)
            d_mu, d_log_sigma, _ = log_prob_grad(mu, sigma, trace.z[t])
            seed = gamma_pow[t] * adv[t] * np.concatenate([d_mu, d_log_sigma])
            accumulate_grads(acc, backward(params, cache, seed))

    n = len(traces)
    for gC, gb in acc:
        gC /= n
        gb /= n

    norm = grad_norm(acc)
    if not np.isfinite(norm):
        return params, TrainLogRow(-1, mean_cost, float("nan"), mean_undisc)
    new_params = sgd_step(params, acc, alpha, grad_clip=grad_clip)
    return new_params, TrainLogRow(-1, mean_cost, norm, mean_undisc)


def pretrain_supervised(
    policy: GaussianSimplexPolicy,
    target_allocator,
    channel: ChannelModel,
    n_samples: int,
    epochs: int,
    alpha: float,
    rng: np.random.Generator,
    state_std: float = 5.0,
    batch_size: int = 32,
) -> tuple[MlpParams, float]:
    """Regress the policy net onto a heuristic before any RL.

    Draws n_samples synthetic states (x Gaussian(0, state_std^2) per
    coordinate, h from the fading law), sets the mu-head targets to the
    inverse-softmax logits log(p_target / p_max + eps) of the heuristic
    allocation and the log-sigma head to 0, and runs minibatch SGD on the
    squared error. Returns the fitted parameters and the final epoch's mean
    squared logit error.

    Raises PretrainError if the epoch loss rises 10 consecutive times or
    goes non-finite.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    m = policy.m
    n_x = policy.net.layer_sizes[0] - m

    states = np.empty((n_samples, m + n_x))
    targets = np.empty((n_samples, 2 * m))
    for j in range(n_samples):
        h = draw_fading(rng, channel, m)
        x = rng.normal(0.0, state_std, size=n_x)
        s_obs = np.concatenate([h, x])
        p_target = target_allocator.allocate(s_obs, rng).p
        states[j] = s_obs
        targets[j, :m] = np.log(p_target / policy.p_max + PRETRAIN_LOGIT_EPS)
        targets[j, m:] = 0.0

    params = policy.net
    final_mse = float("nan")
    prev_loss = None
    rising = 0
    order = np.arange(n_samples)
    for _ in range(epochs):
        rng.shuffle(order)
        sq_err = 0.0
        for start in range(0, n_samples, batch_size):
            batch = order[start : start + batch_size]
            acc = zero_grads(params)
            for j in batch:
                y, cache = forward(params, policy_input(states[j], m))
                resid = y - targets[j]
                sq_err += float(resid @ resid)
                accumulate_grads(acc, backward(params, cache, resid), scale=1.0 / len(batch))
            try:
                params = sgd_step(params, acc, alpha, grad_clip=None)
            except TrainingError as exc:
                raise PretrainError(f"pre-training diverged: {exc}") from exc
        loss = sq_err / (n_samples * 2 * m)
        if not np.isfinite(loss):
            raise PretrainError(f"pre-training loss went non-finite ({loss})")
        if prev_loss is not None and loss > prev_loss:
            rising += 1
            if rising >= 10:
                raise PretrainError(f"pre-training loss rose 10 consecutive epochs (now {loss:.4f})")
        else:
            rising = 0
        prev_loss = loss
        final_mse = loss
    return params, final_mse
