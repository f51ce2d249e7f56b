"""Stochastic budget-feasible power allocation and the baseline allocators.

The learned policy is Gaussian in a latent vector z; pushing z through a
softmax scaled by the budget makes every sample land exactly on the
simplex {p >= 0, sum p = p_max}, so the power constraint holds by
construction. The score function is taken with respect to z, which keeps
the log-density tractable.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import PolicyError
from .mlp import MlpParams, forward

SIGMA_MIN = 1e-3
SIGMA_MAX = 2.0

# Raw plant states dwarf fading values, so policy inputs are [h; clip(x)/10].
STATE_CLIP = 100.0
STATE_SCALE = 10.0

LOG_2PI = float(np.log(2.0 * np.pi))


def softmax(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    e = np.exp(z - z.max())
    return e / e.sum()


def policy_input(s_obs: np.ndarray, m: int) -> np.ndarray:
    """Standardize an observed state [h; x] for the network input."""
    s_obs = np.asarray(s_obs, dtype=float)
    return np.concatenate(
        [s_obs[:m], np.clip(s_obs[m:], -STATE_CLIP, STATE_CLIP) / STATE_SCALE]
    )


@dataclass(frozen=True, eq=False)
class GaussianSimplexPolicy:
    """Network emitting m latent means and m log-deviations, plus the budget."""

    net: MlpParams
    m: int
    p_max: float

    def __post_init__(self):
        if self.m < 1:
            raise ValueError(f"m must be >= 1, got {self.m}")
        if not self.p_max > 0:
            raise ValueError(f"p_max must be > 0, got {self.p_max}")
        if self.net.layer_sizes[-1] != 2 * self.m:
            raise ValueError(
                f"network must have {2 * self.m} outputs for m={self.m}, "
                f"got {self.net.layer_sizes[-1]}"
            )


@dataclass(frozen=True, eq=False)
class AllocationSample:
    """One allocation: the power vector p plus, for learned policies, the
    latent draw and the Gaussian parameters it came from."""

    p: np.ndarray
    z: np.ndarray | None = None
    mu: np.ndarray | None = None
    sigma: np.ndarray | None = None


def policy_forward(policy: GaussianSimplexPolicy, s_obs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Map an observed state to (mu, sigma); sigma is clamped positive."""
    s_obs = np.asarray(s_obs, dtype=float)
    x_in = policy_input(s_obs, policy.m)
    y, _ = forward(policy.net, x_in)
    if not np.isfinite(y).all():
        raise PolicyError("policy network produced non-finite outputs")
    mu = y[: policy.m]
    sigma = np.clip(np.exp(y[policy.m :]), SIGMA_MIN, SIGMA_MAX)
    return mu, sigma


def sample_allocation(
    mu: np.ndarray,
    sigma: np.ndarray,
    p_max: float,
    rng: np.random.Generator,
) -> AllocationSample:
    """Draw z ~ N(mu, diag(sigma^2)) and allocate p = p_max * softmax(z)."""
    mu = np.asarray(mu, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    if (sigma <= 0).any():
        raise ValueError("sigma must be positive element-wise")
    z = mu + sigma * rng.standard_normal(mu.shape)
    return AllocationSample(p=p_max * softmax(z), z=z, mu=mu, sigma=sigma)


def mean_allocation(policy: GaussianSimplexPolicy, s_obs: np.ndarray) -> np.ndarray:
    """Deterministic allocation at the latent mean, p_max * softmax(mu)."""
    mu, _ = policy_forward(policy, s_obs)
    return policy.p_max * softmax(mu)


def log_prob_grad(
    mu: np.ndarray,
    sigma: np.ndarray,
    z: np.ndarray,
) -> tuple[np.ndarray, np.ndarray, float]:
    """Gaussian score of the latent draw z.

    Returns (d log pi / d mu, d log pi / d log sigma, log pi) with
    log pi = sum_i [-(z_i-mu_i)^2 / (2 sigma_i^2) - ln sigma_i - ln(2 pi)/2].
    """
    mu = np.asarray(mu, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    z = np.asarray(z, dtype=float)
    if (sigma <= 0).any():
        raise ValueError("sigma must be positive element-wise")
    diff = (z - mu) / sigma
    d_mu = diff / sigma
    d_log_sigma = diff * diff - 1.0
    log_prob = float(np.sum(-0.5 * diff * diff - np.log(sigma) - 0.5 * LOG_2PI))
    return d_mu, d_log_sigma, log_prob


def equal_allocation(m: int, p_max: float) -> np.ndarray:
    """Divide the budget evenly across the m plants."""
    if m < 1:
        raise ValueError("m must be >= 1")
    return np.full(m, p_max / m)


def control_aware_allocation(
    x: np.ndarray,
    p_max: float,
    kappa: float = 2.0,
    dims: list[int] | None = None,
) -> np.ndarray:
    """Power proportional to |x_i|^kappa, the squared deviation for kappa=2.

    `dims` gives per-plant state sizes for multi-dimensional plants (the
    deviation is then the per-plant Euclidean norm); None means scalar
    plants. All-zero states fall back to the equal split.
    """
    x = np.asarray(x, dtype=float)
    if dims is None:
        magnitudes = np.abs(x)
    else:
        magnitudes = np.empty(len(dims))
        start = 0
        for i, n in enumerate(dims):
            magnitudes[i] = np.linalg.norm(x[start : start + n])
            start += n
    weights = magnitudes**kappa
    total = weights.sum()
    if total <= 0:
        return equal_allocation(len(magnitudes), p_max)
    return p_max * weights / total


class SampledPolicyAllocator:
    """Training-time allocator: samples the latent Gaussian each step."""

    def __init__(self, policy: GaussianSimplexPolicy):
        self.policy = policy
        self.p_max = policy.p_max

    def allocate(self, s_obs: np.ndarray, rng: np.random.Generator) -> AllocationSample:
        mu, sigma = policy_forward(self.policy, s_obs)
        return sample_allocation(mu, sigma, self.p_max, rng)


class MeanPolicyAllocator:
    """Evaluation-time allocator: deterministic softmax of the latent mean."""

    def __init__(self, policy: GaussianSimplexPolicy):
        self.policy = policy
        self.p_max = policy.p_max

    def allocate(self, s_obs: np.ndarray, rng: np.random.Generator) -> AllocationSample:
        mu, sigma = policy_forward(self.policy, s_obs)
        return AllocationSample(p=self.p_max * softmax(mu), mu=mu, sigma=sigma)


class EqualAllocator:
    """Baseline: the budget split evenly regardless of state."""

    def __init__(self, m: int, p_max: float):
        self.m = m
        self.p_max = p_max
        self._p = equal_allocation(m, p_max)

    def allocate(self, s_obs: np.ndarray, rng: np.random.Generator) -> AllocationSample:
        return AllocationSample(p=self._p.copy())


class ControlAwareAllocator:
    """Baseline: power follows the squared observed deviation of each plant."""

    def __init__(self, m: int, p_max: float, kappa: float = 2.0, dims: list[int] | None = None):
        self.m = m
        self.p_max = p_max
        self.kappa = kappa
        self.dims = dims

    def allocate(self, s_obs: np.ndarray, rng: np.random.Generator) -> AllocationSample:
        x_obs = np.asarray(s_obs, dtype=float)[self.m :]
        return AllocationSample(
            p=control_aware_allocation(x_obs, self.p_max, kappa=self.kappa, dims=self.dims)
        )
