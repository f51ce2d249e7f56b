"""Plants, fading channel, controller synthesis, and one-step dynamics.

A plant is a discrete-time linear system x' = A x + B u + w whose control
loop closes only when the downlink packet is decoded. Packet success is
Bernoulli with probability q(h, p) = 1 - exp(-h p) in the channel fading h
and the transmit power p. Everything here is a pure function of its
arguments; random draws come from generators the caller owns.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import GainSynthesisError

# Input weight R_u used when synthesizing feedback gains. Small enough that
# the closed loop is near-deadbeat: any shipped plant contracts below 1e-6
# within n+1 steps from unit-scale initial states.
DEFAULT_INPUT_WEIGHT = 1e-4

RICCATI_TOL = 1e-10
RICCATI_MAX_ITER = 10_000

# Scalar-plant roster defaults: open-loop poles uniform in A_RANGE keep
# divergence bounded over the horizons used here.
A_RANGE = (1.05, 1.3)
PROCESS_NOISE_VAR = 0.1


def _as_matrix(value, name: str) -> np.ndarray:
    m = np.atleast_2d(np.asarray(value, dtype=float))
    if m.ndim != 2:
        raise ValueError(f"{name} must be a matrix, got ndim={m.ndim}")
    return m


def _check_psd(m: np.ndarray, name: str, tol: float = 1e-9) -> None:
    if m.shape[0] != m.shape[1]:
        raise ValueError(f"{name} must be square, got {m.shape}")
    if not np.allclose(m, m.T, atol=tol):
        raise ValueError(f"{name} must be symmetric")
    eigs = np.linalg.eigvalsh(0.5 * (m + m.T))
    if eigs.min() < -tol:
        raise ValueError(f"{name} must be positive semidefinite, min eig {eigs.min():.3e}")


def controllability_matrix(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    n = A.shape[0]
    blocks = [B]
    for _ in range(n - 1):
        blocks.append(A @ blocks[-1])
    return np.hstack(blocks)


def is_controllable(A: np.ndarray, B: np.ndarray) -> bool:
    n = A.shape[0]
    return np.linalg.matrix_rank(controllability_matrix(A, B)) == n


def spectral_radius(m: np.ndarray) -> float:
    return float(np.abs(np.linalg.eigvals(m)).max())


def _psd_sqrt(m: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(0.5 * (m + m.T))
    return vecs @ np.diag(np.sqrt(np.clip(vals, 0.0, None))) @ vecs.T


def lqr_gain(
    A,
    B,
    Q,
    R_u,
    tol: float = RICCATI_TOL,
    max_iter: int = RICCATI_MAX_ITER,
) -> np.ndarray:
    """Infinite-horizon discrete LQR gain by fixed-point Riccati iteration.

    Iterates P <- Q + A'PA - A'PB (R_u + B'PB)^-1 B'PA from P = Q until the
    update is below `tol` element-wise, then returns
    K = (R_u + B'PB)^-1 B'PA. The closed loop A - BK must end up with
    spectral radius < 1.

    Raises:
        ValueError: (A, B) not controllable or shapes inconsistent.
        GainSynthesisError: no fixed point within `max_iter` iterations, or
            the resulting closed loop is not stable.
    """
    A = _as_matrix(A, "A")
    B = _as_matrix(B, "B")
    Q = _as_matrix(Q, "Q")
    R_u = _as_matrix(R_u, "R_u")
    n, k = B.shape
    if A.shape != (n, n):
        raise ValueError(f"A must be {n}x{n}, got {A.shape}")
    if Q.shape != (n, n) or R_u.shape != (k, k):
        raise ValueError("Q must match the state dimension and R_u the input dimension")
    if not is_controllable(A, B):
        raise ValueError("(A, B) is not controllable")

    P = Q.copy()
    for _ in range(max_iter):
        BtP = B.T @ P
        gain_lhs = R_u + BtP @ B
        K = np.linalg.solve(gain_lhs, BtP @ A)
        P_next = Q + A.T @ P @ A - A.T @ P @ B @ K
        P_next = 0.5 * (P_next + P_next.T)
        if np.max(np.abs(P_next - P)) < tol:
            P = P_next
            break
        P = P_next
    else:
        raise GainSynthesisError(f"Riccati iteration did not converge in {max_iter} iterations")

    BtP = B.T @ P
    K = np.linalg.solve(R_u + BtP @ B, BtP @ A)
    rho = spectral_radius(A - B @ K)
    if rho >= 1.0:
        raise GainSynthesisError(f"synthesized closed loop is unstable (spectral radius {rho:.4f})")
    return K


@dataclass(frozen=True, eq=False)
class PlantModel:
    """One plant: dynamics (A, B), noise covariance W, stage-cost weight Q,
    and the synthesized feedback gain K."""

    A: np.ndarray
    B: np.ndarray
    W: np.ndarray
    Q: np.ndarray
    K: np.ndarray
    noise_sqrt: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        for name in ("A", "B", "W", "Q", "K"):
            object.__setattr__(self, name, _as_matrix(getattr(self, name), name))
        n, k = self.B.shape
        if self.A.shape != (n, n):
            raise ValueError(f"A must be {n}x{n}, got {self.A.shape}")
        if self.K.shape != (k, n):
            raise ValueError(f"K must be {k}x{n}, got {self.K.shape}")
        _check_psd(self.W, "W")
        _check_psd(self.Q, "Q")
        if self.W.shape != (n, n) or self.Q.shape != (n, n):
            raise ValueError("W and Q must match the state dimension")
        if not is_controllable(self.A, self.B):
            raise ValueError("(A, B) is not controllable")
        rho = spectral_radius(self.A - self.B @ self.K)
        if rho >= 1.0:
            raise ValueError(f"A - BK must be stable, spectral radius {rho:.4f}")
        object.__setattr__(self, "noise_sqrt", _psd_sqrt(self.W))

    @property
    def n(self) -> int:
        return self.B.shape[0]

    @property
    def input_dim(self) -> int:
        return self.B.shape[1]


def make_plant(A, B, W=None, Q=None, r_u: float = DEFAULT_INPUT_WEIGHT) -> PlantModel:
    """Build a PlantModel, synthesizing K by LQR with input weight r_u * I."""
    A = _as_matrix(A, "A")
    B = _as_matrix(B, "B")
    n, k = B.shape
    W = np.zeros((n, n)) if W is None else _as_matrix(W, "W")
    Q = np.eye(n) if Q is None else _as_matrix(Q, "Q")
    K = lqr_gain(A, B, Q, r_u * np.eye(k))
    return PlantModel(A=A, B=B, W=W, Q=Q, K=K)


def make_scalar_plants(
    m: int,
    rng: np.random.Generator,
    a_range: tuple[float, float] = A_RANGE,
    b: float = 1.0,
    w_var: float = PROCESS_NOISE_VAR,
    q: float = 1.0,
    r_u: float = DEFAULT_INPUT_WEIGHT,
) -> list[PlantModel]:
    """Roster of m unstable scalar plants with poles uniform in a_range."""
    if m < 1:
        raise ValueError("m must be >= 1")
    a_values = rng.uniform(a_range[0], a_range[1], size=m)
    return [make_plant([[a]], [[b]], [[w_var]], [[q]], r_u=r_u) for a in a_values]


@dataclass(frozen=True)
class ChannelModel:
    """Fading channel with exponentially distributed per-link fading."""

    lambda_h: float = 1.0

    def __post_init__(self):
        if not self.lambda_h > 0:
            raise ValueError(f"lambda_h must be > 0, got {self.lambda_h}")


@dataclass(frozen=True)
class ObservationNoise:
    """Additive i.i.d. Gaussian noise on the state observation. Variance 0
    reproduces the perfect-information setting."""

    w_obs_var: float = 0.0

    def __post_init__(self):
        if self.w_obs_var < 0:
            raise ValueError(f"w_obs_var must be >= 0, got {self.w_obs_var}")


@dataclass(frozen=True, eq=False)
class SystemState:
    """Joint state [h; x]: the fading vector and the stacked plant states."""

    h: np.ndarray
    x: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "h", np.asarray(self.h, dtype=float))
        object.__setattr__(self, "x", np.asarray(self.x, dtype=float))
        if self.h.ndim != 1 or self.x.ndim != 1:
            raise ValueError("h and x must be vectors")
        if (self.h < 0).any():
            raise ValueError("fading values must be nonnegative")

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.h, self.x])


def state_dim(plants: list[PlantModel]) -> int:
    return sum(p.n for p in plants)


def plant_slices(plants: list[PlantModel]) -> list[slice]:
    slices = []
    start = 0
    for p in plants:
        slices.append(slice(start, start + p.n))
        start += p.n
    return slices


def packet_success_prob(h, p):
    """Probability 1 - exp(-h p) of decoding the control packet.

    Accepts scalars or arrays; monotone nondecreasing in both arguments.
    """
    h = np.asarray(h, dtype=float)
    p = np.asarray(p, dtype=float)
    if (h < 0).any() or (p < 0).any():
        raise ValueError("fading and power must be nonnegative")
    out = 1.0 - np.exp(-h * p)
    return float(out) if out.ndim == 0 else out


def draw_fading(rng: np.random.Generator, channel: ChannelModel, m: int) -> np.ndarray:
    """m i.i.d. exponential(lambda_h) fading draws; redrawn every step."""
    if m < 1:
        raise ValueError("m must be >= 1")
    return rng.exponential(scale=1.0 / channel.lambda_h, size=m)


def step_plant(
    plant: PlantModel,
    x: np.ndarray,
    u,
    loop_closed: bool,
    w: np.ndarray,
) -> np.ndarray:
    """One step of the switched dynamics.

    Closed loop: A x + B u + w. Open loop: A x + w, ignoring u (which may
    be None). Pure function; the caller draws w.
    """
    x = np.asarray(x, dtype=float)
    w = np.asarray(w, dtype=float)
    if x.shape != (plant.n,) or w.shape != (plant.n,):
        raise ValueError(f"x and w must have shape ({plant.n},)")
    x_next = plant.A @ x + w
    if loop_closed:
        u = np.asarray(u, dtype=float)
        if u.shape != (plant.input_dim,):
            raise ValueError(f"u must have shape ({plant.input_dim},)")
        x_next = x_next + plant.B @ u
    return x_next


def stage_cost(x: np.ndarray, plants: list[PlantModel]) -> float:
    """Sum over plants of x_i' Q_i x_i for the stacked state vector x."""
    x = np.asarray(x, dtype=float)
    if x.shape != (state_dim(plants),):
        raise ValueError(f"x must have shape ({state_dim(plants)},), got {x.shape}")
    total = 0.0
    for plant, sl in zip(plants, plant_slices(plants)):
        xi = x[sl]
        total += float(xi @ plant.Q @ xi)
    return total


def observe(state: SystemState, noise: ObservationNoise, rng: np.random.Generator) -> np.ndarray:
    """Noisy copy [h; x] + g of the joint state, g ~ N(0, w_obs_var I).

    The perturbation is drawn even when the variance is 0 so the stream
    shape does not depend on the noise setting.
    """
    vec = state.as_vector()
    return vec + rng.normal(0.0, np.sqrt(noise.w_obs_var), size=vec.shape)
