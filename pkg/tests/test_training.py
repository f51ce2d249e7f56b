"""Trainer tests: rollouts against closed-form and quadrature oracles, the
cost-to-go recursion, the policy-gradient update, and pre-training."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from wcsalloc.errors import FeasibilityError, PretrainError
from wcsalloc.mlp import MlpParams, backward, forward, init_params
from wcsalloc.policy import (
    AllocationSample,
    ControlAwareAllocator,
    EqualAllocator,
    GaussianSimplexPolicy,
    SampledPolicyAllocator,
    log_prob_grad,
    mean_allocation,
    policy_input,
)
from wcsalloc.rngstreams import substream
from wcsalloc.system import ChannelModel, ObservationNoise, make_plant, make_scalar_plants
from wcsalloc.training import (
    EpisodeTrace,
    pretrain_supervised,
    reinforce_update,
    returns,
    rollout_episode,
)

NO_NOISE = ObservationNoise(0.0)


class ConstantAllocator:
    """Test helper: always returns the same allocation vector."""

    def __init__(self, p, p_max):
        self.p = np.asarray(p, dtype=float)
        self.p_max = p_max

    def allocate(self, s_obs, rng):
        return AllocationSample(p=self.p.copy())


class TestReturns:
    def test_half_discount(self):
        np.testing.assert_allclose(returns(np.array([1.0, 1.0, 1.0]), 0.5), [1.75, 1.5, 1.0])

    def test_no_discount(self):
        np.testing.assert_allclose(returns(np.array([2.0, 3.0]), 1.0), [5.0, 3.0])

    def test_matches_direct_summation(self):
        rng = substream("test-returns", 1)
        costs = rng.uniform(0.0, 10.0, 12)
        gamma = 0.9
        direct = np.array(
            [sum(gamma ** (k - t) * costs[k] for k in range(t, len(costs))) for t in range(len(costs))]
        )
        np.testing.assert_allclose(returns(costs, gamma), direct, rtol=1e-12)

    @settings(deadline=None, max_examples=60)
    @given(
        st.lists(st.floats(0.0, 100.0), min_size=1, max_size=10),
        st.floats(0.0, 5.0),
        st.floats(0.05, 1.0),
    )
    def test_scaling_linearity(self, values, scale, gamma):
        costs = np.array(values)
        np.testing.assert_allclose(
            returns(scale * costs, gamma), scale * returns(costs, gamma), rtol=1e-9, atol=1e-9
        )

    def test_bad_gamma_rejected(self):
        with pytest.raises(ValueError):
            returns(np.array([1.0]), 0.0)
        with pytest.raises(ValueError):
            returns(np.array([1.0]), 1.5)


class TestRollout:
    def test_deterministic_open_loop(self):
        plant = make_plant([[1.2]], [[1.0]], W=[[0.0]])
        trace = rollout_episode(
            [plant],
            ChannelModel(1.0),
            ConstantAllocator([0.0], p_max=1.0),
            T=3,
            obs_noise=NO_NOISE,
            rng=substream("test-roll", 1),
            x0=np.array([1.0]),
            require_full_budget=False,
        )
        np.testing.assert_allclose(trace.x[:, 0], [1.0, 1.2, 1.44, 1.728], atol=1e-12)
        np.testing.assert_allclose(trace.costs, [1.44, 2.0736, 2.985984], atol=1e-9)
        assert not trace.success.any()

    def test_guaranteed_success_with_deadbeat_gain(self):
        plants = [make_plant([[a]], [[1.0]], W=[[0.0]], r_u=0.0) for a in (1.1, 1.25)]
        trace = rollout_episode(
            plants,
            ChannelModel(1.0),
            EqualAllocator(2, p_max=2e9),
            T=4,
            obs_noise=NO_NOISE,
            rng=substream("test-roll", 2),
            x0=np.array([3.5, -7.0]),
        )
        assert trace.success.all()
        np.testing.assert_allclose(trace.costs, np.zeros(4), atol=1e-18)

    def test_closure_rate_matches_integrated_probability(self):
        lam, p_max, m = 1.0, 1.0, 2
        share = p_max / m
        expected, quad_err = quad(
            lambda h: (1.0 - np.exp(-h * share)) * lam * np.exp(-lam * h), 0.0, np.inf
        )
        assert quad_err < 1e-8
        plants = make_scalar_plants(m, substream("test-roll", 3))
        channel = ChannelModel(lam)
        allocator = EqualAllocator(m, p_max)
        hits = np.zeros(m)
        n_episodes, T = 10_000, 2
        for ep in range(n_episodes):
            trace = rollout_episode(
                plants, channel, allocator, T, NO_NOISE, substream("test-roll", 4, ep)
            )
            hits += trace.success.sum(axis=0)
        rates = hits / (n_episodes * T)
        band = 3.0 * np.sqrt(expected * (1.0 - expected) / (n_episodes * T))
        assert (np.abs(rates - expected) <= band).all()

    def test_bit_reproducible(self):
        plants = make_scalar_plants(3, substream("test-roll", 5))
        policy = GaussianSimplexPolicy(
            net=init_params([6, 16, 6], substream("test-roll", 6)), m=3, p_max=2.0
        )
        allocator = SampledPolicyAllocator(policy)
        kwargs = dict(
            plants=plants,
            channel=ChannelModel(1.0),
            allocator=allocator,
            T=6,
            obs_noise=ObservationNoise(0.4),
        )
        a = rollout_episode(rng=substream("test-roll", 7), **kwargs)
        b = rollout_episode(rng=substream("test-roll", 7), **kwargs)
        for field in ("h", "x", "s_obs", "p", "success", "costs", "z", "mu", "sigma"):
            assert np.array_equal(getattr(a, field), getattr(b, field))

    def test_negative_allocation_raises(self):
        plants = make_scalar_plants(2, substream("test-roll", 8))
        with pytest.raises(FeasibilityError, match="negative"):
            rollout_episode(
                plants,
                ChannelModel(1.0),
                ConstantAllocator([1.5, -0.5], p_max=1.0),
                T=2,
                obs_noise=NO_NOISE,
                rng=substream("test-roll", 9),
            )

    def test_over_budget_allocation_raises(self):
        plants = make_scalar_plants(2, substream("test-roll", 10))
        with pytest.raises(FeasibilityError, match="exceeds"):
            rollout_episode(
                plants,
                ChannelModel(1.0),
                ConstantAllocator([1.0, 0.5], p_max=1.0),
                T=2,
                obs_noise=NO_NOISE,
                rng=substream("test-roll", 11),
                require_full_budget=False,
            )

    def test_underspent_budget_raises_when_required(self):
        plants = make_scalar_plants(2, substream("test-roll", 12))
        with pytest.raises(FeasibilityError, match="misses"):
            rollout_episode(
                plants,
                ChannelModel(1.0),
                ConstantAllocator([0.2, 0.2], p_max=1.0),
                T=2,
                obs_noise=NO_NOISE,
                rng=substream("test-roll", 13),
            )

    def test_observation_noise_corrupts_policy_input_only(self):
        # True states drive the dynamics; only s_obs carries the noise.
        plant = make_plant([[1.2]], [[1.0]], W=[[0.0]])
        trace = rollout_episode(
            [plant],
            ChannelModel(1.0),
            ConstantAllocator([0.0], p_max=1.0),
            T=3,
            obs_noise=ObservationNoise(4.0),
            rng=substream("test-roll", 14),
            x0=np.array([1.0]),
            require_full_budget=False,
        )
        np.testing.assert_allclose(trace.x[:, 0], [1.0, 1.2, 1.44, 1.728], atol=1e-12)
        assert not np.allclose(trace.s_obs[:, 1], trace.x[:3, 0])


def one_step_trace(s_obs, z, cost, m):
    n_x = len(s_obs) - m
    return EpisodeTrace(
        h=np.array([s_obs[:m]]),
        x=np.zeros((2, n_x)),
        s_obs=np.array([s_obs]),
        p=np.full((1, m), 1.0 / m),
        success=np.zeros((1, m), dtype=bool),
        costs=np.array([cost]),
        z=np.array([z]),
        mu=np.zeros((1, m)),
        sigma=np.ones((1, m)),
    )


class TestReinforceUpdate:
    def test_zero_advantage_leaves_params_unchanged(self):
        m = 2
        params = init_params([4, 8, 4], substream("test-upd", 1))
        trace = one_step_trace(np.array([1.0, 2.0, 5.0, -10.0]), np.array([0.5, -0.5]), 0.0, m)
        updated, row = reinforce_update(params, [trace], gamma=0.9, alpha=0.1, baseline="none")
        for (C0, b0), (C1, b1) in zip(params.layers, updated.layers):
            assert np.array_equal(C0, C1) and np.array_equal(b0, b1)
        assert row.grad_norm == 0.0
        assert row.mean_cost == 0.0

    def test_batch_mean_baseline_cancels_identical_episodes(self):
        m = 2
        params = init_params([4, 8, 4], substream("test-upd", 2))
        trace = one_step_trace(np.array([1.0, 2.0, 5.0, -10.0]), np.array([0.5, -0.5]), 3.0, m)
        updated, _ = reinforce_update(params, [trace, trace], gamma=0.9, alpha=0.1)
        for (C0, b0), (C1, b1) in zip(params.layers, updated.layers):
            assert np.array_equal(C0, C1) and np.array_equal(b0, b1)

    def test_single_layer_update_matches_hand_computation(self):
        # Zero single-layer net: mu = 0, sigma = 1 at any state, so the
        # Gaussian scores are z and z^2 - 1 and the parameter gradient is
        # R * [score] outer [standardized input].
        m = 2
        alpha = 0.01
        params = MlpParams(layers=((np.zeros((4, 4)), np.zeros(4)),))
        s_obs = np.array([1.0, 2.0, 5.0, -10.0])
        z = np.array([0.5, -0.5])
        R = 2.0
        trace = one_step_trace(s_obs, z, R, m)
        updated, row = reinforce_update(params, [trace], gamma=0.9, alpha=alpha, baseline="none")

        x_in = np.array([1.0, 2.0, 0.5, -1.0])  # [h; clip(x)/10]
        seed = R * np.concatenate([z, z * z - 1.0])
        expected_C = -alpha * np.outer(seed, x_in)
        expected_b = -alpha * seed
        np.testing.assert_allclose(updated.layers[0][0], expected_C, atol=1e-15)
        np.testing.assert_allclose(updated.layers[0][1], expected_b, atol=1e-15)
        assert row.mean_cost == pytest.approx(R)

    def test_duplicate_batch_matches_single_episode(self):
        m = 2
        params = init_params([4, 6, 4], substream("test-upd", 3))
        trace = one_step_trace(np.array([0.5, 1.5, -2.0, 4.0]), np.array([1.0, -0.3]), 5.0, m)
        once, _ = reinforce_update(params, [trace], gamma=0.9, alpha=0.05, baseline="none")
        twice, _ = reinforce_update(params, [trace, trace], gamma=0.9, alpha=0.05, baseline="none")
        for (C1, b1), (C2, b2) in zip(once.layers, twice.layers):
            np.testing.assert_allclose(C1, C2, atol=1e-15)
            np.testing.assert_allclose(b1, b2, atol=1e-15)

    def test_non_finite_cost_skips_update(self):
        m = 2
        params = init_params([4, 6, 4], substream("test-upd", 4))
        trace = one_step_trace(
            np.array([1.0, 1.0, 1.0, 1.0]), np.array([0.1, 0.2]), float("inf"), m
        )
        updated, row = reinforce_update(params, [trace], gamma=0.9, alpha=0.05, baseline="none")
        assert updated is params
        assert np.isnan(row.grad_norm)

    def test_heuristic_traces_rejected(self):
        params = init_params([4, 6, 4], substream("test-upd", 5))
        trace = one_step_trace(np.array([1.0, 1.0, 1.0, 1.0]), np.array([0.1, 0.2]), 1.0, 2)
        trace.z = None
        with pytest.raises(ValueError, match="latent"):
            reinforce_update(params, [trace], gamma=0.9, alpha=0.05)


class TestEstimatorUnbiasedness:
    def test_batch_mean_gradient_matches_quadrature(self):
        # One plant, one step: latent z ~ N(mu, sigma^2) from a single affine
        # layer on a fixed input, synthetic cost f(z) = (z - 1.5)^2. The
        # score-weighted Monte-Carlo gradient must match the numerically
        # integrated gradient of E[f] within 3 standard errors. backward is
        # linear in its seed (tested elsewhere), so the batch mean commutes
        # through it.
        params = MlpParams(layers=((np.array([[0.3], [-0.2]]), np.array([0.1, 0.0])),))
        x_in = np.array([0.7])
        y, cache = forward(params, x_in)
        mu, sigma = y[0], float(np.exp(y[1]))

        def integrand_mu(z):
            score = (z - mu) / sigma**2
            pdf = np.exp(-0.5 * ((z - mu) / sigma) ** 2) / (sigma * np.sqrt(2 * np.pi))
            return (z - 1.5) ** 2 * score * pdf

        def integrand_log_sigma(z):
            score = ((z - mu) / sigma) ** 2 - 1.0
            pdf = np.exp(-0.5 * ((z - mu) / sigma) ** 2) / (sigma * np.sqrt(2 * np.pi))
            return (z - 1.5) ** 2 * score * pdf

        lo, hi = mu - 12 * sigma, mu + 12 * sigma
        true_d_mu = quad(integrand_mu, lo, hi)[0]
        true_d_log_sigma = quad(integrand_log_sigma, lo, hi)[0]
        true_seed = np.array([true_d_mu, true_d_log_sigma])

        n = 100_000
        rng = substream("test-unbiased", 1)
        z = mu + sigma * rng.standard_normal(n)
        f = (z - 1.5) ** 2
        seeds = np.empty((n, 2))
        for i in range(n):
            d_mu, d_ls, _ = log_prob_grad(np.array([mu]), np.array([sigma]), z[i : i + 1])
            seeds[i, 0] = f[i] * d_mu[0]
            seeds[i, 1] = f[i] * d_ls[0]
        mean_seed = seeds.mean(axis=0)
        se_seed = seeds.std(axis=0, ddof=1) / np.sqrt(n)
        assert (np.abs(mean_seed - true_seed) <= 3.0 * se_seed).all()

        mc_grad = backward(params, cache, mean_seed)
        true_dC = np.outer(true_seed, x_in)
        tol_dC = 3.0 * np.outer(se_seed, np.abs(x_in))
        assert (np.abs(mc_grad[0][0] - true_dC) <= tol_dC).all()
        assert (np.abs(mc_grad[0][1] - true_seed) <= 3.0 * se_seed).all()


class TestPretrain:
    def make_policy(self, m, seed, hidden=(32,)):
        net = init_params([2 * m, *hidden, 2 * m], substream("test-pre", seed))
        return GaussianSimplexPolicy(net=net, m=m, p_max=2.0)

    def test_zero_epochs_returns_initial_params(self):
        policy = self.make_policy(3, 1)
        params, mse = pretrain_supervised(
            policy,
            ControlAwareAllocator(3, 2.0),
            ChannelModel(1.0),
            n_samples=50,
            epochs=0,
            alpha=1e-2,
            rng=substream("test-pre", 2),
        )
        assert params is policy.net
        assert np.isnan(mse)

    def test_fits_control_aware_ranking(self):
        m = 3
        policy = self.make_policy(m, 3)
        params, mse = pretrain_supervised(
            policy,
            ControlAwareAllocator(m, 2.0),
            ChannelModel(1.0),
            n_samples=800,
            epochs=60,
            alpha=1e-2,
            rng=substream("test-pre", 4),
        )
        assert mse < 1.0
        fitted = GaussianSimplexPolicy(net=params, m=m, p_max=2.0)
        rng = substream("test-pre", 5)
        hits = 0
        n_probe = 1000
        for j in range(n_probe):
            dominant = j % m
            x = rng.normal(0.0, 0.5, m)
            x[dominant] = 5.0 if j % 2 == 0 else -5.0
            s_obs = np.concatenate([rng.exponential(1.0, m), x])
            p = mean_allocation(fitted, s_obs)
            hits += int(np.argmax(p) == dominant)
        assert hits / n_probe >= 0.95

    def test_fits_equal_target_to_constant_mean(self):
        m = 3
        policy = self.make_policy(m, 6)
        params, _ = pretrain_supervised(
            policy,
            EqualAllocator(m, 2.0),
            ChannelModel(1.0),
            n_samples=600,
            epochs=80,
            alpha=1e-2,
            rng=substream("test-pre", 7),
        )
        fitted = GaussianSimplexPolicy(net=params, m=m, p_max=2.0)
        rng = substream("test-pre", 8)
        spreads = []
        for _ in range(200):
            s_obs = np.concatenate([rng.exponential(1.0, m), rng.normal(0.0, 5.0, m)])
            mu, _ = forward(fitted.net, policy_input(s_obs, m))[0][:m], None
            spreads.append(mu.max() - mu.min())
        assert float(np.mean(spreads)) < 0.1

    def test_divergence_raises(self):
        policy = self.make_policy(2, 9)
        with np.errstate(over="ignore", invalid="ignore"), pytest.raises(PretrainError):
            pretrain_supervised(
                policy,
                ControlAwareAllocator(2, 2.0),
                ChannelModel(1.0),
                n_samples=200,
                epochs=40,
                alpha=50.0,
                rng=substream("test-pre", 10),
            )
