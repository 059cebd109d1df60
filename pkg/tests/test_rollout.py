import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pd4g.rollout import (
    RolloutConfig,
    RolloutState,
    current_distribution,
    level_distribution,
    sample_level,
    update_ema,
)


class TestLevelDistribution:
    def test_uniform_endpoint_exact(self):
        pi = level_distribution(0.0, RolloutConfig())
        assert np.array_equal(pi, np.array([1.0 / 3.0] * 3))

    def test_aggressive_endpoint_exact(self):
        pi = level_distribution(1.0, RolloutConfig())
        assert np.array_equal(pi, np.array([0.15, 0.30, 0.55]))

    def test_midpoint(self):
        pi = level_distribution(0.5, RolloutConfig())
        np.testing.assert_allclose(pi, [0.24167, 0.31667, 0.44167], atol=1e-5)

    def test_domain_error(self):
        for bad in (-0.01, 1.01):
            with pytest.raises(ValueError):
                level_distribution(bad, RolloutConfig())

    @settings(deadline=None, max_examples=100)
    @given(rho=st.floats(0, 1))
    def test_always_a_valid_distribution(self, rho):
        pi = level_distribution(rho, RolloutConfig())
        assert np.all(pi >= 0)
        assert abs(float(pi.sum()) - 1.0) <= 1e-9

    def test_affine_on_grid(self):
        cfg = RolloutConfig()
        lo = level_distribution(0.0, cfg)
        hi = level_distribution(1.0, cfg)
        for rho in np.linspace(0, 1, 11):
            expected = (1 - rho) * lo + rho * hi
            np.testing.assert_allclose(level_distribution(float(rho), cfg), expected, atol=1e-9)


class TestEma:
    def test_single_step(self):
        state = update_ema(RolloutState(), 1.0, RolloutConfig())
        assert state.activation_ema == pytest.approx(0.05)

    def test_fixed_point(self):
        state = RolloutState(activation_ema=0.42)
        assert update_ema(state, 0.42, RolloutConfig()).activation_ema == pytest.approx(0.42)

    def test_geometric_convergence(self):
        state = RolloutState()
        cfg = RolloutConfig()
        for _ in range(200):
            state = update_ema(state, 1.0, cfg)
        assert state.activation_ema == pytest.approx(1.0 - 0.95**200, abs=1e-12)

    def test_input_validation(self):
        with pytest.raises(ValueError):
            update_ema(RolloutState(), 1.5, RolloutConfig())

    @settings(deadline=None, max_examples=60)
    @given(a=st.floats(0, 1), b=st.floats(0, 1), sample=st.floats(0, 1))
    def test_contraction(self, a, b, sample):
        cfg = RolloutConfig()
        ra = update_ema(RolloutState(activation_ema=a), sample, cfg).activation_ema
        rb = update_ema(RolloutState(activation_ema=b), sample, cfg).activation_ema
        assert abs(ra - rb) == pytest.approx((1 - cfg.ema_alpha) * abs(a - b), abs=1e-12)

    def test_original_state_untouched(self):
        state = RolloutState(activation_ema=0.3, step=7)
        update_ema(state, 0.9, RolloutConfig())
        assert state.activation_ema == 0.3


class TestWarmup:
    def test_uniform_during_warmup(self):
        cfg = RolloutConfig()
        state = RolloutState(activation_ema=1.0, step=0)
        assert np.array_equal(current_distribution(state, cfg), [1 / 3] * 3)
        state.step = cfg.warmup_steps - 1
        assert np.array_equal(current_distribution(state, cfg), [1 / 3] * 3)

    def test_adaptive_at_boundary(self):
        cfg = RolloutConfig()
        state = RolloutState(activation_ema=1.0, step=cfg.warmup_steps)
        assert np.array_equal(current_distribution(state, cfg), [0.15, 0.30, 0.55])


class TestSampleLevel:
    def test_degenerate_distributions(self):
        for level, pi in enumerate(([1, 0, 0], [0, 1, 0], [0, 0, 1])):
            for counter in range(20):
                assert sample_level(np.array(pi, dtype=float), 9, counter) == level

    def test_deterministic_per_counter(self):
        pi = np.array([0.2, 0.3, 0.5])
        draws1 = [sample_level(pi, 123, c) for c in range(100)]
        draws2 = [sample_level(pi, 123, c) for c in range(100)]
        assert draws1 == draws2

    def test_invalid_distribution(self):
        with pytest.raises(ValueError):
            sample_level(np.array([0.5, 0.5, 0.5]), 0, 0)
        with pytest.raises(ValueError):
            sample_level(np.array([-0.1, 0.6, 0.5]), 0, 0)

    def test_empirical_frequencies_uniform(self):
        pi = np.array([1 / 3, 1 / 3, 1 / 3])
        draws = np.array([sample_level(pi, 777, c) for c in range(300_000)])
        freqs = np.bincount(draws, minlength=3) / draws.size
        assert np.all(np.abs(freqs - 1 / 3) < 0.01)

    def test_empirical_frequencies_skewed(self):
        pi = np.array([0.15, 0.30, 0.55])
        draws = np.array([sample_level(pi, 778, c) for c in range(100_000)])
        freqs = np.bincount(draws, minlength=3) / draws.size
        assert np.all(np.abs(freqs - pi) < 0.01)


class TestRolloutConfig:
    def test_published_defaults(self):
        cfg = RolloutConfig()
        assert cfg.aggressive_weights == (0.15, 0.30, 0.55)
        assert cfg.ema_alpha == 0.05
        assert cfg.sample_period == 200
        assert cfg.warmup_steps == 2000

    def test_rejects_non_distribution(self):
        with pytest.raises(ValueError):
            RolloutConfig(aggressive_weights=(0.5, 0.5, 0.5))
