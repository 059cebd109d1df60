"""Capacity-weighted level sampling driven by the learned mask activation rate.

Deeper layers carry several times the parameters of the base layer, so
uniform level sampling under-trains them. The scheduler interpolates between
a uniform distribution and a fixed deeper-heavy one, with the interpolation
coefficient supplied online by the smoothed mask activation rate. During a
warm-up window the output stays uniform while the smoothed rate accumulates.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .seeds import counter_uniform

_SUM_TOL = 1e-9


@dataclass(frozen=True)
class RolloutConfig:
    """Fixed scheduling constants, identical across scenes."""

    uniform_weights: tuple[float, float, float] = (1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0)
    aggressive_weights: tuple[float, float, float] = (0.15, 0.30, 0.55)
    ema_alpha: float = 0.05
    sample_period: int = 200
    warmup_steps: int = 2000

    def __post_init__(self):
        for dist in (self.uniform_weights, self.aggressive_weights):
            arr = np.asarray(dist, dtype=np.float64)
            if arr.shape != (3,) or np.any(arr < 0) or abs(float(arr.sum()) - 1.0) > _SUM_TOL:
                raise ValueError(f"{dist} is not a valid 3-way distribution")
        if not (0.0 < self.ema_alpha <= 1.0):
            raise ValueError("ema_alpha must lie in (0, 1]")
        if self.sample_period < 1:
            raise ValueError("sample_period must be at least 1")
        if self.warmup_steps < 0:
            raise ValueError("warmup_steps must be non-negative")


@dataclass
class RolloutState:
    """Mutable scheduler state owned by a single training loop."""

    activation_ema: float = 0.0
    step: int = 0

    def __post_init__(self):
        if not (0.0 <= self.activation_ema <= 1.0):
            raise ValueError("activation_ema must lie in [0, 1]")
        if self.step < 0:
            raise ValueError("step must be non-negative")


def level_distribution(activation: float, config: RolloutConfig) -> np.ndarray:
    """Convex combination of the uniform and deeper-heavy endpoint distributions.

    ``activation`` = 0 reproduces the uniform endpoint exactly and 1 the
    aggressive endpoint exactly; the output is a valid distribution for
    every coefficient in between.
    """
    activation = float(activation)
    if not (0.0 <= activation <= 1.0):
        raise ValueError(f"activation rate must lie in [0, 1], got {activation}")
    uniform = np.asarray(config.uniform_weights, dtype=np.float64)
    aggressive = np.asarray(config.aggressive_weights, dtype=np.float64)
    return (1.0 - activation) * uniform + activation * aggressive


def update_ema(state: RolloutState, activation_sample: float, config: RolloutConfig) -> RolloutState:
    """Fold one activation-rate sample into the exponential moving average."""
    activation_sample = float(activation_sample)
    if not (0.0 <= activation_sample <= 1.0):
        raise ValueError("activation sample must lie in [0, 1]")
    ema = (1.0 - config.ema_alpha) * state.activation_ema + config.ema_alpha * activation_sample
    return replace(state, activation_ema=min(1.0, max(0.0, ema)))


def current_distribution(state: RolloutState, config: RolloutConfig) -> np.ndarray:
    """Level distribution in effect at the state's step.

    Uniform while still inside the warm-up window, adaptive afterwards. The
    moving average keeps accumulating during warm-up so the adaptive phase
    starts from an informed value.
    """
    if state.step < config.warmup_steps:
        return np.asarray(config.uniform_weights, dtype=np.float64)
    return level_distribution(state.activation_ema, config)


def sample_level(pi: np.ndarray, seed: int, counter: int) -> int:
    """Draw a forward level from a 3-way distribution, reproducibly.

    Inverse-CDF over a counter-addressed uniform: the same (seed, counter)
    pair always yields the same level, independent of draw order.
    """
    pi = np.asarray(pi, dtype=np.float64)
    if pi.shape != (3,) or np.any(pi < 0) or abs(float(pi.sum()) - 1.0) > _SUM_TOL:
        raise ValueError(f"{pi!r} is not a valid 3-way distribution")
    u = counter_uniform(seed, counter) * float(pi.sum())
    edge = 0.0
    for level in range(2):
        edge += float(pi[level])
        if u < edge:
            return level
    return 2
