"""Core data model: anchors, per-level masks, tabulated deformations, level routing.

The renderable scene is a set of canonical anchors shared by all bitstream
layers. Level 0 renders the anchors as-is, level 1 adds tabulated per-anchor
global displacements and feature residuals, level 2 additionally applies
per-anchor local residuals (position, scale, opacity, color). All types are
immutable after construction and every operation returns new values, so the
model is safe for concurrent reads.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum
from typing import Optional

import numpy as np


class Layer(IntEnum):
    """Bitstream layer identifiers, in transmission order."""

    STATIC = 0
    GLOBAL = 1
    LOCAL = 2


LAYER_COUNT = 3


class MissingLayerError(ValueError):
    """A level above 0 was requested but no deformation data is available."""


def _frozen(a, dtype=np.float64) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    arr.flags.writeable = False
    return arr


def check_layer(level: int) -> int:
    level = int(level)
    if level not in (0, 1, 2):
        raise ValueError(f"layer must be 0, 1 or 2, got {level}")
    return level


@dataclass(frozen=True)
class AnchorSet:
    """Canonical anchors: positions, feature vectors, scales, offsets, opacity, color.

    Arrays share their leading dimension (the anchor count). Scales are
    non-negative (mask gating legitimately drives them to zero), opacities
    and colors live in [0, 1]. Positions use scene units; 2-D and 3-D
    layouts are both accepted.
    """

    positions: np.ndarray
    features: np.ndarray
    scales: np.ndarray
    offsets: np.ndarray
    opacities: np.ndarray
    colors: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "positions", _frozen(self.positions))
        object.__setattr__(self, "features", _frozen(self.features))
        object.__setattr__(self, "scales", _frozen(self.scales))
        object.__setattr__(self, "offsets", _frozen(self.offsets))
        object.__setattr__(self, "opacities", _frozen(self.opacities))
        object.__setattr__(self, "colors", _frozen(self.colors))

        if self.positions.ndim != 2:
            raise ValueError("positions must be a (count, dim) array")
        count, dim = self.positions.shape
        if count < 1:
            raise ValueError("anchor set must contain at least one anchor")
        if dim not in (2, 3):
            raise ValueError(f"spatial dim must be 2 or 3, got {dim}")
        if self.features.ndim != 2 or self.features.shape[0] != count:
            raise ValueError("features must be (count, feature_dim)")
        if self.scales.shape != (count,):
            raise ValueError("scales must be a flat (count,) array")
        if self.offsets.shape != (count, dim):
            raise ValueError("offsets must match positions' shape")
        if self.opacities.shape != (count,):
            raise ValueError("opacities must be a flat (count,) array")
        if self.colors.shape != (count, 3):
            raise ValueError("colors must be (count, 3)")
        if np.any(self.scales < 0):
            raise ValueError("scales must be non-negative")
        if np.any((self.opacities < 0) | (self.opacities > 1)):
            raise ValueError("opacities must lie in [0, 1]")
        if np.any((self.colors < 0) | (self.colors > 1)):
            raise ValueError("colors must lie in [0, 1]")

    @property
    def count(self) -> int:
        return self.positions.shape[0]

    @property
    def dim(self) -> int:
        return self.positions.shape[1]

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]


@dataclass(frozen=True)
class MaskBank:
    """Per-level keep/drop masks in [0, 1], one value per anchor per level.

    Stored values are clamped into [0, 1] on construction. ``threshold`` is
    the hard activation cut applied at deployment (strictly greater-than).
    """

    levels: tuple[np.ndarray, np.ndarray, np.ndarray]
    threshold: float = 0.01

    def __post_init__(self):
        if len(self.levels) != LAYER_COUNT:
            raise ValueError(f"mask bank requires {LAYER_COUNT} levels")
        clamped = tuple(_frozen(np.clip(np.asarray(m, dtype=np.float64), 0.0, 1.0)) for m in self.levels)
        object.__setattr__(self, "levels", clamped)
        counts = {m.shape for m in self.levels}
        if len(counts) != 1 or self.levels[0].ndim != 1:
            raise ValueError("all mask levels must be flat arrays of equal length")
        if not (0.0 < self.threshold < 1.0):
            raise ValueError("threshold must lie strictly inside (0, 1)")

    @property
    def count(self) -> int:
        return self.levels[0].shape[0]

    def level(self, level: int) -> np.ndarray:
        return self.levels[check_layer(level)]

    @staticmethod
    def all_ones(count: int, threshold: float = 0.01) -> "MaskBank":
        ones = np.ones(count)
        return MaskBank(levels=(ones, ones.copy(), ones.copy()), threshold=threshold)


@dataclass(frozen=True)
class LocalResiduals:
    """Per-anchor, per-timestep refinement residuals for the top layer."""

    d_position: np.ndarray  # (T, count, dim)
    d_scale: np.ndarray  # (T, count)
    d_opacity: np.ndarray  # (T, count)
    d_color: np.ndarray  # (T, count, 3)

    def __post_init__(self):
        object.__setattr__(self, "d_position", _frozen(self.d_position))
        object.__setattr__(self, "d_scale", _frozen(self.d_scale))
        object.__setattr__(self, "d_opacity", _frozen(self.d_opacity))
        object.__setattr__(self, "d_color", _frozen(self.d_color))


@dataclass(frozen=True)
class DeformationTable:
    """Tabulated displacement fields over discrete timesteps in [0, 1].

    ``displacements`` and ``feature_residuals`` form the global field
    (applied at level 1); ``local`` holds the level-2 residual records.
    Queries use nearest-timestep lookup, so the table is exact at its own
    timesteps and piecewise constant in between.
    """

    timesteps: np.ndarray  # (T,) strictly increasing within [0, 1]
    displacements: np.ndarray  # (T, count, dim)
    feature_residuals: np.ndarray  # (T, count, feature_dim)
    local: LocalResiduals

    def __post_init__(self):
        object.__setattr__(self, "timesteps", _frozen(self.timesteps))
        object.__setattr__(self, "displacements", _frozen(self.displacements))
        object.__setattr__(self, "feature_residuals", _frozen(self.feature_residuals))

        t = self.timesteps
        if t.ndim != 1 or t.shape[0] < 1:
            raise ValueError("at least one timestep is required")
        if np.any(t < 0) or np.any(t > 1):
            raise ValueError("timesteps must lie in [0, 1]")
        if t.shape[0] > 1 and np.any(np.diff(t) <= 0):
            raise ValueError("timesteps must be strictly increasing")
        steps = t.shape[0]
        if self.displacements.ndim != 3 or self.displacements.shape[0] != steps:
            raise ValueError("displacements must be (timesteps, count, dim)")
        count, dim = self.displacements.shape[1:]
        if self.feature_residuals.ndim != 3 or self.feature_residuals.shape[:2] != (steps, count):
            raise ValueError("feature_residuals must be (timesteps, count, feature_dim)")
        loc = self.local
        if loc.d_position.shape != (steps, count, dim):
            raise ValueError("local d_position must be (timesteps, count, dim)")
        if loc.d_scale.shape != (steps, count):
            raise ValueError("local d_scale must be (timesteps, count)")
        if loc.d_opacity.shape != (steps, count):
            raise ValueError("local d_opacity must be (timesteps, count)")
        if loc.d_color.shape != (steps, count, 3):
            raise ValueError("local d_color must be (timesteps, count, 3)")

    @property
    def count(self) -> int:
        return self.displacements.shape[1]

    @property
    def step_count(self) -> int:
        return self.timesteps.shape[0]

    def nearest_index(self, t: float) -> int:
        """Index of the stored timestep closest to ``t`` (ties go to the earlier one)."""
        return int(np.argmin(np.abs(self.timesteps - float(t))))

    @staticmethod
    def zeros(timesteps: np.ndarray, count: int, dim: int, feature_dim: int) -> "DeformationTable":
        steps = np.asarray(timesteps, dtype=np.float64).shape[0]
        return DeformationTable(
            timesteps=np.asarray(timesteps, dtype=np.float64),
            displacements=np.zeros((steps, count, dim)),
            feature_residuals=np.zeros((steps, count, feature_dim)),
            local=LocalResiduals(
                d_position=np.zeros((steps, count, dim)),
                d_scale=np.zeros((steps, count)),
                d_opacity=np.zeros((steps, count)),
                d_color=np.zeros((steps, count, 3)),
            ),
        )


def gate_attributes(anchors: AnchorSet, mask: np.ndarray) -> AnchorSet:
    """Multiply opacity and scale symmetrically by the per-anchor mask.

    A mask value of zero makes an anchor simultaneously transparent and
    volume-free; positions, features, offsets and colors pass through.
    """
    mask = np.asarray(mask, dtype=np.float64)
    if mask.shape != (anchors.count,):
        raise ValueError(f"mask length {mask.shape} does not match anchor count {anchors.count}")
    if np.any((mask < 0) | (mask > 1)):
        raise ValueError("mask values must lie in [0, 1]")
    return AnchorSet(
        positions=anchors.positions,
        features=anchors.features,
        scales=anchors.scales * mask,
        offsets=anchors.offsets,
        opacities=anchors.opacities * mask,
        colors=anchors.colors,
    )


def active_set(mask: np.ndarray, threshold: float) -> np.ndarray:
    """Indices of anchors whose mask strictly exceeds the threshold, ascending."""
    if not (0.0 < float(threshold) < 1.0):
        raise ValueError("threshold must lie strictly inside (0, 1)")
    return np.flatnonzero(np.asarray(mask, dtype=np.float64) > float(threshold))


def activation_rate(bank: MaskBank) -> float:
    """Mean per-anchor excess of the top-level mask over the base-level mask.

    Clamped to [0, 1]: early in training the base mask can exceed the top
    mask for some anchors, and downstream scheduling needs a valid
    interpolation coefficient at all times.
    """
    raw = float(np.mean(bank.level(2) - bank.level(0)))
    return min(1.0, max(0.0, raw))


def route_level(
    anchors: AnchorSet,
    deformations: Optional[DeformationTable],
    level: int,
    t: float,
) -> AnchorSet:
    """Produce the effective Gaussian set for a received layer prefix at time ``t``.

    Level 0 returns the canonical anchors untouched. Level 1 adds the global
    displacement and feature residual at the nearest stored timestep. Level 2
    further applies local residuals, clamping scale to stay non-negative and
    opacity/color to stay inside [0, 1].
    """
    level = check_layer(level)
    if level == 0:
        return anchors
    if deformations is None:
        raise MissingLayerError(f"level {level} requested but no deformation table is present")
    if deformations.count != anchors.count:
        raise ValueError("deformation table anchor count does not match the anchor set")

    k = deformations.nearest_index(t)
    positions = anchors.positions + deformations.displacements[k]
    features = anchors.features + deformations.feature_residuals[k]
    scales = anchors.scales
    opacities = anchors.opacities
    colors = anchors.colors

    if level == 2:
        loc = deformations.local
        positions = positions + loc.d_position[k]
        scales = np.maximum(scales + loc.d_scale[k], 0.0)
        opacities = np.clip(opacities + loc.d_opacity[k], 0.0, 1.0)
        colors = np.clip(colors + loc.d_color[k], 0.0, 1.0)

    return AnchorSet(
        positions=positions,
        features=features,
        scales=scales,
        offsets=anchors.offsets,
        opacities=opacities,
        colors=colors,
    )
