"""Desk-scale synthetic 2D scenes: splat renderer, scene generator, mask training.

Stands in for a CUDA rasterizer and learned deformation fields so the whole
train -> encode -> stream pipeline can be exercised end to end in seconds.
Anchors live in the unit square and splat as isotropic 2D blobs; deformation
is tabulated per timestep; ground truth is rendered from the generator's own
full configuration, so a perfect level-2 reconstruction is always attainable.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from . import entropy, losses, rollout
from .asset import (
    AnchorSet,
    DeformationTable,
    LocalResiduals,
    MaskBank,
    activation_rate,
    check_layer,
    gate_attributes,
    route_level,
)
from .seeds import counter_uniform, derive_seed, rng_for

PSNR_CAP_DB = 99.0
_SCALE_FLOOR = 1e-9  # blobs below this width contribute nothing

SCENE_KINDS = ("static", "global-motion", "mixed", "motion-dense")

DEFAULT_QUANT_STEPS = {
    "position": 1.0 / 16.0,
    "feature": 1.0 / 16.0,
    "scale": 1.0 / 16.0,
    "offset": 1.0 / 16.0,
    "mask": 1.0 / 256.0,
    "deform": 1.0 / 16.0,
}


class TrainingDivergedError(RuntimeError):
    """Training hit a non-finite loss; carries the offending step index."""

    def __init__(self, step: int, message: str | None = None):
        super().__init__(message or f"training loss became non-finite at step {step}")
        self.step = step


@dataclass(frozen=True)
class ToyScene:
    """A generated scene: anchors, their deformation tables, and ground truth.

    ``deformations`` may be None for a bare static asset (e.g. a decoded
    base-layer prefix); such a scene renders at level 0 only.
    """

    anchors: AnchorSet
    deformations: DeformationTable | None
    image_size: tuple[int, int]  # (width, height)
    ground_truth: np.ndarray  # (T, height, width, 3) in [0, 1]

    def __post_init__(self):
        gt = np.array(self.ground_truth, dtype=np.float64, copy=True)
        gt.flags.writeable = False
        object.__setattr__(self, "ground_truth", gt)
        w, h = self.image_size
        t = self.deformations.step_count if self.deformations is not None else gt.shape[0]
        if gt.shape != (t, h, w, 3):
            raise ValueError(f"ground truth shape {gt.shape} does not match (T={t}, H={h}, W={w}, 3)")
        if np.any((gt < 0) | (gt > 1)):
            raise ValueError("ground truth pixel values must lie in [0, 1]")


@dataclass(frozen=True)
class TrainReport:
    """Summary of one mask-training run; JSON/CSV export is deterministic."""

    steps: int
    psnr_per_level: tuple[float, float, float]
    active_per_level: tuple[int, int, int]
    final_activation_ema: float
    final_distribution: tuple[float, float, float]
    activation_trajectory: tuple[tuple[int, float, float], ...]  # (step, sample, ema)
    loss_curve: tuple[dict, ...]

    def to_json(self) -> str:
        payload = {
            "steps": self.steps,
            "psnr_per_level_db": list(self.psnr_per_level),
            "active_per_level": list(self.active_per_level),
            "final_activation_ema": self.final_activation_ema,
            "final_distribution": list(self.final_distribution),
            "activation_trajectory": [
                {"step": s, "sample": r, "ema": e} for s, r, e in self.activation_trajectory
            ],
        }
        return json.dumps(payload, indent=2)

    def loss_curve_csv(self) -> str:
        lines = ["step,level,timestep,render,rate,consistency,total"]
        for row in self.loss_curve:
            lines.append(
                f"{row['step']},{row['level']},{row['timestep']},"
                f"{row['render']!r},{row['rate']!r},{row['consistency']!r},{row['total']!r}"
            )
        return "\n".join(lines) + "\n"


def _pixel_grid(width: int, height: int) -> np.ndarray:
    """Pixel-center coordinates in scene units, row-major, shape (H*W, 2)."""
    xs = (np.arange(width) + 0.5) / width
    ys = (np.arange(height) + 0.5) / height
    gx, gy = np.meshgrid(xs, ys)
    return np.stack([gx.ravel(), gy.ravel()], axis=1)


def _blob_weights(
    positions: np.ndarray,
    scales: np.ndarray,
    opacities: np.ndarray,
    pixels: np.ndarray,
    d2: np.ndarray | None = None,
) -> np.ndarray:
    """Per-anchor, per-pixel splat weights alpha * exp(-d^2 / (2 s^2)), (V, P)."""
    if d2 is None:
        d2 = _pairwise_d2(positions, pixels)
    s2 = np.maximum(scales, _SCALE_FLOOR) ** 2
    w = opacities[:, None] * np.exp(-d2 / (2.0 * s2[:, None]))
    w[scales <= _SCALE_FLOOR] = 0.0
    return w


def _pairwise_d2(positions: np.ndarray, pixels: np.ndarray) -> np.ndarray:
    diff = positions[:, None, :] - pixels[None, :, :]
    return np.einsum("vpk,vpk->vp", diff, diff)


def render(scene: ToyScene, bank: MaskBank, level: int, t: float) -> np.ndarray:
    """Render the scene at one level and time as an (H, W, 3) image in [0, 1].

    Anchors are gated by the level's mask, routed through the deformation
    prefix, then splatted additively and clamped. Pure and deterministic.
    """
    level = check_layer(level)
    width, height = scene.image_size
    gated = gate_attributes(scene.anchors, bank.level(level))
    routed = route_level(gated, scene.deformations, level, t)
    pixels = _pixel_grid(width, height)
    weights = _blob_weights(routed.positions, routed.scales, routed.opacities, pixels)
    raw = weights.T @ routed.colors
    return np.clip(raw, 0.0, 1.0).reshape(height, width, 3)


def l1_distortion(rendered: np.ndarray, ground_truth: np.ndarray) -> float:
    """Mean absolute pixel difference between two images."""
    rendered = np.asarray(rendered, dtype=np.float64)
    ground_truth = np.asarray(ground_truth, dtype=np.float64)
    if rendered.shape != ground_truth.shape:
        raise ValueError(f"image shapes differ: {rendered.shape} vs {ground_truth.shape}")
    return float(np.mean(np.abs(rendered - ground_truth)))


def psnr(rendered: np.ndarray, ground_truth: np.ndarray) -> float:
    """PSNR in dB against a peak value of 1.0, capped at the 99 dB sentinel."""
    rendered = np.asarray(rendered, dtype=np.float64)
    ground_truth = np.asarray(ground_truth, dtype=np.float64)
    if rendered.shape != ground_truth.shape:
        raise ValueError(f"image shapes differ: {rendered.shape} vs {ground_truth.shape}")
    mse = float(np.mean((rendered - ground_truth) ** 2))
    if mse <= 0.0:
        return PSNR_CAP_DB
    return min(10.0 * math.log10(1.0 / mse), PSNR_CAP_DB)


def make_scene(
    kind: str,
    anchor_count: int,
    timesteps: int,
    seed: int,
    *,
    image_size: tuple[int, int] = (64, 64),
    feature_dim: int = 4,
) -> ToyScene:
    """Generate a deterministic synthetic scene of the requested motion profile.

    ``static`` has all-zero deformation tables; ``global-motion`` adds one
    shared rigid drift; ``mixed`` additionally moves a quarter of the anchors
    locally (gently) and dims another quarter so keep/drop decisions have
    genuine middle ground; ``motion-dense`` moves half the anchors with
    large local residuals on top of the drift. Scenes of different kinds
    built from the same seed share their base anchor population.
    """
    if kind not in SCENE_KINDS:
        raise ValueError(f"unknown scene kind {kind!r}; expected one of {SCENE_KINDS}")
    if not (4 <= anchor_count <= 1024):
        raise ValueError("anchor_count must lie in [4, 1024]")
    if not (1 <= timesteps <= 32):
        raise ValueError("timesteps must lie in [1, 32]")
    width, height = image_size
    if width < 8 or height < 8:
        raise ValueError("image_size must be at least 8x8")

    rng = rng_for(seed, "scene")
    count = anchor_count
    positions = rng.uniform(0.14, 0.86, size=(count, 2))
    features = rng.normal(0.0, 0.03, size=(count, feature_dim))
    scales = rng.uniform(0.036, 0.050, size=count)
    offsets = rng.uniform(-0.02, 0.02, size=(count, 2))
    opacities = rng.uniform(0.60, 0.95, size=count)
    colors = rng.uniform(0.40, 1.00, size=(count, 3))

    if timesteps == 1:
        times = np.array([0.0])
    else:
        times = np.linspace(0.0, 1.0, timesteps)
    ramp = times[:, None, None]  # motion grows linearly from rest at t=0

    displacements = np.zeros((timesteps, count, 2))
    feature_residuals = np.zeros((timesteps, count, feature_dim))
    d_position = np.zeros((timesteps, count, 2))
    d_scale = np.zeros((timesteps, count))
    d_opacity = np.zeros((timesteps, count))
    d_color = np.zeros((timesteps, count, 3))

    if kind != "static":
        theta = rng.uniform(0.0, 2.0 * math.pi)
        drift = 0.05 * np.array([math.cos(theta), math.sin(theta)])
        displacements[:] = ramp * drift[None, None, :]
        feature_residuals[:] = ramp * rng.normal(0.0, 0.015, size=(1, count, feature_dim))

    if kind in ("mixed", "motion-dense"):
        if kind == "motion-dense":
            mover_count = count // 2
            amp_lo, amp_hi = 0.22, 0.32
        else:
            mover_count = count // 4
            amp_lo, amp_hi = 0.05, 0.10
        movers = rng.choice(count, size=mover_count, replace=False)
        if kind == "motion-dense":
            # locally refined detail is chunky on purpose: a misplaced mover
            # must cost the base layer visibly more than its bit budget
            scales[movers] *= rng.uniform(1.15, 1.40, size=mover_count)
            opacities[movers] = np.clip(opacities[movers] * rng.uniform(1.05, 1.20, size=mover_count), 0.0, 1.0)
        if kind == "motion-dense":
            # outward trajectories (plus jitter) carry movers clear of the
            # cluttered scene core instead of onto other anchors' content
            outward = positions[movers] - 0.5
            base_angles = np.arctan2(outward[:, 1], outward[:, 0])
            angles = base_angles + rng.uniform(-0.5, 0.5, size=mover_count)
        else:
            angles = rng.uniform(0.0, 2.0 * math.pi, size=mover_count)
        amps = rng.uniform(amp_lo, amp_hi, size=mover_count)
        dirs = amps[:, None] * np.stack([np.cos(angles), np.sin(angles)], axis=1)
        # movers sit off their canonical spot at every timestep, so the base
        # layer genuinely cannot explain them
        onset = (0.5 + 0.5 * np.sqrt(times))[:, None]
        d_position[:, movers, :] = onset[:, :, None] * dirs[None, :, :]
        d_scale[:, movers] = onset * rng.uniform(-0.006, 0.010, size=mover_count)[None, :]
        d_opacity[:, movers] = onset * rng.uniform(-0.10, 0.10, size=mover_count)[None, :]
        d_color[:, movers, :] = onset[:, :, None] * rng.uniform(-0.08, 0.08, size=(1, mover_count, 3))

    if kind == "mixed":
        dims = rng.choice(count, size=count // 4, replace=False)
        opacities[dims] *= rng.uniform(0.05, 0.45, size=dims.size)
        scales[dims] *= rng.uniform(0.55, 0.90, size=dims.size)

    anchors = AnchorSet(
        positions=positions,
        features=features,
        scales=scales,
        offsets=offsets,
        opacities=opacities,
        colors=colors,
    )
    deformations = DeformationTable(
        timesteps=times,
        displacements=displacements,
        feature_residuals=feature_residuals,
        local=LocalResiduals(
            d_position=d_position, d_scale=d_scale, d_opacity=d_opacity, d_color=d_color
        ),
    )

    pixels = _pixel_grid(width, height)
    full_mask = np.ones(count)
    gt = np.empty((timesteps, height, width, 3))
    for k, t in enumerate(times):
        routed = route_level(gate_attributes(anchors, full_mask), deformations, 2, float(t))
        weights = _blob_weights(routed.positions, routed.scales, routed.opacities, pixels)
        gt[k] = np.clip(weights.T @ routed.colors, 0.0, 1.0).reshape(height, width, 3)

    return ToyScene(anchors=anchors, deformations=deformations, image_size=(width, height), ground_truth=gt)


class _LevelSplat:
    """Cached per-(level, timestep) splat state for fast mask perturbation."""

    def __init__(self, scene: ToyScene, level: int, k: int, pixels: np.ndarray):
        anchors = scene.anchors
        table = scene.deformations
        mu = anchors.positions
        self.alpha0 = anchors.opacities.copy()
        self.scale0 = anchors.scales.copy()
        self.colors = anchors.colors
        self.d_opacity = None
        self.d_scale = None
        if level >= 1:
            mu = mu + table.displacements[k]
        if level == 2:
            loc = table.local
            mu = mu + loc.d_position[k]
            self.d_scale = loc.d_scale[k]
            self.d_opacity = loc.d_opacity[k]
            self.colors = np.clip(anchors.colors + loc.d_color[k], 0.0, 1.0)
        self.d2 = _pairwise_d2(mu, pixels)

    def weights(self, mask: np.ndarray) -> np.ndarray:
        """Splat weights for a mask vector, including the level-2 residual clamps."""
        alpha = self.alpha0 * mask
        scale = self.scale0 * mask
        if self.d_opacity is not None:
            alpha = np.clip(alpha + self.d_opacity, 0.0, 1.0)
            scale = np.maximum(scale + self.d_scale, 0.0)
        s2 = np.maximum(scale, _SCALE_FLOOR) ** 2
        w = alpha[:, None] * np.exp(-self.d2 / (2.0 * s2[:, None]))
        w[scale <= _SCALE_FLOOR] = 0.0
        return w


def _render_gradient(
    splat: _LevelSplat,
    mask: np.ndarray,
    gt_flat: np.ndarray,
    h: float = 1e-4,
) -> tuple[float, np.ndarray]:
    """Render loss and its central-finite-difference gradient w.r.t. the mask.

    The splat is additive, so perturbing one mask entry changes only that
    anchor's weight row; all per-anchor perturbed images are evaluated in one
    vectorized pass per direction.
    """
    w0 = splat.weights(mask)
    raw0 = w0.T @ splat.colors  # (P, 3)
    base_loss = float(np.mean(np.abs(np.clip(raw0, 0.0, 1.0) - gt_flat)))

    grad = np.empty_like(mask)
    pert_losses = []
    for signed_h in (h, -h):
        w_pert = splat.weights(mask + signed_h)
        delta = (w_pert - w0)[:, :, None] * splat.colors[:, None, :]  # (V, P, 3)
        images = np.clip(raw0[None, :, :] + delta, 0.0, 1.0)
        pert_losses.append(np.mean(np.abs(images - gt_flat[None, :, :]), axis=(1, 2)))
    grad[:] = (pert_losses[0] - pert_losses[1]) / (2.0 * h)
    return base_loss, grad


def train_masks(
    scene: ToyScene,
    weights: losses.LossWeights,
    rollout_config: rollout.RolloutConfig,
    steps: int,
    seed: int,
    *,
    learning_rate: float = 0.05,
    progressive_start: int = 1000,
    threshold: float = 0.01,
    quant_steps: dict[str, float] | None = None,
) -> tuple[MaskBank, TrainReport]:
    """Train the per-level masks end to end and report convergence statistics.

    Each step samples a forward level from the current capacity-weighted
    distribution and a random timestep, estimates the render-loss mask
    gradient by central finite differences through the splat, and adds the
    closed-form rate and consistency gradients once ``progressive_start`` is
    reached. Masks follow projected gradient descent onto [0, 1]. Every
    ``sample_period`` steps the activation rate is re-measured and folded
    into the scheduler's moving average.
    """
    if steps < 0:
        raise ValueError("steps must be non-negative")
    if scene.deformations is None:
        raise ValueError("training requires a scene with deformation tables")
    quant_steps = dict(DEFAULT_QUANT_STEPS if quant_steps is None else quant_steps)
    count = scene.anchors.count
    width, height = scene.image_size
    pixels = _pixel_grid(width, height)
    gt_flat = scene.ground_truth.reshape(scene.deformations.step_count, -1, 3)

    levels = [np.ones(count), np.ones(count), np.ones(count)]
    state = rollout.RolloutState(activation_ema=0.0, step=0)
    rollout_seed = derive_seed(seed, "rollout")
    timestep_seed = derive_seed(seed, "timestep")

    splat_cache: dict[tuple[int, int], _LevelSplat] = {}
    trajectory: list[tuple[int, float, float]] = []
    curve: list[dict] = []
    positions = scene.anchors.positions

    for step in range(steps):
        state.step = step
        if step % rollout_config.sample_period == 0:
            bank_now = MaskBank(levels=(levels[0], levels[1], levels[2]), threshold=threshold)
            sample = activation_rate(bank_now)
            state = rollout.update_ema(state, sample, rollout_config)
            trajectory.append((step, sample, state.activation_ema))

        pi = rollout.current_distribution(state, rollout_config)
        level = rollout.sample_level(pi, rollout_seed, step)
        k = int(counter_uniform(timestep_seed, step) * scene.deformations.step_count)

        key = (level, k)
        if key not in splat_cache:
            splat_cache[key] = _LevelSplat(scene, level, k, pixels)
        splat = splat_cache[key]

        mask = levels[level]
        render_loss, grad = _render_gradient(splat, mask, gt_flat[k])
        rate = 0.0
        consistency = 0.0
        if step >= progressive_start:
            active = mask > threshold
            if int(active.sum()) >= 2:
                priors = entropy.family_priors(scene.anchors, active, quant_steps)
                bits = entropy.per_anchor_bits(scene.anchors, priors)
                rate = float(np.mean(mask * bits))
                grad = grad + weights.lambda_layer[level] * bits / count
            pairs = losses.sample_pairs(
                count, weights.pair_factor * count, derive_seed(seed, "pairs", step)
            )
            consistency, consistency_grad = losses.consistency_loss(mask, positions, pairs, weights)
            grad = grad + weights.lambda_temporal * consistency_grad

        total = render_loss + weights.lambda_layer[level] * rate + weights.lambda_temporal * consistency
        if not np.isfinite(total) or not np.all(np.isfinite(grad)):
            raise TrainingDivergedError(step)

        levels[level] = np.clip(mask - learning_rate * grad, 0.0, 1.0)
        curve.append(
            {
                "step": step,
                "level": level,
                "timestep": k,
                "render": render_loss,
                "rate": rate,
                "consistency": consistency,
                "total": total,
            }
        )

    bank = MaskBank(levels=(levels[0], levels[1], levels[2]), threshold=threshold)
    state.step = steps
    final_pi = rollout.current_distribution(state, rollout_config)

    psnr_levels = []
    active_levels = []
    for level in range(3):
        values = [
            psnr(render(scene, bank, level, float(t)), scene.ground_truth[i])
            for i, t in enumerate(scene.deformations.timesteps)
        ]
        psnr_levels.append(float(np.mean(values)))
        active_levels.append(int(np.flatnonzero(bank.level(level) > threshold).size))

    report = TrainReport(
        steps=steps,
        psnr_per_level=tuple(psnr_levels),
        active_per_level=tuple(active_levels),
        final_activation_ema=state.activation_ema,
        final_distribution=tuple(float(p) for p in final_pi),
        activation_trajectory=tuple(trajectory),
        loss_curve=tuple(curve),
    )
    return bank, report
