#!/usr/bin/env python3
"""Sweep the base-layer rate weight and report how the base layer shrinks.

Trains the same mixed scene under each rate weight, encodes the result,
and tabulates active-anchor counts, base-chunk bytes, and base-layer PSNR.
"""

from pd4g import bitstream, losses, rollout, toyscene

LAMBDAS = (0.00025, 0.01, 0.04)
SEED = 201

if __name__ == "__main__":
    scene = toyscene.make_scene("mixed", 64, 4, seed=SEED, image_size=(32, 32))
    schedule = rollout.RolloutConfig(sample_period=25, warmup_steps=400)
    print(f"{'rate weight':>12} {'active@0':>9} {'base bytes':>11} {'PSNR@0 (dB)':>12}")
    for lam in LAMBDAS:
        weights = losses.LossWeights(lambda_layer=(lam, 0.01, 0.00025))
        bank, report = toyscene.train_masks(
            scene, weights, schedule, steps=6000, seed=11,
            learning_rate=0.8, progressive_start=400,
        )
        blob = bitstream.encode(scene.anchors, bank, scene.deformations)
        manifest = bitstream.manifest(blob)
        print(
            f"{lam:>12} {report.active_per_level[0]:>9} "
            f"{manifest.compressed_sizes[0]:>11} {report.psnr_per_level[0]:>12.2f}"
        )
