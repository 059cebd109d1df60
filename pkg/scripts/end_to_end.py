#!/usr/bin/env python3
"""End-to-end demo: generate a scene, train masks, encode, and stream it.

Runs the full pipeline on the bundled motion-dense config, then simulates
delivery over a steady 2 Mbps link and over a collapse-and-recover trace.
"""

import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent

from pd4g.cli import main  # noqa: E402


def run(argv):
    print(f"$ pd4g {' '.join(argv)}")
    code = main(argv)
    if code != 0:
        sys.exit(code)
    print()


if __name__ == "__main__":
    cfg = str(ROOT / "configs" / "motion_dense.cfg")
    out = ROOT / "out" / "motion_dense"
    run(["train", "--config", cfg, "--out", str(out)])
    run(["encode", "--config", cfg, "--out", str(out)])
    run(["inspect", str(out / "asset.pd4g")])
    run(["simulate", str(out / "asset.pd4g"), str(ROOT / "traces" / "constant_2mbps.csv"), "--out", str(out / "sim_constant")])
    run(["simulate", str(out / "asset.pd4g"), str(ROOT / "traces" / "collapse_and_recover.csv"), "--out", str(out / "sim_collapse")])
    run(["latency-table", "--sizes", str(ROOT / "data" / "reference_model_sizes.csv")])
