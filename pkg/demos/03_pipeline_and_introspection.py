#!/usr/bin/env python3
"""
From a synthetic sky archive to a trained forecaster, and a look inside
=======================================================================

  1. generate a small archive of paired-exposure fisheye frames and GHI,
  2. assemble 10-minute-ahead samples and split them by distinct days,
  3. train the conv + metadata network with Adam (a few epochs only),
  4. score it against smart persistence,
  5. look at first-layer activation maps, dead filters and one
     activation-maximization image.

This is the small-scale version of the acceptance experiment (which uses
30 days at 64x64 px); it runs in a few minutes on a laptop CPU.

Run:  python demos/03_pipeline_and_introspection.py [out_dir]
"""

import sys
import tempfile
from pathlib import Path

import numpy as np

from skycast.dataset import SplitSpec, build_sample_set, ingest_directory, load_frames, make_split
from skycast.evaluation import evaluate_model
from skycast.introspection import (
    activation_maps,
    dead_filter_report,
    filter_visualization,
    save_activation_grid,
    save_filter_image,
)
from skycast.model import NetworkConfig, build_network
from skycast.synth import GenConfig, synth_generate
from skycast.training import TrainConfig, train_model

SEED = 0
out = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp(prefix="skycast_demo_"))
size = 33

# --- 1: archive -----------------------------------------------------------
manifest = synth_generate(GenConfig(days=8, image_size=size), SEED, out / "data")
print("regimes:", [d["regime"] for d in manifest["days"]])
index = ingest_directory(out / "data")

# --- 2: samples and split -------------------------------------------------------
samples = build_sample_set(index, 10, size=size, frames=load_frames(index, size))
train_idx, val_idx = make_split(samples, SplitSpec("distinct_days", 0.8, seed=SEED))
train_set, val_set = samples.subset(train_idx), samples.subset(val_idx)
print(f"{len(train_set)} training / {len(val_set)} validation samples, "
      f"validation days {sorted(map(str, set(val_set.day_ids)))}")

# --- 3: training ------------------------------------------------------------
net = build_network(NetworkConfig(horizon_min=10, input_size=size, filters_per_conv=8, init_seed=SEED))
net, hist = train_model(net, train_set, val_set, TrainConfig(max_epochs=8, early_stop_patience=4))
for epoch, (tr, va) in enumerate(zip(hist.train_mse, hist.val_mse)):
    print(f"epoch {epoch}: train MSE {tr:.5f}, val MSE {va:.5f}")

# --- 4: skill ------------------------------------------------------------------
rep = evaluate_model(net, val_set, "distinct_days", SEED)
print(f"\nforecast skill vs smart persistence: {rep.forecast_skill:.3f} "
      f"(MSE {rep.mse_model:.0f} vs {rep.mse_persistence:.0f} W2/m4, n={rep.n_samples})")
print("eight epochs on eight days is far below what the skill needs; expect it to be small or negative")

# --- 5: introspection ------------------------------------------------------
probe = val_set.images(np.linspace(0, len(val_set) - 1, 16).astype(int))
grid = activation_maps(net, probe, 0)
print(f"\nlayer 0 maps: {grid.maps.shape}, saved to {save_activation_grid(grid, out)}")
dead = dead_filter_report(net, probe, 0)
print(f"dead filters in layer 0: {int(dead.dead.sum())} of {len(dead.dead)}")
# Gradient ascent starts from mid-grey noise; a filter that is off for every
# pixel of that image has zero gradient and comes back flagged as degenerate.
k = int(np.argmax(dead.variance))
fi = filter_visualization(net, 0, k, steps=40, seed=SEED)
print(f"filter {k} (degenerate={fi.degenerate}) objective {fi.initial_loss:.4f} -> {fi.final_loss:.4f}; image {save_filter_image(fi, out)}")
