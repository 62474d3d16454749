"""
Where in time, frequency and space does a trained encoder look?
===============================================================

Grad-CAM maps of a trained encoder are summarised three ways: a histogram
of when the strongest attributions occur, the spectral make-up of the maps,
and a per-electrode share.
"""

# %%
import numpy as np

from naln import attribution, encoders, synthgen, trainer

EPOCHS = 30
cfg = synthgen.SynthConfig(seed=0)
data = synthgen.generate(cfg)
train, test = synthgen.holdout_split(data.epochs, cfg.n_test_reps)
ecfg = encoders.EncoderConfig("nice_conv", cfg.channels, cfg.samples, cfg.embed_dim,
                              dict(temporal_kernel=25, temporal_filters=16, spatial_filters=16, pool_width=2))
params, _ = trainer.fit(ecfg, train, data.aligned, trainer.TrainConfig(max_epochs=EPOCHS, patience=EPOCHS))

# %%
# One map per held-out epoch, computed against its own image embedding.
targets = data.aligned.vectors[synthgen.rows_for(data.aligned, test.labels)]
maps = attribution.gradcam_batch(params, test.epochs, targets, test.labels)
print(f"{len(maps)} maps, {sum(m.degenerate for m in maps)} degenerate")

# %%
# The signal was placed in the first 40% of each epoch; the histogram of
# top-percentile attributions should lean the same way.
counts = attribution.threshold_histogram(maps, 99.0)
cut = int(synthgen.EARLY_FRACTION * len(counts))
print("counts per time index:", counts.tolist())
print(f"mass in the first {cut} of {len(counts)} samples: {attribution.early_mass(counts):.3f}")

# %%
energies = [attribution.map_band_energies(m, cfg.sample_rate) for m in maps if not m.degenerate]
for band in attribution.BandSpec().names:
    print(f"{band:<6} {np.mean([e[band] for e in energies]):.3f}")

# %%
# The spatial filter is collapsed before the projection layer, so every
# electrode gets the same time course and an equal share.
shares = attribution.electrode_aggregate([m for m in maps if not m.degenerate], test.channel_names)
print({k: round(v, 4) for k, v in list(shares.items())[:4]}, "...")
