"""
From a continuous recording to whitened epochs
==============================================

Synthetic epochs are laid end to end in a recording, then filtered,
downsampled, cut, baseline corrected, whitened and averaged again.
"""

# %%
import numpy as np

from naln import preproc, synthgen

cfg = synthgen.SynthConfig(n_classes=8, channels=6, samples=250, sample_rate=1000.0,
                           n_train_reps=4, n_test_reps=0, noise_std=0.5, seed=3)
epochs = synthgen.generate(cfg).epochs
rec = synthgen.to_recording(epochs, pre_samples=300, gap_samples=200)
print(f"recording {rec.samples.shape} at {rec.sample_rate_hz:g} Hz with {len(rec.onsets)} events")

# %%
# Zero-phase band-pass, then an anti-aliased decimation to 250 Hz.
filtered = preproc.bandpass_filter(rec, 0.5, 100.0)
down = preproc.downsample(filtered, 250.0)
print("after decimation:", down.samples.shape, down.sample_rate_hz, "Hz")

# %%
# Epochs of 0..250 ms with a 200 ms pre-stimulus baseline.
ep = preproc.run_pipeline(rec, band=(0.5, 100.0), target_hz=250.0, window_ms=(0, 250), baseline_ms=200)
print("epochs:", ep.epochs.shape, "repetitions per label:", np.bincount(ep.labels).tolist())

# %%
# Whitening pools the channel covariance over epochs and shrinks it toward
# its diagonal; the result has close to identity covariance.
cov = preproc.channel_covariance(ep.epochs)
print("channel variance spread before:", np.round(np.diag(cov).max() / np.diag(cov).min(), 2))
white = preproc.whiten(ep, shrinkage=0.0)
print("covariance after, off identity by",
      f"{np.linalg.norm(preproc.channel_covariance(white.epochs) - np.eye(6)):.2e}")

# %%
avg = preproc.average_repetitions(white)
print("averaged:", avg.epochs.shape, "labels", avg.labels.tolist())
