"""Continuous recordings to model-ready epochs.

Canonical order: :func:`whiten` the continuous data, :func:`bandpass_filter`,
:func:`downsample`, :func:`epoch_extract`, then :func:`baseline_correct`
using a second extraction over the pre-stimulus window. :func:`run_pipeline`
applies that order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import signal

from .errors import NumericalError, ParameterError, RangeError

EIGEN_FLOOR = 1e-10


@dataclass(frozen=True)
class Recording:
    samples: np.ndarray  # (C, T_total)
    sample_rate_hz: float
    onsets: np.ndarray  # (n_events,) sample indices
    labels: np.ndarray  # (n_events,)
    channel_names: tuple = ()

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 2:
            raise ParameterError(f"recording samples must be (C, T), got {samples.shape}")
        if not self.sample_rate_hz > 0:
            raise ParameterError("sample_rate_hz must be positive")
        onsets = np.asarray(self.onsets, dtype=np.int64).reshape(-1)
        labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if onsets.shape != labels.shape:
            raise ParameterError("one label per event onset is required")
        if onsets.size and (onsets.min() < 0 or onsets.max() >= samples.shape[1]):
            raise ParameterError("event onsets must lie inside the recording")
        names = tuple(self.channel_names) or tuple(f"ch{i}" for i in range(samples.shape[0]))
        if len(names) != samples.shape[0]:
            raise ParameterError("channel_names length does not match channel count")
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "onsets", onsets)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "channel_names", names)
        object.__setattr__(self, "sample_rate_hz", float(self.sample_rate_hz))

    @property
    def n_channels(self):
        return self.samples.shape[0]

    @property
    def events(self):
        return list(zip(self.onsets.tolist(), self.labels.tolist()))


@dataclass(frozen=True)
class EpochSet:
    epochs: np.ndarray  # (n, C, T)
    sample_rate_hz: float
    labels: np.ndarray
    repetition_index: np.ndarray = None
    channel_names: tuple = ()
    extra: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        epochs = np.asarray(self.epochs, dtype=np.float64)
        if epochs.ndim != 3:
            raise ParameterError(f"epochs must be (n, C, T), got {epochs.shape}")
        labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if labels.size != epochs.shape[0]:
            raise ParameterError("labels length must equal the number of epochs")
        reps = self.repetition_index
        reps = np.zeros(labels.size, dtype=np.int64) if reps is None else np.asarray(reps, dtype=np.int64).reshape(-1)
        if reps.size != labels.size:
            raise ParameterError("repetition_index length must equal the number of epochs")
        names = tuple(self.channel_names) or tuple(f"ch{i}" for i in range(epochs.shape[1]))
        object.__setattr__(self, "epochs", epochs)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "repetition_index", reps)
        object.__setattr__(self, "channel_names", names)
        object.__setattr__(self, "sample_rate_hz", float(self.sample_rate_hz))

    def __len__(self):
        return self.epochs.shape[0]

    @property
    def n_channels(self):
        return self.epochs.shape[1]

    @property
    def n_samples(self):
        return self.epochs.shape[2]

    def subset(self, index):
        index = np.asarray(index)
        return replace(self, epochs=self.epochs[index], labels=self.labels[index],
                       repetition_index=self.repetition_index[index])


# ----------------------------------------------------------------------
# filtering
# ----------------------------------------------------------------------
def _transition_low(lo):
    return min(max(0.25 * lo, 2.0), lo)


def _transition_high(hi, nyq):
    return min(max(0.25 * hi, 2.0), nyq - hi)


def _numtaps(transition_hz, fs):
    # Hamming window: N ~ 3.3 / (transition width as a fraction of fs)
    n = int(math.ceil(3.3 * fs / transition_hz))
    return n + 1 if n % 2 == 0 else n


def design_bandpass(lo_hz, hi_hz, fs):
    """Hamming windowed-sinc taps; ``lo_hz == 0`` gives a pure low-pass."""
    nyq = fs / 2.0
    tw_hi = _transition_high(hi_hz, nyq)
    if lo_hz > 0:
        tw_lo = _transition_low(lo_hz)
        ntaps = _numtaps(min(tw_lo, tw_hi), fs)
        cut = [lo_hz - tw_lo / 2.0, hi_hz + tw_hi / 2.0]
        return signal.firwin(ntaps, cut, pass_zero=False, window="hamming", fs=fs)
    ntaps = _numtaps(tw_hi, fs)
    return signal.firwin(ntaps, hi_hz + tw_hi / 2.0, window="hamming", fs=fs)


def design_lowpass(cutoff_hz, transition_hz, fs):
    return signal.firwin(_numtaps(transition_hz, fs), cutoff_hz, window="hamming", fs=fs)


def zero_phase_fir(x, taps):
    """Forward-backward FIR along the last axis with reflect padding of one filter length."""
    pad = len(taps)
    widths = [(0, 0)] * (x.ndim - 1) + [(pad, pad)]
    padded = np.pad(x, widths, mode="reflect")
    h = taps[None, :] if x.ndim == 2 else taps
    y = signal.oaconvolve(padded, h, mode="same", axes=-1)
    y = signal.oaconvolve(y[..., ::-1], h, mode="same", axes=-1)[..., ::-1]
    return np.ascontiguousarray(y[..., pad:-pad])


def bandpass_filter(rec, lo_hz, hi_hz):
    """Zero-phase band-pass of every channel; ``lo_hz > 0`` removes DC."""
    fs = rec.sample_rate_hz
    if not (0 <= lo_hz < hi_hz < fs / 2.0):
        raise ParameterError(f"need 0 <= lo < hi < fs/2, got lo={lo_hz}, hi={hi_hz}, fs={fs}")
    taps = design_bandpass(lo_hz, hi_hz, fs)
    return replace(rec, samples=zero_phase_fir(rec.samples, taps))


def downsample(rec, target_hz):
    """Anti-alias at 0.4 * ``target_hz``, then keep every ``factor``-th sample."""
    if not target_hz > 0:
        raise ParameterError("target_hz must be positive")
    ratio = rec.sample_rate_hz / target_hz
    factor = int(round(ratio))
    if factor < 1 or abs(ratio - factor) > 1e-9 * max(1.0, ratio):
        raise ParameterError(f"{rec.sample_rate_hz} Hz -> {target_hz} Hz is not an integer factor")
    if factor == 1:
        return rec
    taps = design_lowpass(0.4 * target_hz, 0.1 * target_hz, rec.sample_rate_hz)
    smoothed = zero_phase_fir(rec.samples, taps)
    n_out = rec.samples.shape[1] // factor
    return replace(rec, samples=np.ascontiguousarray(smoothed[:, : n_out * factor : factor]),
                   sample_rate_hz=float(target_hz), onsets=rec.onsets // factor)


# ----------------------------------------------------------------------
# epoching
# ----------------------------------------------------------------------
def n_window_samples(start_ms, end_ms, fs):
    return int(round((end_ms - start_ms) / 1000.0 * fs))


def epoch_extract(rec, start_ms, end_ms):
    """Cut one ``(C, T)`` window per event, ``T = round((end - start) / 1000 * fs)``."""
    if not start_ms < end_ms:
        raise ParameterError(f"empty window [{start_ms}, {end_ms}) ms")
    fs = rec.sample_rate_hz
    n = n_window_samples(start_ms, end_ms, fs)
    if n < 1:
        raise ParameterError(f"window [{start_ms}, {end_ms}) ms holds no samples at {fs} Hz")
    offset = int(round(start_ms / 1000.0 * fs))
    starts = rec.onsets + offset
    total = rec.samples.shape[1]
    bad = np.flatnonzero((starts < 0) | (starts + n > total))
    if bad.size:
        raise RangeError(f"window [{start_ms}, {end_ms}) ms exceeds the recording for events {bad.tolist()}",
                         offenders=bad.tolist())
    idx = starts[:, None] + np.arange(n)[None, :]
    epochs = np.transpose(rec.samples[:, idx], (1, 0, 2))
    reps = _repetition_counter(rec.labels)
    return EpochSet(np.ascontiguousarray(epochs), fs, rec.labels.copy(), reps, rec.channel_names)


def _repetition_counter(labels):
    seen = {}
    reps = np.empty(len(labels), dtype=np.int64)
    for i, lab in enumerate(labels.tolist()):
        reps[i] = seen.get(lab, 0)
        seen[lab] = reps[i] + 1
    return reps


def baseline_correct(epochs, pre_ms, pre_window):
    """Subtract each channel's pre-stimulus mean.

    ``pre_window`` is ``(n, C, P)`` with ``P = round(pre_ms / 1000 * fs)``,
    typically ``epoch_extract(rec, -pre_ms, 0).epochs``.
    """
    fs = epochs.sample_rate_hz
    P = int(round(pre_ms / 1000.0 * fs))
    if P <= 0:
        raise ParameterError(f"baseline of {pre_ms} ms has no samples at {fs} Hz")
    pre = np.asarray(pre_window, dtype=np.float64)
    if pre.ndim == 2:
        pre = pre[None]
    expect = (len(epochs), epochs.n_channels, P)
    if pre.shape != expect:
        raise ParameterError(f"pre-stimulus window must be {expect}, got {pre.shape}")
    return replace(epochs, epochs=epochs.epochs - pre.mean(axis=-1, keepdims=True))


def average_repetitions(epochs):
    """One epoch per label (first-occurrence order), averaged over repetitions."""
    uniq, first, inverse = np.unique(epochs.labels, return_index=True, return_inverse=True)
    order = np.argsort(first, kind="stable")
    sums = np.zeros((len(uniq),) + epochs.epochs.shape[1:])
    np.add.at(sums, inverse, epochs.epochs)
    counts = np.bincount(inverse, minlength=len(uniq)).astype(np.float64)
    means = sums / counts[:, None, None]
    return replace(epochs, epochs=means[order], labels=uniq[order],
                   repetition_index=np.zeros(len(uniq), dtype=np.int64))


# ----------------------------------------------------------------------
# multivariate noise normalisation
# ----------------------------------------------------------------------
def channel_covariance(data):
    """Channel covariance pooled over every (epoch, time) sample of ``(n, C, T)`` data."""
    n, C, T = data.shape
    flat = np.moveaxis(data, 1, 0).reshape(C, n * T)
    flat = flat - flat.mean(axis=1, keepdims=True)
    return flat @ flat.T / (n * T - 1)


def shrunk_covariance(data, shrinkage):
    cov = channel_covariance(data)
    return (1.0 - shrinkage) * cov + shrinkage * np.diag(np.diag(cov))


def inverse_sqrt(sigma):
    evals, evecs = np.linalg.eigh(sigma)
    smallest = float(evals.min())
    if smallest < EIGEN_FLOOR:
        raise NumericalError(f"covariance is singular after shrinkage (smallest eigenvalue {smallest:.3e})",
                             smallest_eigenvalue=smallest)
    return (evecs / np.sqrt(evals)) @ evecs.T


def whitening_matrix(data, shrinkage=0.1):
    data = np.asarray(data, dtype=np.float64)
    if not 0.0 <= shrinkage <= 1.0:
        raise ParameterError("shrinkage must lie in [0, 1]")
    n, C, T = data.shape
    if n * T <= C:
        raise ParameterError(f"{n * T} samples cannot estimate a {C}x{C} covariance")
    return inverse_sqrt(shrunk_covariance(data, shrinkage))


def whiten(data, shrinkage=0.1):
    """Multiply by the inverse square root of the shrunk channel covariance.

    Accepts an :class:`EpochSet` or a continuous :class:`Recording` (treated
    as a single long epoch).
    """
    if isinstance(data, Recording):
        W = whitening_matrix(data.samples[None], shrinkage)
        return replace(data, samples=W @ data.samples)
    W = whitening_matrix(data.epochs, shrinkage)
    return replace(data, epochs=np.matmul(W, data.epochs))


def run_pipeline(rec, *, band=(0.1, 100.0), target_hz=250.0, window_ms=(0.0, 1000.0),
                 baseline_ms=200.0, shrinkage=0.1, average=False):
    """Whiten, filter, downsample, epoch and baseline-correct a recording."""
    rec = whiten(rec, shrinkage)
    rec = bandpass_filter(rec, *band)
    rec = downsample(rec, target_hz)
    epochs = epoch_extract(rec, *window_ms)
    if baseline_ms:
        pre = epoch_extract(rec, -baseline_ms, 0.0)
        epochs = baseline_correct(epochs, baseline_ms, pre.epochs)
    return average_repetitions(epochs) if average else epochs
