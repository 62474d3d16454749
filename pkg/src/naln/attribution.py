"""Gradient attribution of trained encoders in time, frequency and electrode space."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as tc
from .encoders import features, head
from .errors import CapabilityError, DegenerateInputError, ParameterError, ShapeError, StatisticsError
from .evalstats import summarize, unpaired_ttest

DEFAULT_BANDS = (
    ("delta", 0.0, 4.0),
    ("theta", 4.0, 8.0),
    ("alpha", 8.0, 12.0),
    ("beta", 12.0, 30.0),
    ("gamma", 30.0, math.inf),
)


@dataclass
class AttributionMap:
    values: np.ndarray  # (C, T) in [0, 1]
    source_layer: str = "projection"
    epoch_id: int = -1
    degenerate: bool = False  # gradient had no positive part; values are all zero

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ShapeError("attribution maps are (C, T)")
        if self.values.size and (self.values.min() < 0.0 or self.values.max() > 1.0):
            raise ParameterError("attribution values must lie in [0, 1]")


@dataclass(frozen=True)
class BandSpec:
    bands: tuple = DEFAULT_BANDS

    def __post_init__(self):
        bands = tuple((str(n), float(lo), float(hi)) for n, lo, hi in self.bands)
        if not bands:
            raise ParameterError("at least one band is required")
        if bands[0][1] != 0.0:
            raise ParameterError("bands must start at 0 Hz")
        for (n1, lo1, hi1), (n2, lo2, hi2) in zip(bands, bands[1:]):
            if hi1 != lo2:
                raise ParameterError(f"bands {n1!r} and {n2!r} must be contiguous")
        for n, lo, hi in bands:
            if not lo < hi:
                raise ParameterError(f"band {n!r} is empty")
        object.__setattr__(self, "bands", bands)

    @property
    def names(self):
        return [b[0] for b in self.bands]

    def covers(self, nyquist):
        return self.bands[-1][2] >= nyquist


@dataclass
class PSD:
    frequencies: np.ndarray  # one-sided bin centres, spacing fs / N
    power: np.ndarray  # one-sided, negative-frequency bins folded in
    two_sided: np.ndarray = field(repr=False, default=None)


# ----------------------------------------------------------------------
# Grad-CAM style maps
# ----------------------------------------------------------------------
def _canonical_direction(target):
    t = np.asarray(target, dtype=np.float64)
    norm = np.linalg.norm(t, axis=-1, keepdims=True)
    if np.any(norm == 0):
        raise DegenerateInputError("target embedding has zero norm")
    # rounding the unit direction to binary32 absorbs the last-ulp differences
    # that positive rescaling of the target introduces
    return (t / norm).astype(np.float32).astype(np.float64)


def resize_positions(steps, n_samples):
    """Input-sample coordinate of each layer time step when the layer is stretched over the epoch.

    Half-sample centres, as in bilinear image resizing; samples outside the
    first and last centre take the edge value.
    """
    return (np.arange(steps) + 0.5) * (n_samples / steps) - 0.5


def _layer_to_input(grad, acts, config, epoch_id):
    C, T = config.input_channels, config.input_samples
    weights = grad.mean(axis=1, keepdims=True)  # one weight per feature map
    cam = np.maximum((weights * acts).sum(axis=0), 0.0)  # (steps,)
    lo, hi = cam.min(), cam.max()
    if hi <= 0.0:
        return AttributionMap(np.zeros((C, T)), epoch_id=epoch_id, degenerate=True)
    norm = (cam - lo) / (hi - lo) if hi > lo else np.ones_like(cam)
    trace = np.clip(np.interp(np.arange(T), resize_positions(len(cam), T), norm), 0.0, 1.0)
    # collapsed channel axis: every electrode receives the same time course
    return AttributionMap(np.repeat(trace[None, :], C, axis=0), epoch_id=epoch_id)


def projection_gradients(params, epochs, targets):
    """Projection-layer activations and the gradient of ``cos(encode(epoch_i), target_i)`` at them.

    Both are ``(n, features, steps)``.
    """
    if params.config.family == "residual_mlp":
        raise CapabilityError("residual_mlp has no temporal projection layer")
    epochs = np.asarray(epochs, dtype=np.float64)
    direction = _canonical_direction(targets)
    with tc.no_grad():
        acts = features(params, epochs).data
    leaf = tc.Tensor(acts, requires_grad=True)
    out = head(params, leaf)
    objective = tc.mul(tc.normalize_rows(out), direction).sum()
    tc.backward(objective)
    return acts, leaf.grad


def gradcam_batch(params, epochs, targets, epoch_ids=None):
    """One :class:`AttributionMap` per epoch; ``targets`` are the paired image embeddings.

    Each feature map of the projection layer is weighted by its time-averaged
    gradient; the positive part of the weighted sum is min-max normalised and
    stretched over the epoch.
    """
    epochs = np.asarray(epochs, dtype=np.float64)
    targets = np.atleast_2d(np.asarray(targets, dtype=np.float64))
    if len(targets) != len(epochs):
        raise ShapeError("one target embedding per epoch is required")
    ids = range(len(epochs)) if epoch_ids is None else epoch_ids
    acts, grads = projection_gradients(params, epochs, targets)
    return [_layer_to_input(g, a, params.config, int(i)) for g, a, i in zip(grads, acts, ids)]


def gradcam(params, epoch, target, epoch_id=-1):
    """Attribution map of one ``(C, T)`` epoch against its image embedding."""
    epoch = np.asarray(epoch, dtype=np.float64)
    if epoch.ndim != 2:
        raise ShapeError(f"expected a (C, T) epoch, got {epoch.shape}")
    return gradcam_batch(params, epoch[None], np.asarray(target)[None], [epoch_id])[0]


# ----------------------------------------------------------------------
# temporal histogram
# ----------------------------------------------------------------------
def _groups(maps):
    maps = list(maps)
    if not maps:
        raise ParameterError("no attribution maps given")
    if isinstance(maps[0], AttributionMap):
        return [maps]
    groups = [list(g) for g in maps]
    if not all(groups):
        raise ParameterError("empty group of attribution maps")
    return groups


def threshold_histogram(maps, percentile=99.0):
    """Count, per time index, the map values strictly above a percentile threshold.

    ``maps`` is either a flat list of maps or a list of per-model groups; each
    group gets its own threshold (linear-interpolated percentile of all its
    pooled values) and the counts are summed over groups, maps and channels.
    """
    if not 0.0 < percentile < 100.0:
        raise ParameterError("percentile must lie in (0, 100)")
    groups = _groups(maps)
    T = groups[0][0].values.shape[1]
    counts = np.zeros(T, dtype=np.int64)
    for group in groups:
        stack = np.stack([m.values for m in group])
        if stack.shape[2] != T:
            raise ShapeError("all maps must share the time axis")
        thr = np.percentile(stack, percentile, method="linear")
        counts += (stack > thr).sum(axis=(0, 1))
    return counts


def early_mass(counts, fraction=0.4):
    """Share of histogram mass in the first ``fraction`` of time indices."""
    counts = np.asarray(counts, dtype=np.float64)
    total = counts.sum()
    if total == 0:
        return 0.0
    cut = int(math.floor(fraction * len(counts)))
    return float(counts[:cut].sum() / total)


# ----------------------------------------------------------------------
# spectra
# ----------------------------------------------------------------------
def _is_pow2(n):
    return n >= 1 and n & (n - 1) == 0


def _fft_radix2(x):
    n = len(x)
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.int64)
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    a = x[rev].astype(np.complex128)
    size = 2
    while size <= n:
        half = size // 2
        tw = np.exp(-2j * np.pi * np.arange(half) / size)
        a = a.reshape(-1, size)
        even, odd = a[:, :half].copy(), a[:, half:] * tw
        a[:, :half] = even + odd
        a[:, half:] = even - odd
        a = a.reshape(-1)
        size *= 2
    return a


def _dft_direct(x):
    n = len(x)
    k = np.arange(n)
    out = np.empty(n, dtype=np.complex128)
    for s in range(0, n, 256):
        kk = k[s:s + 256, None]
        # reduce k*n mod N first so the phase stays exact for long series
        out[s:s + 256] = np.exp(-2j * np.pi * ((kk * k[None, :]) % n) / n) @ x
    return out


def dft(x):
    """``X_k = sum_n x_n exp(-2 pi i k n / N)``: radix-2 FFT for powers of two, direct sum otherwise."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    return _fft_radix2(x) if _is_pow2(len(x)) else _dft_direct(x)


def periodogram(x, fs):
    """``|X_k|^2 / N`` on one-sided bins ``k = 0 .. N // 2``."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    n = len(x)
    if n < 2:
        raise ParameterError("periodogram needs at least 2 samples")
    spec = dft(x)
    two = (spec.real ** 2 + spec.imag ** 2) / n
    m = n // 2
    one = two[: m + 1].copy()
    upper = m if n % 2 == 0 else m + 1  # the Nyquist bin has no mirror
    one[1:upper] += two[n - 1:n - upper:-1]
    return PSD(np.arange(m + 1) * fs / n, one, two)


def band_energies(psd, bands=None):
    """Fraction of total power per band (``lo <= f < hi``)."""
    spec = bands if isinstance(bands, BandSpec) else BandSpec(bands or DEFAULT_BANDS)
    total = float(np.sum(psd.power))
    if total <= 0.0:
        raise DegenerateInputError("total power is zero")
    nyq = psd.frequencies[-1]
    out = {}
    for i, (name, lo, hi) in enumerate(spec.bands):
        last = i == len(spec.bands) - 1
        mask = (psd.frequencies >= lo) & ((psd.frequencies < hi) | (last & (psd.frequencies <= max(hi, nyq))))
        out[name] = float(np.sum(psd.power[mask]) / total)
    return out


def map_band_energies(amap, fs, bands=None):
    """Band fractions of one attribution map: per-channel periodograms averaged over channels."""
    spectra = [periodogram(row, fs) for row in amap.values]
    power = np.mean([s.power for s in spectra], axis=0)
    return band_energies(PSD(spectra[0].frequencies, power), bands)


def band_compare(energies_a, energies_b, bands=None, equal_var=True):
    """Per-band mean, standard error and unpaired t-test between two conditions.

    ``energies_a``/``energies_b`` are lists of per-seed band-fraction dicts.
    A band that is constant in both conditions (for instance one holding no
    frequency bin at a short epoch length) gets ``t = p = nan``.
    """
    spec = bands if isinstance(bands, BandSpec) else BandSpec(bands or DEFAULT_BANDS)
    if len(energies_a) < 2 or len(energies_b) < 2:
        raise ParameterError("band_compare needs at least 2 seeds per condition")
    rows = []
    for name in spec.names:
        a = [e[name] for e in energies_a]
        b = [e[name] for e in energies_b]
        try:
            t, p, df = unpaired_ttest(a, b, equal_var=equal_var)
        except StatisticsError:
            t, p, df = math.nan, math.nan, len(a) + len(b) - 2
        rows.append((name, *summarize(a), *summarize(b), t, p, df))
    return rows


def electrode_aggregate(maps, channel_names=None):
    """Mean attribution per channel over time and maps, normalised to sum 1."""
    maps = list(maps)
    if not maps:
        raise ParameterError("no attribution maps given")
    C = maps[0].values.shape[0]
    if any(m.values.shape[0] != C for m in maps):
        raise ShapeError("maps must share the channel axis")
    per = np.mean([m.values.mean(axis=1) for m in maps], axis=0)
    total = per.sum()
    if total <= 0:
        raise DegenerateInputError("all attribution maps are zero")
    names = list(channel_names) if channel_names is not None else [f"ch{i}" for i in range(C)]
    if len(names) != C:
        raise ParameterError("channel_names length does not match the maps")
    return dict(zip(names, (per / total).tolist()))
