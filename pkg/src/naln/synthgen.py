"""Seeded synthetic brain/image pairs with a controllable alignment gap.

Each class ``k`` owns a latent unit vector ``z_k``. Its epochs are a fixed
random channel mixing of ``z_k`` carried by a few oscillatory bursts that
sit in the first 40% of the window, plus white noise. "Aligned" image
embeddings are ``z_k`` with a little noise; "misaligned" ones blend that
with an odd nonlinearity of a rotated ``z_k``, so a linear read-out of the
epochs cannot reach them.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import NamedTuple

import numpy as np

from .errors import ParameterError
from .preproc import EpochSet, Recording, average_repetitions
from .retrieval import EmbeddingSet

EARLY_FRACTION = 0.4


@dataclass(frozen=True)
class SynthConfig:
    n_classes: int = 64
    embed_dim: int = 32
    channels: int = 16
    samples: int = 64
    sample_rate: float = 250.0
    noise_std: float = 1.0
    alignment_mode: str = "aligned"
    misalignment_strength: float = 1.0
    seed: int = 0
    n_train_reps: int = 24
    n_test_reps: int = 4
    n_components: int = 4
    image_noise: float = 0.05
    n_extra_images: int = 0

    def __post_init__(self):
        if self.n_classes < 2:
            raise ParameterError("n_classes must be at least 2")
        if self.alignment_mode not in ("aligned", "misaligned"):
            raise ParameterError("alignment_mode must be 'aligned' or 'misaligned'")
        if not 0.0 <= self.misalignment_strength <= 1.0:
            raise ParameterError("misalignment_strength must lie in [0, 1]")
        if min(self.embed_dim, self.channels, self.samples, self.n_components) < 1:
            raise ParameterError("dimensions must be positive")
        if self.n_train_reps + self.n_test_reps < 1 or min(self.n_train_reps, self.n_test_reps) < 0:
            raise ParameterError("need at least one repetition")
        if self.noise_std < 0 or self.image_noise < 0 or self.sample_rate <= 0:
            raise ParameterError("noise levels must be >= 0 and sample_rate > 0")

    @property
    def n_reps(self):
        return self.n_train_reps + self.n_test_reps

    def to_dict(self):
        return asdict(self)


class SynthData(NamedTuple):
    epochs: EpochSet
    aligned: EmbeddingSet
    misaligned: EmbeddingSet

    def embeddings(self, mode):
        return self.aligned if mode == "aligned" else self.misaligned


def temporal_basis(cfg):
    """``(n_components, T)`` unit-norm bursts centred inside the early window."""
    T, fs, J = cfg.samples, cfg.sample_rate, cfg.n_components
    t = np.arange(T)
    centres = T * (0.1 + 0.2 * np.arange(J) / max(J - 1, 1))
    width = 0.06 * T
    freqs = np.linspace(10.0, 22.0, J)
    basis = np.exp(-0.5 * ((t[None, :] - centres[:, None]) / width) ** 2)
    basis = basis * np.cos(2 * np.pi * freqs[:, None] * (t[None, :] - centres[:, None]) / fs)
    return basis / np.linalg.norm(basis, axis=1, keepdims=True)


def _random_rotation(rng, d):
    q, r = np.linalg.qr(rng.standard_normal((d, d)))
    return q * np.sign(np.diag(r))


def _odd_warp(u, d):
    # sin(4 * sqrt(d) * u): the argument has unit-order spread for unit-norm inputs
    w = np.sin(4.0 * np.sqrt(d) * u)
    return w / np.linalg.norm(w, axis=1, keepdims=True)


def generate(cfg):
    """Draw epochs and both embedding sets; identical configs give identical bits."""
    rng = np.random.default_rng(cfg.seed)
    K, d, C, T = cfg.n_classes, cfg.embed_dim, cfg.channels, cfg.samples
    n_img = K + cfg.n_extra_images
    z = rng.standard_normal((n_img, d))
    z /= np.linalg.norm(z, axis=1, keepdims=True)
    mixing = rng.standard_normal((cfg.n_components, C, d))
    basis = temporal_basis(cfg)
    rotation = _random_rotation(rng, d)
    image_jitter = rng.standard_normal((n_img, d)) * (cfg.image_noise / np.sqrt(d))

    clean = np.einsum("jcd,kd,jt->kct", mixing, z[:K], basis)
    R = cfg.n_reps
    labels = np.repeat(np.arange(K), R)
    reps = np.tile(np.arange(R), K)
    noise = rng.standard_normal((K * R, C, T)) * cfg.noise_std
    epochs = clean[labels] + noise

    aligned = z + image_jitter
    gamma = cfg.misalignment_strength
    if gamma == 0.0:
        misaligned = aligned.copy()
    else:
        warped = _odd_warp(z @ rotation.T, d)
        misaligned = (1.0 - gamma) * aligned + gamma * warped
    ids = np.arange(n_img)
    es = EpochSet(epochs, cfg.sample_rate, labels, reps)
    return SynthData(es, EmbeddingSet(aligned, ids), EmbeddingSet(misaligned, ids))


def holdout_split(epochs, n_test_reps, average_test=True):
    """Last ``n_test_reps`` repetitions of every class become the test set.

    The test repetitions are averaged per class unless ``average_test`` is off.
    """
    r_max = epochs.repetition_index.max() + 1
    cut = r_max - n_test_reps
    if n_test_reps < 1 or cut < 1:
        raise ParameterError(f"cannot hold out {n_test_reps} of {r_max} repetitions")
    train = epochs.subset(np.flatnonzero(epochs.repetition_index < cut))
    test = epochs.subset(np.flatnonzero(epochs.repetition_index >= cut))
    return train, (average_repetitions(test) if average_test else test)


def rows_for(embeddings, ids):
    """Row positions of ``ids`` in ``embeddings``."""
    pos = {int(i): r for r, i in enumerate(embeddings.ids.tolist())}
    return np.array([pos[int(i)] for i in ids], dtype=np.int64)


def select(embeddings, ids):
    """Sub-set of ``embeddings`` holding the (unique) ``ids`` in the given order."""
    rows = rows_for(embeddings, ids)
    return EmbeddingSet(embeddings.vectors[rows], embeddings.ids[rows])


def to_recording(epochs, pre_samples=None, gap_samples=None):
    """Lay epochs end to end in a continuous recording with one event per epoch.

    Each epoch is preceded by ``pre_samples`` of silence (default T // 2).
    """
    n, C, T = epochs.epochs.shape
    pre = T // 2 if pre_samples is None else int(pre_samples)
    gap = T // 4 if gap_samples is None else int(gap_samples)
    stride = pre + T + gap
    samples = np.zeros((C, n * stride + pre))
    onsets = pre + stride * np.arange(n)
    for i in range(n):
        samples[:, onsets[i]:onsets[i] + T] = epochs.epochs[i]
    return Recording(samples, epochs.sample_rate_hz, onsets, epochs.labels, epochs.channel_names)


def ridge_top1(train, test, embeddings, alpha=1.0):
    """Held-out top-1 of a closed-form ridge decoder from flattened epochs to embeddings.

    Candidates are the embeddings of the test labels; used as an oracle for
    how linearly decodable a dataset is.
    """
    X = train.epochs.reshape(len(train), -1)
    Y = embeddings.vectors[rows_for(embeddings, train.labels)]
    mx, my = X.mean(axis=0), Y.mean(axis=0)
    Xc = X - mx
    coef = np.linalg.solve(Xc.T @ Xc + alpha * np.eye(X.shape[1]), Xc.T @ (Y - my))
    pred = (test.epochs.reshape(len(test), -1) - mx) @ coef + my
    cand_ids = np.unique(test.labels)
    cand = select(embeddings, cand_ids).vectors
    cand = cand / np.linalg.norm(cand, axis=1, keepdims=True)
    pred = pred / np.linalg.norm(pred, axis=1, keepdims=True)
    best = cand_ids[np.argmax(pred @ cand.T, axis=1)]
    return float(np.mean(best == test.labels))
