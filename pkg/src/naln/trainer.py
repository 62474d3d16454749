"""Contrastive alignment of brain embeddings to frozen image embeddings."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensor as tc
from .encoders import encode_batch, init_params
from .errors import DataError, ParameterError, TrainingError

logger = logging.getLogger(__name__)

BETA1, BETA2, ADAM_EPS = 0.9, 0.999, 1e-8


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 2e-4
    batch_size: int = 128
    temperature: float = 0.04
    max_epochs: int = 50
    patience: int = 25
    val_fraction: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate > 0 or not self.temperature > 0:
            raise ParameterError("learning_rate and temperature must be positive")
        if self.batch_size < 2:
            raise ParameterError("batch_size must be at least 2")
        if self.max_epochs < 0 or self.patience < 1:
            raise ParameterError("max_epochs must be >= 0 and patience >= 1")
        if self.max_epochs and self.patience > self.max_epochs:
            raise ParameterError("patience cannot exceed max_epochs")
        if not 0.0 < self.val_fraction < 1.0:
            raise ParameterError("val_fraction must lie in (0, 1)")
        if self.seed < 0:
            raise ParameterError("seed must be unsigned")

    def to_dict(self):
        return asdict(self)


@dataclass
class TrainReport:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    initial_val_loss: float = float("nan")
    stopped_epoch: int = 0
    best_epoch: int = 0
    best_val_loss: float = float("nan")
    checkpoint: str | None = None

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def infonce_loss(W, V, temperature):
    """Symmetric InfoNCE over cosine similarities; row ``i`` of ``W`` matches row ``i`` of ``V``.

    ``-(1/N) sum_i [log softmax_j(S/t)[i, i] + log softmax_j(S^T/t)[i, i]]``.
    """
    if not temperature > 0:
        raise ParameterError(f"temperature must be positive, got {temperature}")
    W, V = tc.as_tensor(W), tc.as_tensor(V)
    if W.shape != V.shape or W.ndim != 2 or W.shape[0] < 1:
        raise ParameterError(f"W and V must be matching (N, d) arrays, got {W.shape} and {V.shape}")
    n = W.shape[0]
    logits = tc.scale(tc.cosine_similarity_matrix(W, V), 1.0 / temperature)
    eye = np.eye(n)
    row = tc.mul(tc.log_softmax(logits, axis=1), eye).sum()
    col = tc.mul(tc.log_softmax(logits, axis=0), eye).sum()
    return tc.scale(row + col, -1.0 / n)


def split_train_val(ids, val_fraction, seed):
    """Seeded shuffle of ``ids`` into disjoint (train, val) arrays."""
    if not 0.0 < val_fraction < 1.0:
        raise ParameterError("val_fraction must lie in (0, 1)")
    ids = np.arange(ids) if np.isscalar(ids) else np.asarray(ids)
    n_val = int(round(len(ids) * val_fraction))
    if n_val < 1 or n_val >= len(ids):
        raise ParameterError(f"a {val_fraction:.2f} split of {len(ids)} items leaves one side empty")
    perm = np.random.default_rng(seed).permutation(len(ids))
    return ids[np.sort(perm[n_val:])], ids[np.sort(perm[:n_val])]


@dataclass
class AdamState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params, grads, state, lr):
    """One bias-corrected Adam update.

    ``params`` and ``grads`` map names to arrays; returns ``(new_params, state)``
    without touching the inputs.
    """
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient for parameter {name!r}", parameter=name)
    t = state.step + 1
    m, v, new = {}, {}, {}
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p)
        m[name] = BETA1 * state.m.get(name, 0.0) + (1 - BETA1) * g
        v[name] = BETA2 * state.v.get(name, 0.0) + (1 - BETA2) * g * g
        m_hat = m[name] / (1 - BETA1 ** t)
        v_hat = v[name] / (1 - BETA2 ** t)
        new[name] = p - lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
    return new, AdamState(t, m, v)


def _targets_for(labels, image_embeddings):
    lookup = {int(i): r for r, i in enumerate(image_embeddings.ids.tolist())}
    missing = sorted({int(l) for l in labels if int(l) not in lookup})
    if missing:
        raise DataError(f"labels without an image embedding: {missing[:10]}")
    return np.array([lookup[int(l)] for l in labels], dtype=np.int64)


def _batches(index, batch_size, rng=None):
    order = index if rng is None else index[rng.permutation(len(index))]
    out = [order[s:s + batch_size] for s in range(0, len(order), batch_size)]
    # an InfoNCE batch of one has no negatives and contributes no gradient
    return [b for b in out if len(b) >= 2]


def evaluate_loss(params, epochs, targets, temperature, batch_size):
    """Mean InfoNCE over fixed consecutive batches (no gradient)."""
    total, count = 0.0, 0
    with tc.no_grad():
        for b in _batches(np.arange(len(epochs)), batch_size):
            loss = infonce_loss(encode_batch(params, epochs[b]), targets[b], temperature)
            total += loss.item() * len(b)
            count += len(b)
    return total / count if count else float("nan")


def fit(encoder_config, train_epochs, image_embeddings, cfg, checkpoint=None):
    """Train an encoder against frozen image embeddings.

    Returns the parameters with the lowest validation loss and a
    :class:`TrainReport`. Training stops after ``cfg.patience`` epochs
    without a validation improvement.
    """
    rows = _targets_for(train_epochs.labels, image_embeddings)
    X = train_epochs.epochs
    Y = np.asarray(image_embeddings.vectors, dtype=np.float64)[rows]
    params = init_params(encoder_config)
    report = TrainReport(checkpoint=checkpoint)
    if cfg.max_epochs == 0:
        return params, report

    train_idx, val_idx = split_train_val(len(X), cfg.val_fraction, cfg.seed)
    rng = np.random.default_rng([cfg.seed, 1])
    Xv, Yv = X[val_idx], Y[val_idx]
    best = params.copy()
    best_val = evaluate_loss(params, Xv, Yv, cfg.temperature, cfg.batch_size)
    report.initial_val_loss = best_val
    state = AdamState()
    since_best = 0
    for epoch in range(1, cfg.max_epochs + 1):
        losses = []
        for b in _batches(train_idx, cfg.batch_size, rng):
            params.zero_grad()
            loss = infonce_loss(encode_batch(params, X[b]), Y[b], cfg.temperature)
            tc.backward(loss)
            grads = {k: p.grad for k, p in params.parameters.items()}
            new, state = adam_step(params.arrays(), grads, state, cfg.learning_rate)
            for k, arr in new.items():
                params.parameters[k].data = arr
            losses.append(loss.item())
        val = evaluate_loss(params, Xv, Yv, cfg.temperature, cfg.batch_size)
        if not math.isfinite(val):
            raise TrainingError(f"validation loss became {val} at epoch {epoch}")
        report.train_loss.append(float(np.mean(losses)) if losses else float("nan"))
        report.val_loss.append(val)
        report.stopped_epoch = epoch
        logger.debug("epoch %d train %.4f val %.4f", epoch, report.train_loss[-1], val)
        if val < best_val:
            best_val, best, since_best = val, params.copy(), 0
            report.best_epoch = epoch
        else:
            since_best += 1
            if since_best >= cfg.patience:
                break
    report.best_val_loss = best_val
    return best, report
