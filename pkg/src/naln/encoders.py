"""Brain-signal encoders mapping a ``(C, T)`` epoch to a ``d``-vector.

Three families share one interface:

``nice_conv``
    temporal conv -> spatial conv over all channels -> gain/bias -> ELU ->
    average pool -> flatten -> linear projection.
``eegnet_conv``
    temporal conv -> depthwise spatial conv -> gain/bias -> ELU -> pool ->
    pointwise conv -> gain/bias -> ELU -> pool -> flatten -> linear.
``residual_mlp``
    flatten -> linear -> [ELU(gain/bias(linear)) + skip] x depth -> linear.

Batch normalisation is replaced by a learned per-feature gain and bias so
the forward pass has no train/eval state.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensor as tc
from .errors import CapabilityError, ConfigError, ShapeError
from .tensor import Tensor

FAMILIES = ("nice_conv", "eegnet_conv", "residual_mlp")

DEFAULT_HYPER = {
    "nice_conv": {"temporal_kernel": 25, "temporal_filters": 40, "spatial_filters": 40,
                  "pool_width": 5, "stride": 1},
    "eegnet_conv": {"temporal_kernel": 25, "temporal_filters": 8, "depth_multiplier": 2,
                    "pointwise_filters": 16, "pool_width": 4, "pool_width2": 2},
    "residual_mlp": {"hidden_width": 256, "depth": 2},
}


@dataclass(frozen=True)
class EncoderConfig:
    family: str
    input_channels: int
    input_samples: int
    embed_dim: int
    hyper: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigError(f"unknown encoder family {self.family!r}; choose from {FAMILIES}")
        unknown = set(self.hyper) - set(DEFAULT_HYPER[self.family])
        if unknown:
            raise ConfigError(f"unknown {self.family} hyperparameters: {sorted(unknown)}")
        if self.embed_dim < 1 or self.input_channels < 1 or self.input_samples < 1:
            raise ConfigError("embed_dim, input_channels and input_samples must be >= 1")
        merged = dict(DEFAULT_HYPER[self.family])
        merged.update(self.hyper)
        object.__setattr__(self, "hyper", merged)
        if self.seed < 0:
            raise ConfigError("seed must be unsigned")
        self.layer_shapes()  # validates kernel and pool widths

    def layer_shapes(self):
        """Shape of the projection-layer activations as ``(features, time)``."""
        h, T = self.hyper, self.input_samples
        if self.family == "residual_mlp":
            return (h["hidden_width"], 1)
        k = h["temporal_kernel"]
        if k > T:
            raise ConfigError(f"temporal kernel {k} is wider than the input ({T} samples)")
        stride = h.get("stride", 1)
        Tp = (T - k) // stride + 1
        if self.family == "nice_conv":
            if not 1 <= h["pool_width"] <= Tp:
                raise ConfigError(f"pool width {h['pool_width']} invalid for {Tp} conv outputs")
            return (h["spatial_filters"], Tp // h["pool_width"])
        T1 = Tp // h["pool_width"] if 1 <= h["pool_width"] <= Tp else 0
        if T1 < 1 or not 1 <= h["pool_width2"] <= T1:
            raise ConfigError("eegnet pool widths do not fit the input length")
        return (h["pointwise_filters"], T1 // h["pool_width2"])

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class EncoderParams:
    config: EncoderConfig
    parameters: dict  # name -> Tensor, insertion order is canonical

    def __getitem__(self, name):
        return self.parameters[name]

    def names(self):
        return list(self.parameters)

    def arrays(self):
        return {k: v.data for k, v in self.parameters.items()}

    def copy(self):
        return EncoderParams(self.config, {k: Tensor(v.data, requires_grad=v.requires_grad)
                                           for k, v in self.parameters.items()})

    def zero_grad(self):
        for p in self.parameters.values():
            p.grad = None


def _kaiming(rng, shape, fan_in):
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


def init_params(config):
    """Seeded Kaiming-uniform weights (std ``sqrt(2 / fan_in)``), zero biases, unit gains."""
    rng = np.random.default_rng(config.seed)
    h, C, T, d = config.hyper, config.input_channels, config.input_samples, config.embed_dim
    feats, steps = config.layer_shapes()
    p = {}
    if config.family == "nice_conv":
        F, S, K = h["temporal_filters"], h["spatial_filters"], h["temporal_kernel"]
        p["temporal.weight"] = _kaiming(rng, (F, 1, K), K)
        p["spatial.weight"] = _kaiming(rng, (S, F * C, 1), F * C)
        p["spatial.bias"] = np.zeros((S, 1))
        p["scale.gain"] = np.ones((S, 1))
        p["scale.bias"] = np.zeros((S, 1))
        p["projection.weight"] = _kaiming(rng, (feats * steps, d), feats * steps)
        p["projection.bias"] = np.zeros((1, d))
    elif config.family == "eegnet_conv":
        F1, D, F2, K = h["temporal_filters"], h["depth_multiplier"], h["pointwise_filters"], h["temporal_kernel"]
        p["temporal.weight"] = _kaiming(rng, (F1, 1, K), K)
        p["depthwise.weight"] = _kaiming(rng, (F1, D, C), C)
        p["scale1.gain"] = np.ones((F1 * D, 1))
        p["scale1.bias"] = np.zeros((F1 * D, 1))
        p["pointwise.weight"] = _kaiming(rng, (F2, F1 * D, 1), F1 * D)
        p["scale2.gain"] = np.ones((F2, 1))
        p["scale2.bias"] = np.zeros((F2, 1))
        p["projection.weight"] = _kaiming(rng, (feats * steps, d), feats * steps)
        p["projection.bias"] = np.zeros((1, d))
    else:
        H = h["hidden_width"]
        p["input.weight"] = _kaiming(rng, (C * T, H), C * T)
        p["input.bias"] = np.zeros((1, H))
        for i in range(h["depth"]):
            p[f"block{i}.weight"] = _kaiming(rng, (H, H), H)
            p[f"block{i}.bias"] = np.zeros((1, H))
            p[f"block{i}.gain"] = np.ones((1, H))
        p["projection.weight"] = _kaiming(rng, (H, d), H)
        p["projection.bias"] = np.zeros((1, d))
    return EncoderParams(config, {k: Tensor(v, requires_grad=True) for k, v in p.items()})


def _check_input(params, x):
    x = tc.as_tensor(x)
    cfg = params.config
    expect = (cfg.input_channels, cfg.input_samples)
    if x.ndim != 3 or x.shape[1:] != expect:
        raise ShapeError(f"expected epochs of shape (n, {expect[0]}, {expect[1]}), got {x.shape}")
    return x


def features(params, x):
    """Batched activations feeding the final linear projection, shape ``(n, features, time)``."""
    x = _check_input(params, x)
    cfg, h, p = params.config, params.config.hyper, params.parameters
    n = x.shape[0]
    if cfg.family == "nice_conv":
        # no temporal bias: the spatial conv is linear and carries its own
        z = tc.conv_temporal(x, p["temporal.weight"], h.get("stride", 1))  # (n, F*C, T')
        z = tc.conv_spatial(z, p["spatial.weight"]) + p["spatial.bias"]
        z = tc.elu(z * p["scale.gain"] + p["scale.bias"])
        return tc.avg_pool(z, h["pool_width"])
    if cfg.family == "eegnet_conv":
        F1, D, C = h["temporal_filters"], h["depth_multiplier"], cfg.input_channels
        z = tc.conv_temporal(x, p["temporal.weight"])
        z = tc.reshape(z, (n, F1, C, z.shape[-1]))
        z = tc.matmul(p["depthwise.weight"], z)  # (n, F1, D, T')
        z = tc.reshape(z, (n, F1 * D, z.shape[-1]))
        z = tc.elu(z * p["scale1.gain"] + p["scale1.bias"])
        z = tc.avg_pool(z, h["pool_width"])
        z = tc.conv_spatial(z, p["pointwise.weight"])
        z = tc.elu(z * p["scale2.gain"] + p["scale2.bias"])
        return tc.avg_pool(z, h["pool_width2"])
    z = tc.reshape(x, (n, 1, cfg.input_channels * cfg.input_samples))
    z = tc.matmul(z, p["input.weight"]) + p["input.bias"]
    for i in range(h["depth"]):
        inner = tc.matmul(z, p[f"block{i}.weight"]) + p[f"block{i}.bias"]
        z = z + tc.elu(inner * p[f"block{i}.gain"])
    return tc.swapaxes(z, 1, 2)  # (n, H, 1)


def head(params, acts):
    """Final linear projection of ``(n, features, time)`` activations to ``(n, d)``."""
    acts = tc.as_tensor(acts)
    n = acts.shape[0]
    flat = tc.reshape(acts, (n, 1, acts.shape[1] * acts.shape[2]))
    p = params.parameters
    out = tc.matmul(flat, p["projection.weight"]) + p["projection.bias"]
    return tc.reshape(out, (n, params.config.embed_dim))


def encode_batch(params, epochs):
    """``(n, C, T)`` epochs to ``(n, d)`` embeddings; row ``i`` equals ``encode(params, epochs[i])``."""
    if isinstance(epochs, np.ndarray) and epochs.ndim == 2:
        raise ShapeError("encode_batch expects (n, C, T); use encode for a single epoch")
    return head(params, features(params, epochs))


def encode(params, epoch):
    """A single ``(C, T)`` epoch to a ``d``-vector."""
    epoch = tc.as_tensor(epoch)
    if epoch.ndim != 2:
        raise ShapeError(f"encode expects a (C, T) epoch, got {epoch.shape}")
    out = encode_batch(params, tc.reshape(epoch, (1,) + epoch.shape))
    return tc.reshape(out, (params.config.embed_dim,))


def embed(params, epochs, batch_size=256):
    """Inference helper returning a plain ``(n, d)`` array."""
    epochs = np.asarray(epochs, dtype=np.float64)
    out = []
    with tc.no_grad():
        for start in range(0, len(epochs), batch_size):
            out.append(encode_batch(params, epochs[start:start + batch_size]).data)
    if not out:
        return np.zeros((0, params.config.embed_dim))
    return np.concatenate(out, axis=0)


def projection_activations(params, epoch):
    """Activations entering the final linear layer, shape ``(features, time)``.

    The residual MLP's projection input has no time axis, so it is refused
    with :class:`CapabilityError`.
    """
    if params.config.family == "residual_mlp":
        raise CapabilityError("residual_mlp has no temporal projection layer")
    epoch = tc.as_tensor(epoch)
    if epoch.ndim != 2:
        raise ShapeError(f"expected a (C, T) epoch, got {epoch.shape}")
    acts = features(params, tc.reshape(epoch, (1,) + epoch.shape))
    return tc.reshape(acts, acts.shape[1:])

