"""A small DeiT-style ViT whose binarization is selected per stage.

Full-precision master weights are always kept; a stage only decides which
linear layers are viewed through their sign bits and channel scales:

=============== ================== ==================== =================
stage           attention linears  attention matrices   MLP linears
=============== ================== ==================== =================
FULL_PRECISION  fp                 fp softmax           fp
ATTENTION_ONLY  binary             SAB masks            fp
FULL            binary             SAB masks            binary weights
=============== ================== ==================== =================

Patch embedding, classifier head, layer norms, biases and residual paths
stay full precision at every stage.

Initialization: ``numpy.random.default_rng(seed)`` (PCG64) draws every
weight, bias, class token and position embedding in :func:`param_specs`
order from a normal with std 0.02 truncated at two standard deviations;
layer-norm gains are 1 and shifts 0.
"""

from __future__ import annotations

import dataclasses
import enum
from dataclasses import dataclass

import numpy as np
from scipy.special import erf

from .attention import AttentionConfig, AttentionLayer, binary_attention_forward
from .binarizer import binarize_rows, binarize_weights
from .errors import ConfigError, DimensionMismatch, NumericalFailure
from .sab import DEFAULT_BETA

LN_EPS = 1e-6
INIT_STD = 0.02


class BinarizationStage(enum.Enum):
    FULL_PRECISION = "full_precision"
    ATTENTION_ONLY = "attention_only"
    FULL = "full"


class ActivationBits(enum.Enum):
    FP = "fp"
    BINARY = "binary"


@dataclass(frozen=True)
class ModelConfig:
    image_size: int = 32
    patch_size: int = 4
    embed_dim: int = 64
    heads: int = 4
    depth: int = 2
    mlp_ratio: int = 4
    num_classes: int = 10
    beta: float = DEFAULT_BETA
    stage: BinarizationStage = BinarizationStage.FULL_PRECISION
    mlp_activation_bits: ActivationBits = ActivationBits.FP
    seed: int = 42
    in_chans: int = 3

    def __post_init__(self):
        for name in ("image_size", "patch_size", "embed_dim", "heads", "mlp_ratio",
                     "num_classes", "in_chans"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.depth < 0:
            raise ConfigError("depth must be non-negative")
        if self.image_size % self.patch_size:
            raise ConfigError(
                f"image_size {self.image_size} is not divisible by patch_size {self.patch_size}"
            )
        if self.embed_dim % self.heads:
            raise ConfigError(f"embed_dim {self.embed_dim} is not divisible by heads {self.heads}")
        if not 0 < self.beta < 1:
            raise ConfigError(f"beta must lie in (0, 1), got {self.beta}")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must fit in an unsigned 64-bit integer")

    @property
    def num_patches(self):
        return (self.image_size // self.patch_size) ** 2

    @property
    def tokens(self):
        return self.num_patches + 1

    @property
    def head_dim(self):
        return self.embed_dim // self.heads

    @property
    def hidden_dim(self):
        return self.embed_dim * self.mlp_ratio

    @property
    def patch_dim(self):
        return self.in_chans * self.patch_size**2

    def replace(self, **changes) -> "ModelConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["stage"] = self.stage.value
        out["mlp_activation_bits"] = self.mlp_activation_bits.value
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        data = dict(data)
        try:
            if "stage" in data:
                data["stage"] = BinarizationStage(data["stage"])
            if "mlp_activation_bits" in data:
                data["mlp_activation_bits"] = ActivationBits(data["mlp_activation_bits"])
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        return cls(**data)


def param_specs(cfg: ModelConfig) -> list[tuple[str, tuple[int, ...]]]:
    """Every master tensor in canonical (initialization and file) order."""
    D, H = cfg.embed_dim, cfg.hidden_dim
    specs = [
        ("patch_embed.weight", (D, cfg.patch_dim)),
        ("patch_embed.bias", (D,)),
        ("cls_token", (D,)),
        ("pos_embed", (cfg.tokens, D)),
    ]
    for i in range(cfg.depth):
        p = f"blocks.{i}."
        specs += [(p + "norm1.weight", (D,)), (p + "norm1.bias", (D,))]
        for name in ("q", "k", "v", "proj"):
            specs += [(p + f"attn.{name}.weight", (D, D)), (p + f"attn.{name}.bias", (D,))]
        specs += [(p + "norm2.weight", (D,)), (p + "norm2.bias", (D,))]
        specs += [(p + "mlp.fc1.weight", (H, D)), (p + "mlp.fc1.bias", (H,))]
        specs += [(p + "mlp.fc2.weight", (D, H)), (p + "mlp.fc2.bias", (D,))]
    specs += [("norm.weight", (D,)), ("norm.bias", (D,))]
    specs += [("head.weight", (cfg.num_classes, D)), ("head.bias", (cfg.num_classes,))]
    return specs


def binarized_linears(cfg: ModelConfig) -> list[str]:
    """Prefixes of the linear layers viewed as binary at ``cfg.stage``."""
    names = []
    if cfg.stage is BinarizationStage.FULL_PRECISION:
        return names
    for i in range(cfg.depth):
        names += [f"blocks.{i}.attn.{n}" for n in ("q", "k", "v", "proj")]
        if cfg.stage is BinarizationStage.FULL:
            names += [f"blocks.{i}.mlp.fc1", f"blocks.{i}.mlp.fc2"]
    return names


def _truncated_normal(rng, shape):
    x = rng.standard_normal(shape)
    bad = np.abs(x) > 2
    while bad.any():
        x[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(x) > 2
    return x * INIT_STD


def init_params(cfg: ModelConfig) -> dict:
    rng = np.random.default_rng(cfg.seed)
    params = {}
    for name, shape in param_specs(cfg):
        if ".norm" in name or name.startswith("norm."):
            fill = 1.0 if name.endswith("weight") else 0.0
            arr = np.full(shape, fill)
        else:
            arr = _truncated_normal(rng, shape)
        params[name] = arr.astype(np.float32)
    return params


class Model:
    """Immutable master weights plus the binary views implied by the stage."""

    def __init__(self, cfg: ModelConfig, params: dict):
        expected = dict(param_specs(cfg))
        if list(params) != list(expected):
            raise ConfigError("parameter names do not match the configuration")
        frozen = {}
        for name, arr in params.items():
            arr = np.asarray(arr)
            if arr.shape != expected[name] or arr.dtype != np.float32:
                raise ConfigError(
                    f"{name}: expected float32 {expected[name]}, got {arr.dtype} {arr.shape}"
                )
            if arr.flags.writeable:
                arr = arr.copy()
                arr.setflags(write=False)
            frozen[name] = arr
        self.cfg = cfg
        self.params = frozen
        self.views = {
            prefix: binarize_weights(frozen[prefix + ".weight"]) for prefix in binarized_linears(cfg)
        }

    def parameter_count(self) -> int:
        return sum(int(a.size) for a in self.params.values())

    def attention_layer(self, i: int) -> AttentionLayer:
        p = f"blocks.{i}.attn."
        weights = {n: (self._f64(p + n + ".weight"), self._f64(p + n + ".bias"))
                   for n in ("q", "k", "v", "proj")}
        binary = None
        if p + "q" in self.views:
            binary = {n: self.views[p + n] for n in ("q", "k", "v", "proj")}
        return AttentionLayer(weights, binary)

    def attention_config(self) -> AttentionConfig:
        on = self.cfg.stage is not BinarizationStage.FULL_PRECISION
        return AttentionConfig(self.cfg.heads, self.cfg.head_dim, self.cfg.beta, on, on)

    def _f64(self, name):
        return self.params[name].astype(np.float64)


def build_model(cfg: ModelConfig) -> Model:
    return Model(cfg, init_params(cfg))


def set_stage(model: Model, stage: BinarizationStage) -> Model:
    """A new model over the same (untouched) masters, re-binarized for ``stage``."""
    return Model(model.cfg.replace(stage=stage), model.params)


def layer_norm(x, weight, bias):
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + LN_EPS) * weight + bias


def gelu(x):
    return 0.5 * x * (1.0 + erf(x / np.sqrt(2.0)))


def patchify(images, patch: int) -> np.ndarray:
    """(B, C, H, W) -> (B, patches, C * patch * patch), row-major patch order."""
    B, C, H, W = images.shape
    x = images.reshape(B, C, H // patch, patch, W // patch, patch)
    x = x.transpose(0, 2, 4, 1, 3, 5)
    return x.reshape(B, (H // patch) * (W // patch), C * patch * patch)


def _mlp(model: Model, i: int, x):
    p = f"blocks.{i}.mlp."
    h = x
    for j, name in enumerate(("fc1", "fc2")):
        bias = model._f64(p + name + ".bias")
        view = model.views.get(p + name)
        if view is None:
            h = h @ model._f64(p + name + ".weight").T + bias
        elif model.cfg.mlp_activation_bits is ActivationBits.BINARY:
            flat = h.reshape(-1, h.shape[-1])
            bits, scales = binarize_rows(flat)
            h = view.forward_binary(bits, scales).reshape(*h.shape[:-1], -1) + bias
        else:
            h = view.forward(h) + bias
        if j == 0:
            h = gelu(h)
    return h


def _check_finite(x, layer, what):
    if not np.isfinite(x).all():
        raise NumericalFailure(f"non-finite values after {what} of block {layer}", layer=layer)


def forward(model: Model, images) -> np.ndarray:
    """Logits of shape (batch, num_classes), computed in float64."""
    cfg = model.cfg
    images = np.asarray(images, dtype=np.float64)
    expected = (cfg.in_chans, cfg.image_size, cfg.image_size)
    if images.ndim != 4 or images.shape[1:] != expected:
        raise DimensionMismatch(f"expected images of shape (B, {expected}), got {images.shape}")
    if not np.isfinite(images).all():
        raise NumericalFailure("non-finite input images")
    P = model._f64
    tokens = patchify(images, cfg.patch_size) @ P("patch_embed.weight").T + P("patch_embed.bias")
    cls = np.broadcast_to(P("cls_token"), (images.shape[0], 1, cfg.embed_dim))
    x = np.concatenate([cls, tokens], axis=1) + P("pos_embed")
    attn_cfg = model.attention_config()
    for i in range(cfg.depth):
        b = f"blocks.{i}."
        layer = model.attention_layer(i)
        h = layer_norm(x, P(b + "norm1.weight"), P(b + "norm1.bias"))
        x = x + np.stack([binary_attention_forward(t, layer, attn_cfg) for t in h])
        _check_finite(x, i, "attention")
        h = layer_norm(x, P(b + "norm2.weight"), P(b + "norm2.bias"))
        x = x + _mlp(model, i, h)
        _check_finite(x, i, "mlp")
    x = layer_norm(x, P("norm.weight"), P("norm.bias"))
    logits = x[:, 0] @ P("head.weight").T + P("head.bias")
    if not np.isfinite(logits).all():
        raise NumericalFailure("non-finite logits")
    return logits
