"""Analytic operation and model-size accounting.

Counting rules (one multiply-accumulate = one op):

- A matmul MAC is a BOP when its weight operand is binary (linear layers)
  or when both operands are binary (QK^T and mask x V); otherwise a FLOP.
- Each output of a binary matmul costs ``RESCALE_FLOPS`` to apply its
  scales; full-precision score matrices pay the same for ``1/sqrt(d_k)``.
- Element-wise work uses the per-element constants below. Bias adds and
  activation sign/l1-mean extraction are not counted.
- SAB costs one max plus one comparison per element of each row.

Sizes: 1 bit per binary weight rounded up to whole bytes per tensor, and
4 bytes per full-precision value (including every channel scale).
"""

from __future__ import annotations

from dataclasses import dataclass

from .model import BinarizationStage, ModelConfig, binarized_linears, param_specs

SOFTMAX_FLOPS = 2  # exp + divide
LAYERNORM_FLOPS = 4  # mean, variance, normalize, affine
GELU_FLOPS = 1
RESIDUAL_FLOPS = 1
RESCALE_FLOPS = 1
FP_BYTES = 4


@dataclass(frozen=True)
class LayerCost:
    name: str
    bops: int
    flops: int


@dataclass(frozen=True)
class OpsReport:
    bops: int
    flops: int
    total_ops: float
    size_bytes: int

    @classmethod
    def from_counts(cls, bops, flops, size_bytes):
        return cls(bops, flops, bops / 64 + flops, size_bytes)

    def as_dict(self):
        return {
            "bops": self.bops,
            "flops": self.flops,
            "total_ops": self.total_ops,
            "size_bytes": self.size_bytes,
        }


def linear_cost(name, tokens, in_features, out_features, binary) -> LayerCost:
    macs = tokens * in_features * out_features
    if binary:
        return LayerCost(name, macs, tokens * out_features * RESCALE_FLOPS)
    return LayerCost(name, 0, macs)


def cost_breakdown(cfg: ModelConfig) -> list[LayerCost]:
    t, D, Hd = cfg.tokens, cfg.embed_dim, cfg.hidden_dim
    h, dk = cfg.heads, cfg.head_dim
    attn_binary = cfg.stage is not BinarizationStage.FULL_PRECISION
    mlp_binary = cfg.stage is BinarizationStage.FULL

    costs = [
        linear_cost("patch_embed", cfg.num_patches, cfg.patch_dim, D, False),
        LayerCost("pos_embed", 0, t * D),
    ]
    for i in range(cfg.depth):
        p = f"blocks.{i}."
        costs.append(LayerCost(p + "norm1", 0, LAYERNORM_FLOPS * t * D))
        for name in ("q", "k", "v"):
            costs.append(linear_cost(p + f"attn.{name}", t, D, D, attn_binary))
        score_macs = h * t * t * dk
        costs.append(
            LayerCost(
                p + "attn.scores",
                score_macs if attn_binary else 0,
                (0 if attn_binary else score_macs) + RESCALE_FLOPS * h * t * t,
            )
        )
        costs.append(LayerCost(p + "attn.softmax", 0, SOFTMAX_FLOPS * h * t * t))
        if attn_binary:
            costs.append(LayerCost(p + "attn.sab", 0, h * t * (t + 1)))
            costs.append(LayerCost(p + "attn.context", score_macs, RESCALE_FLOPS * h * t * dk))
        else:
            costs.append(LayerCost(p + "attn.context", 0, score_macs))
        costs.append(linear_cost(p + "attn.proj", t, D, D, attn_binary))
        costs.append(LayerCost(p + "residual1", 0, RESIDUAL_FLOPS * t * D))
        costs.append(LayerCost(p + "norm2", 0, LAYERNORM_FLOPS * t * D))
        costs.append(linear_cost(p + "mlp.fc1", t, D, Hd, mlp_binary))
        costs.append(LayerCost(p + "mlp.gelu", 0, GELU_FLOPS * t * Hd))
        costs.append(linear_cost(p + "mlp.fc2", t, Hd, D, mlp_binary))
        costs.append(LayerCost(p + "residual2", 0, RESIDUAL_FLOPS * t * D))
    costs.append(LayerCost("norm", 0, LAYERNORM_FLOPS * t * D))
    costs.append(linear_cost("head", 1, D, cfg.num_classes, False))
    return costs


def parameter_count(cfg: ModelConfig) -> int:
    """Closed form for the number of master parameters."""
    D, Hd, t = cfg.embed_dim, cfg.hidden_dim, cfg.tokens
    embed = D * cfg.patch_dim + D + D + t * D
    block = 4 * D + 4 * (D * D + D) + (D * Hd + Hd) + (Hd * D + D)
    head = 2 * D + D * cfg.num_classes + cfg.num_classes
    return embed + cfg.depth * block + head


def model_size(cfg: ModelConfig) -> int:
    """Bytes needed to store the model at ``cfg.stage``."""
    binary = {prefix + ".weight" for prefix in binarized_linears(cfg)}
    total = 0
    for name, shape in param_specs(cfg):
        numel = 1
        for s in shape:
            numel *= s
        if name in binary:
            total += (numel + 7) // 8 + FP_BYTES * shape[0]
        else:
            total += FP_BYTES * numel
    return total


def count_ops(cfg: ModelConfig) -> OpsReport:
    costs = cost_breakdown(cfg)
    bops = sum(c.bops for c in costs)
    flops = sum(c.flops for c in costs)
    return OpsReport.from_counts(bops, flops, model_size(cfg))


def stage_reports(cfg: ModelConfig) -> dict:
    return {stage.value: count_ops(cfg.replace(stage=stage)) for stage in BinarizationStage}
