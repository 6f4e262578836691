"""Regenerate the frozen golden files in this directory.

ops_reference.json is a hand count for the reference config (image 32,
patch 4, dim 64, heads 4, depth 2, mlp ratio 4, 10 classes, 3 channels),
spelled out term by term without the library's metrics module.
fp_zero_image_logits.json holds the float64 reference forward on an
all-zero image for the seed-42 reference model.

    python tests/golden/make_golden.py
"""

import json
import sys
from pathlib import Path

import numpy as np

HERE = Path(__file__).resolve().parent
sys.path.insert(0, str(HERE.parent))


def hand_count():
    t, D, Hd, h, dk, N, P, K = 65, 64, 256, 4, 16, 64, 48, 10
    depth = 2
    # Per-element constants: softmax 2, layer norm 4, gelu 1, residual 1,
    # rescale 1; SAB = t comparisons + 1 max per row.
    fixed_flops = (
        N * P * D        # patch embedding
        + t * D          # position embedding add
        + 4 * t * D      # final layer norm
        + D * K          # head on the class token
    )
    norms = 2 * 4 * t * D
    residuals = 2 * t * D
    softmax = 2 * h * t * t
    score_scale = h * t * t
    qkvp_macs = 4 * t * D * D
    att_macs = 2 * h * t * t * dk
    mlp_macs = 2 * t * D * Hd
    gelu = t * Hd

    fp_block = norms + residuals + softmax + score_scale + qkvp_macs + att_macs + mlp_macs + gelu
    fp = {"bops": 0, "flops": fixed_flops + depth * fp_block}

    sab = h * t * (t + 1)
    att_rescale = 4 * t * D + h * t * dk  # q, k, v, proj outputs + context outputs
    ao_block_flops = norms + residuals + softmax + score_scale + sab + att_rescale + mlp_macs + gelu
    ao = {"bops": depth * (qkvp_macs + att_macs), "flops": fixed_flops + depth * ao_block_flops}

    mlp_rescale = t * Hd + t * D
    full_block_flops = norms + residuals + softmax + score_scale + sab + att_rescale + mlp_rescale + gelu
    full = {"bops": depth * (qkvp_macs + att_macs + mlp_macs),
            "flops": fixed_flops + depth * full_block_flops}

    params = 108106  # 3136 embed + 64 cls + 4160 pos + 2 * 49984 blocks + 128 norm + 650 head
    attn_w = 4 * 64 * 64
    mlp_w = 2 * 64 * 256
    size_fp = 4 * params
    size_ao = size_fp - depth * (4 * attn_w - (attn_w // 8 + 4 * 4 * 64))
    size_full = size_ao - depth * (4 * mlp_w - (mlp_w // 8 + 4 * (256 + 64)))
    out = {}
    for name, counts, size in (("full_precision", fp, size_fp), ("attention_only", ao, size_ao),
                               ("full", full, size_full)):
        out[name] = {**counts, "total_ops": counts["bops"] / 64 + counts["flops"],
                     "size_bytes": size}
    return {"parameters": params, "stages": out}


def zero_image_logits():
    from oracles import reference_fp_vit

    from binary_vit.model import ModelConfig, init_params

    cfg = ModelConfig()
    images = np.zeros((1, 3, 32, 32))
    return {"seed": cfg.seed, "logits": reference_fp_vit(init_params(cfg), cfg, images)[0].tolist()}


if __name__ == "__main__":
    (HERE / "ops_reference.json").write_text(json.dumps(hand_count(), indent=2) + "\n")
    (HERE / "fp_zero_image_logits.json").write_text(json.dumps(zero_image_logits(), indent=2) + "\n")
