"""Binary vision-transformer building blocks.

Bit-packed XNOR/AND-popcount kernels, softmax-aware attention binarization,
straight-through gradients, parameterized weight scales, a stage-configurable
tiny ViT, and its operation/size cost model.
"""

from .bitpack import BitMatrix, BitVector, Encoding, dot_mask_pm, dot_pm, gemm_mask_pm, gemm_pm, pack, pack_matrix
from .binarizer import BinaryLinear, ScaleMode, binarize_weights, bool_binarize, channel_scale, sign_binarize
from .model import BinarizationStage, ModelConfig, build_model, forward, set_stage
from .sab import SabSolution, brute_force_oracle, coordinate_descent, fit_beta, sab_binarize

__version__ = "0.1.0"
