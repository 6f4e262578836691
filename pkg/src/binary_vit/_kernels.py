"""Compiled inner loops for the packed GEMMs and the naive FP baseline.

All kernels are single-threaded. Accumulators are int32/int64 for the
popcount paths; the caller applies real-valued scales once per output.
"""

import numba
import numpy as np
from numba import types
from numba.extending import intrinsic


@intrinsic
def _popcount64(typingctx, x):
    sig = types.uint64(types.uint64)

    def codegen(context, builder, signature, args):
        return builder.ctpop(args[0])

    return sig, codegen


@numba.njit(cache=True, nogil=True)
def xnor_gemm(a, b, nbits):
    """``out[i, j] = nbits - 2 * popcount(a[i] ^ b[j])`` over packed rows."""
    m, w = a.shape
    p = b.shape[0]
    out = np.empty((m, p), dtype=np.int32)
    for i in range(m):
        for j in range(p):
            acc = 0
            for k in range(w):
                acc += _popcount64(a[i, k] ^ b[j, k])
            out[i, j] = nbits - 2 * acc
    return out


@numba.njit(cache=True, nogil=True)
def mask_gemm(mask, v):
    """``out[i, j] = 2 * popcount(mask[i] & v[j]) - popcount(mask[i])``."""
    m, w = mask.shape
    p = v.shape[0]
    out = np.empty((m, p), dtype=np.int32)
    for i in range(m):
        active = 0
        for k in range(w):
            active += _popcount64(mask[i, k])
        for j in range(p):
            acc = 0
            for k in range(w):
                acc += _popcount64(mask[i, k] & v[j, k])
            out[i, j] = 2 * acc - active
    return out


@numba.njit(cache=True, nogil=True)
def naive_fp_gemm(a, bt):
    """Scalar triple loop, ``out = a @ bt.T``; same traversal as ``xnor_gemm``."""
    m, k = a.shape
    p = bt.shape[0]
    out = np.empty((m, p), dtype=a.dtype)
    for i in range(m):
        for j in range(p):
            acc = a.dtype.type(0)
            for t in range(k):
                acc += a[i, t] * bt[j, t]
            out[i, j] = acc
    return out
