# Port of the accurate integer forward DCT from the Independent JPEG Group's
# jfdctint.c ("islow"), vectorised over stacks of 8x8 blocks. The constants
# and descaling steps are kept exactly so the output matches libjpeg bit for
# bit. Output coefficients are scaled up by a factor of 8, as in libjpeg.

import numpy as np

from .typing import IntArray

CONST_BITS = 13
PASS1_BITS = 2

FIX_0_298631336 = 2446
FIX_0_390180644 = 3196
FIX_0_541196100 = 4433
FIX_0_765366865 = 6270
FIX_0_899976223 = 7373
FIX_1_175875602 = 9633
FIX_1_501321110 = 12299
FIX_1_847759065 = 15137
FIX_1_961570560 = 16069
FIX_2_053119869 = 16819
FIX_2_562915447 = 20995
FIX_3_072711026 = 25172

SCALE = 8


def _descale(x: IntArray, n: int) -> IntArray:
    return (x + (1 << (n - 1))) >> n


def _one_pass(data: IntArray, first: bool) -> IntArray:
    """
    One 1-D pass of the transform over the last axis of ``data``.
    """
    d = [data[..., i] for i in range(8)]
    out = np.empty_like(data)

    tmp0 = d[0] + d[7]
    tmp7 = d[0] - d[7]
    tmp1 = d[1] + d[6]
    tmp6 = d[1] - d[6]
    tmp2 = d[2] + d[5]
    tmp5 = d[2] - d[5]
    tmp3 = d[3] + d[4]
    tmp4 = d[3] - d[4]

    # Even part
    tmp10 = tmp0 + tmp3
    tmp13 = tmp0 - tmp3
    tmp11 = tmp1 + tmp2
    tmp12 = tmp1 - tmp2

    if first:
        out[..., 0] = (tmp10 + tmp11) << PASS1_BITS
        out[..., 4] = (tmp10 - tmp11) << PASS1_BITS
        shift = CONST_BITS - PASS1_BITS
    else:
        out[..., 0] = _descale(tmp10 + tmp11, PASS1_BITS)
        out[..., 4] = _descale(tmp10 - tmp11, PASS1_BITS)
        shift = CONST_BITS + PASS1_BITS

    z1 = (tmp12 + tmp13) * FIX_0_541196100
    out[..., 2] = _descale(z1 + tmp13 * FIX_0_765366865, shift)
    out[..., 6] = _descale(z1 + tmp12 * -FIX_1_847759065, shift)

    # Odd part
    z1 = tmp4 + tmp7
    z2 = tmp5 + tmp6
    z3 = tmp4 + tmp6
    z4 = tmp5 + tmp7
    z5 = (z3 + z4) * FIX_1_175875602

    tmp4 = tmp4 * FIX_0_298631336
    tmp5 = tmp5 * FIX_2_053119869
    tmp6 = tmp6 * FIX_3_072711026
    tmp7 = tmp7 * FIX_1_501321110
    z1 = z1 * -FIX_0_899976223
    z2 = z2 * -FIX_2_562915447
    z3 = z3 * -FIX_1_961570560 + z5
    z4 = z4 * -FIX_0_390180644 + z5

    out[..., 7] = _descale(tmp4 + z1 + z3, shift)
    out[..., 5] = _descale(tmp5 + z2 + z4, shift)
    out[..., 3] = _descale(tmp6 + z2 + z3, shift)
    out[..., 1] = _descale(tmp7 + z1 + z4, shift)
    return out


def fdct_islow(samples: IntArray) -> IntArray:
    """
    Forward transform of a stack of level-shifted 8x8 sample blocks.

    ``samples`` has shape (..., 8, 8); the result has the same shape and
    holds coefficients scaled by ``SCALE``.
    """
    data = np.asarray(samples, dtype=np.int64)
    if data.shape[-2:] != (8, 8):
        raise ValueError(f"islow DCT needs 8x8 blocks, got {data.shape[-2:]}")
    rows = _one_pass(data, first=True)
    columns = _one_pass(np.swapaxes(rows, -1, -2), first=False)
    return np.ascontiguousarray(np.swapaxes(columns, -1, -2))
