"""Pure-numpy kernel fallback."""

import numpy as np


def scatter_add_rows(out, idx, src):
    """out[idx[e], :] += src[e, :] for every row e, accumulating in row order.

    ``np.bincount`` adds sequentially over its input, so per output cell the
    addition order matches the compiled kernel's edge-order loop exactly.
    """
    n = out.shape[0]
    for j in range(src.shape[1]):
        out[:, j] += np.bincount(idx, weights=src[:, j], minlength=n)
    return out
