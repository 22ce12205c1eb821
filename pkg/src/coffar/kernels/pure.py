"""Pure numpy correlation kernels.

Both backends implement zero-padded, same-size cross-correlation on
batched stacks: x has shape (n, ci, h, w), kernel stacks have shape
(co, ci, kh, kw) with odd kh, kw. The accumulation order over
(channel, row, col) matches the compiled backend loop for loop, so the
two agree to rounding noise.
"""

import numpy as np


def corr2d_fwd(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    """out[n, o] = sum_i corr(x[n, i], w[o, i]), zero padded to input size."""
    n, ci, h, wd = x.shape
    co, _, kh, kw = w.shape
    pt = (kh - 1) // 2
    pl = (kw - 1) // 2
    xp = np.zeros((n, ci, h + kh - 1, wd + kw - 1))
    xp[:, :, pt : pt + h, pl : pl + wd] = x
    out = np.zeros((n, co, h, wd))
    for o in range(co):
        for i in range(ci):
            for u in range(kh):
                for v in range(kw):
                    out[:, o] += w[o, i, u, v] * xp[:, i, u : u + h, v : v + wd]
    return out


def corr2d_grad_kernel(x: np.ndarray, gy: np.ndarray, kh: int, kw: int) -> np.ndarray:
    """Gradient of corr2d_fwd w.r.t. the kernel stack.

    dw[o, i, u, v] = sum_{n, p, q} gy[n, o, p, q] * xpad[n, i, p + u, q + v]
    """
    n, ci, h, wd = x.shape
    co = gy.shape[1]
    pt = (kh - 1) // 2
    pl = (kw - 1) // 2
    xp = np.zeros((n, ci, h + kh - 1, wd + kw - 1))
    xp[:, :, pt : pt + h, pl : pl + wd] = x
    dw = np.empty((co, ci, kh, kw))
    for u in range(kh):
        for v in range(kw):
            dw[:, :, u, v] = np.einsum(
                "nopq,nipq->oi", gy, xp[:, :, u : u + h, v : v + wd]
            )
    return dw
