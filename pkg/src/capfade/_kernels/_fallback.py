"""Pure numpy versions of the hot kernels.

Semantics are identical to the compiled ``_core`` module; the test suite
checks one against the other.
"""

from __future__ import annotations

import numpy as np


def knee_sse(xc, yc, min_side: int = 3):
    """Total two-line squared residual for every split index.

    Lines are fitted to points ``[0..b]`` and ``[b..L-1]`` (sharing point
    ``b``). Entries for splits leaving fewer than ``min_side`` points on a
    side are inf. Inputs should be centred by the caller.
    """
    size = len(xc)
    zero = np.zeros(1)
    sx = np.concatenate([zero, np.cumsum(xc)])
    sy = np.concatenate([zero, np.cumsum(yc)])
    sxx = np.concatenate([zero, np.cumsum(xc * xc)])
    syy = np.concatenate([zero, np.cumsum(yc * yc)])
    sxy = np.concatenate([zero, np.cumsum(xc * yc)])

    sse = np.full(size, np.inf)
    b = np.arange(min_side - 1, size - min_side + 1)
    if len(b) == 0:
        return sse
    left = _segment_sse(
        b + 1.0, sx[b + 1], sy[b + 1], sxx[b + 1], syy[b + 1], sxy[b + 1]
    )
    right = _segment_sse(
        size - b + 0.0,
        sx[size] - sx[b], sy[size] - sy[b],
        sxx[size] - sxx[b], syy[size] - syy[b], sxy[size] - sxy[b],
    )
    sse[b] = left + right
    return sse


def _segment_sse(n, sx, sy, sxx, syy, sxy):
    vxx = sxx - sx * sx / n
    vyy = syy - sy * sy / n
    vxy = sxy - sx * sy / n
    out = vyy - vxy * vxy / vxx
    return np.maximum(out, 0.0)


def conv1d_forward(x, w, bias):
    """Same-length multi-channel convolution with zero padding.

    ``x``: (batch, c_in, m); ``w``: (c_out, c_in, k) with odd ``k = 2p + 1``,
    where ``w[..., j]`` is the tap for offset ``j - p``;
    ``y[b, o, n] = bias[o] + sum_{c, j} x[b, c, n - (j - p)] * w[o, c, j]``.
    """
    batch, c_in, m = x.shape
    c_out, _, k = w.shape
    p = k // 2
    xp = np.zeros((batch, c_in, m + 2 * p))
    xp[:, :, p:p + m] = x
    y = np.empty((batch, c_out, m))
    y[:] = bias[None, :, None]
    for j in range(k):
        start = 2 * p - j
        y += np.einsum("bcn,oc->bon", xp[:, :, start:start + m], w[:, :, j])
    return y


def conv1d_backward(x, w, grad_y):
    """Gradients of :func:`conv1d_forward` w.r.t. (x, w, bias)."""
    batch, c_in, m = x.shape
    c_out, _, k = w.shape
    p = k // 2
    xp = np.zeros((batch, c_in, m + 2 * p))
    xp[:, :, p:p + m] = x
    gp = np.zeros((batch, c_out, m + 2 * p))
    gp[:, :, p:p + m] = grad_y
    grad_w = np.empty_like(w)
    grad_x = np.zeros_like(x)
    for j in range(k):
        start = 2 * p - j
        grad_w[:, :, j] = np.einsum("bon,bcn->oc", grad_y, xp[:, :, start:start + m])
        # x[i] feeds y[i + j - p]
        shift = j
        grad_x += np.einsum("bon,oc->bcn", gp[:, :, shift:shift + m], w[:, :, j])
    grad_b = grad_y.sum(axis=(0, 2))
    return grad_x, grad_w, grad_b
