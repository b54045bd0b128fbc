"""Pure numpy versions of the hot kernels.

Layouts follow the compiled module exactly: activations are ``(B, C, T, N)``
and temporal kernels are ``(C_out, C_in, K)``.
"""

import numpy as np


def _out_len(t, k, stride, pad):
    return (t + 2 * pad - k) // stride + 1


def _columns(x, k, stride, pad):
    # (B, C, K, T_out, N) view-backed stack of the shifted inputs
    b, c, t, n = x.shape
    t_out = _out_len(t, k, stride, pad)
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (0, 0))) if pad else x
    span = stride * (t_out - 1) + 1
    return np.stack([xp[:, :, j:j + span:stride, :] for j in range(k)], axis=2)


def temporal_conv_forward(x, w, stride, pad):
    k = w.shape[2]
    if k == 1 and pad == 0:
        xs = x[:, :, ::stride, :] if stride > 1 else x
        out = np.tensordot(w[:, :, 0], xs, axes=([1], [1]))
        return np.ascontiguousarray(np.moveaxis(out, 0, 1))
    cols = _columns(x, k, stride, pad)
    out = np.tensordot(w, cols, axes=([1, 2], [1, 2]))
    return np.ascontiguousarray(np.moveaxis(out, 0, 1))


def temporal_conv_backward_weight(g, x, k, stride, pad):
    if k == 1 and pad == 0:
        xs = x[:, :, ::stride, :] if stride > 1 else x
        gw = np.tensordot(g, xs, axes=([0, 2, 3], [0, 2, 3]))
        return np.ascontiguousarray(gw[:, :, None])
    cols = _columns(x, k, stride, pad)
    return np.ascontiguousarray(np.tensordot(g, cols, axes=([0, 2, 3], [0, 3, 4])))


def temporal_conv_backward_input(g, w, t, stride, pad):
    b, _, t_out, n = g.shape
    c_in, k = w.shape[1], w.shape[2]
    # (C_in, K, B, T_out, N)
    gcols = np.tensordot(w, g, axes=([0], [1]))
    gxp = np.zeros((b, c_in, t + 2 * pad, n), dtype=g.dtype)
    span = stride * (t_out - 1) + 1
    for j in range(k):
        gxp[:, :, j:j + span:stride, :] += np.moveaxis(gcols[:, j], 0, 1)
    return np.ascontiguousarray(gxp[:, :, pad:pad + t, :])


def top_indices(scores, k, temporal_order):
    # stable sort on the negated scores: descending, ties to the smaller index
    order = np.argsort(-scores, axis=1, kind="stable")[:, :k]
    if temporal_order:
        order = np.sort(order, axis=1)
    return np.ascontiguousarray(order, dtype=np.int64)
