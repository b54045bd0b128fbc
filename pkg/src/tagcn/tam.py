"""Temporal attention: per-frame scores, reweighting and top-k frame selection.

Each frame is summarized by the mean of its features over channels and
joints. A learnable ``T x T`` matrix mixes those summaries across time and a
sigmoid turns them into scores in ``(0, 1)``. The features are scaled by
their frame's score, and only the ``t_prime`` best-scoring frames continue
through the network.

Selection is a hard top-k, so its gradient is the pass-through kind: the
chosen frames receive the downstream gradient (and through their scores so
does the mixing matrix); dropped frames receive none.
"""

from dataclasses import dataclass

import numpy as np

from . import _kernels
from . import autograd as ag
from .layers import Module


@dataclass
class AttentionResult:
    scores: ag.Tensor
    indices: np.ndarray
    attended: ag.Tensor
    selected: ag.Tensor


def _batched(h):
    h = ag.as_tensor(h)
    if h.ndim == 3:
        return ag.reshape(h, (1,) + h.shape), True
    if h.ndim != 4:
        raise ag.ShapeError(f"expected (C,T,N) or (B,C,T,N), got {h.shape}")
    return h, False


def attention_scores(h, theta):
    """``sigmoid(mean_{c,n} H[:, t, :] @ theta)``; shape ``(B, T)`` or ``(T,)``."""
    h4, single = _batched(h)
    theta = ag.as_tensor(theta)
    t = h4.shape[2]
    if theta.shape != (t, t):
        raise ag.ShapeError(f"theta must be {t}x{t} for {t} frames, got {theta.shape}")
    pooled = ag.mean(h4, axis=(1, 3))
    a = ag.sigmoid(ag.matmul(pooled, theta))
    return ag.reshape(a, (t,)) if single else a


def apply_attention(h, a):
    """``ReLU(H * a)`` with the scores broadcast over channels and joints."""
    h4, single = _batched(h)
    a = ag.as_tensor(a)
    b, _, t, _ = h4.shape
    if a.size != b * t:
        raise ag.ShapeError(f"need {t} scores per sample, got shape {a.shape}")
    out = ag.relu(h4 * ag.reshape(a, (b, 1, t, 1)))
    return ag.reshape(out, out.shape[1:]) if single else out


def top_frames(scores, t_prime, preserve_temporal_order=True):
    """Indices of the ``t_prime`` highest scores per row (ties to the smaller
    frame index), in frame order or descending-score order."""
    s = np.atleast_2d(np.asarray(scores))
    if s.dtype not in (np.float32, np.float64):
        s = s.astype(np.float64)
    t = s.shape[1]
    if not 1 <= t_prime <= t:
        raise ValueError(f"t_prime must lie in [1, {t}], got {t_prime}")
    return _kernels.top_indices(np.ascontiguousarray(s), int(t_prime),
                                bool(preserve_temporal_order))


def select_top(h_hat, a, t_prime, preserve_temporal_order=True):
    h4, single = _batched(h_hat)
    scores = ag.as_tensor(a).data.reshape(h4.shape[0], h4.shape[2])
    idx = top_frames(scores, t_prime, preserve_temporal_order)
    out = ag.gather_frames(h4, idx)
    if single:
        return ag.reshape(out, out.shape[1:]), idx[0]
    return out, idx


class TemporalAttention(Module):
    """Learnable frame scorer and selector for a fixed number of frames.

    ``theta`` starts at the identity plus uniform noise of amplitude
    ``1/sqrt(T)``.
    """

    def __init__(self, frames, t_prime, preserve_temporal_order=True, rng=None):
        super().__init__()
        if not 1 <= t_prime <= frames:
            raise ValueError(f"t_prime must lie in [1, {frames}], got {t_prime}")
        rng = rng if rng is not None else np.random.default_rng()
        self.frames, self.t_prime = frames, t_prime
        self.preserve_temporal_order = preserve_temporal_order
        amp = 1.0 / np.sqrt(frames)
        self.theta = self.register_parameter(
            "theta", np.eye(frames) + rng.uniform(-amp, amp, size=(frames, frames)))

    def forward(self, h):
        return tam_forward(h, self)


def tam_forward(h, module):
    a = attention_scores(h, module.theta)
    attended = apply_attention(h, a)
    selected, idx = select_top(attended, a, module.t_prime, module.preserve_temporal_order)
    return AttentionResult(a, idx, attended, selected)
