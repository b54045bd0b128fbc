"""Spatial graph convolution, temporal convolution and the residual block.

A spatial layer mixes channels with one 1x1 kernel per partition and then
aggregates joints through that partition's normalized adjacency combined
with a learnable mask, either multiplicatively or additively::

    multiply:  ReLU( sum_p  conv_p(X) . (A_p * M_p)^T )
    add:       ReLU( sum_p  conv_p(X) . (A_p + M_p)^T )

where ``.`` contracts the joint axis. The transpose appears because
partition matrices are stored row-per-joint (see :mod:`tagcn.graph`).
"""

import numpy as np

from . import autograd as ag
from .autograd import Tensor

MASK_MODES = ("multiply", "add")


class Module:
    """Minimal parameter container with ordered, dotted names."""

    def __init__(self):
        self._parameters = {}
        self._buffers = {}
        self._modules = {}
        self.training = True

    def register_parameter(self, name, value):
        t = value if isinstance(value, Tensor) else Tensor(value)
        t.requires_grad = True
        self._parameters[name] = t
        return t

    def register_buffer(self, name, value):
        self._buffers[name] = np.asarray(value, dtype=np.float64)
        return self._buffers[name]

    def add_module(self, name, module):
        self._modules[name] = module
        return module

    def named_parameters(self, prefix=""):
        for name, p in self._parameters.items():
            yield prefix + name, p
        for mname, m in self._modules.items():
            yield from m.named_parameters(f"{prefix}{mname}.")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix=""):
        for name, b in self._buffers.items():
            yield prefix + name, b
        for mname, m in self._modules.items():
            yield from m.named_buffers(f"{prefix}{mname}.")

    def modules(self):
        yield self
        for m in self._modules.values():
            yield from m.modules()

    def train(self, mode=True):
        for m in self.modules():
            m.training = mode
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def state_dict(self):
        """Copies of every parameter and buffer, keyed by dotted name."""
        state = {name: p.data.copy() for name, p in self.named_parameters()}
        state.update({name: b.copy() for name, b in self.named_buffers()})
        return state

    def load_state_dict(self, state):
        params = dict(self.named_parameters())
        buffers = dict(self.named_buffers())
        expected = set(params) | set(buffers)
        if set(state) != expected:
            missing = sorted(expected - set(state))
            extra = sorted(set(state) - expected)
            raise KeyError(f"state mismatch; missing={missing} unexpected={extra}")
        for name, value in state.items():
            target = params[name].data if name in params else buffers[name]
            if target.shape != value.shape:
                raise ValueError(f"{name}: shape {value.shape} != {target.shape}")
            target[...] = value

    def num_parameters(self):
        return sum(p.size for p in self.parameters())

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def _uniform(rng, bound, shape):
    return rng.uniform(-bound, bound, size=shape)


class Conv2d(Module):
    """``(C_out, C_in, k_t, 1)`` convolution along frames."""

    def __init__(self, in_channels, out_channels, kernel_t=1, stride_t=1, pad_t=0,
                 bias=True, rng=None):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng()
        self.in_channels, self.out_channels = in_channels, out_channels
        self.kernel_t, self.stride_t, self.pad_t = kernel_t, stride_t, pad_t
        bound = 1.0 / np.sqrt(in_channels * kernel_t)
        self.weight = self.register_parameter(
            "weight", _uniform(rng, bound, (out_channels, in_channels, kernel_t, 1)))
        self.bias = self.register_parameter("bias", _uniform(rng, bound, out_channels)) \
            if bias else None

    def forward(self, x):
        return ag.conv2d(x, self.weight, self.bias, self.stride_t, self.pad_t)


class BatchNorm(Module):
    def __init__(self, channels, momentum=0.1, eps=1e-5):
        super().__init__()
        self.momentum, self.eps = momentum, eps
        self.gamma = self.register_parameter("gamma", np.ones(channels))
        self.beta = self.register_parameter("beta", np.zeros(channels))
        self.running_mean = self.register_buffer("running_mean", np.zeros(channels))
        self.running_var = self.register_buffer("running_var", np.ones(channels))

    def forward(self, x):
        return ag.batch_norm(x, self.gamma, self.beta, self.running_mean, self.running_var,
                             self.training, self.momentum, self.eps)


class Linear(Module):
    def __init__(self, in_features, out_features, bias=True, rng=None):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng()
        bound = 1.0 / np.sqrt(in_features)
        self.weight = self.register_parameter(
            "weight", _uniform(rng, bound, (in_features, out_features)))
        self.bias = self.register_parameter("bias", _uniform(rng, bound, out_features)) \
            if bias else None

    def forward(self, x):
        y = ag.matmul(x, self.weight)
        return y + self.bias if self.bias is not None else y


class SpatialGraphConv(Module):
    """Three partition-specific 1x1 kernels plus one learnable mask each.

    Masks start at ones in multiply mode and at zeros in add mode, so both
    modes begin as plain normalized-graph propagation; pass ``mask_init`` to
    override.
    """

    def __init__(self, in_channels, out_channels, graph, mask_mode="add", bias=True,
                 mask_init=None, rng=None):
        super().__init__()
        if mask_mode not in MASK_MODES:
            raise ValueError(f"mask_mode must be one of {MASK_MODES}, got {mask_mode!r}")
        if graph.normalized is None:
            raise ValueError("graph must be normalized before building a layer")
        rng = rng if rng is not None else np.random.default_rng()
        self.in_channels, self.out_channels = in_channels, out_channels
        self.graph = graph
        self.mask_mode = mask_mode
        n = graph.num_joints
        bound = 1.0 / np.sqrt(in_channels)
        if mask_init is None:
            mask_init = 1.0 if mask_mode == "multiply" else 0.0
        self.weights, self.masks = [], []
        for p in range(3):
            self.weights.append(self.register_parameter(
                f"weight.{p}", _uniform(rng, bound, (out_channels, in_channels, 1, 1))))
        for p in range(3):
            self.masks.append(self.register_parameter(f"mask.{p}", np.full((n, n), mask_init)))
        self.bias = self.register_parameter("bias", _uniform(rng, bound, out_channels)) \
            if bias else None

    def combined(self, p, graph=None):
        """The effective joint-mixing matrix of partition ``p`` (row-per-joint)."""
        mask = self.masks[p]
        a_hat = Tensor((graph or self.graph).normalized[p].astype(mask.dtype))
        if self.mask_mode == "multiply":
            return a_hat * mask
        return a_hat + mask

    def forward(self, x, activate=True):
        return spatial_forward(x, self, self.graph, activate)


def spatial_forward(x, layer, graph=None, activate=True):
    graph = graph if graph is not None else layer.graph
    x = ag.as_tensor(x)
    if x.shape[-1] != graph.num_joints:
        raise ag.ShapeError(
            f"input has {x.shape[-1]} joints but the graph has {graph.num_joints}")
    out = None
    for p in range(3):
        mixing = ag.transpose(layer.combined(p, graph))
        term = ag.matmul_last(ag.conv2d(x, layer.weights[p]), mixing)
        out = term if out is None else out + term
    if layer.bias is not None:
        view = (-1, 1, 1) if x.ndim == 3 else (1, -1, 1, 1)
        out = out + ag.reshape(layer.bias, view)
    return ag.relu(out) if activate else out


class TemporalConv(Module):
    """Per-joint convolution along frames with an odd kernel and same-padding."""

    def __init__(self, in_channels, out_channels, kernel_t=9, stride_t=1, bias=True, rng=None):
        super().__init__()
        if kernel_t % 2 != 1:
            raise ValueError(f"temporal kernel must be odd, got {kernel_t}")
        self.kernel_t, self.stride_t = kernel_t, stride_t
        self.pad_t = (kernel_t - 1) // 2
        self.conv = self.add_module(
            "conv", Conv2d(in_channels, out_channels, kernel_t, stride_t, self.pad_t, bias, rng))

    def forward(self, x):
        return self.conv(x)


def temporal_forward(x, layer):
    return layer(x)


class STBlock(Module):
    """Spatial conv, batch norm, ReLU, then optionally temporal conv, batch
    norm, residual add and a final ReLU.

    Blocks without the temporal stage (the first two layers of the attention
    model) stop after the first ReLU and carry no residual.
    """

    def __init__(self, in_channels, out_channels, graph, stride=1, use_temporal=True,
                 use_residual=True, mask_mode="add", kernel_t=9, bias=True, mask_init=None,
                 bn_momentum=0.1, rng=None):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng()
        if not use_temporal and (stride != 1 or use_residual):
            raise ValueError("a block without temporal convolution must have stride 1 "
                             "and no residual")
        self.in_channels, self.out_channels = in_channels, out_channels
        self.stride, self.use_temporal, self.use_residual = stride, use_temporal, use_residual
        self.spatial = self.add_module("spatial", SpatialGraphConv(
            in_channels, out_channels, graph, mask_mode, bias, mask_init, rng))
        self.bn_spatial = self.add_module("bn_spatial", BatchNorm(out_channels, bn_momentum))
        self.temporal = self.bn_temporal = self.residual = None
        if use_temporal:
            self.temporal = self.add_module("temporal", TemporalConv(
                out_channels, out_channels, kernel_t, stride, bias, rng))
            self.bn_temporal = self.add_module("bn_temporal", BatchNorm(out_channels, bn_momentum))
            if use_residual and (in_channels != out_channels or stride != 1):
                self.residual = self.add_module("residual", Conv2d(
                    in_channels, out_channels, 1, stride, 0, bias=False, rng=rng))

    @property
    def residual_kind(self):
        if not self.use_temporal or not self.use_residual:
            return "none"
        return "identity" if self.residual is None else "projection"

    def forward(self, x, graph=None):
        return block_forward(x, self, graph)


def block_forward(x, block, graph=None):
    y = spatial_forward(x, block.spatial, graph, activate=False)
    y = ag.relu(block.bn_spatial(y))
    if not block.use_temporal:
        return y
    y = block.bn_temporal(block.temporal(y))
    kind = block.residual_kind
    if kind == "identity":
        y = y + x
    elif kind == "projection":
        y = y + block.residual(x)
    return ag.relu(y)
