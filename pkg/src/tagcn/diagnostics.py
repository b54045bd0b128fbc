"""Randomized gradient-check cases for each layer type and the toy model.

Blocks and the full model are checked in eval mode with randomized running
statistics: with batch statistics a bias feeding batch norm has an exactly
zero gradient, which a relative-error test cannot distinguish from
finite-difference rounding. Train-mode batch norm is checked on its own.
"""

import numpy as np

from . import autograd as ag
from .graph import graph_for, resolve_topology
from .layers import BatchNorm, Conv2d, SpatialGraphConv, STBlock, TemporalConv
from .model import ModelConfig, build_tagcn
from .tam import TemporalAttention
from .training import cross_entropy

TOLERANCE = 1e-4
TARGETS = ("conv2d", "matmul_last", "batch_norm", "relu", "sigmoid", "pool",
           "spatial", "temporal", "block", "tam", "model")

TOY_MODEL = dict(num_joints=5, sequence_length=16, t_prime=8, num_classes=4,
                 width_scale=1 / 16, topology="toy5")


def toy_config(**overrides):
    """Channels (4, 4, 8, 8, 16, 16) on the 5-joint skeleton, T=16, T'=8."""
    return ModelConfig(**{**TOY_MODEL, **overrides})


def _randomize_stats(module, rng, spread=1.0):
    for m in module.modules():
        if isinstance(m, BatchNorm):
            m.running_mean[:] = rng.normal(0, spread, m.running_mean.shape)
            m.running_var[:] = rng.uniform(0.5, 2.0, m.running_var.shape)


def _calibrate_stats(network, x, rng, jitter=0.1):
    """Running statistics from one batch, then jittered, so eval-mode
    activations stay well scaled through every layer."""
    bns = [m for m in network.modules() if isinstance(m, BatchNorm)]
    saved = [m.momentum for m in bns]
    for m in bns:
        m.momentum = 1.0
    network.train()
    network(x)
    for m, mom in zip(bns, saved):
        m.momentum = mom
        m.running_mean += rng.normal(0, jitter, m.running_mean.shape)
        m.running_var *= rng.uniform(1 - jitter, 1 + jitter, m.running_var.shape)
    network.eval()


def _perturb_masks(module, rng, amp):
    for m in module.modules():
        if isinstance(m, SpatialGraphConv):
            for mk in m.masks:
                mk.data += rng.uniform(-amp, amp, mk.shape)


def _projection(shape, seed):
    """Fixed random weights turning an output into a scalar loss."""
    return ag.Tensor(np.random.default_rng(seed).normal(size=shape))


def case(target, seed):
    """``(loss_fn, leaves)`` for one randomized instance of ``target``."""
    rng = np.random.default_rng(seed)
    graph = graph_for(resolve_topology("toy5"))
    x = ag.Tensor(rng.normal(size=(2, 3, 6, 5)), requires_grad=True)
    weights = {}

    def weighted(out):
        if out.shape not in weights:
            weights[out.shape] = _projection(out.shape, seed + 1)
        return ag.tsum(out * weights[out.shape])

    if target == "conv2d":
        layer = Conv2d(3, 4, kernel_t=3, stride_t=2, pad_t=1, rng=rng)
        return (lambda: weighted(layer(x))), {"x": x, **dict(layer.named_parameters())}
    if target == "matmul_last":
        m = ag.Tensor(rng.normal(size=(5, 5)), requires_grad=True)
        return (lambda: weighted(ag.matmul_last(x, m))), {"x": x, "m": m}
    if target == "batch_norm":
        bn = BatchNorm(3)
        bn.gamma.data[:] = rng.uniform(0.5, 1.5, 3)
        bn.beta.data[:] = rng.normal(size=3)
        return (lambda: weighted(bn(x))), {"x": x, **dict(bn.named_parameters())}
    if target == "relu":
        return (lambda: weighted(ag.relu(x))), {"x": x}
    if target == "sigmoid":
        return (lambda: weighted(ag.sigmoid(x))), {"x": x}
    if target == "pool":
        return (lambda: weighted(ag.global_avg_pool(x))), {"x": x}
    if target == "spatial":
        mode = ("multiply", "add")[seed % 2]
        layer = SpatialGraphConv(3, 4, graph, mode, rng=rng)
        _perturb_masks(layer, rng, 0.5)
        return (lambda: weighted(layer(x))), {"x": x, **dict(layer.named_parameters())}
    if target == "temporal":
        layer = TemporalConv(3, 4, kernel_t=3, stride_t=2, rng=rng)
        return (lambda: weighted(layer(x))), {"x": x, **dict(layer.named_parameters())}
    if target == "block":
        layer = STBlock(3, 4, graph, stride=2, kernel_t=3, rng=rng).eval()
        _randomize_stats(layer, rng)
        _perturb_masks(layer, rng, 0.3)
        return (lambda: weighted(layer(x))), {"x": x, **dict(layer.named_parameters())}
    if target == "tam":
        h = ag.Tensor(rng.uniform(0.1, 1.0, size=(2, 3, 6, 5)), requires_grad=True)
        tam = TemporalAttention(6, 3, rng=rng)
        return (lambda: weighted(tam(h).selected)), {"h": h, **dict(tam.named_parameters())}
    if target == "model":
        net = build_tagcn(toy_config(), seed=seed)
        _perturb_masks(net, rng, 0.3)
        xm = ag.Tensor(rng.normal(size=(2, 6, 16, 5)), requires_grad=True)
        _calibrate_stats(net, xm.data, rng)
        labels = np.array([0, 3])
        return (lambda: cross_entropy(net(xm), labels)), \
            {"x": xm, **dict(net.named_parameters())}
    raise ValueError(f"unknown gradcheck target '{target}'; choose from {TARGETS}")


def check(target, seed, max_coords=None):
    """``{tensor name: max relative error}`` for one randomized instance."""
    loss_fn, leaves = case(target, seed)
    return ag.check_tensors(loss_fn, leaves, max_coords=max_coords,
                            rng=np.random.default_rng(seed))
