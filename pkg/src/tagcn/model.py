"""Network assembly: the 6-layer attention model, the 9-layer baseline,
classifier head, prediction and multi-stream score fusion."""

import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
import yaml

from . import autograd as ag
from .graph import graph_for, resolve_topology
from .layers import Linear, Module, STBlock
from .tam import TemporalAttention


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class LayerSpec:
    out_channels: int
    stride: int = 1
    use_temporal: bool = True
    use_residual: bool = True


TAGCN_PLAN = (
    LayerSpec(64, 1, False, False),
    LayerSpec(64, 1, False, False),
    LayerSpec(128, 2),
    LayerSpec(128, 1),
    LayerSpec(256, 2),
    LayerSpec(256, 1),
)

STGCN_PLAN = (
    LayerSpec(64), LayerSpec(64), LayerSpec(64), LayerSpec(64),
    LayerSpec(128, 2), LayerSpec(128), LayerSpec(128),
    LayerSpec(256, 2), LayerSpec(256),
)


@dataclass(frozen=True)
class ModelConfig:
    input_channels: int = 6
    num_joints: int = 25
    sequence_length: int = 300
    num_classes: int = 60
    layers: tuple = TAGCN_PLAN
    tam_after: int = 2          # number of blocks before the attention module; 0 disables it
    t_prime: int = 150
    mask_mode: str = "add"
    width_scale: float = 1.0
    temporal_kernel: int = 9
    topology: str = "ntu25"
    bias: bool = True
    preserve_temporal_order: bool = True
    mask_init: float = None
    bn_momentum: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(
            l if isinstance(l, LayerSpec) else LayerSpec(**l) for l in self.layers))

    def channels(self):
        """Per-layer output channels after width scaling (never below 1)."""
        return [max(1, math.floor(l.out_channels * self.width_scale)) for l in self.layers]

    def temporal_extents(self):
        """Frames leaving each block, accounting for selection and strides."""
        t, out = self.sequence_length, []
        for i, spec in enumerate(self.layers):
            if self.tam_after and i == self.tam_after:
                t = self.t_prime
            if spec.use_temporal:
                pad = (self.temporal_kernel - 1) // 2
                t = (t + 2 * pad - self.temporal_kernel) // spec.stride + 1
            out.append(t)
        return out

    def frames_into_tam(self):
        """Temporal extent the attention module scores (before selection)."""
        return self.temporal_extents()[self.tam_after - 1]

    def validate(self):
        problems = []
        if not self.layers:
            problems.append("layer plan is empty")
        for name in ("input_channels", "num_joints", "sequence_length", "num_classes"):
            if getattr(self, name) < 1:
                problems.append(f"{name} must be positive")
        if self.width_scale <= 0:
            problems.append("width_scale must be positive")
        if self.temporal_kernel % 2 != 1:
            problems.append("temporal_kernel must be odd")
        if self.mask_mode not in ("multiply", "add"):
            problems.append(f"mask_mode must be 'multiply' or 'add', got {self.mask_mode!r}")
        for i, spec in enumerate(self.layers):
            if spec.out_channels < 1 or spec.stride < 1:
                problems.append(f"layer {i + 1}: channels and stride must be positive")
            if not spec.use_temporal and (spec.stride != 1 or spec.use_residual):
                problems.append(f"layer {i + 1}: stride/residual need the temporal stage")
        if self.tam_after:
            if not 0 < self.tam_after < len(self.layers):
                problems.append(f"tam_after must lie in [1, {len(self.layers) - 1}]")
            else:
                t_in = self.frames_into_tam()
                if not 1 <= self.t_prime <= t_in:
                    problems.append(f"t_prime must lie in [1, {t_in}], got {self.t_prime}")
        if problems:
            raise ConfigError("invalid model config: " + "; ".join(problems))
        return self

    def to_dict(self):
        d = asdict(self)
        d["layers"] = [asdict(l) for l in self.layers]
        return d

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown model config fields: {sorted(unknown)}")
        return cls(**d)


def tagcn_config(**overrides):
    return ModelConfig(**overrides)


def stgcn_config(**overrides):
    base = dict(input_channels=3, layers=STGCN_PLAN, tam_after=0, t_prime=0,
                mask_mode="multiply")
    base.update(overrides)
    return ModelConfig(**base)


def save_config(path, config):
    Path(path).write_text(yaml.safe_dump(config.to_dict(), sort_keys=False))


def load_config(path):
    return ModelConfig.from_dict(yaml.safe_load(Path(path).read_text()))


class Network(Module):
    """Stacked blocks, an optional attention module, global pooling and a
    fully connected classifier."""

    def __init__(self, config, topology=None, seed=0):
        super().__init__()
        config.validate()
        rng = np.random.default_rng(seed)
        self.config = config
        self.topology = topology if topology is not None else resolve_topology(config.topology)
        if self.topology.num_joints != config.num_joints:
            raise ConfigError(f"topology has {self.topology.num_joints} joints, "
                              f"config says {config.num_joints}")
        self.graph = graph_for(self.topology)
        self.blocks = []
        c_in = config.input_channels
        for i, (spec, c_out) in enumerate(zip(config.layers, config.channels())):
            block = STBlock(c_in, c_out, self.graph, spec.stride, spec.use_temporal,
                            spec.use_residual, config.mask_mode, config.temporal_kernel,
                            config.bias, config.mask_init, config.bn_momentum, rng)
            self.blocks.append(self.add_module(f"blocks.{i}", block))
            c_in = c_out
        self.tam = None
        if config.tam_after:
            self.tam = self.add_module("tam", TemporalAttention(
                config.frames_into_tam(), config.t_prime, config.preserve_temporal_order, rng))
        self.fc = self.add_module("fc", Linear(c_in, config.num_classes, config.bias, rng))

    def astype(self, dtype):
        for p in self.parameters():
            p.data = p.data.astype(dtype)
        return self

    def check_input(self, x):
        c, t, n = x.shape[-3:]
        cfg = self.config
        if c != cfg.input_channels or n != cfg.num_joints or \
                (self.tam is not None and t != cfg.sequence_length):
            raise ag.ShapeError(
                f"batch shape {tuple(x.shape)} does not match config "
                f"(C={cfg.input_channels}, T={cfg.sequence_length}, N={cfg.num_joints})")

    def forward(self, x, return_attention=False):
        x = ag.as_tensor(x)
        if x.ndim == 3:
            x = ag.reshape(x, (1,) + x.shape)
        self.check_input(x)
        attention = None
        for i, block in enumerate(self.blocks):
            if self.tam is not None and i == self.config.tam_after:
                attention = self.tam(x)
                x = attention.selected
            x = block(x)
        logits = self.fc(ag.global_avg_pool(x))
        return (logits, attention) if return_attention else logits


def build_tagcn(config=None, topology=None, seed=0):
    return Network(config if config is not None else tagcn_config(), topology, seed)


def build_stgcn_baseline(config=None, topology=None, seed=0):
    config = config if config is not None else stgcn_config()
    if config.layers != STGCN_PLAN or config.tam_after or config.mask_mode != "multiply":
        config = replace(config, layers=STGCN_PLAN, tam_after=0, t_prime=0,
                         mask_mode="multiply")
    return Network(config, topology, seed)


def forward(network, batch):
    return network(batch)


def softmax(logits, axis=-1):
    z = np.asarray(logits, dtype=np.float64)
    z = np.exp(z - z.max(axis=axis, keepdims=True))
    return z / z.sum(axis=axis, keepdims=True)


def predict(logits):
    """Class indices (argmax, ties to the smaller index) and softmax scores."""
    data = logits.data if isinstance(logits, ag.Tensor) else np.asarray(logits)
    probs = softmax(data)
    return probs.argmax(axis=-1), probs


def ensemble(score_sets):
    """Sum per-stream score arrays elementwise; return (fused, argmax)."""
    sets = [np.asarray(s, dtype=np.float64) for s in score_sets]
    if not sets:
        raise ValueError("ensemble needs at least one score set")
    if any(s.shape != sets[0].shape for s in sets):
        raise ValueError("score sets disagree in shape: " + ", ".join(str(s.shape) for s in sets))
    fused = np.sum(sets, axis=0)
    return fused, fused.argmax(axis=-1)


@dataclass
class MultiStreamModel:
    """Independent networks, one per input stream, fused at the softmax."""

    networks: dict = field(default_factory=dict)

    def predict(self, inputs):
        scores = []
        for name, net in self.networks.items():
            _, probs = predict(net(inputs[name]))
            scores.append(probs)
        return ensemble(scores)


def build_multistream(streams, config=None, topology=None, seed=0):
    """One network per stream, all built from the same config."""
    config = config if config is not None else tagcn_config()
    return MultiStreamModel({name: build_tagcn(config, topology, seed + k)
                             for k, name in enumerate(streams)})
