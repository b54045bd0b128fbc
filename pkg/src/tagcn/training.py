"""Loss, optimizer, learning-rate schedule, training loop and evaluation."""

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import autograd as ag
from . import checkpoint


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.1
    decay_epochs: tuple = (30, 40)
    decay_factor: float = 0.1
    epochs: int = 50
    weight_decay: float = 1e-4
    momentum: float = 0.9
    nesterov: bool = False
    batch_size: int = 8
    seed: int = 0
    precision: str = "float64"
    stop_at_train_accuracy: float = None   # optional early stop once reached

    def __post_init__(self):
        object.__setattr__(self, "decay_epochs", tuple(int(e) for e in self.decay_epochs))

    def validate(self):
        problems = []
        if self.lr <= 0 or self.decay_factor <= 0:
            problems.append("lr and decay_factor must be positive")
        if self.epochs < 1 or self.batch_size < 1:
            problems.append("epochs and batch_size must be positive")
        if self.weight_decay < 0 or not 0 <= self.momentum < 1:
            problems.append("weight_decay must be >= 0 and momentum in [0, 1)")
        d = self.decay_epochs
        if any(b <= a for a, b in zip(d, d[1:])) or any(e <= 0 or e >= self.epochs for e in d):
            problems.append(f"decay epochs {list(d)} must increase strictly within (0, {self.epochs})")
        if self.precision not in ("float64", "float32"):
            problems.append(f"precision must be float64 or float32, got {self.precision!r}")
        if problems:
            raise ValueError("invalid train config: " + "; ".join(problems))
        return self

    def to_dict(self):
        d = asdict(self)
        d["decay_epochs"] = list(self.decay_epochs)
        return d

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown train config fields: {sorted(unknown)}")
        return cls(**d)


NTU_SCHEDULE = TrainConfig(lr=0.1, decay_epochs=(30, 40), epochs=50, batch_size=32)
KINETICS_SCHEDULE = TrainConfig(lr=0.1, decay_epochs=(45, 55), epochs=65, batch_size=128)


def lr_at(epoch, config):
    """Piecewise-constant rate: divided by ``1/decay_factor`` at each boundary."""
    if not 0 <= epoch < config.epochs:
        raise ValueError(f"epoch {epoch} outside [0, {config.epochs})")
    drops = sum(1 for e in config.decay_epochs if epoch >= e)
    return config.lr * config.decay_factor ** drops


def cross_entropy(logits, labels):
    """Mean of ``-log softmax(logits)[label]`` over the batch (0-based labels)."""
    logits = ag.as_tensor(logits)
    if logits.ndim == 1:
        logits = ag.reshape(logits, (1, logits.shape[0]))
    labels = np.atleast_1d(np.asarray(labels))
    k = logits.shape[1]
    if labels.shape != (logits.shape[0],) or not np.issubdtype(labels.dtype, np.integer):
        raise ValueError(f"need one integer label per row, got {labels!r}")
    if labels.min() < 0 or labels.max() >= k:
        raise ValueError(f"labels must lie in [0, {k - 1}], got {labels.tolist()}")
    picked = ag.pick(ag.log_softmax(logits), labels)
    return -ag.mean(picked)


def decay_exempt(name):
    """Biases and batch-norm affine parameters are not weight-decayed."""
    leaf = name.rsplit(".", 1)[-1]
    return leaf in ("bias", "gamma", "beta")


def sgd_step(params, grads, lr, momentum=0.0, weight_decay=0.0, velocities=None,
             decay_mask=None, nesterov=False):
    """In-place update ``v = m v + g + wd p;  p -= lr v`` for each array.

    ``velocities`` (list of arrays, updated in place) carries momentum state;
    ``decay_mask[i]`` false disables weight decay for ``params[i]``.
    """
    if len(params) != len(grads):
        raise ValueError("params and grads differ in length")
    for i, (p, g) in enumerate(zip(params, grads)):
        if p.shape != g.shape:
            raise ag.ShapeError(f"param {i}: shape {p.shape} vs grad {g.shape}")
        d = g
        if weight_decay and (decay_mask is None or decay_mask[i]):
            d = g + weight_decay * p
        if momentum:
            v = velocities[i]
            v *= momentum
            v += d
            d = d + momentum * v if nesterov else v
        p -= lr * d


class SGD:
    def __init__(self, named_params, momentum=0.9, weight_decay=1e-4, nesterov=False):
        self.names = [n for n, _ in named_params]
        self.params = [p for _, p in named_params]
        self.momentum, self.weight_decay, self.nesterov = momentum, weight_decay, nesterov
        self.decay_mask = [not decay_exempt(n) for n in self.names]
        self.velocities = [np.zeros_like(p.data) for p in self.params]

    def step(self, lr):
        grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in self.params]
        sgd_step([p.data for p in self.params], grads, lr, self.momentum, self.weight_decay,
                 self.velocities, self.decay_mask, self.nesterov)

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()


def _batches(n, batch_size, rng=None):
    order = rng.permutation(n) if rng is not None else np.arange(n)
    return [order[i:i + batch_size] for i in range(0, n, batch_size)]


def _logits(network, data, batch_size):
    out = [network(data[idx]).data for idx in _batches(len(data), batch_size)]
    return np.concatenate(out)


def topk_hits(logits, labels, k):
    """Whether each label ranks among the ``k`` largest logits (ties to the
    smaller class index)."""
    order = np.argsort(-np.asarray(logits), axis=1, kind="stable")[:, :k]
    return (order == np.asarray(labels)[:, None]).any(axis=1)


def evaluate(network, dataset, batch_size=64):
    """``(top1, top5)`` accuracies in eval mode."""
    was_training = network.training
    network.eval()
    try:
        logits = _logits(network, dataset.data, batch_size)
    finally:
        network.train(was_training)
    return float(topk_hits(logits, dataset.labels, 1).mean()), \
        float(topk_hits(logits, dataset.labels, 5).mean())


@dataclass
class TrainResult:
    log: list = field(default_factory=list)
    best_epoch: int = -1
    best_state: dict = None

    def to_json(self):
        return json.dumps(self.log, indent=1)


def train(network, train_set, config, val_set=None, checkpoint_path=None, progress=None):
    """Minibatch SGD over ``train_set``; returns the per-epoch log.

    Shuffling draws from ``config.seed`` alone, so equal seeds, data and
    initial weights give bit-identical logs. The state with the best
    validation accuracy (training accuracy without a validation set) is
    kept and optionally written to ``checkpoint_path``.
    """
    config.validate()
    dtype = np.dtype(config.precision)
    network.astype(dtype)
    train_x = np.asarray(train_set.data, dtype=dtype)
    val_x = np.asarray(val_set.data, dtype=dtype) if val_set is not None else None
    rng = np.random.default_rng(config.seed)
    opt = SGD(list(network.named_parameters()), config.momentum, config.weight_decay,
              config.nesterov)
    result = TrainResult()
    best = -math.inf
    for epoch in range(config.epochs):
        lr = lr_at(epoch, config)
        network.train()
        total, correct = 0.0, 0
        for idx in _batches(len(train_x), config.batch_size, rng):
            opt.zero_grad()
            logits = network(train_x[idx])
            loss = cross_entropy(logits, train_set.labels[idx])
            value = loss.item()
            if not np.isfinite(value):
                bad = [n for n, p in network.named_parameters() if not np.isfinite(p.data).all()]
                raise TrainingError(f"non-finite loss {value} at epoch {epoch}, lr {lr}; "
                                    f"non-finite parameters: {bad or 'none'}")
            loss.backward()
            opt.step(lr)
            total += value * len(idx)
            correct += int((logits.data.argmax(axis=1) == train_set.labels[idx]).sum())
        entry = {"epoch": epoch, "lr": lr, "loss": total / len(train_x),
                 "train_acc": correct / len(train_x)}
        if val_set is not None:
            entry["val_top1"], entry["val_top5"] = evaluate(network, _with_data(val_set, val_x))
        result.log.append(entry)
        if progress is not None:
            progress(entry)
        score = entry.get("val_top1", entry["train_acc"])
        if score > best:
            best, result.best_epoch = score, epoch
            result.best_state = network.state_dict()
            if checkpoint_path is not None:
                checkpoint.save(checkpoint_path, result.best_state)
        target = config.stop_at_train_accuracy
        if target is not None and entry["train_acc"] >= target:
            break
    return result


def _with_data(dataset, data):
    return type(dataset)(data, dataset.labels)


def save_log(path, result):
    Path(path).write_text(result.to_json())
