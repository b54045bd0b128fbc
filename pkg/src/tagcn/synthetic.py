"""Planted-window synthetic skeleton actions.

Every sample starts from a shared rest pose with a shared slow sway. Inside
a known frame window one joint per class oscillates with a class-specific
axis and frequency; outside it all classes look alike up to noise. Samples
of one class differ only in the oscillation phase (plus noise).
"""

from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .graph import resolve_topology
from .streams import Dataset, make_stream, write_manifest, write_sequence


@dataclass(frozen=True)
class SyntheticSpec:
    topology: str = "toy5"
    num_classes: int = 4
    frames: int = 16
    window: tuple = (9, 13)         # half-open, 0-based frame range
    amplitude: float = 2.0
    offset: float = 0.0             # constant displacement of the moving joint in the window
    sway: float = 0.2
    noise: float = 0.05
    samples_per_class: int = 200
    held_out_per_class: int = 50
    channels: int = 3

    def validate(self):
        lo, hi = self.window
        if not 0 <= lo < hi <= self.frames:
            raise ValueError(f"window {self.window} must lie inside [0, {self.frames}]")
        if not 0 <= self.held_out_per_class < self.samples_per_class:
            raise ValueError("held_out_per_class must be below samples_per_class")
        n = resolve_topology(self.topology).num_joints
        if self.num_classes > (n - 1) * self.channels:
            raise ValueError(f"at most {(n - 1) * self.channels} distinguishable classes "
                             f"for {n} joints and {self.channels} channels")
        return self

    def signature(self, k):
        """(joint, axis, cycles across the window) moved by class ``k``.

        Each class owns a distinct (joint, axis) pair, so no two classes
        share a moving coordinate.
        """
        n = resolve_topology(self.topology).num_joints
        joint = 1 + k % (n - 1)              # never the center joint's slot 0
        axis = (k // (n - 1)) % self.channels
        return joint, axis, 1.0 + 0.5 * (k % 2)


def rest_pose(topology, channels=3, seed=12345):
    rng = np.random.default_rng(seed)
    return rng.normal(0.0, 1.0, size=(channels, topology.num_joints))


def render(spec, k, phase, rng):
    """One ``(C, T, N)`` sample of class ``k`` with the given phase."""
    topo = resolve_topology(spec.topology)
    t = np.arange(spec.frames)
    x = np.repeat(rest_pose(topo, spec.channels)[:, None, :], spec.frames, axis=1)
    x += spec.sway * np.sin(2 * np.pi * t / spec.frames)[None, :, None]
    lo, hi = spec.window
    joint, axis, cycles = spec.signature(k)
    u = (t[lo:hi] - lo) / (hi - lo)
    x[axis, lo:hi, joint] += spec.amplitude * np.sin(2 * np.pi * cycles * u + phase) \
        + spec.offset
    if spec.noise:
        x += rng.normal(0.0, spec.noise, size=x.shape)
    return x


def generate_arrays(spec, seed=0):
    """``(data, labels, split)`` with a class-balanced held-out split."""
    spec.validate()
    rng = np.random.default_rng(seed)
    xs, ys, split = [], [], []
    for k in range(spec.num_classes):
        for i in range(spec.samples_per_class):
            phase = rng.uniform(0.0, 0.5 * np.pi)
            xs.append(render(spec, k, phase, rng))
            ys.append(k)
            split.append("val" if i < spec.held_out_per_class else "train")
    return np.stack(xs), np.asarray(ys, dtype=np.int64), np.asarray(split)


def generate_synthetic(spec, directory, seed=0):
    """Write one sequence file per sample plus ``manifest.csv``; returns the
    number of files. A fixed seed gives byte-identical output."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    data, labels, split = generate_arrays(spec, seed)
    entries = []
    for i, (x, y, s) in enumerate(zip(data, labels, split)):
        fname = f"s{i:05d}_c{y}.sks"
        write_sequence(directory / fname, x, spec.topology, int(y))
        entries.append((fname, s))
    write_manifest(directory, entries)
    return len(entries)


def splits(spec, seed=0, stream="joint_bone"):
    """In-memory ``(train, val)`` datasets in the chosen input stream."""
    data, labels, split = generate_arrays(spec, seed)
    data = data.astype(np.float32).astype(np.float64)   # match the on-disk precision
    topo = resolve_topology(spec.topology)
    x = make_stream(data, topo, stream)
    tr, va = split == "train", split == "val"
    return Dataset(x[tr], labels[tr]), Dataset(x[va], labels[va])


def spec_dict(spec):
    d = asdict(spec)
    d["window"] = list(spec.window)
    return d


def window_recall(indices, window):
    """Mean fraction of the planted window's frames among the selected ones."""
    frames = set(range(*window))
    rows = np.atleast_2d(indices)
    return float(np.mean([len(frames & set(r.tolist())) / len(frames) for r in rows]))


def random_recall(frames, t_prime):
    """Expected window recall of a uniformly random ``t_prime``-subset: every
    frame is chosen with probability ``t_prime / frames``."""
    return t_prime / frames


def window_score_mass(scores, window):
    """Mean share of the attention scores that falls inside the window."""
    s = np.atleast_2d(np.asarray(scores))
    lo, hi = window
    return float((s[:, lo:hi].sum(axis=1) / s.sum(axis=1)).mean())
