"""Input preprocessing: padding, bone/motion streams and on-disk sequences.

Sequence file layout (all integers little-endian)::

    magic     4 bytes  b"SKSQ"
    version   uint16   (currently 1)
    C, T, N   3 x uint32
    label     int32    (-1 when unlabeled)
    name_len  uint16, then that many bytes of UTF-8 topology name
    payload   C*T*N float32, (C, T, N) row-major

A dataset directory holds such files plus ``manifest.csv`` with columns
``file,split``.
"""

import csv
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MAGIC = b"SKSQ"
VERSION = 1
_HEADER = struct.Struct("<4sH3IiH")
MANIFEST = "manifest.csv"
STREAMS = ("joint", "bone", "joint_motion", "bone_motion", "joint_bone")


class SequenceFormatError(ValueError):
    pass


def pad_repeat(raw, t_target):
    """Tile frames cyclically along axis 1 and cut at ``t_target``."""
    raw = np.asarray(raw)
    t_raw = raw.shape[1]
    if t_raw < 1:
        raise ValueError("cannot pad an empty sequence")
    idx = np.arange(t_target) % t_raw
    return raw[:, idx, :]


def bones(joints, topology):
    """Vectors from each bone's source joint to its target; zero at the center."""
    joints = np.asarray(joints)
    out = np.zeros_like(joints)
    for s, t in topology.bones:
        out[..., t - 1] = joints[..., t - 1] - joints[..., s - 1]
    return out


def motion(x):
    """Forward frame difference along axis -2, with a zero last frame."""
    x = np.asarray(x)
    out = np.zeros_like(x)
    out[..., :-1, :] = x[..., 1:, :] - x[..., :-1, :]
    return out


def fuse_joint_bone(joints, bone_vectors):
    """Concatenate on the channel axis, joints first."""
    joints, bone_vectors = np.asarray(joints), np.asarray(bone_vectors)
    if joints.shape != bone_vectors.shape:
        raise ValueError(f"shape mismatch: {joints.shape} vs {bone_vectors.shape}")
    return np.concatenate([joints, bone_vectors], axis=-3)


def split_joint_bone(fused):
    c = fused.shape[-3] // 2
    return fused[..., :c, :, :], fused[..., c:, :, :]


def make_stream(joints, topology, stream):
    """Derive one of :data:`STREAMS` from raw joint coordinates ``(..., C, T, N)``."""
    if stream == "joint":
        return np.asarray(joints)
    if stream == "bone":
        return bones(joints, topology)
    if stream == "joint_motion":
        return motion(joints)
    if stream == "bone_motion":
        return motion(bones(joints, topology))
    if stream == "joint_bone":
        return fuse_joint_bone(joints, bones(joints, topology))
    raise ValueError(f"unknown stream {stream!r}; expected one of {STREAMS}")


def stream_channels(stream, base_channels=3):
    return 2 * base_channels if stream == "joint_bone" else base_channels


@dataclass
class SkeletonSequence:
    data: np.ndarray
    topology_name: str
    label: int = -1


def write_sequence(path, data, topology_name, label=-1):
    data = np.asarray(data, dtype="<f4")
    if data.ndim != 3:
        raise SequenceFormatError(f"sequence must be (C, T, N), got {data.shape}")
    name = topology_name.encode("utf-8")
    header = _HEADER.pack(MAGIC, VERSION, *data.shape, int(label), len(name))
    Path(path).write_bytes(header + name + np.ascontiguousarray(data).tobytes())


def read_sequence(path):
    blob = Path(path).read_bytes()
    if len(blob) < _HEADER.size:
        raise SequenceFormatError(f"{path}: truncated header")
    magic, version, c, t, n, label, name_len = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise SequenceFormatError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise SequenceFormatError(f"{path}: unsupported version {version}")
    start = _HEADER.size + name_len
    name = blob[_HEADER.size:start].decode("utf-8")
    expected = start + 4 * c * t * n
    if len(blob) != expected:
        raise SequenceFormatError(f"{path}: expected {expected} bytes, found {len(blob)}")
    data = np.frombuffer(blob, dtype="<f4", offset=start).reshape(c, t, n)
    return SkeletonSequence(data.astype(np.float32), name, label)


def write_manifest(directory, entries):
    with open(Path(directory) / MANIFEST, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["file", "split"])
        writer.writerows(entries)


def read_manifest(directory):
    path = Path(directory) / MANIFEST
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if rows and set(rows[0]) != {"file", "split"}:
        raise SequenceFormatError(f"{path}: expected columns file,split")
    return [(r["file"], r["split"]) for r in rows]


@dataclass
class Dataset:
    """An in-memory labeled split: ``data`` is ``(S, C, T, N)``."""

    data: np.ndarray
    labels: np.ndarray

    def __len__(self):
        return len(self.labels)


def load_split(directory, split, topology, stream="joint_bone", frames=None):
    """Read every ``split`` file from a dataset directory into one array,
    padding or truncating each sequence to ``frames`` when given."""
    directory = Path(directory)
    xs, ys = [], []
    for fname, s in read_manifest(directory):
        if s != split:
            continue
        seq = read_sequence(directory / fname)
        if seq.data.shape[2] != topology.num_joints:
            raise SequenceFormatError(
                f"{fname}: {seq.data.shape[2]} joints, topology has {topology.num_joints}")
        raw = seq.data.astype(np.float64)
        if frames is not None:
            raw = pad_repeat(raw, frames)
        xs.append(make_stream(raw, topology, stream))
        ys.append(seq.label)
    if not xs:
        raise SequenceFormatError(f"{directory}: no files in split '{split}'")
    return Dataset(np.stack(xs), np.asarray(ys, dtype=np.int64))
