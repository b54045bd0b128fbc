"""Skeleton topologies and their partitioned, normalized adjacency matrices.

Joint indices are 1-based in topology files and in :class:`SkeletonTopology`
(matching how skeleton layouts are usually documented); every matrix is
0-based. Neighbourhoods are split three ways around a designated center
joint using unweighted hop distance:

* ``ROOT``: the joint itself;
* ``CENTRIPETAL``: neighbours strictly closer to the center;
* ``CENTRIFUGAL``: every other neighbour, including equidistant ones.

Partition matrices are stored row-wise: ``A[p][i, j] = 1`` means joint ``j``
belongs to partition ``p`` of joint ``i``'s neighbourhood.
"""

import functools
from collections import deque
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

ROOT, CENTRIPETAL, CENTRIFUGAL = 0, 1, 2
PARTITION_NAMES = ("root", "centripetal", "centrifugal")
EPSILON = 0.001


class TopologyError(ValueError):
    """A topology violates its invariants; ``violations`` lists each problem."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("invalid topology:\n  " + "\n  ".join(self.violations))


def _hops(num_joints, edges, center):
    adj = [[] for _ in range(num_joints)]
    for i, j in edges:
        adj[i - 1].append(j - 1)
        adj[j - 1].append(i - 1)
    dist = np.full(num_joints, -1, dtype=np.int64)
    dist[center - 1] = 0
    queue = deque([center - 1])
    while queue:
        u = queue.popleft()
        for v in adj[u]:
            if dist[v] < 0:
                dist[v] = dist[u] + 1
                queue.append(v)
    return dist


def topology_violations(num_joints, edges, center_joint, bones):
    """Human-readable invariant violations; empty when the topology is valid."""
    n = num_joints
    out = []
    if n < 1:
        return [f"num_joints must be positive, got {n}"]
    if not 1 <= center_joint <= n:
        out.append(f"center_joint {center_joint} outside [1, {n}]")
    seen = set()
    for k, (i, j) in enumerate(edges):
        if not (1 <= i <= n and 1 <= j <= n):
            out.append(f"edge {k} ({i}, {j}) has an endpoint outside [1, {n}]")
            continue
        if i == j:
            out.append(f"edge {k} ({i}, {j}) is a self loop")
            continue
        key = frozenset((i, j))
        if key in seen:
            out.append(f"edge {k} ({i}, {j}) is a duplicate")
        seen.add(key)
    if out:
        return out
    hop = _hops(n, edges, center_joint)
    unreachable = [str(v + 1) for v in np.flatnonzero(hop < 0)]
    if unreachable:
        out.append("graph is disconnected; unreachable joints: " + ", ".join(unreachable))
        return out
    targets = {}
    for k, (s, t) in enumerate(bones):
        if frozenset((s, t)) not in seen:
            out.append(f"bone {k} ({s}, {t}) is not an edge")
        elif hop[s - 1] >= hop[t - 1]:
            out.append(f"bone {k} ({s}, {t}) does not point away from the center")
        if t in targets:
            out.append(f"bone {k} ({s}, {t}) repeats target {t}")
        targets[t] = k
    if bones:
        if center_joint in targets:
            out.append(f"center joint {center_joint} must not be a bone target")
        missing = [str(v) for v in range(1, n + 1)
                   if v != center_joint and v not in targets]
        if missing:
            out.append("joints without an incoming bone: " + ", ".join(missing))
    return out


@dataclass(frozen=True)
class SkeletonTopology:
    name: str
    num_joints: int
    edges: tuple
    center_joint: int
    bones: tuple = field(default=())

    def __post_init__(self):
        object.__setattr__(self, "edges", tuple(tuple(int(v) for v in e) for e in self.edges))
        object.__setattr__(self, "bones", tuple(tuple(int(v) for v in b) for b in self.bones))
        problems = self.violations()
        if problems:
            raise TopologyError(problems)

    def violations(self):
        return topology_violations(self.num_joints, self.edges, self.center_joint, self.bones)

    def hop_distances(self):
        """0-based array of hop counts to the center joint."""
        return _hops(self.num_joints, self.edges, self.center_joint)

    def parents(self):
        """0-based bone source for every joint, -1 for the center."""
        out = np.full(self.num_joints, -1, dtype=np.int64)
        for s, t in self.bones:
            out[t - 1] = s - 1
        return out

    @classmethod
    def from_edges(cls, name, num_joints, edges, center_joint):
        """Build a topology whose bones run from each joint's closest-to-center
        neighbour (smallest index on ties) to the joint."""
        hop = _hops(num_joints, edges, center_joint)
        bones = []
        if (hop >= 0).all():
            for t in range(num_joints):
                if t == center_joint - 1:
                    continue
                nbrs = sorted({j - 1 for i, j in edges if i - 1 == t}
                              | {i - 1 for i, j in edges if j - 1 == t})
                src = min((v for v in nbrs if hop[v] == hop[t] - 1), default=None)
                if src is not None:
                    bones.append((src + 1, t + 1))
        return cls(name, num_joints, tuple(edges), center_joint, tuple(bones))

    def permuted(self, perm):
        """Relabel joints: old joint ``i`` (0-based) becomes ``perm[i]``."""
        perm = [int(p) for p in perm]
        m = lambda v: perm[v - 1] + 1  # noqa: E731
        return SkeletonTopology(
            self.name, self.num_joints,
            tuple((m(i), m(j)) for i, j in self.edges),
            m(self.center_joint),
            tuple((m(s), m(t)) for s, t in self.bones),
        )

    def to_yaml(self):
        lines = [f"name: {self.name}", f"num_joints: {self.num_joints}",
                 f"center_joint: {self.center_joint}", "edges:"]
        lines += [f"  - [{i}, {j}]" for i, j in self.edges]
        lines.append("bones:")
        lines += [f"  - [{s}, {t}]" for s, t in self.bones]
        return "\n".join(lines) + "\n"


def _line(node):
    return node.start_mark.line + 1


def _int_pair(node, what, errors):
    if not isinstance(node, yaml.SequenceNode) or len(node.value) != 2:
        errors.append(f"line {_line(node)}: {what} must be a pair [a, b]")
        return None
    vals = []
    for item in node.value:
        if not isinstance(item, yaml.ScalarNode) or item.tag != "tag:yaml.org,2002:int":
            errors.append(f"line {_line(item)}: {what} entries must be integers")
            return None
        vals.append(int(item.value))
    return tuple(vals)


def parse_topology(text, source="<string>"):
    """Parse a topology descriptor. Every problem is reported with its line."""
    try:
        root = yaml.compose(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"line {mark.line + 1}" if mark else "unknown line"
        raise TopologyError([f"{source}: {where}: malformed YAML ({exc.problem})"]) from exc
    if not isinstance(root, yaml.MappingNode):
        raise TopologyError([f"{source}: top level must be a mapping"])
    errors, fields, lines = [], {}, {}
    allowed = {"name", "num_joints", "center_joint", "edges", "bones"}
    for key_node, val_node in root.value:
        key = key_node.value
        lines[key] = _line(key_node)
        if key not in allowed:
            errors.append(f"line {_line(key_node)}: unknown field '{key}'")
        elif key in fields:
            errors.append(f"line {_line(key_node)}: duplicate field '{key}'")
        else:
            fields[key] = val_node
    for key in sorted(allowed - set(fields)):
        errors.append(f"missing required field '{key}'")
    if errors:
        raise TopologyError([f"{source}: {e}" for e in errors])

    def scalar_int(key):
        node = fields[key]
        if not isinstance(node, yaml.ScalarNode) or node.tag != "tag:yaml.org,2002:int":
            errors.append(f"line {_line(node)}: '{key}' must be an integer")
            return 0
        return int(node.value)

    num_joints = scalar_int("num_joints")
    center = scalar_int("center_joint")
    name = fields["name"].value if isinstance(fields["name"], yaml.ScalarNode) else ""
    pairs = {}
    for key in ("edges", "bones"):
        node = fields[key]
        if not isinstance(node, yaml.SequenceNode):
            errors.append(f"line {_line(node)}: '{key}' must be a list of pairs")
            pairs[key] = []
            continue
        pairs[key] = [(_int_pair(item, key[:-1], errors), _line(item)) for item in node.value]
    if errors:
        raise TopologyError([f"{source}: {e}" for e in errors])

    # map per-item violations back to their source lines
    edges = [p for p, _ in pairs["edges"]]
    bones = [p for p, _ in pairs["bones"]]
    problems = topology_violations(num_joints, edges, center, bones)
    if problems:
        located = []
        for msg in problems:
            where = None
            for kind in ("edge", "bone"):
                if msg.startswith(kind + " "):
                    k = int(msg.split()[1])
                    where = pairs[kind + "s"][k][1]
            if where is None:
                where = lines.get("center_joint" if "center" in msg else
                                  "edges" if "disconnected" in msg else "bones",
                                  lines.get("num_joints"))
            located.append(f"{source}: line {where}: {msg}")
        raise TopologyError(located)
    return SkeletonTopology(name, num_joints, tuple(edges), center, tuple(bones))


def load_topology(path):
    path = Path(path)
    return parse_topology(path.read_text(encoding="utf-8"), source=str(path))


@functools.lru_cache(maxsize=None)
def builtin_topology(name):
    """One of the shipped skeletons: ``ntu25``, ``openpose18`` or ``toy5``."""
    try:
        text = resources.files("tagcn").joinpath("data", f"{name}.yaml").read_text("utf-8")
    except FileNotFoundError:
        raise KeyError(f"no built-in topology named '{name}'") from None
    return parse_topology(text, source=f"{name}.yaml")


BUILTIN_TOPOLOGIES = ("ntu25", "openpose18", "toy5")


def resolve_topology(name_or_path):
    if name_or_path in BUILTIN_TOPOLOGIES:
        return builtin_topology(name_or_path)
    return load_topology(name_or_path)


def build_adjacency(topology):
    """Symmetric binary joint adjacency with a zero diagonal."""
    n = topology.num_joints
    a = np.zeros((n, n))
    for i, j in topology.edges:
        a[i - 1, j - 1] = a[j - 1, i - 1] = 1.0
    return a


def normalize_self(a):
    """Symmetric normalization of ``A + I`` by its own degrees."""
    a_tilde = np.asarray(a, dtype=np.float64) + np.eye(len(a))
    d = a_tilde.sum(axis=1) ** -0.5
    return d[:, None] * a_tilde * d[None, :]


@dataclass(frozen=True)
class PartitionedAdjacency:
    """The three partition matrices (shape ``(3, N, N)``) and their
    epsilon-regularized normalizations."""

    matrices: np.ndarray
    normalized: np.ndarray = None
    epsilon: float = EPSILON

    @property
    def num_joints(self):
        return self.matrices.shape[1]

    def permuted(self, perm):
        """Same graph with joints relabeled (old ``i`` becomes ``perm[i]``)."""
        inv = np.argsort(perm)
        mats = self.matrices[:, inv][:, :, inv]
        norm = None if self.normalized is None else self.normalized[:, inv][:, :, inv]
        return PartitionedAdjacency(mats, norm, self.epsilon)


def partition(topology):
    n = topology.num_joints
    hop = topology.hop_distances()
    if (hop < 0).any():
        raise TopologyError(["graph is disconnected; hop distances are undefined"])
    mats = np.zeros((3, n, n))
    mats[ROOT] = np.eye(n)
    for i, j in topology.edges:
        for u, v in ((i - 1, j - 1), (j - 1, i - 1)):
            part = CENTRIPETAL if hop[v] < hop[u] else CENTRIFUGAL
            mats[part, u, v] = 1.0
    mats.setflags(write=False)
    return PartitionedAdjacency(mats)


def normalize_partitions(parts, epsilon=EPSILON):
    """Return ``parts`` with ``D_p^-1/2 A_p D_p^-1/2`` filled in, where
    ``D_p`` holds row sums plus ``epsilon``."""
    mats = parts.matrices
    d = (mats.sum(axis=2) + epsilon) ** -0.5
    norm = d[:, :, None] * mats * d[:, None, :]
    norm.setflags(write=False)
    return PartitionedAdjacency(mats, norm, epsilon)


def graph_for(topology, epsilon=EPSILON):
    """Partition and normalize in one step."""
    return normalize_partitions(partition(topology), epsilon)
