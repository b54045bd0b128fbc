import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from tagcn.graph import EPSILON, graph_for, resolve_topology

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def toy():
    return resolve_topology("toy5")


@pytest.fixture(scope="session")
def toy_graph(toy):
    return graph_for(toy)


def random_topology(rng, n):
    """A random connected graph on ``n`` joints (spanning tree plus extras)."""
    from tagcn.graph import SkeletonTopology

    edges = set()
    for v in range(2, n + 1):
        u = int(rng.integers(1, v))
        edges.add((u, v))
    for _ in range(int(rng.integers(0, n))):
        i, j = (int(a) for a in rng.choice(np.arange(1, n + 1), 2, replace=False))
        if (i, j) not in edges and (j, i) not in edges:
            edges.add((i, j))
    edges = sorted(edges)
    order = rng.permutation(len(edges))
    center = int(rng.integers(1, n + 1))
    return SkeletonTopology.from_edges("random", n, [edges[k] for k in order], center)


def neighbourhoods(topo):
    """Per-joint (root, centripetal, centrifugal) index sets, 0-based."""
    hop = topo.hop_distances()
    nbrs = [set() for _ in range(topo.num_joints)]
    for i, j in topo.edges:
        nbrs[i - 1].add(j - 1)
        nbrs[j - 1].add(i - 1)
    return [({i}, {j for j in nbrs[i] if hop[j] < hop[i]},
             {j for j in nbrs[i] if hop[j] >= hop[i]}) for i in range(topo.num_joints)]


def node_form(x, topo, weights, masks, mode, bias):
    """Per-node aggregation over explicit partition sets, masks as edge weights."""
    sets = neighbourhoods(topo)
    n = topo.num_joints
    deg = [[len(sets[i][p]) + EPSILON for i in range(n)] for p in range(3)]
    c_out, t = weights[0].shape[0], x.shape[1]
    out = np.zeros((c_out, t, n))
    for i in range(n):
        for p in range(3):
            for j in range(n):
                a = 1 / np.sqrt(deg[p][i] * deg[p][j]) if j in sets[i][p] else 0.0
                w = a * masks[p][i, j] if mode == "multiply" else a + masks[p][i, j]
                if w == 0.0:
                    continue
                for s in range(t):
                    out[:, s, i] += w * (weights[p] @ x[:, s, j])
        out[:, :, i] += bias[:, None]
    return np.maximum(out, 0)
