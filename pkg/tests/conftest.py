import numpy as np
import pytest

from wjmixer.graph import SkeletonGraph
from wjmixer.tensor import Rng


def make_random_connected_graph(n: int, rng: Rng) -> SkeletonGraph:
    """Random spanning tree plus a few extra edges; always connected."""
    edges = [(int(rng.integers(0, i)), i) for i in range(1, n)]
    have = {(min(i, j), max(i, j)) for i, j in edges}
    for _ in range(int(rng.integers(0, n))):
        i, j = int(rng.integers(0, n)), int(rng.integers(0, n))
        key = (min(i, j), max(i, j))
        if i != j and key not in have:
            have.add(key)
            edges.append((i, j))
    return SkeletonGraph(n_joints=n, edges=tuple(edges))


def make_random_tree(n: int, rng: Rng) -> SkeletonGraph:
    return SkeletonGraph(n_joints=n,
                         edges=tuple((int(rng.integers(0, i)), i) for i in range(1, n)))


@pytest.fixture
def random_graph_factory():
    return make_random_connected_graph


@pytest.fixture
def random_tree_factory():
    return make_random_tree


@pytest.fixture
def rng():
    return Rng(12345)


def assert_finite(arr):
    assert np.all(np.isfinite(arr))
