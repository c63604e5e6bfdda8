import math

import numpy as np
import pytest

from wjmixer.graph import (
    SkeletonGraph, build_operators, human36m_topology, load_topology,
    modulated_adj, save_topology,
)
from wjmixer.tensor import Rng
from conftest import make_random_tree


class TestSkeletonGraphValidation:
    def test_self_loop_rejected(self):
        with pytest.raises(ValueError, match="self-loop"):
            SkeletonGraph(3, ((0, 0), (1, 2)))

    def test_duplicate_edge_rejected(self):
        with pytest.raises(ValueError, match="duplicate"):
            SkeletonGraph(3, ((0, 1), (1, 0), (1, 2)))

    def test_out_of_range_joint_rejected(self):
        with pytest.raises(ValueError):
            SkeletonGraph(3, ((0, 1), (1, 3)))

    def test_disconnected_rejected(self):
        with pytest.raises(ValueError, match="not connected"):
            SkeletonGraph(4, ((0, 1), (2, 3)))


class TestBuildOperators:
    def test_path_graph_normalization(self):
        g = SkeletonGraph(3, ((0, 1), (1, 2)))
        ops = build_operators(g)
        assert np.array_equal(g.degrees(), [1.0, 2.0, 1.0])
        assert ops.norm_adj[0, 1] == pytest.approx(1.0 / math.sqrt(2.0), abs=1e-15)
        assert ops.norm_adj[0, 2] == 0.0

    def test_complete_graph_k3(self):
        g = SkeletonGraph(3, ((0, 1), (1, 2), (0, 2)))
        ops = build_operators(g)
        off = ops.norm_adj[~np.eye(3, dtype=bool)]
        assert np.allclose(off, 0.5, atol=0)

    def test_laplacian_psd_on_random_tree(self):
        g = make_random_tree(8, Rng(17))
        ops = build_operators(g)
        eigs = np.linalg.eigvalsh(ops.laplacian)  # dense symmetric eigensolve oracle
        assert np.all(eigs >= -1e-12)

    def test_norm_adj_spectrum_in_unit_interval(self):
        g = make_random_tree(8, Rng(23))
        eigs = np.linalg.eigvalsh(build_operators(g).norm_adj)
        assert np.all(eigs >= -1.0 - 1e-12)
        assert np.all(eigs <= 1.0 + 1e-12)

    def test_single_node_is_isolated(self):
        with pytest.raises(ValueError, match="isolated"):
            build_operators(SkeletonGraph(1, ()))

    def test_symmetry_bit_exact(self):
        g = make_random_tree(12, Rng(3))
        ops = build_operators(g)
        assert np.array_equal(ops.norm_adj, ops.norm_adj.T)
        assert np.array_equal(ops.laplacian, ops.laplacian.T)

    def test_deterministic_under_edge_order(self):
        edges = ((0, 1), (1, 2), (2, 3), (1, 3))
        a = build_operators(SkeletonGraph(4, edges))
        b = build_operators(SkeletonGraph(4, tuple(reversed(edges))))
        assert np.array_equal(a.norm_adj, b.norm_adj)
        assert np.array_equal(a.laplacian, b.laplacian)

    def test_kernel_vector_is_sqrt_degrees(self):
        g = make_random_tree(9, Rng(5))
        ops = build_operators(g)
        d_sqrt = ops.sqrt_degrees
        assert np.allclose(ops.laplacian @ d_sqrt, 0.0, atol=1e-12)
        assert np.allclose(ops.norm_adj @ d_sqrt, d_sqrt, atol=1e-12)

    def test_constant_diagonal_of_fairing_system(self):
        # Loop-free graph: diag(I + s*L) is exactly (1+s) everywhere.
        g = make_random_tree(7, Rng(11))
        ops = build_operators(g)
        s = 9.0
        system = np.eye(7) + s * ops.laplacian
        assert np.array_equal(np.diag(system), np.full(7, 1.0 + s))


class TestModulatedAdj:
    def test_zero_modulation_is_identity(self):
        ops = build_operators(SkeletonGraph(3, ((0, 1), (1, 2))))
        assert np.array_equal(modulated_adj(ops.norm_adj, np.zeros((3, 3))),
                              ops.norm_adj)

    def test_identity_modulation_sets_diagonal(self):
        ops = build_operators(SkeletonGraph(3, ((0, 1), (1, 2))))
        out = modulated_adj(ops.norm_adj, np.eye(3))
        assert np.array_equal(np.diag(out), np.ones(3))

    def test_asymmetry_preserved(self):
        ops = build_operators(SkeletonGraph(3, ((0, 1), (1, 2))))
        q = np.zeros((3, 3))
        q[0, 2] = 0.5
        out = modulated_adj(ops.norm_adj, q)
        assert out[0, 2] != out[2, 0]

    def test_shape_mismatch(self):
        from wjmixer.tensor import ShapeError
        with pytest.raises(ShapeError):
            modulated_adj(np.eye(3), np.eye(4))


class TestHuman36m:
    def test_shape_and_tree_property(self):
        g = human36m_topology()
        assert g.n_joints == 16
        assert g.n_edges == 15
        assert g.is_tree()  # edge count == N-1 plus construction connectivity

    def test_root_degree_at_least_two(self):
        g = human36m_topology()
        assert g.degrees()[g.root_index] >= 2

    def test_operators_build(self):
        ops = build_operators(human36m_topology())
        assert ops.norm_adj.shape == (16, 16)


class TestTopologyFile:
    def test_roundtrip(self, tmp_path):
        g = human36m_topology()
        path = tmp_path / "topo.json"
        save_topology(g, path)
        loaded = load_topology(path)
        assert loaded.n_joints == g.n_joints
        assert set(map(frozenset, loaded.edges)) == set(map(frozenset, g.edges))
        assert loaded.root_index == g.root_index
        assert loaded.names == g.names

    def test_missing_field(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text('{"n_joints": 3, "edges": [[0, 1], [1, 2]]}')
        with pytest.raises(ValueError, match="root"):
            load_topology(path)
