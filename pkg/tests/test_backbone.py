"""Per-point feature encoder: learned and handcrafted modes."""

import numpy as np
import pytest

from cloudwire import nn
from cloudwire.backbone import (
    EncoderConfig,
    encode,
    encode_backward,
    encode_forward,
    init_encoder,
    neighbor_table,
)
from cloudwire.core import PointCloud
from cloudwire.neigh import build_knn_graph


def small_setup(n=60, k_graph=6, k_enc=5, hidden=8, out_dim=6, batchnorm=False, seed=0):
    rng = np.random.default_rng(seed)
    pts = rng.normal(size=(n, 3))
    graph = build_knn_graph(PointCloud(pts), k=k_graph)
    cfg = EncoderConfig(
        mode="learned", out_dim=out_dim, k_neighbors=k_enc, hidden=hidden, batchnorm=batchnorm
    )
    params = init_encoder(cfg, np.random.default_rng(seed + 1))
    table = neighbor_table(graph, k_enc)
    return pts, graph, cfg, params, table


class TestNeighborTable:
    def test_entries_sorted_and_nearest_first(self):
        pts, graph, cfg, params, table = small_setup()
        for i in range(len(pts)):
            nbrs, dists = graph.neighbors(i)
            want = nbrs[: table.shape[1]]
            np.testing.assert_array_equal(table[i, : len(want)], want)

    def test_short_rows_padded_with_nearest(self):
        # k=1 path graph: interior nodes have 2 neighbors, endpoints 1
        pts = np.array([[0.0, 0, 0], [1, 0, 0], [2, 0, 0], [3.5, 0, 0]])
        graph = build_knn_graph(PointCloud(pts), k=1)
        table = neighbor_table(graph, 3)
        assert table.shape == (4, 3)
        nbrs0, _ = graph.neighbors(0)
        assert set(table[0].tolist()) <= set(nbrs0.tolist())
        assert table[0, 1] == table[0, 0]  # padding repeats the nearest


class TestLearnedEncoder:
    def test_translation_invariance(self):
        pts, graph, cfg, params, table = small_setup()
        f1 = encode(pts, graph, cfg, params, table=table)
        f2 = encode(pts + np.array([12.0, -3.0, 0.5]), None, cfg, params, table=table)
        np.testing.assert_allclose(f1, f2, atol=1e-9)

    def test_neighbor_permutation_invariance(self):
        pts, graph, cfg, params, table = small_setup()
        f1 = encode(pts, None, cfg, params, table=table)
        rng = np.random.default_rng(3)
        shuffled = table.copy()
        for i in range(len(pts)):
            shuffled[i] = shuffled[i][rng.permutation(table.shape[1])]
        f2 = encode(pts, None, cfg, params, table=shuffled)
        np.testing.assert_allclose(f1, f2, atol=1e-12)

    def test_eval_deterministic(self):
        pts, graph, cfg, params, table = small_setup(batchnorm=True)
        f1 = encode(pts, None, cfg, params, table=table)
        f2 = encode(pts, None, cfg, params, table=table)
        np.testing.assert_array_equal(f1, f2)

    def test_gradient_check(self):
        pts, graph, cfg, params, table = small_setup(n=25, k_graph=4, k_enc=3, hidden=6, out_dim=4)
        rng = np.random.default_rng(4)
        R = rng.normal(size=(25, 4))
        arrays = params.named_arrays()

        def f():
            F, cache = encode_forward(pts, table, params, mode="train")
            loss = float((F * R).sum())
            grads = encode_backward(params, cache, R)
            return loss, grads

        assert nn.gradient_check(f, arrays, rel_tol=1e-4) < 1e-4

    def test_gradient_check_with_batchnorm(self):
        pts, graph, cfg, params, table = small_setup(
            n=30, k_graph=4, k_enc=3, hidden=6, out_dim=4, batchnorm=True, seed=5
        )
        rng = np.random.default_rng(6)
        R = rng.normal(size=(30, 4))
        arrays = params.named_arrays()

        def f():
            F, cache = encode_forward(pts, table, params, mode="train")
            loss = float((F * R).sum())
            grads = encode_backward(params, cache, R)
            return loss, grads

        assert nn.gradient_check(f, arrays, rel_tol=1e-4) < 1e-4

    def test_rows_subset_matches_full(self):
        pts, graph, cfg, params, table = small_setup(seed=7)
        full, _ = encode_forward(pts, table, params, mode="eval")
        rows = np.array([3, 17, 42])
        sub, _ = encode_forward(pts, table, params, rows=rows, mode="eval")
        np.testing.assert_allclose(sub, full[rows], atol=1e-12)


def plane_cloud(n=25, spacing=0.02):
    xs = np.arange(n) * spacing
    xx, yy = np.meshgrid(xs, xs, indexing="ij")
    return np.column_stack([xx.ravel(), yy.ravel(), np.zeros(n * n)])


class TestHandcrafted:
    def test_plane_planarity(self):
        # radius strictly between lattice shells so boundary inclusion is
        # unambiguous and the neighbor disk stays 4-fold symmetric
        cfg = EncoderConfig(mode="handcrafted", out_dim=8, handcrafted_radii=(0.075,))
        pts = plane_cloud()
        F = encode(pts, None, cfg)
        interior = (
            (pts[:, 0] > 0.1) & (pts[:, 0] < 0.38) & (pts[:, 1] > 0.1) & (pts[:, 1] < 0.38)
        )
        lin, plan, sph = F[interior, 0], F[interior, 1], F[interior, 2]
        np.testing.assert_allclose(lin, 0.0, atol=1e-6)
        np.testing.assert_allclose(plan, 1.0, atol=1e-6)
        np.testing.assert_allclose(sph, 0.0, atol=1e-6)

    def test_line_linearity(self):
        cfg = EncoderConfig(mode="handcrafted", out_dim=8, handcrafted_radii=(0.1,))
        pts = np.column_stack([np.arange(50) * 0.02, np.zeros(50), np.zeros(50)])
        F = encode(pts, None, cfg)
        interior = (pts[:, 0] > 0.15) & (pts[:, 0] < 0.85)
        np.testing.assert_allclose(F[interior, 0], 1.0, atol=1e-6)
        np.testing.assert_allclose(F[interior, 1], 0.0, atol=1e-6)

    def test_sparse_region_zeroed(self):
        # fewer than 3 in-radius neighbors leaves the features at zero
        cfg = EncoderConfig(mode="handcrafted", out_dim=8, handcrafted_radii=(0.01,))
        pts = np.array([[0.0, 0, 0], [5, 0, 0], [10, 0, 0], [15, 0, 0]])
        F = encode(pts, None, cfg)
        np.testing.assert_array_equal(F, 0.0)

    def test_padding_columns_zero(self):
        cfg = EncoderConfig(mode="handcrafted", out_dim=32, handcrafted_radii=(0.05, 0.1))
        pts = plane_cloud()
        F = encode(pts, None, cfg)
        np.testing.assert_array_equal(F[:, 6:], 0.0)

    def test_rotation_invariance(self):
        # eigenvalue ratios do not change under rotation
        cfg = EncoderConfig(mode="handcrafted", out_dim=8, handcrafted_radii=(0.07,))
        rng = np.random.default_rng(8)
        pts = rng.normal(size=(300, 3)) * 0.1
        theta = 0.7
        R = np.array(
            [
                [np.cos(theta), -np.sin(theta), 0],
                [np.sin(theta), np.cos(theta), 0],
                [0, 0, 1],
            ]
        )
        f1 = encode(pts, None, cfg)
        f2 = encode(pts @ R.T, None, cfg)
        np.testing.assert_allclose(f1, f2, atol=1e-8)
