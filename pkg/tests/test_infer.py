"""Extraction pipeline: NMS, straightening, and the full pass."""

import numpy as np
import pytest

from cloudwire import synth
from cloudwire.core import PointCloud, ScoredWireframe
from cloudwire.infer import (
    InferenceConfig,
    edge_nms,
    extract_wireframe,
    predict_vertices,
    seed_count,
    straighten,
    vertex_nms,
)
from cloudwire.model import ModelConfig, init_bundle


@pytest.fixture(scope="module")
def tiny_sample(tiny_corpus):
    return synth.load_split(tiny_corpus, "train")[0]


@pytest.fixture(scope="module")
def untrained():
    return init_bundle(ModelConfig(), np.random.default_rng(0))


class TestConfig:
    def test_threshold_range(self):
        with pytest.raises(ValueError):
            InferenceConfig(vertex_prob_thresh=1.5)
        with pytest.raises(ValueError):
            InferenceConfig(edge_prob_thresh=-0.1)
        with pytest.raises(ValueError):
            InferenceConfig(vertex_nms_radius=-1.0)

    def test_seed_count(self):
        assert seed_count(1000, 50) == 40
        assert seed_count(10, 50) == 1
        assert seed_count(0, 50) == 1
        assert seed_count(3, 2) == 3


class TestVertexNms:
    def test_suppresses_near_duplicate(self):
        verts = np.array([[0.0, 0, 0], [0.01, 0, 0], [1.0, 0, 0]])
        probs = np.array([0.9, 0.8, 0.7])
        kept = vertex_nms(verts, probs, radius=0.03)
        np.testing.assert_array_equal(kept, [0, 2])

    def test_tie_breaks_by_index(self):
        verts = np.array([[0.0, 0, 0], [0.01, 0, 0]])
        probs = np.array([0.8, 0.8])
        np.testing.assert_array_equal(vertex_nms(verts, probs, 0.03), [0])

    def test_lower_prob_duplicate_loses(self):
        verts = np.array([[0.0, 0, 0], [0.01, 0, 0]])
        probs = np.array([0.6, 0.9])
        np.testing.assert_array_equal(vertex_nms(verts, probs, 0.03), [1])

    def test_postconditions_random(self):
        rng = np.random.default_rng(1)
        for trial in range(20):
            verts = rng.uniform(size=(60, 3))
            probs = rng.uniform(size=60)
            radius = rng.uniform(0.05, 0.4)
            kept = vertex_nms(verts, probs, radius)
            assert np.all(np.diff(kept) > 0)
            kv = verts[kept]
            if len(kept) > 1:
                d = np.linalg.norm(kv[:, None] - kv[None, :], axis=2)
                d[np.diag_indices(len(kept))] = np.inf
                assert d.min() > radius
            dropped = np.setdiff1d(np.arange(60), kept)
            for i in dropped:
                assert np.linalg.norm(kv - verts[i], axis=1).min() <= radius

    def test_distinct_points_all_survive_small_radius(self):
        rng = np.random.default_rng(2)
        verts = rng.uniform(size=(30, 3))
        kept = vertex_nms(verts, rng.uniform(size=30), radius=1e-9)
        np.testing.assert_array_equal(kept, np.arange(30))


class TestEdgeNms:
    def test_suppresses_near_duplicate(self):
        verts = np.array([[0.0, 0, 0], [1.0, 0, 0], [0.0, 0.001, 0], [1.0, 0.001, 0], [0, 1, 0]])
        edges = np.array([[0, 1], [2, 3], [0, 4]])
        probs = np.array([0.9, 0.8, 0.7])
        kept = edge_nms(edges, probs, verts, eta=0.05)
        np.testing.assert_array_equal(kept, [0, 2])

    def test_crossed_pairing_detected(self):
        # second edge lists its endpoints in the opposite order
        verts = np.array([[0.0, 0, 0], [1.0, 0, 0], [1.0, 0.001, 0], [0.0, 0.001, 0]])
        edges = np.array([[0, 1], [2, 3]])
        probs = np.array([0.9, 0.8])
        kept = edge_nms(edges, probs, verts, eta=0.05)
        np.testing.assert_array_equal(kept, [0])

    def test_postconditions_random(self):
        rng = np.random.default_rng(3)
        for trial in range(20):
            verts = rng.uniform(size=(20, 3))
            ii, jj = np.triu_indices(20, 1)
            pick = rng.choice(len(ii), size=40, replace=False)
            edges = np.column_stack([ii[pick], jj[pick]])
            probs = rng.uniform(size=40)
            eta = rng.uniform(0.05, 0.5)
            kept = edge_nms(edges, probs, verts, eta)

            def pairing(e, f):
                a, b = verts[edges[e, 0]], verts[edges[e, 1]]
                c, d = verts[edges[f, 0]], verts[edges[f, 1]]
                straight = np.linalg.norm(a - c) + np.linalg.norm(b - d)
                crossed = np.linalg.norm(a - d) + np.linalg.norm(b - c)
                return min(straight, crossed)

            for x, e in enumerate(kept):
                for f in kept[x + 1 :]:
                    assert pairing(e, f) >= eta
            for e in np.setdiff1d(np.arange(40), kept):
                assert min(pairing(e, f) for f in kept) < eta


def chain_wireframe(points, edges, escores=None):
    points = np.asarray(points, dtype=float)
    edges = np.asarray(edges, dtype=np.int64)
    return ScoredWireframe(
        points,
        edges,
        vertex_scores=np.linspace(1.0, 0.5, len(points)),
        edge_scores=np.asarray(escores if escores is not None else np.full(len(edges), 0.8)),
    )


class TestStraighten:
    def test_collinear_chain_merges(self):
        wf = chain_wireframe(
            [[0, 0, 0], [0.5, 0, 0], [1, 0, 0]], [[0, 1], [1, 2]], [0.9, 0.7]
        )
        out = straighten(wf, tol=0.05)
        assert out.n_vertices == 2 and out.n_edges == 1
        np.testing.assert_allclose(out.vertices, [[0, 0, 0], [1, 0, 0]])
        np.testing.assert_allclose(out.edge_scores, [0.7])  # min of merged chain

    def test_right_angle_untouched(self):
        wf = chain_wireframe([[0, 0, 0], [1, 0, 0], [1, 1, 0]], [[0, 1], [1, 2]])
        out = straighten(wf, tol=0.05)
        assert out.n_vertices == 3 and out.n_edges == 2
        np.testing.assert_allclose(out.vertices, wf.vertices)

    def test_small_bend_below_tolerance_merges(self):
        wf = chain_wireframe([[0, 0, 0], [0.5, 0.01, 0], [1, 0, 0]], [[0, 1], [1, 2]])
        out = straighten(wf, tol=0.05)
        assert out.n_vertices == 2 and out.n_edges == 1

    def test_bend_above_tolerance_stays(self):
        wf = chain_wireframe([[0, 0, 0], [0.5, 0.1, 0], [1, 0, 0]], [[0, 1], [1, 2]])
        out = straighten(wf, tol=0.05)
        assert out.n_vertices == 3 and out.n_edges == 2

    def test_sliver_triangle_collapses(self):
        wf = chain_wireframe(
            [[0, 0, 0], [0.5, 0.02, 0], [1, 0, 0]],
            [[0, 1], [0, 2], [1, 2]],
            [0.9, 0.6, 0.8],
        )
        out = straighten(wf, tol=0.05)
        assert out.n_vertices == 2 and out.n_edges == 1
        np.testing.assert_allclose(out.vertices, [[0, 0, 0], [1, 0, 0]])
        np.testing.assert_allclose(out.edge_scores, [0.6])

    def test_proper_triangle_stays(self):
        wf = chain_wireframe(
            [[0, 0, 0], [1, 0, 0], [0.5, 0.866, 0]], [[0, 1], [0, 2], [1, 2]]
        )
        out = straighten(wf, tol=0.05)
        assert out.n_vertices == 3 and out.n_edges == 3

    def test_long_chain_runs_to_fixed_point(self):
        wf = chain_wireframe(
            [[0, 0, 0], [0.3, 0, 0], [0.6, 0, 0], [1, 0, 0]],
            [[0, 1], [1, 2], [2, 3]],
            [0.9, 0.8, 0.7],
        )
        out = straighten(wf, tol=0.05)
        assert out.n_vertices == 2 and out.n_edges == 1
        np.testing.assert_allclose(sorted(out.vertices[:, 0]), [0, 1])
        np.testing.assert_allclose(out.edge_scores, [0.7])

    def test_reindexing_preserves_unrelated_edges(self):
        wf = chain_wireframe(
            [[0, 0, 0], [0.5, 0, 0], [1, 0, 0], [0, 1, 0], [1, 1, 0]],
            [[0, 1], [1, 2], [3, 4]],
        )
        out = straighten(wf, tol=0.05)
        assert out.n_vertices == 4 and out.n_edges == 2
        segs = {
            tuple(sorted((tuple(out.vertices[i]), tuple(out.vertices[j]))))
            for i, j in out.edges
        }
        want = {
            tuple(sorted(((0.0, 0.0, 0.0), (1.0, 0.0, 0.0)))),
            tuple(sorted(((0.0, 1.0, 0.0), (1.0, 1.0, 0.0)))),
        }
        assert segs == want

    def test_degree_three_vertex_kept(self):
        # T junction: center vertex has three collinear-looking arms but
        # degree 3, so it is never a removal candidate
        wf = chain_wireframe(
            [[0, 0, 0], [1, 0, 0], [2, 0, 0], [1, 1, 0]],
            [[0, 1], [1, 2], [1, 3]],
        )
        out = straighten(wf, tol=0.05)
        assert out.n_vertices == 4 and out.n_edges == 3

    def test_idempotent(self):
        rng = np.random.default_rng(4)
        for trial in range(10):
            n = 8
            verts = rng.uniform(size=(n, 3))
            ii, jj = np.triu_indices(n, 1)
            pick = rng.choice(len(ii), size=10, replace=False)
            wf = ScoredWireframe(
                verts,
                np.column_stack([ii[pick], jj[pick]]),
                vertex_scores=rng.uniform(size=n),
                edge_scores=rng.uniform(size=10),
            )
            once = straighten(wf, tol=0.3)
            twice = straighten(once, tol=0.3)
            np.testing.assert_array_equal(once.edges, twice.edges)
            np.testing.assert_allclose(once.vertices, twice.vertices)

    def test_empty(self):
        wf = ScoredWireframe(np.zeros((0, 3)), np.zeros((0, 2), dtype=np.int64))
        out = straighten(wf)
        assert out.n_vertices == 0 and out.n_edges == 0


class TestUntrainedExtraction:
    """The zero-initialized model outputs 0.5 everywhere, which pins the
    candidate flow exactly."""

    def test_thresholds_are_inclusive(self, tiny_sample, untrained):
        verts, probs = predict_vertices(tiny_sample.cloud, untrained, prob_thresh=0.5)
        assert len(verts) == len(probs) > 0
        np.testing.assert_array_equal(probs, 0.5)

    def test_above_half_yields_nothing(self, tiny_sample, untrained):
        verts, probs = predict_vertices(tiny_sample.cloud, untrained, prob_thresh=0.500001)
        assert verts.shape == (0, 3) and probs.shape == (0,)

    def test_empty_extraction_is_well_formed(self, tiny_sample, untrained):
        res = extract_wireframe(
            tiny_sample.cloud, untrained, InferenceConfig(vertex_prob_thresh=0.6)
        )
        assert res.n_vertex_candidates == 0
        assert res.n_vertices == 0 and res.n_edge_candidates == 0
        assert res.wireframe.n_vertices == 0 and res.wireframe.n_edges == 0

    def test_nms_switch_keeps_all_candidates(self, tiny_sample, untrained):
        res = extract_wireframe(
            tiny_sample.cloud,
            untrained,
            InferenceConfig(do_vertex_nms=False, tau_surf=1e-12),
        )
        assert res.n_vertices == res.n_vertex_candidates > 0
        assert res.n_edges_on_surface == 0 and res.wireframe.n_edges == 0

    def test_surface_gate_bounds(self, tiny_sample, untrained):
        res = extract_wireframe(
            tiny_sample.cloud, untrained, InferenceConfig(tau_surf=10.0)
        )
        assert res.n_edges_on_surface == res.n_edge_candidates > 0


class TestFullExtraction:
    def test_deterministic(self, tiny_sample, untrained):
        a = extract_wireframe(tiny_sample.cloud, untrained)
        b = extract_wireframe(tiny_sample.cloud, untrained)
        np.testing.assert_array_equal(a.wireframe.vertices, b.wireframe.vertices)
        np.testing.assert_array_equal(a.wireframe.edges, b.wireframe.edges)
        np.testing.assert_array_equal(a.wireframe.edge_scores, b.wireframe.edge_scores)
        assert a.n_seeds == b.n_seeds

    def test_similarity_invariance(self, tiny_sample, untrained):
        base = extract_wireframe(tiny_sample.cloud, untrained)
        s, t = 3.7, np.array([10.0, -5.0, 2.0])
        moved = PointCloud(tiny_sample.cloud.points * s + t)
        res = extract_wireframe(moved, untrained)
        np.testing.assert_array_equal(base.wireframe.edges, res.wireframe.edges)
        np.testing.assert_allclose(
            res.wireframe.vertices, base.wireframe.vertices * s + t, atol=1e-6
        )

    def test_result_is_consistent(self, tiny_sample, untrained):
        res = extract_wireframe(tiny_sample.cloud, untrained)
        wf = res.wireframe
        # straightening may remove chain vertices after the count is taken
        assert wf.n_vertices <= res.n_vertices
        assert len(wf.vertex_scores) == wf.n_vertices
        assert len(wf.edge_scores) == wf.n_edges
        assert res.n_edges_verified >= wf.n_edges
        assert res.n_edge_candidates >= res.n_edges_on_surface >= res.n_edges_verified
        assert res.seconds > 0
