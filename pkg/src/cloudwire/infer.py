"""Wireframe extraction from a point cloud with a trained model.

Pipeline: normalize the cloud, encode per-point features, cover the
cloud with geodesic patches seeded by farthest point sampling, detect
and localise corner vertices, suppress near-duplicates, verify all
vertex pairs as edges (after discarding candidates that leave the
surface), suppress near-duplicate edges, and straighten chains of nearly
collinear vertices.  The returned wireframe lives in the input cloud's
frame; scores accompany every vertex and edge.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from . import backbone, model
from .core import NormalizeTransform, PointCloud, ScoredWireframe, normalize, point_segment_distance
from .neigh import KnnGraph, build_knn_graph, farthest_point_sampling, geodesic_patches, mean_nn_spacing

DEFAULT_VERTEX_NMS_RADIUS = 0.03
DEFAULT_EDGE_NMS_ETA = 0.05
DEFAULT_COLLINEAR_TOL = 0.05  # radians; also the relative chord distance

_PATCH_CHUNK = 1024


@dataclass(frozen=True)
class InferenceConfig:
    """Extraction thresholds, all in normalized units.

    The three postprocessing switches exist so their effect can be
    measured; production inference keeps them all on.
    """

    vertex_prob_thresh: float = 0.5
    edge_prob_thresh: float = 0.5
    vertex_nms_radius: float = DEFAULT_VERTEX_NMS_RADIUS
    edge_nms_eta: float = DEFAULT_EDGE_NMS_ETA
    collinear_tol: float = DEFAULT_COLLINEAR_TOL
    tau_surf: float | None = None  # None: 2x mean nearest-neighbor spacing
    do_vertex_nms: bool = True
    do_edge_nms: bool = True
    do_straighten: bool = True
    fps_start: int = 0

    def __post_init__(self) -> None:
        for name in ("vertex_prob_thresh", "edge_prob_thresh"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.vertex_nms_radius < 0 or self.edge_nms_eta < 0 or self.collinear_tol < 0:
            raise ValueError("radii and tolerances must be non-negative")


def seed_count(n_points: int, m: int) -> int:
    """Patch seeds so the expected coverage is about twice the cloud."""
    return max(1, min(n_points, int(math.ceil(n_points / (m / 2.0)))))


def predict_vertices(
    cloud: PointCloud,
    bundle: model.HeadBundle,
    features: np.ndarray | None = None,
    graph: KnnGraph | None = None,
    table: np.ndarray | None = None,
    seeds: np.ndarray | None = None,
    patches: np.ndarray | None = None,
    prob_thresh: float = 0.5,
    fps_start: int = 0,
):
    """Detected corner positions and probabilities, before NMS.

    Operates in the cloud's own frame; precomputed features, graph,
    seeds, or patches are used as given when passed.
    """
    cfg = bundle.config
    pts = cloud.points
    if patches is None or (features is None and cfg.encoder.mode == "learned" and table is None):
        if graph is None:
            graph = build_knn_graph(cloud, cfg.knn_k)
    if features is None:
        if cfg.encoder.mode == "learned" and table is None:
            table = backbone.neighbor_table(graph, cfg.encoder.k_neighbors)
        features = backbone.encode(cloud, graph, cfg.encoder, bundle.encoder, table=table)
    if patches is None:
        if seeds is None:
            seeds = farthest_point_sampling(pts, seed_count(len(pts), cfg.m), start=fps_start)
        patches = geodesic_patches(graph, seeds, cfg.m)
    elif seeds is None:
        seeds = patches[:, 0]

    probs = np.empty(len(patches))
    for lo in range(0, len(patches), _PATCH_CHUNK):
        sl = slice(lo, min(lo + _PATCH_CHUNK, len(patches)))
        p, _ = model.detect_patches(bundle.det, features[patches[sl]], "eval")
        probs[sl] = p
    sel = np.flatnonzero(probs >= prob_thresh)
    if len(sel) == 0:
        return np.zeros((0, 3)), np.zeros(0)
    verts = np.empty((len(sel), 3))
    for lo in range(0, len(sel), _PATCH_CHUNK):
        idx = sel[lo : lo + _PATCH_CHUNK]
        v, _, _ = model.localize_patches(
            bundle.loc,
            features[patches[idx]],
            pts[patches[idx]],
            pts[np.asarray(seeds)[idx]],
            "eval",
        )
        verts[lo : lo + len(idx)] = v
    return verts, probs[sel]


def vertex_nms(verts: np.ndarray, probs: np.ndarray, radius: float) -> np.ndarray:
    """Greedy suppression: returns kept indices, ascending.

    Vertices are visited by descending probability (ties by index); a
    vertex survives only when farther than ``radius`` from every
    already-kept vertex, so kept vertices are pairwise more than
    ``radius`` apart.
    """
    order = np.lexsort((np.arange(len(probs)), -np.asarray(probs)))
    kept: list[int] = []
    for i in order:
        if not kept or np.linalg.norm(verts[kept] - verts[i], axis=1).min() > radius:
            kept.append(int(i))
    return np.array(sorted(kept), dtype=np.int64)


def predict_edges(
    vertices: np.ndarray,
    features: np.ndarray,
    tree: cKDTree,
    bundle: model.HeadBundle,
    tau_surf: float,
    prob_thresh: float = 0.5,
):
    """Verify all vertex pairs; returns (edges (E, 2), probs, candidate counts).

    Candidates whose mean probe distance to the cloud exceeds
    ``tau_surf`` are discarded before the verifier runs (a straight edge
    of the true wireframe must lie on the surface).
    """
    k = len(vertices)
    if k < 2:
        return np.zeros((0, 2), dtype=np.int64), np.zeros(0), 0, 0
    cfg = bundle.config
    ii, jj = np.triu_indices(k, 1)
    ends = np.stack([vertices[ii], vertices[jj]], axis=1)
    _, mean_d = model.probe_segments(ends, tree, cfg.n_probe)
    on_surface = mean_d <= tau_surf
    n_candidates = len(ii)
    ii, jj, ends = ii[on_surface], jj[on_surface], ends[on_surface]
    if len(ii) == 0:
        return np.zeros((0, 2), dtype=np.int64), np.zeros(0), n_candidates, 0
    probs = np.empty(len(ii))
    for lo in range(0, len(ii), _PATCH_CHUNK):
        sl = slice(lo, min(lo + _PATCH_CHUNK, len(ii)))
        q = model.edge_queries_batch(ends[sl], cfg.n_s)
        _, nn_idx = tree.query(q.reshape(-1, 3))
        feats = features[nn_idx.reshape(-1, cfg.n_s)]
        p, _ = model.edge_probabilities(bundle.edge, feats, cfg.stride, "eval")
        probs[sl] = p
    sel = probs >= prob_thresh
    edges = np.stack([ii[sel], jj[sel]], axis=1).astype(np.int64)
    return edges, probs[sel], n_candidates, int(on_surface.sum())


def edge_nms(edges: np.ndarray, probs: np.ndarray, vertices: np.ndarray, eta: float) -> np.ndarray:
    """Greedy suppression of near-duplicate edges; returns kept indices.

    An edge is suppressed when the smaller of the two endpoint-pairing
    displacement sums to an already-kept edge falls below ``eta``.
    """
    a = vertices[edges[:, 0]]
    b = vertices[edges[:, 1]]
    order = np.lexsort((np.arange(len(probs)), -np.asarray(probs)))
    kept: list[int] = []
    for e in order:
        if kept:
            ka, kb = a[kept], b[kept]
            straight = np.linalg.norm(a[e] - ka, axis=1) + np.linalg.norm(b[e] - kb, axis=1)
            crossed = np.linalg.norm(a[e] - kb, axis=1) + np.linalg.norm(b[e] - ka, axis=1)
            if np.minimum(straight, crossed).min() < eta:
                continue
        kept.append(int(e))
    return np.array(sorted(kept), dtype=np.int64)


def straighten(wf: ScoredWireframe, tol: float = DEFAULT_COLLINEAR_TOL) -> ScoredWireframe:
    """Remove redundant degree-2 vertices from nearly straight chains.

    A degree-2 vertex b with neighbors a, c is removed when the path
    a-b-c deviates from a straight line by less than ``tol`` radians, or
    when an edge a-c already exists and b lies within ``tol`` times its
    length of it (a sliver triangle).  The surviving edge a-c gets the
    minimum score of everything merged into it.  Runs to a fixed point;
    the scan order is ascending vertex index, so the result is
    deterministic.
    """
    verts = [v.copy() for v in wf.vertices]
    scores = {(int(i), int(j)): float(s) for (i, j), s in zip(wf.edges, wf.edge_scores)}
    vscores = list(wf.vertex_scores)

    def canon(i: int, j: int) -> tuple[int, int]:
        return (i, j) if i < j else (j, i)

    while True:
        adj: dict[int, list[int]] = {}
        for i, j in scores:
            adj.setdefault(i, []).append(j)
            adj.setdefault(j, []).append(i)
        removed = None
        for b in range(len(verts)):
            nbrs = adj.get(b, ())
            if len(nbrs) != 2:
                continue
            a, c = sorted(nbrs)
            u = verts[a] - verts[b]
            w = verts[c] - verts[b]
            nu, nw = np.linalg.norm(u), np.linalg.norm(w)
            if nu < 1e-12 or nw < 1e-12:
                angle_dev = 0.0  # coincident endpoint: the chain is degenerate
            else:
                cosang = np.clip(np.dot(u, w) / (nu * nw), -1.0, 1.0)
                angle_dev = math.pi - math.acos(cosang)
            chord = canon(a, c)
            near_chord = False
            if chord in scores:
                chord_len = np.linalg.norm(verts[a] - verts[c])
                near_chord = point_segment_distance(verts[b], verts[a], verts[c]) <= tol * chord_len
            if angle_dev <= tol or near_chord:
                removed = (a, b, c)
                break
        if removed is None:
            break
        a, b, c = removed
        merged = min(scores.pop(canon(a, b)), scores.pop(canon(b, c)))
        chord = canon(a, c)
        scores[chord] = min(scores[chord], merged) if chord in scores else merged
        # drop vertex b and shift indices
        del verts[b]
        del vscores[b]
        scores = {
            tuple(sorted((i - (i > b), j - (j > b)))): s for (i, j), s in scores.items()
        }

    if not verts:
        return ScoredWireframe(np.zeros((0, 3)), np.zeros((0, 2), dtype=np.int64))
    edges = np.array(sorted(scores), dtype=np.int64).reshape(-1, 2)
    escores = np.array([scores[tuple(e)] for e in edges])
    return ScoredWireframe(
        np.asarray(verts), edges, vertex_scores=np.asarray(vscores), edge_scores=escores
    )


@dataclass
class ExtractionResult:
    """A predicted wireframe plus extraction diagnostics."""

    wireframe: ScoredWireframe       # in the input cloud's frame
    transform: NormalizeTransform    # input frame -> normalized frame
    n_seeds: int
    n_vertex_candidates: int
    n_vertices: int
    n_edge_candidates: int
    n_edges_on_surface: int
    n_edges_verified: int
    seconds: float


def extract_wireframe(
    cloud: PointCloud,
    bundle: model.HeadBundle,
    icfg: InferenceConfig | None = None,
    features: np.ndarray | None = None,
    graph: KnnGraph | None = None,
    table: np.ndarray | None = None,
    seeds: np.ndarray | None = None,
    patches: np.ndarray | None = None,
) -> ExtractionResult:
    """Full extraction pipeline.

    The cloud is normalized internally (every threshold is expressed in
    normalized units) and the result mapped back, so callers never see
    the internal frame.  Optional precomputed pieces: ``graph``,
    ``seeds`` and ``patches`` are index structures invariant under
    normalization and may come from any similarity-transformed copy of
    the cloud; ``features`` and ``table`` must describe the normalized
    cloud.
    """
    t0 = time.perf_counter()
    if icfg is None:
        icfg = InferenceConfig()
    cfg = bundle.config
    ncloud, tf = normalize(cloud)
    pts = ncloud.points

    if graph is None and (
        patches is None or (features is None and cfg.encoder.mode == "learned" and table is None)
    ):
        graph = build_knn_graph(ncloud, cfg.knn_k)
    if features is None:
        if cfg.encoder.mode == "learned" and table is None:
            table = backbone.neighbor_table(graph, cfg.encoder.k_neighbors)
        features = backbone.encode(ncloud, graph, cfg.encoder, bundle.encoder, table=table)
    if patches is None:
        if seeds is None:
            seeds = farthest_point_sampling(pts, seed_count(len(pts), cfg.m), start=icfg.fps_start)
        patches = geodesic_patches(graph, seeds, cfg.m)
    elif seeds is None:
        seeds = patches[:, 0]

    verts, vprobs = predict_vertices(
        ncloud,
        bundle,
        features=features,
        seeds=seeds,
        patches=patches,
        prob_thresh=icfg.vertex_prob_thresh,
    )
    n_vertex_candidates = len(verts)
    if icfg.do_vertex_nms and len(verts):
        keep = vertex_nms(verts, vprobs, icfg.vertex_nms_radius)
        verts, vprobs = verts[keep], vprobs[keep]

    tree = cKDTree(pts)
    tau = icfg.tau_surf if icfg.tau_surf is not None else 2.0 * mean_nn_spacing(pts)
    edges, eprobs, n_cand, n_surf = predict_edges(
        verts, features, tree, bundle, tau, icfg.edge_prob_thresh
    )
    n_verified = len(edges)
    if icfg.do_edge_nms and len(edges):
        keep = edge_nms(edges, eprobs, verts, icfg.edge_nms_eta)
        edges, eprobs = edges[keep], eprobs[keep]

    wf_norm = ScoredWireframe(verts, edges, vertex_scores=vprobs, edge_scores=eprobs)
    if icfg.do_straighten:
        wf_norm = straighten(wf_norm, icfg.collinear_tol)
    wf = ScoredWireframe(
        tf.invert(wf_norm.vertices),
        wf_norm.edges,
        vertex_scores=wf_norm.vertex_scores,
        edge_scores=wf_norm.edge_scores,
    )
    return ExtractionResult(
        wireframe=wf,
        transform=tf,
        n_seeds=len(seeds),
        n_vertex_candidates=n_vertex_candidates,
        n_vertices=len(verts),
        n_edge_candidates=n_cand,
        n_edges_on_surface=n_surf,
        n_edges_verified=n_verified,
        seconds=time.perf_counter() - t0,
    )
