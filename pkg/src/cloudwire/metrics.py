"""Wireframe evaluation metrics.

Three average-precision families, each swept over pinned thresholds in
normalized units (longest cloud extent equals 1):

* vertex AP: predicted vertices are ranked by score and greedily matched
  one-to-one to ground-truth vertices within a radius;
* edge-point AP: both wireframes are compared through the cloud points
  they explain, which rewards edge coverage without requiring matching
  endpoints;
* structural AP: predicted edges match a ground-truth edge when the
  summed endpoint displacement (best of the two endpoint pairings) is
  small, so an edge is only correct when both endpoints are correct.

The wireframe edit distance (WED) complements the rank metrics with the
cost of an explicit repair script: translate matched vertices, delete
hallucinated edges, insert missed ones.

AP is the area under the precision/recall curve traced by sweeping the
score threshold over the distinct prediction scores, trapezoid rule,
anchored at recall 0 with the first point's precision; no interpolation
or extrapolation is applied, so a perfect prediction scores exactly 1.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import PointCloud, Wireframe, points_segments_distances
from .neigh import mean_nn_spacing

VERTEX_AP_THRESHOLDS = (0.02, 0.03, 0.05)
EDGE_AP_THRESHOLDS = (0.01, 0.02, 0.03)
STRUCTURAL_AP_THRESHOLDS = (0.03, 0.05, 0.07)

_SEG_CHUNK = 65536


@dataclass
class PrCurve:
    """Precision/recall at each distinct score threshold, descending."""

    thresholds: np.ndarray
    precision: np.ndarray
    recall: np.ndarray
    ap: float


def _scores_of(wf: Wireframe, which: str) -> np.ndarray:
    s = getattr(wf, which, None)
    if s is None:
        return np.ones(wf.n_vertices if which == "vertex_scores" else wf.n_edges)
    return np.asarray(s, dtype=np.float64)


def _sweep(scores_ranked: np.ndarray, prec_flags: np.ndarray, rec_flags: np.ndarray, n_gt: int) -> PrCurve:
    """PR curve from ranked predictions (scores descending).

    ``prec_flags``/``rec_flags`` mark which ranked predictions count
    toward the precision and recall numerators.  Thresholds fall at the
    last element of each tied-score group, so every curve point
    corresponds to one realizable prediction set.
    """
    n = len(scores_ranked)
    if n == 0:
        ap = 1.0 if n_gt == 0 else 0.0
        return PrCurve(np.zeros(0), np.zeros(0), np.zeros(0), ap)
    if n_gt == 0:
        return PrCurve(np.zeros(0), np.zeros(0), np.zeros(0), 0.0)
    boundary = np.flatnonzero(
        np.concatenate([scores_ranked[1:] != scores_ranked[:-1], [True]])
    )
    cum_p = np.cumsum(prec_flags)[boundary]
    cum_r = np.cumsum(rec_flags)[boundary]
    precision = cum_p / (boundary + 1.0)
    recall = cum_r / float(n_gt)
    ap = 0.0
    r_prev, p_prev = 0.0, precision[0]
    for r, p in zip(recall, precision):
        ap += (r - r_prev) * (p + p_prev) / 2.0
        r_prev, p_prev = r, p
    return PrCurve(scores_ranked[boundary], precision, recall, float(ap))


def _rank(scores: np.ndarray) -> np.ndarray:
    """Descending score, ties broken by ascending index (deterministic)."""
    return np.lexsort((np.arange(len(scores)), -np.asarray(scores)))


# ---------------------------------------------------------------------------
# vertex AP


def vertex_pr(pred: Wireframe, gt: Wireframe, eta: float) -> PrCurve:
    """Greedy one-to-one vertex matching within ``eta``."""
    scores = _scores_of(pred, "vertex_scores")
    order = _rank(scores)
    tp = np.zeros(len(order), dtype=bool)
    if gt.n_vertices and len(order):
        d = np.linalg.norm(
            pred.vertices[order][:, None, :] - gt.vertices[None, :, :], axis=2
        )
        claimed = np.zeros(gt.n_vertices, dtype=bool)
        for r in range(len(order)):
            row = np.where(claimed, np.inf, d[r])
            g = int(np.argmin(row))
            if row[g] <= eta:
                claimed[g] = True
                tp[r] = True
    return _sweep(scores[order], tp, tp, gt.n_vertices)


def vertex_ap(pred: Wireframe, gt: Wireframe, eta: float) -> float:
    return vertex_pr(pred, gt, eta).ap


def mean_vertex_ap(pred: Wireframe, gt: Wireframe, thresholds=VERTEX_AP_THRESHOLDS) -> float:
    return float(np.mean([vertex_ap(pred, gt, t) for t in thresholds]))


# ---------------------------------------------------------------------------
# structural AP


def _edge_coords(wf: Wireframe) -> np.ndarray:
    if wf.n_edges == 0:
        return np.zeros((0, 2, 3))
    return np.stack([wf.vertices[wf.edges[:, 0]], wf.vertices[wf.edges[:, 1]]], axis=1)


def structural_pr(pred: Wireframe, gt: Wireframe, eta: float) -> PrCurve:
    """Greedy one-to-one edge matching by endpoint displacement sum.

    A predicted edge matches an unclaimed ground-truth edge when the
    smaller displacement sum over the two endpoint pairings is strictly
    below ``eta``; duplicate detections of one edge count as false
    positives.
    """
    scores = _scores_of(pred, "edge_scores")
    order = _rank(scores)
    pe = _edge_coords(pred)[order]
    ge = _edge_coords(gt)
    tp = np.zeros(len(order), dtype=bool)
    if len(ge) and len(pe):
        straight = np.linalg.norm(pe[:, None, 0] - ge[None, :, 0], axis=2) + np.linalg.norm(
            pe[:, None, 1] - ge[None, :, 1], axis=2
        )
        crossed = np.linalg.norm(pe[:, None, 0] - ge[None, :, 1], axis=2) + np.linalg.norm(
            pe[:, None, 1] - ge[None, :, 0], axis=2
        )
        d = np.minimum(straight, crossed)
        claimed = np.zeros(len(ge), dtype=bool)
        for r in range(len(order)):
            row = np.where(claimed, np.inf, d[r])
            g = int(np.argmin(row))
            if row[g] < eta:
                claimed[g] = True
                tp[r] = True
    return _sweep(scores[order], tp, tp, gt.n_edges)


def structural_ap(pred: Wireframe, gt: Wireframe, eta: float) -> float:
    return structural_pr(pred, gt, eta).ap


def mean_structural_ap(pred: Wireframe, gt: Wireframe, thresholds=STRUCTURAL_AP_THRESHOLDS) -> float:
    return float(np.mean([structural_ap(pred, gt, t) for t in thresholds]))


# ---------------------------------------------------------------------------
# edge-point AP


def _min_edge_distances(points: np.ndarray, wf: Wireframe) -> np.ndarray:
    """Distance from every point to the nearest wireframe edge."""
    if wf.n_edges == 0:
        return np.full(len(points), np.inf)
    starts = wf.vertices[wf.edges[:, 0]]
    ends = wf.vertices[wf.edges[:, 1]]
    out = np.empty(len(points))
    for lo in range(0, len(points), _SEG_CHUNK):
        sl = slice(lo, min(lo + _SEG_CHUNK, len(points)))
        out[sl] = points_segments_distances(points[sl], starts, ends).min(axis=1)
    return out


def edge_point_pr(pred: Wireframe, gt: Wireframe, cloud: PointCloud, eta: float) -> PrCurve:
    """Edge AP through cloud points.

    A cloud point belongs to a wireframe's edge set when it lies within
    d-bar (the cloud's mean nearest-neighbor spacing) of some edge.
    Predicted points carry the score of the best-scoring predicted edge
    that explains them.  Precision counts predicted points within
    ``eta`` of a ground-truth edge; recall counts predicted points
    within min(eta, d-bar), measured against the ground-truth point set.
    """
    pts = cloud.points
    dbar = mean_nn_spacing(pts)
    d_gt = _min_edge_distances(pts, gt)
    n_gt_pts = int((d_gt <= dbar).sum())

    scores = _scores_of(pred, "edge_scores")
    if pred.n_edges == 0:
        return _sweep(np.zeros(0), np.zeros(0, bool), np.zeros(0, bool), n_gt_pts)
    starts = pred.vertices[pred.edges[:, 0]]
    ends = pred.vertices[pred.edges[:, 1]]
    point_score = np.full(len(pts), -np.inf)
    for lo in range(0, len(pts), _SEG_CHUNK):
        sl = slice(lo, min(lo + _SEG_CHUNK, len(pts)))
        d = points_segments_distances(pts[sl], starts, ends)
        masked = np.where(d <= dbar, scores[None, :], -np.inf)
        point_score[sl] = masked.max(axis=1)
    predicted = np.flatnonzero(point_score > -np.inf)
    if len(predicted) == 0:
        return _sweep(np.zeros(0), np.zeros(0, bool), np.zeros(0, bool), n_gt_pts)
    ps = point_score[predicted]
    order = _rank(ps)
    ranked = predicted[order]
    prec_flags = d_gt[ranked] <= eta
    rec_flags = d_gt[ranked] <= min(eta, dbar)
    return _sweep(ps[order], prec_flags, rec_flags, n_gt_pts)


def edge_point_ap(pred: Wireframe, gt: Wireframe, cloud: PointCloud, eta: float) -> float:
    return edge_point_pr(pred, gt, cloud, eta).ap


def mean_edge_point_ap(
    pred: Wireframe, gt: Wireframe, cloud: PointCloud, thresholds=EDGE_AP_THRESHOLDS
) -> float:
    return float(np.mean([edge_point_ap(pred, gt, cloud, t) for t in thresholds]))


# ---------------------------------------------------------------------------
# wireframe edit distance


@dataclass
class WedReport:
    """Cost and composition of the repair script turning pred into gt.

    Every predicted vertex is matched (many-to-one) to its nearest
    ground-truth vertex and translated there at ``c_v`` per unit
    distance; unmatched ground-truth vertices are inserted for free
    since only edges carry length cost.  Predicted edges then map to
    ground-truth vertex pairs: pairs collapsing to a single vertex are
    deleted at the original predicted length, duplicate mappings merge
    for free, mapped pairs absent from the ground truth are deleted at
    the length they span between ground-truth vertices, and ground-truth
    edges left uncovered are inserted at their length.
    """

    wed: float
    vertex_cost: float
    edge_delete_cost: float
    self_loop_cost: float
    edge_insert_cost: float
    n_translated: int
    n_free_gt_vertices: int
    n_deleted_edges: int
    n_self_loops: int
    n_duplicate_edges: int
    n_inserted_edges: int
    n_pred_vertices: int
    n_gt_vertices: int
    n_pred_edges: int
    n_gt_edges: int
    c_v: float
    c_e: float


def wireframe_edit_distance(
    pred: Wireframe, gt: Wireframe, c_v: float = 1.0, c_e: float = 1.0
) -> WedReport:
    if gt.n_vertices == 0:
        raise ValueError("ground-truth wireframe has no vertices")
    gt_set = {(int(i), int(j)) for i, j in gt.edges}

    vertex_cost = 0.0
    n_translated = 0
    mapping = np.zeros(pred.n_vertices, dtype=np.int64)
    if pred.n_vertices:
        d = np.linalg.norm(pred.vertices[:, None, :] - gt.vertices[None, :, :], axis=2)
        mapping = d.argmin(axis=1)
        dmin = d[np.arange(len(d)), mapping]
        vertex_cost = c_v * float(dmin.sum())
        n_translated = int((dmin > 0).sum())
    n_free = gt.n_vertices - len(np.unique(mapping)) if pred.n_vertices else gt.n_vertices

    self_loop_cost = 0.0
    n_self_loops = 0
    n_duplicates = 0
    mapped: set[tuple[int, int]] = set()
    for i, j in pred.edges:
        a, b = int(mapping[i]), int(mapping[j])
        if a == b:
            n_self_loops += 1
            self_loop_cost += c_e * float(np.linalg.norm(pred.vertices[i] - pred.vertices[j]))
            continue
        pair = (min(a, b), max(a, b))
        if pair in mapped:
            n_duplicates += 1
        else:
            mapped.add(pair)

    def gt_len(pair: tuple[int, int]) -> float:
        return float(np.linalg.norm(gt.vertices[pair[0]] - gt.vertices[pair[1]]))

    deleted = sorted(mapped - gt_set)
    inserted = sorted(gt_set - mapped)
    edge_delete_cost = c_e * sum(gt_len(p) for p in deleted)
    edge_insert_cost = c_e * sum(gt_len(p) for p in inserted)
    wed = vertex_cost + edge_delete_cost + self_loop_cost + edge_insert_cost
    return WedReport(
        wed=float(wed),
        vertex_cost=float(vertex_cost),
        edge_delete_cost=float(edge_delete_cost),
        self_loop_cost=float(self_loop_cost),
        edge_insert_cost=float(edge_insert_cost),
        n_translated=n_translated,
        n_free_gt_vertices=int(n_free),
        n_deleted_edges=len(deleted),
        n_self_loops=n_self_loops,
        n_duplicate_edges=n_duplicates,
        n_inserted_edges=len(inserted),
        n_pred_vertices=pred.n_vertices,
        n_gt_vertices=gt.n_vertices,
        n_pred_edges=pred.n_edges,
        n_gt_edges=gt.n_edges,
        c_v=c_v,
        c_e=c_e,
    )


# ---------------------------------------------------------------------------
# per-object and corpus evaluation


@dataclass
class ObjectEval:
    """Every metric for one (prediction, ground truth, cloud) triple."""

    name: str
    vertex_aps: dict = field(default_factory=dict)
    edge_aps: dict = field(default_factory=dict)
    structural_aps: dict = field(default_factory=dict)
    map_v: float = 0.0
    map_e: float = 0.0
    msap: float = 0.0
    wed: float = 0.0
    wed_report: WedReport | None = None

    def as_row(self) -> dict:
        row = {"name": self.name, "map_v": self.map_v, "map_e": self.map_e, "msap": self.msap, "wed": self.wed}
        for eta, ap in self.vertex_aps.items():
            row[f"ap_v@{eta:g}"] = ap
        for eta, ap in self.edge_aps.items():
            row[f"ap_e@{eta:g}"] = ap
        for eta, ap in self.structural_aps.items():
            row[f"sap@{eta:g}"] = ap
        r = self.wed_report
        if r is not None:
            row.update(
                n_pred_vertices=r.n_pred_vertices,
                n_gt_vertices=r.n_gt_vertices,
                n_pred_edges=r.n_pred_edges,
                n_gt_edges=r.n_gt_edges,
            )
        return row


def evaluate_object(
    name: str,
    pred: Wireframe,
    gt: Wireframe,
    cloud: PointCloud,
    c_v: float = 1.0,
    c_e: float = 1.0,
) -> ObjectEval:
    vertex_aps = {eta: vertex_ap(pred, gt, eta) for eta in VERTEX_AP_THRESHOLDS}
    edge_aps = {eta: edge_point_ap(pred, gt, cloud, eta) for eta in EDGE_AP_THRESHOLDS}
    structural_aps = {eta: structural_ap(pred, gt, eta) for eta in STRUCTURAL_AP_THRESHOLDS}
    report = wireframe_edit_distance(pred, gt, c_v=c_v, c_e=c_e)
    return ObjectEval(
        name=name,
        vertex_aps=vertex_aps,
        edge_aps=edge_aps,
        structural_aps=structural_aps,
        map_v=float(np.mean(list(vertex_aps.values()))),
        map_e=float(np.mean(list(edge_aps.values()))),
        msap=float(np.mean(list(structural_aps.values()))),
        wed=report.wed,
        wed_report=report,
    )


@dataclass
class CorpusEval:
    objects: list
    map_v: float
    map_e: float
    msap: float
    mean_wed: float


def eval_corpus(items, c_v: float = 1.0, c_e: float = 1.0) -> CorpusEval:
    """Evaluate (name, pred, gt, cloud) tuples and average the headline numbers."""
    objects = [
        evaluate_object(name, pred, gt, cloud, c_v=c_v, c_e=c_e)
        for name, pred, gt, cloud in items
    ]
    if not objects:
        raise ValueError("nothing to evaluate")
    return CorpusEval(
        objects=objects,
        map_v=float(np.mean([o.map_v for o in objects])),
        map_e=float(np.mean([o.map_e for o in objects])),
        msap=float(np.mean([o.msap for o in objects])),
        mean_wed=float(np.mean([o.wed for o in objects])),
    )
