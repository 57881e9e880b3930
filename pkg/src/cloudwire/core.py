"""Core geometric types and serialization.

The whole pipeline works on three plain containers:

* :class:`PointCloud` -- an unordered set of 3D points, optionally with a
  per-point feature matrix attached.
* :class:`Wireframe` -- vertices plus straight edges given as index pairs
  (undirected, stored canonically as ``(min, max)``).
* :class:`Mesh` -- a watertight triangle mesh used only by the synthetic
  scanner; carries its exact wireframe as ground truth.

Coordinates are float64 throughout.  Clouds are normalized into the unit
cube before any learning or evaluation; :func:`normalize` records the
affine map so results can be taken back to the input frame.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

# Text formats round-trip with 12 significant digits.
_COORD_FMT = "%.12g"

# Extent below this is treated as a degenerate (zero-volume) cloud.
_DEGENERATE_EXTENT = 1e-12


class ParseError(ValueError):
    """A serialized cloud or wireframe failed validation."""


@dataclass
class PointCloud:
    """Unordered 3D point set with an optional per-point feature matrix."""

    points: np.ndarray
    features: np.ndarray | None = None
    meta: str = ""

    def __post_init__(self) -> None:
        self.points = np.ascontiguousarray(self.points, dtype=np.float64)
        if self.points.ndim != 2 or self.points.shape[1] != 3:
            raise ValueError(f"points must be (N, 3), got {self.points.shape}")
        if len(self.points) < 1:
            raise ValueError("point cloud must contain at least one point")
        if not np.isfinite(self.points).all():
            raise ValueError("point cloud contains non-finite coordinates")
        if self.features is not None:
            self.features = np.ascontiguousarray(self.features, dtype=np.float64)
            if self.features.ndim != 2 or len(self.features) != len(self.points):
                raise ValueError(
                    f"features must be (N, C) with N={len(self.points)}, "
                    f"got {self.features.shape}"
                )

    def __len__(self) -> int:
        return len(self.points)


@dataclass
class Wireframe:
    """Vertices and straight edges; edges are canonical ``(min, max)`` pairs."""

    vertices: np.ndarray
    edges: np.ndarray

    def __post_init__(self) -> None:
        self.vertices = np.ascontiguousarray(self.vertices, dtype=np.float64)
        if self.vertices.size == 0:
            self.vertices = np.zeros((0, 3), dtype=np.float64)
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 3:
            raise ValueError(f"vertices must be (V, 3), got {self.vertices.shape}")
        if not np.isfinite(self.vertices).all():
            raise ValueError("wireframe contains non-finite vertex coordinates")
        edges = np.asarray(self.edges, dtype=np.int64)
        if edges.size == 0:
            edges = np.zeros((0, 2), dtype=np.int64)
        if edges.ndim != 2 or edges.shape[1] != 2:
            raise ValueError(f"edges must be (E, 2), got {edges.shape}")
        n = len(self.vertices)
        if edges.size and (edges.min() < 0 or edges.max() >= n):
            raise ValueError(f"edge index out of range for {n} vertices")
        if edges.size and (edges[:, 0] == edges[:, 1]).any():
            bad = edges[edges[:, 0] == edges[:, 1]][0]
            raise ValueError(f"self-loop edge {tuple(bad)} not allowed")
        edges = np.sort(edges, axis=1)
        if edges.size:
            # reject duplicates after canonicalization
            uniq = np.unique(edges, axis=0)
            if len(uniq) != len(edges):
                raise ValueError("duplicate edges not allowed")
            order = np.lexsort((edges[:, 1], edges[:, 0]))
            edges = edges[order]
        self.edges = np.ascontiguousarray(edges)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def edge_lengths(self) -> np.ndarray:
        if self.n_edges == 0:
            return np.zeros(0)
        seg = self.vertices[self.edges[:, 1]] - self.vertices[self.edges[:, 0]]
        return np.linalg.norm(seg, axis=1)

    def transformed(self, tf: "NormalizeTransform") -> "Wireframe":
        return Wireframe(tf.apply(self.vertices), self.edges.copy())


@dataclass
class ScoredWireframe(Wireframe):
    """Wireframe with per-vertex and per-edge confidence scores in [0, 1]."""

    vertex_scores: np.ndarray = field(default_factory=lambda: np.zeros(0))
    edge_scores: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self) -> None:
        # Edge canonicalization in the base class reorders edges; sort the
        # edge scores with the same permutation so they stay aligned.
        edges_raw = np.asarray(self.edges, dtype=np.int64)
        if edges_raw.size == 0:
            edges_raw = np.zeros((0, 2), dtype=np.int64)
        edges_sorted = np.sort(edges_raw.reshape(-1, 2), axis=1)
        perm = (
            np.lexsort((edges_sorted[:, 1], edges_sorted[:, 0]))
            if edges_sorted.size
            else np.zeros(0, dtype=np.int64)
        )
        super().__post_init__()
        self.vertex_scores = np.ascontiguousarray(self.vertex_scores, dtype=np.float64).ravel()
        self.edge_scores = np.ascontiguousarray(self.edge_scores, dtype=np.float64).ravel()
        if self.vertex_scores.size == 0:
            self.vertex_scores = np.ones(self.n_vertices)
        if self.edge_scores.size == 0:
            self.edge_scores = np.ones(self.n_edges)
        else:
            self.edge_scores = self.edge_scores[perm]
        if len(self.vertex_scores) != self.n_vertices:
            raise ValueError("vertex_scores length mismatch")
        if len(self.edge_scores) != self.n_edges:
            raise ValueError("edge_scores length mismatch")
        for name, s in (("vertex", self.vertex_scores), ("edge", self.edge_scores)):
            if s.size and (not np.isfinite(s).all() or s.min() < 0 or s.max() > 1):
                raise ValueError(f"{name}_scores must lie in [0, 1]")

    @classmethod
    def from_wireframe(cls, wf: Wireframe) -> "ScoredWireframe":
        return cls(
            wf.vertices.copy(),
            wf.edges.copy(),
            np.ones(wf.n_vertices),
            np.ones(wf.n_edges),
        )


@dataclass
class Mesh:
    """Triangle mesh with its exact wireframe (for the synthetic scanner)."""

    vertices: np.ndarray
    triangles: np.ndarray
    gt_wireframe: Wireframe | None = None

    def __post_init__(self) -> None:
        self.vertices = np.ascontiguousarray(self.vertices, dtype=np.float64)
        self.triangles = np.ascontiguousarray(self.triangles, dtype=np.int64)
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 3:
            raise ValueError(f"mesh vertices must be (V, 3), got {self.vertices.shape}")
        if self.triangles.ndim != 2 or self.triangles.shape[1] != 3:
            raise ValueError(f"mesh triangles must be (T, 3), got {self.triangles.shape}")
        if self.triangles.size and self.triangles.max() >= len(self.vertices):
            raise ValueError("triangle index out of range")

    def edge_face_counts(self) -> dict[tuple[int, int], int]:
        counts: dict[tuple[int, int], int] = {}
        for tri in self.triangles:
            for a, b in ((tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])):
                key = (int(min(a, b)), int(max(a, b)))
                counts[key] = counts.get(key, 0) + 1
        return counts

    def is_watertight(self) -> bool:
        """Every undirected triangle edge is shared by exactly two triangles."""
        return all(c == 2 for c in self.edge_face_counts().values())

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return self.vertices.min(axis=0), self.vertices.max(axis=0)


@dataclass
class NormalizeTransform:
    """Affine map ``p -> (p - offset) * scale`` with its exact inverse."""

    offset: np.ndarray
    scale: float

    def apply(self, points: np.ndarray) -> np.ndarray:
        return (np.asarray(points, dtype=np.float64) - self.offset) * self.scale

    def invert(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) / self.scale + self.offset

    def to_dict(self) -> dict:
        return {"offset": [float(v) for v in self.offset], "scale": float(self.scale)}

    @classmethod
    def from_dict(cls, d: dict) -> "NormalizeTransform":
        return cls(np.asarray(d["offset"], dtype=np.float64), float(d["scale"]))


def normalize(cloud: PointCloud) -> tuple[PointCloud, NormalizeTransform]:
    """Scale a cloud into the unit cube, preserving aspect ratio.

    The minimum corner of the bounding box maps to the origin and the
    longest bounding-box axis to length 1, so every coordinate lands in
    [0, 1].  Returns the normalized cloud and the transform used, whose
    ``invert`` undoes the map exactly (up to float rounding).

    Raises ``ValueError`` for degenerate clouds (single point, or zero
    extent along every axis).
    """
    pts = cloud.points
    if len(pts) < 2:
        raise ValueError("cannot normalize a cloud with fewer than 2 points")
    lo = pts.min(axis=0)
    hi = pts.max(axis=0)
    extent = float((hi - lo).max())
    if extent < _DEGENERATE_EXTENT:
        raise ValueError(f"degenerate cloud: max bounding-box extent {extent:.3g}")
    tf = NormalizeTransform(offset=lo, scale=1.0 / extent)
    out = PointCloud(tf.apply(pts), features=cloud.features, meta=cloud.meta)
    return out, tf


def point_segment_distance(p: np.ndarray, a: np.ndarray, b: np.ndarray) -> float:
    """Euclidean distance from point ``p`` to segment ``ab``.

    Degenerate segments (``a == b``) fall back to the point distance.
    """
    p = np.asarray(p, dtype=np.float64)
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    ab = b - a
    denom = float(np.dot(ab, ab))
    if denom < 1e-30:
        return float(np.linalg.norm(p - a))
    t = float(np.dot(p - a, ab)) / denom
    t = min(1.0, max(0.0, t))
    return float(np.linalg.norm(p - (a + t * ab)))


def points_segment_distances(points: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Distances from many points to one segment, vectorized."""
    points = np.asarray(points, dtype=np.float64)
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    ab = b - a
    denom = float(np.dot(ab, ab))
    if denom < 1e-30:
        return np.linalg.norm(points - a, axis=-1)
    t = np.clip((points - a) @ ab / denom, 0.0, 1.0)
    proj = a + t[..., None] * ab
    return np.linalg.norm(points - proj, axis=-1)


def points_segments_distances(points: np.ndarray, starts: np.ndarray, ends: np.ndarray) -> np.ndarray:
    """Distance matrix (N, E) from N points to E segments.

    Memory is O(N * E); callers with huge N chunk the point axis themselves.
    """
    points = np.asarray(points, dtype=np.float64)
    starts = np.asarray(starts, dtype=np.float64).reshape(-1, 3)
    ends = np.asarray(ends, dtype=np.float64).reshape(-1, 3)
    if len(starts) == 0:
        return np.zeros((len(points), 0))
    ab = ends - starts  # (E, 3)
    denom = np.einsum("ij,ij->i", ab, ab)  # (E,)
    safe = np.where(denom < 1e-30, 1.0, denom)
    ap = points[:, None, :] - starts[None, :, :]  # (N, E, 3)
    t = np.einsum("nej,ej->ne", ap, ab) / safe
    t = np.where(denom[None, :] < 1e-30, 0.0, np.clip(t, 0.0, 1.0))
    proj = starts[None, :, :] + t[:, :, None] * ab[None, :, :]
    return np.linalg.norm(points[:, None, :] - proj, axis=2)


# ---------------------------------------------------------------------------
# serialization


def write_cloud(cloud: PointCloud, path, features_path=None) -> None:
    """Write a cloud as ``x y z`` text lines; features go to a sidecar file."""
    with open(path, "w") as fh:
        for p in cloud.points:
            fh.write((_COORD_FMT + " " + _COORD_FMT + " " + _COORD_FMT + "\n") % tuple(p))
    if features_path is not None:
        if cloud.features is None:
            raise ValueError("cloud has no features to write")
        np.savetxt(features_path, cloud.features, fmt=_COORD_FMT)


def read_cloud(path, features_path=None) -> PointCloud:
    """Read an ``x y z`` text cloud, optionally with a feature sidecar."""
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 3:
                raise ParseError(f"{path}:{lineno}: expected 3 fields, got {len(parts)}: {line!r}")
            try:
                rows.append([float(v) for v in parts])
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: bad float in {line!r}") from exc
    if not rows:
        raise ParseError(f"{path}: no points found")
    features = None
    if features_path is not None:
        features = np.loadtxt(features_path, dtype=np.float64, ndmin=2)
        if len(features) != len(rows):
            raise ParseError(
                f"{features_path}: {len(features)} feature rows for {len(rows)} points"
            )
    return PointCloud(np.asarray(rows, dtype=np.float64), features=features)


def write_wireframe(wf: Wireframe, path) -> None:
    """Write a wireframe as JSON; scores are included when present."""
    doc: dict = {
        "vertices": [[float(v) for v in row] for row in wf.vertices],
        "edges": [[int(i), int(j)] for i, j in wf.edges],
    }
    if isinstance(wf, ScoredWireframe):
        doc["vertex_scores"] = [float(s) for s in wf.vertex_scores]
        doc["edge_scores"] = [float(s) for s in wf.edge_scores]
    with open(path, "w") as fh:
        json.dump(doc, fh)
        fh.write("\n")


def read_wireframe(path) -> Wireframe:
    """Read a wireframe JSON; returns ScoredWireframe when scores are stored."""
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(doc, dict) or "vertices" not in doc or "edges" not in doc:
        raise ParseError(f"{path}: wireframe JSON needs 'vertices' and 'edges'")
    try:
        vertices = np.asarray(doc["vertices"], dtype=np.float64).reshape(-1, 3)
        edges = np.asarray(doc["edges"], dtype=np.int64).reshape(-1, 2)
    except (TypeError, ValueError) as exc:
        raise ParseError(f"{path}: malformed vertex or edge record: {exc}") from exc
    try:
        if "vertex_scores" in doc or "edge_scores" in doc:
            return ScoredWireframe(
                vertices,
                edges,
                np.asarray(doc.get("vertex_scores", []), dtype=np.float64),
                np.asarray(doc.get("edge_scores", []), dtype=np.float64),
            )
        return Wireframe(vertices, edges)
    except ValueError as exc:
        raise ParseError(f"{path}: {exc}") from exc


def write_obj(wf: Wireframe, path) -> None:
    """Export a wireframe as an OBJ file with ``v`` and ``l`` records."""
    with open(path, "w") as fh:
        for p in wf.vertices:
            fh.write(("v " + _COORD_FMT + " " + _COORD_FMT + " " + _COORD_FMT + "\n") % tuple(p))
        for i, j in wf.edges:
            fh.write(f"l {i + 1} {j + 1}\n")
