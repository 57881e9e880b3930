"""Synthetic shapes, a virtual scanner, and dataset generation.

Shapes are watertight triangle meshes built two ways: prism-like solids
(box, L-shape, notched box, regular prism, staircase) are extrusions of a
2D profile, and composite solids (table, overlapping box pairs) are unions
of axis-aligned boxes meshed with a global plane-cut grid so no T-junction
can appear.  Every mesh carries its exact wireframe, recovered from the
triangulation by a dihedral-angle crease test plus collinear chain merging.

The scanner surrounds the object with 14 orthographic cameras (the 6 axis
directions and the 8 cube diagonals), casts a parallel ray grid from each,
keeps first intersections, and jitters each coordinate with truncated
Gaussian noise.  Per-camera RNG streams keep results independent of
evaluation order; the noise stream is separate so the same geometry can be
rescanned at several noise levels with aligned camera sampling.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field, replace

import numpy as np

from .core import (
    Mesh,
    NormalizeTransform,
    PointCloud,
    Wireframe,
    normalize,
    read_cloud,
    read_wireframe,
    write_cloud,
    write_wireframe,
)

# A mesh edge is a crease when adjacent face normals deviate by more than
# this angle (radians).
CREASE_ANGLE_TOL = 1e-3

# Crease chains are merged through a vertex only when exactly collinear up
# to this angle; kept far below CREASE_ANGLE_TOL so no true corner merges.
_CHAIN_COLLINEAR_TOL = 1e-7

_RAY_T_EPS = 1e-9
_RAY_BARY_EPS = 1e-12

SHAPE_FAMILIES = (
    "box",
    "lshape",
    "notched_box",
    "prism",
    "staircase",
    "table",
    "two_boxes",
)


@dataclass(frozen=True)
class ScanConfig:
    """Virtual scanner settings.

    ``rays_per_camera`` rays are drawn from a ceil(sqrt(n))^2 orthographic
    grid covering the projected bounding box.  Noise is i.i.d. Gaussian per
    coordinate, rejection-resampled until within ``noise_clip``.
    """

    rays_per_camera: int = 16000
    noise_sigma: float = 0.01
    noise_clip: float = 0.02
    seed: int = 0

    def __post_init__(self) -> None:
        if self.rays_per_camera < 1:
            raise ValueError("rays_per_camera must be positive")
        if self.noise_sigma < 0 or self.noise_clip < 0:
            raise ValueError("noise parameters must be non-negative")


def camera_directions() -> np.ndarray:
    """The 14 ray directions: 6 axis-aligned, 8 diagonal, fixed order."""
    dirs = []
    for axis in range(3):
        for sign in (1.0, -1.0):
            d = np.zeros(3)
            d[axis] = sign
            dirs.append(d)
    for sx in (-1.0, 1.0):
        for sy in (-1.0, 1.0):
            for sz in (-1.0, 1.0):
                dirs.append(np.array([sx, sy, sz]) / math.sqrt(3.0))
    return np.array(dirs)


# ---------------------------------------------------------------------------
# mesh construction: extrusions


def _signed_area(poly: np.ndarray) -> float:
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def _ear_clip(poly: np.ndarray) -> list[tuple[int, int, int]]:
    """Triangulate a simple CCW polygon by ear clipping."""
    n = len(poly)
    if n < 3:
        raise ValueError("polygon needs at least 3 vertices")
    idx = list(range(n))
    tris: list[tuple[int, int, int]] = []
    guard = 0
    while len(idx) > 3:
        guard += 1
        if guard > 10 * n * n:
            raise ValueError("ear clipping failed; polygon may be non-simple")
        found = False
        for k in range(len(idx)):
            i0, i1, i2 = idx[k - 1], idx[k], idx[(k + 1) % len(idx)]
            a, b, c = poly[i0], poly[i1], poly[i2]
            cross = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
            if cross <= 1e-14:
                continue  # reflex or degenerate corner
            # no other active vertex may lie inside the candidate ear
            ok = True
            for j in idx:
                if j in (i0, i1, i2):
                    continue
                p = poly[j]
                d0 = (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])
                d1 = (c[0] - b[0]) * (p[1] - b[1]) - (c[1] - b[1]) * (p[0] - b[0])
                d2 = (a[0] - c[0]) * (p[1] - c[1]) - (a[1] - c[1]) * (p[0] - c[0])
                if d0 > -1e-14 and d1 > -1e-14 and d2 > -1e-14:
                    ok = False
                    break
            if ok:
                tris.append((i0, i1, i2))
                idx.pop(k)
                found = True
                break
        if not found:
            raise ValueError("ear clipping found no ear; polygon may be non-simple")
    tris.append((idx[0], idx[1], idx[2]))
    return tris


def extrude_polygon(poly: np.ndarray, height: float, axis_perm: int = 0) -> Mesh:
    """Extrude a simple polygon along +z into a watertight prism.

    ``axis_perm`` applies one of the three even axis permutations so the
    extrusion direction can be any coordinate axis without flipping
    orientation.
    """
    poly = np.asarray(poly, dtype=np.float64)
    if _signed_area(poly) < 0:
        poly = poly[::-1].copy()
    n = len(poly)
    bottom = np.column_stack([poly, np.zeros(n)])
    top = np.column_stack([poly, np.full(n, float(height))])
    verts = np.vstack([bottom, top])
    tris: list[tuple[int, int, int]] = []
    for (a, b, c) in _ear_clip(poly):
        tris.append((a, c, b))              # bottom cap, normal -z
        tris.append((n + a, n + b, n + c))  # top cap, normal +z
    for i in range(n):
        j = (i + 1) % n
        # side quad ordered so the normal points out of a CCW profile
        tris.append((i, j, n + j))
        tris.append((i, n + j, n + i))
    perms = ((0, 1, 2), (1, 2, 0), (2, 0, 1))
    verts = verts[:, perms[axis_perm % 3]]
    mesh = Mesh(verts, np.array(tris, dtype=np.int64))
    return mesh


# ---------------------------------------------------------------------------
# mesh construction: unions of axis-aligned boxes

# right-handed in-plane axis pairs per face axis
_FACE_UW = {0: (1, 2), 1: (2, 0), 2: (0, 1)}


def _point_in_union(p: np.ndarray, boxes) -> bool:
    for lo, hi in boxes:
        if (lo < p).all() and (p < hi).all():
            return True
    return False


def union_boxes(boxes) -> Mesh:
    """Watertight boundary mesh of a union of axis-aligned boxes.

    Every face of every box is cut by the global set of axis planes, so
    subdivisions agree across touching faces and no T-junctions appear.
    A cell survives when its outward side is outside the union and its
    inward side is inside.
    """
    boxes = [(np.asarray(lo, dtype=np.float64), np.asarray(hi, dtype=np.float64)) for lo, hi in boxes]
    for lo, hi in boxes:
        if not (lo < hi).all():
            raise ValueError("box must have positive extent on every axis")
    cuts = [np.unique(np.concatenate([[lo[a], hi[a]] for lo, hi in boxes])) for a in range(3)]
    min_gap = min(
        float(np.diff(c).min()) if len(c) > 1 else math.inf for c in cuts
    )
    delta = 0.5 * min_gap
    kept: dict[tuple, tuple] = {}
    for lo, hi in boxes:
        for axis in range(3):
            ua, wa = _FACE_UW[axis]
            ucuts = cuts[ua][(cuts[ua] >= lo[ua]) & (cuts[ua] <= hi[ua])]
            wcuts = cuts[wa][(cuts[wa] >= lo[wa]) & (cuts[wa] <= hi[wa])]
            for plane, sign in ((lo[axis], -1.0), (hi[axis], 1.0)):
                for iu in range(len(ucuts) - 1):
                    u0, u1 = float(ucuts[iu]), float(ucuts[iu + 1])
                    if u1 <= u0:
                        continue
                    for iw in range(len(wcuts) - 1):
                        w0, w1 = float(wcuts[iw]), float(wcuts[iw + 1])
                        if w1 <= w0:
                            continue
                        center = np.zeros(3)
                        center[axis] = plane
                        center[ua] = 0.5 * (u0 + u1)
                        center[wa] = 0.5 * (w0 + w1)
                        outward = center.copy()
                        outward[axis] += sign * delta
                        inward = center.copy()
                        inward[axis] -= sign * delta
                        if _point_in_union(outward, boxes):
                            continue
                        if not _point_in_union(inward, boxes):
                            continue
                        key = (axis, sign, plane, u0, u1, w0, w1)
                        kept[key] = (axis, sign, plane, u0, u1, w0, w1)
    vmap: dict[tuple, int] = {}
    verts: list[tuple] = []
    tris: list[tuple[int, int, int]] = []

    def vid(coord: np.ndarray) -> int:
        key = (float(coord[0]), float(coord[1]), float(coord[2]))
        if key not in vmap:
            vmap[key] = len(verts)
            verts.append(key)
        return vmap[key]

    for axis, sign, plane, u0, u1, w0, w1 in kept.values():
        ua, wa = _FACE_UW[axis]
        corners = []
        for (u, w) in ((u0, w0), (u1, w0), (u1, w1), (u0, w1)):
            c = np.zeros(3)
            c[axis] = plane
            c[ua] = u
            c[wa] = w
            corners.append(vid(c))
        if sign < 0:
            corners = corners[::-1]
        q0, q1, q2, q3 = corners
        tris.append((q0, q1, q2))
        tris.append((q0, q2, q3))
    mesh = Mesh(np.array(verts, dtype=np.float64), np.array(tris, dtype=np.int64))
    if not mesh.is_watertight():
        raise ValueError("box union produced a non-watertight mesh")
    return mesh


# ---------------------------------------------------------------------------
# ground-truth wireframe extraction


def mesh_wireframe(mesh: Mesh) -> Wireframe:
    """Extract the exact wireframe of a watertight mesh.

    Crease segments are mesh edges whose adjacent face normals differ by
    more than CREASE_ANGLE_TOL.  Chains of exactly collinear segments are
    merged through their shared vertices; the survivors are the wireframe
    corners and edges.
    """
    v = mesh.vertices
    tri_normals = np.cross(
        v[mesh.triangles[:, 1]] - v[mesh.triangles[:, 0]],
        v[mesh.triangles[:, 2]] - v[mesh.triangles[:, 0]],
    )
    norms = np.linalg.norm(tri_normals, axis=1)
    if (norms < 1e-15).any():
        raise ValueError("mesh contains a degenerate triangle")
    tri_normals /= norms[:, None]

    edge_faces: dict[tuple[int, int], list[int]] = {}
    for t, tri in enumerate(mesh.triangles):
        for a, b in ((tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])):
            key = (int(min(a, b)), int(max(a, b)))
            edge_faces.setdefault(key, []).append(t)
    segments: list[tuple[int, int]] = []
    for (a, b), faces in edge_faces.items():
        if len(faces) != 2:
            raise ValueError(f"mesh edge {(a, b)} shared by {len(faces)} triangles; not watertight")
        cos = float(np.clip(tri_normals[faces[0]] @ tri_normals[faces[1]], -1.0, 1.0))
        if math.acos(cos) > CREASE_ANGLE_TOL:
            segments.append((a, b))

    # merge collinear chains: drop every degree-2 node whose two incident
    # segments continue in exactly the same direction
    incident: dict[int, set[int]] = {}
    for a, b in segments:
        incident.setdefault(a, set()).add(b)
        incident.setdefault(b, set()).add(a)
    changed = True
    while changed:
        changed = False
        for node in sorted(incident):
            nbrs = incident.get(node)
            if nbrs is None or len(nbrs) != 2:
                continue
            p, q = sorted(nbrs)
            d1 = v[p] - v[node]
            d2 = v[q] - v[node]
            n1 = np.linalg.norm(d1)
            n2 = np.linalg.norm(d2)
            if n1 < 1e-15 or n2 < 1e-15:
                continue
            cos = float(np.clip(d1 @ d2 / (n1 * n2), -1.0, 1.0))
            if math.pi - math.acos(cos) > _CHAIN_COLLINEAR_TOL:
                continue  # a genuine corner
            if q in incident.get(p, set()):
                continue  # would create a duplicate edge; keep the corner
            incident[p].discard(node)
            incident[q].discard(node)
            incident[p].add(q)
            incident[q].add(p)
            del incident[node]
            changed = True
            break

    nodes = sorted(n for n, nbrs in incident.items() if nbrs)
    index = {n: i for i, n in enumerate(nodes)}
    edges = sorted(
        {(index[a], index[b]) if index[a] < index[b] else (index[b], index[a])
         for a in nodes for b in incident[a]}
    )
    return Wireframe(v[nodes].copy(), np.array(edges, dtype=np.int64).reshape(-1, 2))


# ---------------------------------------------------------------------------
# shape families


def _rescale_to_unit(mesh: Mesh) -> Mesh:
    lo, hi = mesh.bounds()
    extent = float((hi - lo).max())
    verts = (mesh.vertices - lo) / extent
    return Mesh(verts, mesh.triangles)


def make_shape(kind: str, params: dict | None = None) -> Mesh:
    """Build one shape with its ground-truth wireframe attached.

    Meshes are rescaled so the longest bounding-box axis is exactly 1 and
    the minimum corner sits at the origin; scanner noise levels are then
    directly comparable across the corpus.
    """
    params = dict(params or {})
    if kind == "box":
        dx = params.get("dx", 1.0)
        dy = params.get("dy", 0.72)
        dz = params.get("dz", 0.55)
        mesh = union_boxes([(np.zeros(3), np.array([dx, dy, dz]))])
    elif kind == "lshape":
        a = params.get("depth", 0.85)
        h = params.get("height", 0.6)
        fx = params.get("cut_x", 0.55)
        fy = params.get("cut_y", 0.45)
        poly = np.array(
            [[0, 0], [1, 0], [1, fy], [fx, fy], [fx, a], [0, a]], dtype=np.float64
        )
        mesh = extrude_polygon(poly, h, axis_perm=params.get("axis_perm", 0))
    elif kind == "notched_box":
        a = params.get("depth", 0.8)
        h = params.get("height", 0.65)
        x0 = params.get("notch_x0", 0.3)
        x1 = params.get("notch_x1", 0.62)
        d = params.get("notch_depth", 0.3)
        poly = np.array(
            [[0, 0], [1, 0], [1, a], [x1, a], [x1, a - d], [x0, a - d], [x0, a], [0, a]],
            dtype=np.float64,
        )
        mesh = extrude_polygon(poly, h, axis_perm=params.get("axis_perm", 0))
    elif kind == "prism":
        k = int(params.get("k", 6))
        if k < 3:
            raise ValueError("prism needs k >= 3")
        r = params.get("radius", 0.42)
        h = params.get("height", 1.0)
        phase = params.get("phase", 0.0)
        ang = phase + 2 * np.pi * np.arange(k) / k
        poly = np.column_stack([r * np.cos(ang), r * np.sin(ang)])
        mesh = extrude_polygon(poly, h, axis_perm=params.get("axis_perm", 0))
    elif kind == "staircase":
        n = int(params.get("n", 3))
        if n < 1:
            raise ValueError("staircase needs n >= 1")
        total_h = params.get("height", 0.9)
        base = params.get("base", 0.25 * total_h)
        toe = params.get("toe", 0.14)
        depth = params.get("depth", 0.7)
        rise = (total_h - base) / n
        run = (1.0 - toe) / n
        pts = [[0.0, 0.0], [1.0, 0.0], [1.0, base], [1.0 - toe, base]]
        for i in range(1, n + 1):
            x_hi = 1.0 - toe - (i - 1) * run
            x_lo = 1.0 - toe - i * run
            pts.append([x_hi, base + i * rise])
            pts.append([x_lo, base + i * rise])
        poly = np.array(pts[:-1] + [[0.0, total_h]], dtype=np.float64)
        mesh = extrude_polygon(poly, depth, axis_perm=params.get("axis_perm", 0))
    elif kind == "table":
        w = params.get("width", 0.8)
        h = params.get("height", 0.75)
        t = params.get("top_thickness", 0.1)
        leg = params.get("leg", 0.12)
        inset = params.get("inset", 0.08)
        top = (np.array([0.0, 0.0, h - t]), np.array([1.0, w, h]))
        legs = []
        for cx in (inset, 1.0 - inset - leg):
            for cy in (inset, w - inset - leg):
                legs.append((np.array([cx, cy, 0.0]), np.array([cx + leg, cy + leg, h - t])))
        mesh = union_boxes([top] + legs)
    elif kind == "two_boxes":
        a_hi = np.asarray(params.get("a", (0.75, 0.6, 0.5)), dtype=np.float64)
        b_lo = np.asarray(params.get("b_lo", (0.4, 0.25, 0.2)), dtype=np.float64)
        b_hi = np.asarray(params.get("b_hi", (1.0, 0.9, 0.85)), dtype=np.float64)
        mesh = union_boxes([(np.zeros(3), a_hi), (b_lo, b_hi)])
    else:
        raise ValueError(f"unknown shape kind {kind!r}; known: {SHAPE_FAMILIES}")
    mesh = _rescale_to_unit(mesh)
    mesh.gt_wireframe = mesh_wireframe(mesh)
    return mesh


def sample_shape_params(kind: str, rng: np.random.Generator) -> dict:
    """Random but well-conditioned parameters for one shape family."""
    if kind == "box":
        return {"dx": 1.0, "dy": rng.uniform(0.4, 1.0), "dz": rng.uniform(0.4, 1.0)}
    if kind == "lshape":
        return {
            "depth": rng.uniform(0.6, 1.0),
            "height": rng.uniform(0.45, 1.0),
            "cut_x": rng.uniform(0.35, 0.65),
            "cut_y": rng.uniform(0.3, 0.55),
            "axis_perm": int(rng.integers(3)),
        }
    if kind == "notched_box":
        x0 = rng.uniform(0.2, 0.45)
        return {
            "depth": rng.uniform(0.6, 1.0),
            "height": rng.uniform(0.45, 1.0),
            "notch_x0": x0,
            "notch_x1": x0 + rng.uniform(0.25, 0.45),
            "notch_depth": rng.uniform(0.25, 0.45),
            "axis_perm": int(rng.integers(3)),
        }
    if kind == "prism":
        return {
            "k": int(rng.choice([3, 5, 6, 8])),
            "radius": rng.uniform(0.32, 0.5),
            "height": 1.0,
            "phase": rng.uniform(0.0, 2 * np.pi),
            "axis_perm": int(rng.integers(3)),
        }
    if kind == "staircase":
        n = int(rng.integers(2, 5))
        h = rng.uniform(0.6, 0.95)
        return {
            "n": n,
            "height": h,
            "base": h * rng.uniform(0.22, 0.34),
            "toe": rng.uniform(0.1, 0.18),
            "depth": rng.uniform(0.5, 1.0),
            "axis_perm": int(rng.integers(3)),
        }
    if kind == "table":
        return {
            "width": rng.uniform(0.6, 1.0),
            "height": rng.uniform(0.6, 0.9),
            "top_thickness": rng.uniform(0.1, 0.16),
            "leg": rng.uniform(0.12, 0.2),
            "inset": rng.uniform(0.06, 0.12),
        }
    if kind == "two_boxes":
        a = np.array([1.0, rng.uniform(0.5, 0.9), rng.uniform(0.4, 0.8)])
        b_lo = a * rng.uniform(0.35, 0.55, size=3)
        b_hi = np.minimum(b_lo + rng.uniform(0.45, 0.7, size=3) * a, a * rng.uniform(1.05, 1.3, size=3))
        # push at least one face of B beyond A so the pair is not nested
        b_hi[0] = max(b_hi[0], a[0] * 1.12)
        return {"a": a.tolist(), "b_lo": b_lo.tolist(), "b_hi": b_hi.tolist()}
    raise ValueError(f"unknown shape kind {kind!r}")


# ---------------------------------------------------------------------------
# virtual scanner


def _frame_for_direction(d: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    helper = np.zeros(3)
    helper[int(np.argmin(np.abs(d)))] = 1.0
    u = np.cross(d, helper)
    u /= np.linalg.norm(u)
    w = np.cross(d, u)
    return u, w


def _cast_camera(mesh: Mesh, d: np.ndarray, n_rays: int, rng: np.random.Generator) -> np.ndarray:
    lo, hi = mesh.bounds()
    center = 0.5 * (lo + hi)
    radius = 0.5 * float(np.linalg.norm(hi - lo))
    u, w = _frame_for_direction(d)
    corners = np.array([[x, y, z] for x in (lo[0], hi[0]) for y in (lo[1], hi[1]) for z in (lo[2], hi[2])])
    rel = corners - center
    us = rel @ u
    ws = rel @ w
    side = math.ceil(math.sqrt(n_rays))
    ugrid = us.min() + (np.arange(side) + 0.5) / side * (us.max() - us.min())
    wgrid = ws.min() + (np.arange(side) + 0.5) / side * (ws.max() - ws.min())
    uu, ww = np.meshgrid(ugrid, wgrid, indexing="ij")
    uu = uu.ravel()
    ww = ww.ravel()
    if side * side > n_rays:
        pick = np.sort(rng.choice(side * side, size=n_rays, replace=False))
        uu = uu[pick]
        ww = ww[pick]
    origins = center + uu[:, None] * u + ww[:, None] * w - d * (2.0 * radius + 1.0)

    best_t = np.full(len(origins), np.inf)
    v = mesh.vertices
    for tri in mesh.triangles:
        v0, v1, v2 = v[tri[0]], v[tri[1]], v[tri[2]]
        e1 = v1 - v0
        e2 = v2 - v0
        pvec = np.cross(d, e2)
        det = float(e1 @ pvec)
        if abs(det) < 1e-14:
            continue
        inv = 1.0 / det
        tvec = origins - v0
        bu = (tvec @ pvec) * inv
        mask = (bu >= -_RAY_BARY_EPS) & (bu <= 1.0 + _RAY_BARY_EPS)
        if not mask.any():
            continue
        qvec = np.cross(tvec[mask], e1)
        bv = (qvec @ d) * inv
        ok = (bv >= -_RAY_BARY_EPS) & (bu[mask] + bv <= 1.0 + _RAY_BARY_EPS)
        if not ok.any():
            continue
        t = (qvec[ok] @ e2) * inv
        rows = np.flatnonzero(mask)[ok]
        good = t > _RAY_T_EPS
        rows = rows[good]
        t = t[good]
        better = t < best_t[rows]
        best_t[rows[better]] = t[better]
    hit = np.isfinite(best_t)
    return origins[hit] + best_t[hit, None] * d


def virtual_scan(mesh: Mesh, cfg: ScanConfig) -> PointCloud:
    """Scan a watertight mesh into a noisy point cloud.

    Points are the union of first ray hits over all 14 cameras, in fixed
    camera order, followed by truncated Gaussian jitter per coordinate.
    """
    if not mesh.is_watertight():
        raise ValueError("virtual_scan requires a watertight mesh")
    root = np.random.SeedSequence(cfg.seed)
    streams = root.spawn(15)
    dirs = camera_directions()
    parts = []
    for i, d in enumerate(dirs):
        rng = np.random.default_rng(streams[i])
        parts.append(_cast_camera(mesh, d, cfg.rays_per_camera, rng))
    pts = np.vstack(parts)
    if len(pts) == 0:
        raise ValueError("scan produced no points; mesh outside every ray grid?")
    if cfg.noise_sigma > 0:
        rng = np.random.default_rng(streams[14])
        noise = rng.normal(0.0, cfg.noise_sigma, size=pts.shape)
        bad = np.abs(noise) > cfg.noise_clip
        while bad.any():
            noise[bad] = rng.normal(0.0, cfg.noise_sigma, size=int(bad.sum()))
            bad = np.abs(noise) > cfg.noise_clip
        pts = pts + noise
    return PointCloud(pts, meta=f"virtual_scan rays={cfg.rays_per_camera} sigma={cfg.noise_sigma} seed={cfg.seed}")


# ---------------------------------------------------------------------------
# dataset generation


@dataclass(frozen=True)
class DatasetConfig:
    """Corpus layout: counts per split, shape families, scanner settings."""

    n_train: int = 40
    n_val: int = 10
    n_test: int = 10
    families: tuple = ("box", "lshape", "prism", "staircase")
    scan: ScanConfig = field(default_factory=ScanConfig)
    seed: int = 0

    @property
    def count(self) -> int:
        return self.n_train + self.n_val + self.n_test


def _generate_sample(kind: str, rng: np.random.Generator, scan: ScanConfig):
    """One corpus entry: sampled shape, scanned, normalized."""
    params = sample_shape_params(kind, rng)
    mesh = make_shape(kind, params)
    scan_seed = int(rng.integers(0, 2**31 - 1))
    cloud = virtual_scan(mesh, replace(scan, seed=scan_seed))
    ncloud, tf = normalize(cloud)
    gt = mesh.gt_wireframe.transformed(tf)
    return ncloud, gt, params, scan_seed, tf


def _write_sample(base, name, kind, ncloud, gt, params, scan_seed, tf, scan: ScanConfig):
    write_cloud(ncloud, base + ".xyz")
    write_wireframe(gt, base + ".wf.json")
    meta = {
        "name": name,
        "kind": kind,
        "params": {k: (v if not isinstance(v, np.ndarray) else v.tolist()) for k, v in params.items()},
        "scan_seed": scan_seed,
        "noise_sigma": scan.noise_sigma,
        "noise_clip": scan.noise_clip,
        "rays_per_camera": scan.rays_per_camera,
        "normalize": tf.to_dict(),
        "n_points": len(ncloud),
        "n_gt_vertices": gt.n_vertices,
        "n_gt_edges": gt.n_edges,
    }
    with open(base + ".meta.json", "w") as fh:
        json.dump(meta, fh, indent=1, sort_keys=True)
        fh.write("\n")


def make_dataset(out_dir, cfg: DatasetConfig) -> dict:
    """Generate a corpus of scanned shapes under ``out_dir``.

    Layout: ``{train,val,test}/{name}.xyz`` (normalized cloud),
    ``{name}.wf.json`` (normalized ground-truth wireframe) and
    ``{name}.meta.json`` (provenance).  Deterministic given cfg.seed:
    the same call produces byte-identical files.
    """
    root = np.random.SeedSequence(cfg.seed)
    children = root.spawn(cfg.count)
    split_of = ["train"] * cfg.n_train + ["val"] * cfg.n_val + ["test"] * cfg.n_test
    for split in ("train", "val", "test"):
        os.makedirs(os.path.join(out_dir, split), exist_ok=True)
    manifest: dict = {"seed": cfg.seed, "families": list(cfg.families), "samples": []}
    for i in range(cfg.count):
        rng = np.random.default_rng(children[i])
        kind = cfg.families[i % len(cfg.families)]
        ncloud, gt, params, scan_seed, tf = _generate_sample(kind, rng, cfg.scan)
        name = f"{kind}_{i:04d}"
        split = split_of[i]
        base = os.path.join(out_dir, split, name)
        _write_sample(base, name, kind, ncloud, gt, params, scan_seed, tf, cfg.scan)
        manifest["samples"].append({"name": name, "split": split, "kind": kind})
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return manifest


def make_flat_dataset(out_dir, kind: str, count: int, scan: ScanConfig | None = None, seed: int = 0) -> list:
    """Generate ``count`` shapes of one family directly into ``out_dir``.

    No split subdirectories; used by the single-family scan mode.
    Deterministic given seed.
    """
    if kind not in SHAPE_FAMILIES:
        raise ValueError(f"unknown shape family {kind!r}")
    scan = scan if scan is not None else ScanConfig()
    root = np.random.SeedSequence(seed)
    children = root.spawn(count)
    os.makedirs(out_dir, exist_ok=True)
    names = []
    for i in range(count):
        rng = np.random.default_rng(children[i])
        ncloud, gt, params, scan_seed, tf = _generate_sample(kind, rng, scan)
        name = f"{kind}_{i:04d}"
        _write_sample(os.path.join(out_dir, name), name, kind, ncloud, gt, params, scan_seed, tf, scan)
        names.append(name)
    return names


@dataclass
class ShapeSample:
    """One corpus entry: a normalized scan and its ground-truth wireframe."""

    name: str
    cloud: PointCloud
    gt: Wireframe


def load_samples(sample_dir) -> list[ShapeSample]:
    """Read every ``{name}.xyz`` + ``{name}.wf.json`` pair in a directory.

    Samples come back sorted by name so every consumer sees the same order.
    """
    if not os.path.isdir(sample_dir):
        raise FileNotFoundError(f"no such sample directory: {sample_dir}")
    names = sorted(
        f[: -len(".xyz")] for f in os.listdir(sample_dir) if f.endswith(".xyz")
    )
    out = []
    for name in names:
        base = os.path.join(sample_dir, name)
        cloud = read_cloud(base + ".xyz")
        gt = read_wireframe(base + ".wf.json")
        out.append(ShapeSample(name=name, cloud=cloud, gt=gt))
    return out


def load_split(root_dir, split: str) -> list[ShapeSample]:
    """Read one split of a corpus written by :func:`make_dataset`."""
    return load_samples(os.path.join(root_dir, split))
