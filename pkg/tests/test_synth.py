"""Synthetic shapes, the virtual scanner, and corpus generation."""

import os

import numpy as np
import pytest

from cloudwire import synth
from cloudwire.core import Wireframe, points_segments_distances


def brute_force_crease_edges(mesh) -> set:
    """Crease extraction oracle: a mesh edge is a crease when its two
    adjacent faces have distinct normals.
    """
    tri = mesh.vertices[mesh.triangles]
    normals = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    edge_faces = {}
    for f, (a, b, c) in enumerate(mesh.triangles):
        for u, v in ((a, b), (b, c), (c, a)):
            edge_faces.setdefault((min(u, v), max(u, v)), []).append(f)
    creases = set()
    for (u, v), faces in edge_faces.items():
        assert len(faces) == 2, "watertight mesh expected"
        n1, n2 = normals[faces[0]], normals[faces[1]]
        if abs(float(np.dot(n1, n2))) < 1.0 - 1e-9:
            creases.add((u, v))
    return creases


def merge_collinear_oracle(mesh, creases: set) -> set:
    """Contract straight-through degree-2 crease nodes, cross-product test.

    Independent re-derivation of the maximal-straight-crease contract;
    returns edges as sorted coordinate tuple pairs.
    """
    v = mesh.vertices
    adj: dict = {}
    for a, b in creases:
        adj.setdefault(a, set()).add(b)
        adj.setdefault(b, set()).add(a)
    changed = True
    while changed:
        changed = False
        for node in list(adj):
            nbrs = adj.get(node)
            if nbrs is None or len(nbrs) != 2:
                continue
            p, q = tuple(nbrs)
            d1, d2 = v[p] - v[node], v[q] - v[node]
            cross = np.linalg.norm(np.cross(d1, d2))
            straight = cross < 1e-9 * np.linalg.norm(d1) * np.linalg.norm(d2) and np.dot(d1, d2) < 0
            if not straight or q in adj.get(p, set()):
                continue
            adj[p].discard(node)
            adj[q].discard(node)
            adj[p].add(q)
            adj[q].add(p)
            del adj[node]
            changed = True
            break
    out = set()
    for a, nbrs in adj.items():
        for b in nbrs:
            ca = tuple(np.round(v[a], 9))
            cb = tuple(np.round(v[b], 9))
            out.add(tuple(sorted((ca, cb))))
    return out


def wireframe_edge_set(wf: Wireframe, vertices: np.ndarray) -> set:
    """Edges as sorted coordinate pairs for comparison across indexings."""
    out = set()
    for i, j in wf.edges:
        a = tuple(np.round(wf.vertices[i], 9))
        b = tuple(np.round(wf.vertices[j], 9))
        out.add(tuple(sorted((a, b))))
    return out


class TestShapes:
    def test_box_counts(self):
        mesh = synth.make_shape("box")
        wf = mesh.gt_wireframe
        assert wf.n_vertices == 8
        assert wf.n_edges == 12

    def test_prism_counts(self):
        # k-gon prism: 2k vertices, 3k edges
        mesh = synth.make_shape("prism", {"sides": 6})
        wf = mesh.gt_wireframe
        assert wf.n_vertices == 12
        assert wf.n_edges == 18

    def test_staircase_counts(self):
        # n steps: 8 + 4n vertices
        mesh = synth.make_shape("staircase", {"steps": 3})
        wf = mesh.gt_wireframe
        assert wf.n_vertices == 8 + 4 * 3

    @pytest.mark.parametrize("kind", synth.SHAPE_FAMILIES)
    def test_all_families_watertight_and_normalized(self, kind):
        rng = np.random.default_rng(5)
        mesh = synth.make_shape(kind, synth.sample_shape_params(kind, rng))
        assert mesh.is_watertight()
        lo, hi = mesh.vertices.min(axis=0), mesh.vertices.max(axis=0)
        assert lo.min() == pytest.approx(0.0, abs=1e-12)
        assert (hi - lo).max() == pytest.approx(1.0, abs=1e-12)

    @pytest.mark.parametrize("kind", synth.SHAPE_FAMILIES)
    def test_gt_edges_match_crease_oracle(self, kind):
        rng = np.random.default_rng(6)
        mesh = synth.make_shape(kind, synth.sample_shape_params(kind, rng))
        wf = mesh.gt_wireframe
        got = wireframe_edge_set(wf, wf.vertices)
        expected = merge_collinear_oracle(mesh, brute_force_crease_edges(mesh))
        assert got == expected

    def test_unknown_kind_rejected(self):
        with pytest.raises(ValueError):
            synth.make_shape("dodecahedron")


class TestVirtualScan:
    def test_noiseless_points_on_surface(self):
        mesh = synth.make_shape("box")
        cloud = synth.virtual_scan(
            mesh, synth.ScanConfig(rays_per_camera=500, noise_sigma=0.0, seed=0)
        )
        # every point lies on some face plane of the box
        pts = cloud.points
        lo, hi = mesh.bounds()
        residual = np.minimum.reduce(
            [np.abs(pts - lo[None, :]), np.abs(pts - hi[None, :])]
        ).min(axis=1)
        assert residual.max() < 1e-9

    def test_noisy_points_near_surface(self):
        mesh = synth.make_shape("box")
        cfg = synth.ScanConfig(rays_per_camera=500, noise_sigma=0.01, noise_clip=0.02, seed=0)
        cloud = synth.virtual_scan(mesh, cfg)
        gt = mesh.gt_wireframe
        # worst case: per-coordinate clipped noise -> total displacement <= clip*sqrt(3)
        lo, hi = mesh.bounds()
        inside_lo = cloud.points - (lo - cfg.noise_clip * np.sqrt(3))
        inside_hi = (hi + cfg.noise_clip * np.sqrt(3)) - cloud.points
        frac_near = float(np.mean((inside_lo.min(axis=1) > -1e-9) & (inside_hi.min(axis=1) > -1e-9)))
        assert frac_near >= 0.99

    def test_deterministic(self):
        mesh = synth.make_shape("lshape")
        cfg = synth.ScanConfig(rays_per_camera=300, noise_sigma=0.01, seed=9)
        c1 = synth.virtual_scan(mesh, cfg)
        c2 = synth.virtual_scan(mesh, cfg)
        np.testing.assert_array_equal(c1.points, c2.points)

    def test_rays_scale_point_count(self):
        mesh = synth.make_shape("box")
        small = synth.virtual_scan(mesh, synth.ScanConfig(rays_per_camera=200, noise_sigma=0, seed=0))
        big = synth.virtual_scan(mesh, synth.ScanConfig(rays_per_camera=800, noise_sigma=0, seed=0))
        assert len(big) > 2.5 * len(small)

    def test_open_mesh_rejected(self):
        from cloudwire.core import Mesh

        tri = Mesh(np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0]], dtype=float), np.array([[0, 1, 2]]))
        with pytest.raises(ValueError):
            synth.virtual_scan(tri, synth.ScanConfig(rays_per_camera=100))

    def test_every_camera_contributes(self):
        mesh = synth.make_shape("box")
        cloud = synth.virtual_scan(mesh, synth.ScanConfig(rays_per_camera=400, noise_sigma=0, seed=0))
        # a box scanned from 14 directions must cover all 6 faces
        pts = cloud.points
        lo, hi = mesh.bounds()
        for axis in range(3):
            assert (np.abs(pts[:, axis] - lo[axis]) < 1e-9).any()
            assert (np.abs(pts[:, axis] - hi[axis]) < 1e-9).any()


class TestDataset:
    def test_split_counts(self, tmp_path):
        dcfg = synth.DatasetConfig(
            n_train=6, n_val=2, n_test=2, families=("box",),
            scan=synth.ScanConfig(rays_per_camera=120, noise_sigma=0.0), seed=1,
        )
        root = str(tmp_path / "corpus")
        manifest = synth.make_dataset(root, dcfg)
        for split, n in (("train", 6), ("val", 2), ("test", 2)):
            files = [f for f in os.listdir(os.path.join(root, split)) if f.endswith(".xyz")]
            assert len(files) == n
        assert len(manifest["samples"]) == 10

    def test_same_seed_byte_identical(self, tmp_path):
        dcfg = synth.DatasetConfig(
            n_train=2, n_val=1, n_test=1, families=("box", "prism"),
            scan=synth.ScanConfig(rays_per_camera=120, noise_sigma=0.01), seed=3,
        )
        r1, r2 = str(tmp_path / "a"), str(tmp_path / "b")
        synth.make_dataset(r1, dcfg)
        synth.make_dataset(r2, dcfg)
        for split in ("train", "val", "test"):
            for f in sorted(os.listdir(os.path.join(r1, split))):
                b1 = open(os.path.join(r1, split, f), "rb").read()
                b2 = open(os.path.join(r2, split, f), "rb").read()
                assert b1 == b2, f"{split}/{f} differs"

    def test_gt_wireframes_pass_invariants_and_lie_in_unit_box(self, tmp_path):
        dcfg = synth.DatasetConfig(
            n_train=4, n_val=1, n_test=1,
            families=("box", "lshape", "prism", "staircase"),
            scan=synth.ScanConfig(rays_per_camera=150, noise_sigma=0.01), seed=5,
        )
        root = str(tmp_path / "corpus")
        synth.make_dataset(root, dcfg)
        for split in ("train", "val", "test"):
            for s in synth.load_split(root, split):
                # Wireframe construction re-validates shape/range invariants
                Wireframe(s.gt.vertices, s.gt.edges)
                assert s.gt.vertices.min() > -0.2
                assert s.gt.vertices.max() < 1.2
                assert len(s.cloud) > 100

    def test_load_split_missing_dir(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            synth.load_split(str(tmp_path), "train")

    def test_flat_dataset_deterministic(self, tmp_path):
        a, b = str(tmp_path / "a"), str(tmp_path / "b")
        scan = synth.ScanConfig(rays_per_camera=120, noise_sigma=0.0)
        n1 = synth.make_flat_dataset(a, "box", 2, scan, seed=7)
        n2 = synth.make_flat_dataset(b, "box", 2, scan, seed=7)
        assert n1 == n2
        for name in n1:
            assert open(os.path.join(a, name + ".xyz")).read() == open(os.path.join(b, name + ".xyz")).read()


class TestScanCoversEdges:
    def test_cloud_samples_every_gt_edge(self):
        # each ground-truth edge must have cloud points along it, or edge
        # verification could never see evidence
        rng = np.random.default_rng(8)
        mesh = synth.make_shape("lshape", synth.sample_shape_params("lshape", rng))
        cloud = synth.virtual_scan(mesh, synth.ScanConfig(rays_per_camera=1000, noise_sigma=0.0, seed=2))
        wf = mesh.gt_wireframe
        d = points_segments_distances(cloud.points, wf.vertices[wf.edges[:, 0]], wf.vertices[wf.edges[:, 1]])
        per_edge_support = (d < 0.02).sum(axis=0)
        assert per_edge_support.min() >= 3
