"""Trainable heads, edge training sets, and the training loop.

Three small heads sit on top of the point feature backbone:

* vertex detector: max-pool over a patch's member features, then an MLP
  to the probability that the patch contains a wireframe corner;
* vertex localiser: per-member (feature, offset-from-seed) rows flattened
  through an MLP into softmax weights; the corner estimate is the convex
  combination of member coordinates, so it can never leave the patch;
* edge verifier: features of the cloud points nearest to equally spaced
  query points along a candidate segment, max-pooled in groups, flattened
  and classified.

Edge training pairs come from four sets built per shape: ground-truth
edges (positives), spurious and inaccurate vertex pairs (negatives), plus
positives/negatives derived from the current model's own vertex
predictions, regenerated every epoch so the verifier trains on the same
error modes it will see at inference time.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import time
from dataclasses import dataclass, field, replace, asdict

import numpy as np
from scipy.spatial import cKDTree

from . import backbone, nn
from .backbone import EncoderConfig, EncoderParams
from .core import PointCloud, Wireframe
from .neigh import (
    PatchSampler,
    build_knn_graph,
    farthest_point_sampling,
    geodesic_patches,
    mean_nn_spacing,
)

CHECKPOINT_VERSION = 1

EDGE_SET_KINDS = ("gt+", "gt-", "pred+", "pred-")


@dataclass(frozen=True)
class ModelConfig:
    """Architecture and training hyperparameters.

    Distances are in normalized units (longest cloud extent equals 1).
    ``batchnorm`` is authoritative: the encoder config is rewritten to
    match so one switch controls every hidden layer.
    """

    m: int = 50                      # patch size
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    detector_hidden: int = 64
    localiser_hidden: int = 256
    edge_hidden: int = 128
    n_s: int = 64                    # query points per candidate edge
    stride: int = 4                  # query max-pool group
    batchnorm: bool = True

    # loss weights
    alpha: float = 10.0              # localiser term
    beta: float = 1.0                # edge term

    # edge-set thresholds
    eps_plus: float = 0.02           # predicted positive endpoint tolerance
    eps_minus: float = 0.02          # wrong-link endpoint tolerance
    eps1: float = 0.03               # near-miss annulus inner radius
    eps2: float = 0.10               # near-miss annulus outer radius

    # geometry
    n_probe: int = 32                # surface-test samples per segment
    knn_k: int = 8
    r_pos: float = 0.02              # corner-patch labeling radius
    pos_seed_radius: float | None = None

    # optimization
    lr: float = 1e-3
    lr_halve_every: int = 10
    epochs: int = 30
    patches_per_step: int = 64
    edges_per_step: int = 64
    neg_edge_fraction: float = 0.5
    steps_per_shape: int = 1
    augment: bool = True
    augment_tilt_deg: float = 15.0
    # the 24 axis orientations improve robustness to re-oriented inputs
    # but slow localiser convergence a lot; tilt-only keeps the gradient
    # signal coherent when the corpus already varies axis roles
    augment_base_rotations: bool = True
    use_edge_sets: tuple = EDGE_SET_KINDS
    edge_set_cap: int = 256          # per category per shape
    refresh_max_vertices: int = 64
    refresh_every: int = 1           # epochs between predicted-edge-set refreshes
    val_every: int = 1

    def __post_init__(self) -> None:
        if self.m < 2:
            raise ValueError("patch size m must be >= 2")
        if self.n_s < 2 or self.stride < 1 or self.n_s % self.stride:
            raise ValueError("n_s must be >= 2 and divisible by stride")
        if not 0 < self.eps1 <= self.eps2:
            raise ValueError("need 0 < eps1 <= eps2")
        if self.eps_plus <= 0 or self.eps_minus <= 0:
            raise ValueError("endpoint tolerances must be positive")
        if self.epochs < 1 or self.patches_per_step < 2 or self.edges_per_step < 1:
            raise ValueError("bad training batch configuration")
        if self.refresh_every < 1 or self.val_every < 1:
            raise ValueError("refresh_every and val_every must be >= 1")
        unknown = set(self.use_edge_sets) - set(EDGE_SET_KINDS)
        if unknown:
            raise ValueError(f"unknown edge sets {sorted(unknown)}")
        if self.encoder.batchnorm != self.batchnorm:
            object.__setattr__(self, "encoder", replace(self.encoder, batchnorm=self.batchnorm))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        enc = d.pop("encoder")
        enc = EncoderConfig(
            mode=enc["mode"],
            out_dim=enc["out_dim"],
            k_neighbors=enc["k_neighbors"],
            hidden=enc["hidden"],
            batchnorm=enc["batchnorm"],
            handcrafted_radii=tuple(enc["handcrafted_radii"]),
        )
        d["use_edge_sets"] = tuple(d["use_edge_sets"])
        return cls(encoder=enc, **d)


def architecture_hash(cfg: ModelConfig) -> str:
    """Digest of everything that fixes parameter shapes and wiring."""
    arch = {
        "encoder_mode": cfg.encoder.mode,
        "out_dim": cfg.encoder.out_dim,
        "k_neighbors": cfg.encoder.k_neighbors,
        "encoder_hidden": cfg.encoder.hidden,
        "handcrafted_radii": list(cfg.encoder.handcrafted_radii),
        "m": cfg.m,
        "detector_hidden": cfg.detector_hidden,
        "localiser_hidden": cfg.localiser_hidden,
        "edge_hidden": cfg.edge_hidden,
        "n_s": cfg.n_s,
        "stride": cfg.stride,
        "batchnorm": cfg.batchnorm,
    }
    return hashlib.sha256(json.dumps(arch, sort_keys=True).encode()).hexdigest()[:16]


@dataclass
class HeadBundle:
    """All trainable state: encoder plus the three heads."""

    config: ModelConfig
    encoder: EncoderParams
    det: nn.MlpParams
    loc: nn.MlpParams
    edge: nn.MlpParams

    def named_arrays(self) -> dict[str, np.ndarray]:
        out = self.encoder.named_arrays("enc.")
        out.update(self.det.named_arrays("det."))
        out.update(self.loc.named_arrays("loc."))
        out.update(self.edge.named_arrays("edge."))
        return out

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = self.encoder.state_arrays("enc.")
        out.update(self.det.state_arrays("det."))
        out.update(self.loc.state_arrays("loc."))
        out.update(self.edge.state_arrays("edge."))
        return out


def init_bundle(cfg: ModelConfig, rng: np.random.Generator | int | None = None) -> HeadBundle:
    """Fresh parameters.  Final layers start at zero, so an untrained
    detector and verifier output exactly 0.5 and an untrained localiser
    outputs the patch centroid."""
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    c = cfg.encoder.out_dim
    enc = backbone.init_encoder(cfg.encoder, rng)
    det = nn.init_mlp(nn.MlpSpec.simple((c, cfg.detector_hidden, 1), cfg.batchnorm), rng)
    loc = nn.init_mlp(
        nn.MlpSpec.simple((cfg.m * (c + 3), cfg.localiser_hidden, cfg.m), cfg.batchnorm), rng
    )
    edge = nn.init_mlp(
        nn.MlpSpec.simple(((cfg.n_s // cfg.stride) * c, cfg.edge_hidden, 1), cfg.batchnorm), rng
    )
    return HeadBundle(config=cfg, encoder=enc, det=det, loc=loc, edge=edge)


def save_bundle(bundle: HeadBundle, path) -> None:
    arrays: dict[str, np.ndarray] = {}
    arrays.update({"param." + k: v for k, v in bundle.named_arrays().items()})
    arrays.update({"state." + k: v for k, v in bundle.state_arrays().items()})
    np.savez(
        path,
        __config__=np.array(json.dumps(bundle.config.to_dict(), sort_keys=True)),
        __arch__=np.array(architecture_hash(bundle.config)),
        __version__=np.array(CHECKPOINT_VERSION),
        **arrays,
    )


def load_bundle(path) -> HeadBundle:
    """Load a checkpoint; refuses files whose architecture digest does not
    match the architecture implied by their stored config."""
    with np.load(path, allow_pickle=False) as z:
        keys = set(z.files)
        for required in ("__config__", "__arch__", "__version__"):
            if required not in keys:
                raise ValueError(f"not a checkpoint: missing {required}")
        if int(z["__version__"][()]) != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {z['__version__'][()]}")
        cfg = ModelConfig.from_dict(json.loads(str(z["__config__"][()])))
        if architecture_hash(cfg) != str(z["__arch__"][()]):
            raise ValueError("checkpoint architecture digest mismatch")
        bundle = init_bundle(cfg, np.random.default_rng(0))
        for group, arrs in (("param.", bundle.named_arrays()), ("state.", bundle.state_arrays())):
            for name, arr in arrs.items():
                key = group + name
                if key not in keys:
                    raise ValueError(f"checkpoint missing array {key}")
                stored = z[key]
                if stored.shape != arr.shape:
                    raise ValueError(
                        f"checkpoint array {key} has shape {stored.shape}, expected {arr.shape}"
                    )
                arr[...] = stored
    return bundle


# ---------------------------------------------------------------------------
# head forward/backward (batched)


def detect_patches(det: nn.MlpParams, feats: np.ndarray, mode: str = "eval"):
    """Corner probability per patch from member features (P, M, C)."""
    p, m, c = feats.shape
    pooled, argmax = nn.maxpool_rows(feats.reshape(p * m, c), m)
    logits, mlp_cache = nn.mlp_forward(det, pooled, mode)
    probs, sig_cache = nn.sigmoid_clamped(logits[:, 0])
    return probs, (mlp_cache, sig_cache, argmax, p, m, c)


def detect_patches_backward(det: nn.MlpParams, cache, dprobs: np.ndarray):
    mlp_cache, sig_cache, argmax, p, m, c = cache
    dz = nn.sigmoid_clamped_backward(dprobs, sig_cache)[:, None]
    grads, dpooled = nn.mlp_backward(det, mlp_cache, dz, prefix="det.")
    dfeats = nn.maxpool_rows_backward(dpooled, argmax, p * m).reshape(p, m, c)
    return grads, dfeats


def localize_patches(
    loc: nn.MlpParams,
    feats: np.ndarray,
    coords: np.ndarray,
    seed_xyz: np.ndarray,
    mode: str = "eval",
):
    """Corner estimates for patches (P, M, C)+(P, M, 3) -> (P, 3).

    Member rows carry (feature, offset from seed); the softmax output
    weights member coordinates, so every estimate is a convex combination
    of actual patch points.
    """
    p, m, c = feats.shape
    rel = coords - seed_xyz[:, None, :]
    x = np.concatenate([feats, rel], axis=2).reshape(p, m * (c + 3))
    logits, mlp_cache = nn.mlp_forward(loc, x, mode)
    w = nn.softmax_rows(logits)
    v = np.einsum("pm,pmc->pc", w, coords)
    return v, w, (mlp_cache, w, coords, p, m, c)


def localize_patches_backward(loc: nn.MlpParams, cache, dv: np.ndarray):
    mlp_cache, w, coords, p, m, c = cache
    dw = np.einsum("pc,pmc->pm", dv, coords)
    dlogits = nn.softmax_rows_backward(w, dw)
    grads, dx = nn.mlp_backward(loc, mlp_cache, dlogits, prefix="loc.")
    dfeats = dx.reshape(p, m, c + 3)[:, :, :c]
    return grads, dfeats


def edge_queries(a: np.ndarray, b: np.ndarray, n_s: int) -> np.ndarray:
    """``n_s`` equally spaced sample points from a to b, endpoints included."""
    t = np.linspace(0.0, 1.0, n_s)
    return np.asarray(a) + (np.asarray(b) - np.asarray(a)) * t[:, None]


def edge_probabilities(edge_head: nn.MlpParams, feats: np.ndarray, stride: int, mode: str = "eval"):
    """Edge probability per candidate from query features (E, n_s, C)."""
    e, s, c = feats.shape
    if s % stride:
        raise ValueError("query count must be divisible by stride")
    pooled, argmax = nn.maxpool_rows(feats.reshape(e * s, c), stride)
    desc = pooled.reshape(e, (s // stride) * c)
    logits, mlp_cache = nn.mlp_forward(edge_head, desc, mode)
    probs, sig_cache = nn.sigmoid_clamped(logits[:, 0])
    return probs, (mlp_cache, sig_cache, argmax, e, s, c, stride)


def edge_probabilities_backward(edge_head: nn.MlpParams, cache, dprobs: np.ndarray):
    mlp_cache, sig_cache, argmax, e, s, c, stride = cache
    dz = nn.sigmoid_clamped_backward(dprobs, sig_cache)[:, None]
    grads, ddesc = nn.mlp_backward(edge_head, mlp_cache, dz, prefix="edge.")
    dpooled = ddesc.reshape(e * (s // stride), c)
    dfeats = nn.maxpool_rows_backward(dpooled, argmax, e * s).reshape(e, s, c)
    return grads, dfeats


# ---------------------------------------------------------------------------
# single-sample convenience ops


def vertex_detect(features: np.ndarray, det: nn.MlpParams) -> float:
    probs, _ = detect_patches(det, np.asarray(features)[None], "eval")
    return float(probs[0])


def vertex_localize(
    features: np.ndarray,
    coords: np.ndarray,
    loc: nn.MlpParams,
    seed_xyz: np.ndarray | None = None,
):
    coords = np.asarray(coords, dtype=np.float64)
    if seed_xyz is None:
        seed_xyz = coords[0]
    v, w, _ = localize_patches(
        loc, np.asarray(features)[None], coords[None], np.asarray(seed_xyz)[None], "eval"
    )
    return v[0], w[0]


def edge_descriptor(
    a: np.ndarray,
    b: np.ndarray,
    points: np.ndarray,
    features: np.ndarray,
    n_s: int = 64,
    stride: int = 4,
    tree: cKDTree | None = None,
):
    """Descriptor for one candidate edge; returns (descriptor, query nn indices)."""
    if tree is None:
        tree = cKDTree(points)
    q = edge_queries(a, b, n_s)
    _, idx = tree.query(q)
    f = np.asarray(features)[idx]
    pooled, _ = nn.maxpool_rows(f, stride)
    return pooled.reshape(-1), idx


def edge_verify(desc: np.ndarray, edge_head: nn.MlpParams):
    """Probability that descriptor rows describe true edges."""
    d = np.atleast_2d(np.asarray(desc, dtype=np.float64))
    logits, _ = nn.mlp_forward(edge_head, d, "eval")
    probs, _ = nn.sigmoid_clamped(logits[:, 0])
    return float(probs[0]) if np.asarray(desc).ndim == 1 else probs


def probe_segments(ends: np.ndarray, tree: cKDTree, n_probe: int):
    """Nearest-cloud-point distance stats along segments (E, 2, 3).

    Returns (max_dist, mean_dist) over ``n_probe`` equally spaced probe
    points per segment, endpoints included.
    """
    ends = np.asarray(ends, dtype=np.float64)
    t = np.linspace(0.0, 1.0, n_probe)
    q = ends[:, 0, None, :] + (ends[:, 1] - ends[:, 0])[:, None, :] * t[None, :, None]
    d, _ = tree.query(q.reshape(-1, 3))
    d = d.reshape(len(ends), n_probe)
    return d.max(axis=1), d.mean(axis=1)


def segment_on_surface(a, b, tree: cKDTree, eps: float, n_probe: int = 32) -> bool:
    """True when every probe point along a-b lies within ``eps`` of the cloud."""
    max_d, _ = probe_segments(np.asarray([[a, b]], dtype=np.float64), tree, n_probe)
    return bool(max_d[0] <= eps)


# ---------------------------------------------------------------------------
# edge training sets


@dataclass
class EdgeSample:
    """One labeled segment for verifier training."""

    a: np.ndarray
    b: np.ndarray
    label: float
    kind: str  # one of EDGE_SET_KINDS


def _subsample(items: list, cap: int, rng: np.random.Generator) -> list:
    if len(items) <= cap:
        return items
    idx = rng.choice(len(items), size=cap, replace=False)
    return [items[i] for i in sorted(idx)]


def build_gt_edge_sets(
    gt: Wireframe,
    tree: cKDTree,
    eps: float,
    cfg: ModelConfig,
    rng: np.random.Generator,
):
    """Ground-truth derived edge samples.

    Returns (positives, negatives, spurious_pairs).  Positives are the
    ground-truth edges.  Negatives are spurious pairs (non-adjacent
    vertex pairs whose whole connecting segment stays within ``eps`` of
    the cloud, i.e. chords across faces the verifier must reject on
    geometry it cannot distinguish by endpoints alone) and inaccurate
    edges (one true endpoint, the other replaced by a cloud point at
    annulus distance [eps1, eps2] from the second true endpoint).
    ``spurious_pairs`` is the uncapped vertex index pair list, reused to
    label wrong links among predicted vertices.
    """
    verts = gt.vertices
    edge_set = {(int(i), int(j)) for i, j in gt.edges}
    pos = [EdgeSample(verts[i].copy(), verts[j].copy(), 1.0, "gt+") for i, j in gt.edges]

    # spurious: non-edges fully supported by the surface
    cand = [
        (i, j)
        for i in range(gt.n_vertices)
        for j in range(i + 1, gt.n_vertices)
        if (i, j) not in edge_set
    ]
    spurious_pairs: list[tuple[int, int]] = []
    if cand:
        ends = np.stack([[verts[i], verts[j]] for i, j in cand])
        max_d, _ = probe_segments(ends, tree, cfg.n_probe)
        spurious_pairs = [p for p, ok in zip(cand, max_d <= eps) if ok]
    neg = [
        EdgeSample(verts[i].copy(), verts[j].copy(), 0.0, "gt-")
        for i, j in _subsample(spurious_pairs, cfg.edge_set_cap, rng)
    ]

    # inaccurate: one endpoint dragged into the annulus around the other
    pts = np.asarray(tree.data)
    inacc: list[EdgeSample] = []
    for i, j in gt.edges:
        for src, dst in ((int(i), int(j)), (int(j), int(i))):
            idx = tree.query_ball_point(verts[dst], cfg.eps2)
            if not idx:
                continue
            idx = np.asarray(idx)
            d = np.linalg.norm(pts[idx] - verts[dst], axis=1)
            for k in idx[(d >= cfg.eps1)]:
                inacc.append(EdgeSample(verts[src].copy(), pts[k].copy(), 0.0, "gt-"))
    neg.extend(_subsample(inacc, cfg.edge_set_cap, rng))
    return pos, neg, spurious_pairs


def build_pred_edge_sets(
    pred_v: np.ndarray,
    gt: Wireframe,
    spurious_pairs: list,
    cfg: ModelConfig,
    rng: np.random.Generator,
):
    """Edge samples anchored at the model's own vertex predictions.

    Positives: both endpoints within eps_plus of the two endpoints of
    some ground-truth edge.  Negatives: wrong links (endpoints match a
    spurious ground-truth pair within eps_minus) and near misses (exactly
    one endpoint in the [eps1, eps2] annulus of its nearest ground-truth
    vertex, the other endpoint accurate, distinct vertices).
    """
    pred_v = np.asarray(pred_v, dtype=np.float64)
    k = len(pred_v)
    if k < 2 or gt.n_vertices == 0:
        return [], []
    d = np.linalg.norm(pred_v[:, None, :] - gt.vertices[None, :, :], axis=2)
    nv = d.argmin(axis=1)
    nd = d.min(axis=1)
    edge_set = {(int(i), int(j)) for i, j in gt.edges}
    spur_set = {(int(i), int(j)) for i, j in spurious_pairs}

    pos: list[EdgeSample] = []
    wrong: list[EdgeSample] = []
    miss: list[EdgeSample] = []
    ann = (nd >= cfg.eps1) & (nd <= cfg.eps2)
    accurate = nd < cfg.eps1
    for i in range(k):
        for j in range(i + 1, k):
            a, b = int(nv[i]), int(nv[j])
            if a == b:
                continue
            pair = (min(a, b), max(a, b))
            if nd[i] <= cfg.eps_plus and nd[j] <= cfg.eps_plus and pair in edge_set:
                pos.append(EdgeSample(pred_v[i].copy(), pred_v[j].copy(), 1.0, "pred+"))
            elif nd[i] <= cfg.eps_minus and nd[j] <= cfg.eps_minus and pair in spur_set:
                wrong.append(EdgeSample(pred_v[i].copy(), pred_v[j].copy(), 0.0, "pred-"))
            elif (ann[i] and accurate[j]) or (ann[j] and accurate[i]):
                miss.append(EdgeSample(pred_v[i].copy(), pred_v[j].copy(), 0.0, "pred-"))
    pos = _subsample(pos, cfg.edge_set_cap, rng)
    neg = _subsample(wrong, cfg.edge_set_cap, rng) + _subsample(miss, cfg.edge_set_cap, rng)
    return pos, neg


# ---------------------------------------------------------------------------
# rotation augmentation

_CUBE_ROTATIONS: np.ndarray | None = None


def _cube_rotation_group() -> np.ndarray:
    """The 24 proper rotations permuting signed coordinate axes."""
    global _CUBE_ROTATIONS
    if _CUBE_ROTATIONS is None:
        import itertools

        mats = []
        for perm in itertools.permutations(range(3)):
            for signs in itertools.product((1.0, -1.0), repeat=3):
                r = np.zeros((3, 3))
                for row, (col, s) in enumerate(zip(perm, signs)):
                    r[row, col] = s
                if np.linalg.det(r) > 0.5:
                    mats.append(r)
        mats.sort(key=lambda m: tuple(m.ravel()))
        _CUBE_ROTATIONS = np.stack(mats)
    return _CUBE_ROTATIONS


def random_rotation(
    rng: np.random.Generator, tilt_deg: float = 15.0, base_rotations: bool = True
) -> np.ndarray:
    """A random axis rotation (90-degree multiples) plus a small tilt.

    With ``base_rotations`` off only the tilt is applied.
    """
    base = _cube_rotation_group()[rng.integers(24)] if base_rotations else np.eye(3)
    axis = rng.normal(size=3)
    norm = np.linalg.norm(axis)
    axis = axis / norm if norm > 1e-8 else np.array([0.0, 0.0, 1.0])
    ang = np.deg2rad(rng.uniform(-tilt_deg, tilt_deg))
    kx = np.array(
        [
            [0.0, -axis[2], axis[1]],
            [axis[2], 0.0, -axis[0]],
            [-axis[1], axis[0], 0.0],
        ]
    )
    tilt = np.eye(3) + np.sin(ang) * kx + (1.0 - np.cos(ang)) * (kx @ kx)
    return tilt @ base


# ---------------------------------------------------------------------------
# per-shape training workspace


class ShapeWorkspace:
    """Model-independent per-shape caches reused across epochs.

    Holds the kNN graph, KD-tree, encoder neighbor table, the inference
    seed patches used to refresh predicted edge sets, and the
    ground-truth edge sets.
    """

    def __init__(self, sample, cfg: ModelConfig, rng: np.random.Generator):
        self.name = sample.name
        self.cloud: PointCloud = sample.cloud
        self.gt: Wireframe = sample.gt
        pts = self.cloud.points
        self.tree = cKDTree(pts)
        self.graph = build_knn_graph(self.cloud, cfg.knn_k)
        self.spacing = float(mean_nn_spacing(pts))
        self.eps = 2.0 * self.spacing
        self.table = backbone.neighbor_table(self.graph, cfg.encoder.k_neighbors)
        n_seeds = max(1, min(len(pts), int(math.ceil(len(pts) / (cfg.m / 2.0)))))
        self.seeds = farthest_point_sampling(pts, n_seeds, start=0)
        self.patches = geodesic_patches(self.graph, self.seeds, cfg.m)
        self.center = 0.5 * (pts.min(axis=0) + pts.max(axis=0))
        self.gt_pos, self.gt_neg, self.spurious_pairs = build_gt_edge_sets(
            self.gt, self.tree, self.eps, cfg, rng
        )
        self.pred_pos: list[EdgeSample] = []
        self.pred_neg: list[EdgeSample] = []
        self.sampler = PatchSampler(
            self.cloud,
            self.gt,
            r_pos=cfg.r_pos,
            pos_seed_radius=cfg.pos_seed_radius,
            graph=self.graph,
        )
        # handcrafted features are rotation invariant, so one copy serves
        # every augmented step
        self.static_features = (
            backbone.encode(self.cloud, self.graph, cfg.encoder)
            if cfg.encoder.mode == "handcrafted"
            else None
        )

    def edge_pools(self, use: tuple) -> tuple[list, list]:
        pos: list[EdgeSample] = []
        neg: list[EdgeSample] = []
        if "gt+" in use:
            pos += self.gt_pos
        if "pred+" in use:
            pos += self.pred_pos
        if "gt-" in use:
            neg += self.gt_neg
        if "pred-" in use:
            neg += self.pred_neg
        return pos, neg


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainLogRow:
    epoch: int
    l_pat: float
    l_vert: float
    l_edge: float
    val_msap: float
    lr: float
    seconds: float


class TrainingDiverged(RuntimeError):
    """Raised when a loss or gradient goes non-finite.

    Carries the last finite parameter state on ``.bundle``.
    """

    def __init__(self, message: str, bundle: HeadBundle):
        super().__init__(message)
        self.bundle = bundle


def _sample_edge_batch(pos_pool, neg_pool, count, rng):
    half = count // 2
    chosen: list[EdgeSample] = []
    for pool, want in ((pos_pool, half), (neg_pool, count - half)):
        if not pool or want <= 0:
            continue
        idx = rng.choice(len(pool), size=want, replace=len(pool) < want)
        chosen.extend(pool[i] for i in idx)
    return chosen


def _train_step(ws: ShapeWorkspace, bundle: HeadBundle, params, adam, cfg: ModelConfig, rng):
    """One optimization step on one shape; returns raw (l_pat, l_vert, l_edge)."""
    pts = ws.cloud.points
    n_pos = cfg.patches_per_step // 2
    res = ws.sampler.sample(
        cfg.m,
        n_pos,
        cfg.patches_per_step - n_pos,
        neg_edge_fraction=cfg.neg_edge_fraction,
        rng=rng,
    )
    patches = res.patches
    if not patches:
        return None
    members = np.stack([p.members for p in patches])  # (P, M)
    labels = np.array([1.0 if p.label == "vertex" else 0.0 for p in patches])
    pos_mask = labels > 0.5
    seed_idx = np.array([p.seed for p in patches], dtype=np.int64)
    gt_targets = (
        np.stack([p.gt_vertex for p in patches if p.label == "vertex"])
        if pos_mask.any()
        else np.zeros((0, 3))
    )

    batch = _sample_edge_batch(*ws.edge_pools(cfg.use_edge_sets), cfg.edges_per_step, rng)
    if batch:
        ends = np.stack([[s.a, s.b] for s in batch])  # (E, 2, 3)
        e_labels = np.array([s.label for s in batch])
        q = edge_queries_batch(ends, cfg.n_s)
        _, nn_idx = ws.tree.query(q.reshape(-1, 3))
        nn_idx = nn_idx.reshape(len(batch), cfg.n_s)
    else:
        nn_idx = np.zeros((0, cfg.n_s), dtype=np.int64)
        e_labels = np.zeros(0)

    # rotation augmentation: the graph, patches, and nearest-neighbor
    # indices are invariant under a rigid rotation of the whole cloud, so
    # only coordinates and localiser targets transform
    if cfg.augment:
        rot = random_rotation(rng, cfg.augment_tilt_deg, cfg.augment_base_rotations)
        coords = (pts - ws.center) @ rot.T + ws.center
        if len(gt_targets):
            gt_targets = (gt_targets - ws.center) @ rot.T + ws.center
    else:
        coords = pts

    needed = np.unique(np.concatenate([members.ravel(), nn_idx.ravel()]))
    learned = ws.static_features is None
    if learned:
        feats, enc_cache = backbone.encode_forward(
            coords, ws.table, bundle.encoder, rows=needed, mode="train"
        )
    else:
        feats = ws.static_features[needed]
    df = np.zeros_like(feats)

    mem_rows = np.searchsorted(needed, members)
    probs, det_cache = detect_patches(bundle.det, feats[mem_rows], "train")
    l_pat, dprobs = nn.bce(probs, labels)
    grads, dpf = detect_patches_backward(bundle.det, det_cache, dprobs)
    np.add.at(df, mem_rows, dpf)

    l_vert = 0.0
    if pos_mask.any():
        pm_rows = mem_rows[pos_mask]
        pcoords = coords[members[pos_mask]]
        seed_xyz = coords[seed_idx[pos_mask]]
        v, _, loc_cache = localize_patches(bundle.loc, feats[pm_rows], pcoords, seed_xyz, "train")
        l_vert, dv = nn.mse_points(v, gt_targets)
        loc_grads, dpf_loc = localize_patches_backward(bundle.loc, loc_cache, cfg.alpha * dv)
        grads.update(loc_grads)
        np.add.at(df, pm_rows, dpf_loc)

    l_edge = 0.0
    if len(e_labels):
        nn_rows = np.searchsorted(needed, nn_idx)
        eprobs, e_cache = edge_probabilities(bundle.edge, feats[nn_rows], cfg.stride, "train")
        l_edge, dep = nn.balanced_bce(eprobs, e_labels)
        edge_grads, dpf_edge = edge_probabilities_backward(bundle.edge, e_cache, cfg.beta * dep)
        grads.update(edge_grads)
        np.add.at(df, nn_rows, dpf_edge)

    if learned:
        grads.update(backbone.encode_backward(bundle.encoder, enc_cache, df))
    nn.adam_step(params, grads, adam)
    return l_pat, l_vert, l_edge


def edge_queries_batch(ends: np.ndarray, n_s: int) -> np.ndarray:
    """(E, 2, 3) segment endpoints -> (E, n_s, 3) query points."""
    t = np.linspace(0.0, 1.0, n_s)
    return ends[:, 0, None, :] + (ends[:, 1] - ends[:, 0])[:, None, :] * t[None, :, None]


def _refresh_predictions(ws: ShapeWorkspace, bundle: HeadBundle, cfg: ModelConfig, rng):
    """Rebuild the predicted edge sets from the current model."""
    from . import infer

    feats = (
        ws.static_features
        if ws.static_features is not None
        else backbone.encode(ws.cloud, None, cfg.encoder, bundle.encoder, table=ws.table)
    )
    verts, probs = infer.predict_vertices(
        ws.cloud, bundle, features=feats, seeds=ws.seeds, patches=ws.patches
    )
    if len(verts):
        keep = infer.vertex_nms(verts, probs, infer.DEFAULT_VERTEX_NMS_RADIUS)
        verts, probs = verts[keep], probs[keep]
        if len(verts) > cfg.refresh_max_vertices:
            top = np.lexsort((np.arange(len(probs)), -probs))[: cfg.refresh_max_vertices]
            verts = verts[np.sort(top)]
    ws.pred_pos, ws.pred_neg = build_pred_edge_sets(verts, ws.gt, ws.spurious_pairs, cfg, rng)


def _write_log(path, rows: list[TrainLogRow]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "l_pat", "l_vert", "l_edge", "val_msap", "lr", "seconds"])
        for r in rows:
            w.writerow(
                [r.epoch, f"{r.l_pat:.6f}", f"{r.l_vert:.6f}", f"{r.l_edge:.6f}",
                 f"{r.val_msap:.6f}", f"{r.lr:.6g}", f"{r.seconds:.2f}"]
            )


def train(
    train_samples,
    val_samples=(),
    cfg: ModelConfig | None = None,
    seed: int = 0,
    log_path=None,
    checkpoint_path=None,
    verbose: bool = False,
):
    """Train a model on a list of shape samples (anything with
    ``.name``/``.cloud``/``.gt``).

    One Adam optimizer covers every parameter; the learning rate halves
    every ``lr_halve_every`` epochs.  Per epoch: predicted edge sets are
    refreshed from the current model (every ``refresh_every`` epochs,
    starting with the first), then each shape contributes
    ``steps_per_shape`` optimization steps in shuffled order, then the
    validation msAP is measured by running full inference.  A non-finite
    loss or gradient restores the last finite parameters, saves them to
    ``checkpoint_path`` when given, and raises ``TrainingDiverged``.

    Returns (bundle, log rows).
    """
    from . import infer, metrics

    if cfg is None:
        cfg = ModelConfig()
    if not len(train_samples):
        raise ValueError("no training samples")
    rng = np.random.default_rng(seed)
    bundle = init_bundle(cfg, rng)
    workspaces = [ShapeWorkspace(s, cfg, rng) for s in train_samples]
    val_ctx = [
        (s, build_knn_graph(s.cloud, cfg.knn_k)) for s in val_samples
    ]
    val_cache = []
    for s, graph in val_ctx:
        n_seeds = max(1, min(len(s.cloud), int(math.ceil(len(s.cloud) / (cfg.m / 2.0)))))
        seeds = farthest_point_sampling(s.cloud.points, n_seeds, start=0)
        patches = geodesic_patches(graph, seeds, cfg.m)
        val_cache.append((s, graph, seeds, patches))

    params = bundle.named_arrays()
    states = bundle.state_arrays()
    adam = nn.AdamState(lr=cfg.lr)
    snapshot = {k: v.copy() for k, v in {**params, **states}.items()}
    need_pred = bool({"pred+", "pred-"} & set(cfg.use_edge_sets))
    rows: list[TrainLogRow] = []

    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        adam.lr = cfg.lr * 0.5 ** ((epoch - 1) // cfg.lr_halve_every)
        try:
            if need_pred and (epoch - 1) % cfg.refresh_every == 0:
                for ws in workspaces:
                    _refresh_predictions(ws, bundle, cfg, rng)
            sums = np.zeros(3)
            steps = 0
            for wi in rng.permutation(len(workspaces)):
                for _ in range(cfg.steps_per_shape):
                    out = _train_step(workspaces[wi], bundle, params, adam, cfg, rng)
                    if out is None:
                        continue
                    if not np.all(np.isfinite(out)):
                        raise nn.NonFiniteError(f"non-finite loss {out} on {workspaces[wi].name}")
                    sums += out
                    steps += 1
        except nn.NonFiniteError as exc:
            for k, v in {**params, **states}.items():
                np.copyto(v, snapshot[k])
            if checkpoint_path:
                save_bundle(bundle, checkpoint_path)
            raise TrainingDiverged(f"training diverged in epoch {epoch}: {exc}", bundle)

        val_msap = float("nan")
        if val_cache and epoch % cfg.val_every == 0:
            scores = []
            for s, graph, seeds, patches in val_cache:
                result = infer.extract_wireframe(
                    s.cloud, bundle, graph=graph, seeds=seeds, patches=patches
                )
                scores.append(metrics.mean_structural_ap(result.wireframe, s.gt))
            val_msap = float(np.mean(scores))

        mean = sums / max(steps, 1)
        rows.append(
            TrainLogRow(epoch, mean[0], mean[1], mean[2], val_msap, adam.lr,
                        time.perf_counter() - t0)
        )
        if log_path:
            _write_log(log_path, rows)
        if checkpoint_path:
            save_bundle(bundle, checkpoint_path)
        snapshot = {k: v.copy() for k, v in {**params, **states}.items()}
        if verbose:
            print(
                f"epoch {epoch:3d}  l_pat {mean[0]:.4f}  l_vert {mean[1]:.5f}  "
                f"l_edge {mean[2]:.4f}  val_msap {val_msap:.4f}  lr {adam.lr:.5f}"
            )
    return bundle, rows
