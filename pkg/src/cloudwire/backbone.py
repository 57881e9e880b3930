"""Per-point feature backbone.

Each point gets a C-dimensional descriptor of its local neighborhood.
Two modes share one interface:

* ``learned``: for every point, the K nearest neighbors contribute
  (relative offset, radial distance) rows through a shared dense layer,
  max-pooled over neighbors, concatenated with the normalized local
  covariance eigenvalue triple, and mapped through a final MLP.  Features
  are invariant to translation and to neighbor ordering by construction;
  rotation invariance is NOT built in and is handled at training time by
  rotation augmentation.
* ``handcrafted``: parameter-free multi-scale covariance shape factors
  (linearity, planarity, sphericity at two radii), zero-padded to C.
  Useful as a no-training baseline and for debugging.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from . import nn
from .core import PointCloud
from .neigh import KnnGraph

_EIG_GUARD = 1e-30


@dataclass(frozen=True)
class EncoderConfig:
    mode: str = "learned"
    out_dim: int = 32
    k_neighbors: int = 16
    hidden: int = 64
    batchnorm: bool = True
    handcrafted_radii: tuple = (0.03, 0.08)

    def __post_init__(self) -> None:
        if self.mode not in ("learned", "handcrafted"):
            raise ValueError(f"unknown encoder mode {self.mode!r}")
        if self.out_dim < 6 and self.mode == "handcrafted":
            raise ValueError("handcrafted mode needs out_dim >= 6")
        if self.out_dim < 1 or self.k_neighbors < 1 or self.hidden < 1:
            raise ValueError("encoder dimensions must be positive")


@dataclass
class EncoderParams:
    cfg: EncoderConfig
    pre: nn.MlpParams | None = None   # (4,) neighbor rows -> hidden
    post: nn.MlpParams | None = None  # hidden + 3 eigenvalues -> out_dim

    def named_arrays(self, prefix: str = "enc.") -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        if self.pre is not None:
            out.update(self.pre.named_arrays(prefix + "pre."))
            out.update(self.post.named_arrays(prefix + "post."))
        return out

    def state_arrays(self, prefix: str = "enc.") -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        if self.pre is not None:
            out.update(self.pre.state_arrays(prefix + "pre."))
            out.update(self.post.state_arrays(prefix + "post."))
        return out


def init_encoder(cfg: EncoderConfig, rng: np.random.Generator) -> EncoderParams:
    if cfg.mode == "handcrafted":
        return EncoderParams(cfg=cfg)
    pre = nn.init_mlp(
        nn.MlpSpec(widths=(4, cfg.hidden), relu=(True,), batchnorm=(cfg.batchnorm,)),
        rng,
        final_zero=False,
    )
    post = nn.init_mlp(
        nn.MlpSpec.simple((cfg.hidden + 3, cfg.hidden, cfg.out_dim), batchnorm=cfg.batchnorm),
        rng,
        final_zero=False,
    )
    return EncoderParams(cfg=cfg, pre=pre, post=post)


def neighbor_table(graph: KnnGraph, k_enc: int) -> np.ndarray:
    """Per-point neighbor indices (N, k_enc) from the kNN graph.

    Rows are sorted by (distance, index); points with fewer than k_enc
    graph neighbors are padded by repeating the nearest one, which is
    neutral under the encoder's max-pool.
    """
    n = graph.n_points
    indptr = graph.csr.indptr
    indices = graph.csr.indices
    data = graph.csr.data
    counts = np.diff(indptr)
    if np.any(counts == 0):
        raise ValueError("graph has isolated points")
    row_of = np.repeat(np.arange(n), counts)
    order = np.lexsort((indices, data, row_of))
    col = indices[order]
    pos = np.arange(len(col)) - np.repeat(indptr[:-1], counts)
    # pad short rows by repeating the nearest neighbor (maxpool-neutral)
    nearest = col[indptr[:-1]]
    table = np.repeat(nearest[:, None], k_enc, axis=1)
    keep = pos < k_enc
    table[row_of[keep], pos[keep]] = col[keep]
    return table


def _eigen_triple(rel: np.ndarray) -> np.ndarray:
    """Normalized descending covariance eigenvalues of each neighborhood.

    ``rel`` is (B, K, 3) neighbor offsets; the center point participates
    as the zero offset.
    """
    b, k, _ = rel.shape
    aug = np.concatenate([rel, np.zeros((b, 1, 3))], axis=1)
    mu = aug.mean(axis=1, keepdims=True)
    cen = aug - mu
    cov = np.einsum("bki,bkj->bij", cen, cen) / (k + 1)
    ev = np.linalg.eigvalsh(cov)[:, ::-1]  # descending
    s = ev.sum(axis=1, keepdims=True)
    return np.where(s > _EIG_GUARD, ev / np.maximum(s, _EIG_GUARD), 0.0)


def encode_forward(
    coords: np.ndarray,
    table: np.ndarray,
    params: EncoderParams,
    rows: np.ndarray | None = None,
    mode: str = "eval",
):
    """Features for ``rows`` (default: all points); returns (F, cache)."""
    cfg = params.cfg
    if rows is None:
        rows = np.arange(len(coords))
    rows = np.asarray(rows, dtype=np.int64)
    nb = table[rows]  # (B, K)
    rel = coords[nb] - coords[rows][:, None, :]  # (B, K, 3)
    if cfg.mode == "handcrafted":
        raise ValueError("encode_forward is for the learned mode; use encode()")
    b, k = nb.shape
    rad = np.linalg.norm(rel, axis=2, keepdims=True)
    x = np.concatenate([rel, rad], axis=2).reshape(b * k, 4)
    h, pre_cache = nn.mlp_forward(params.pre, x, mode)
    pooled, argmax = nn.maxpool_rows(h, k)  # (B, hidden)
    eig = _eigen_triple(rel)
    z = np.concatenate([pooled, eig], axis=1)
    f, post_cache = nn.mlp_forward(params.post, z, mode)
    cache = (pre_cache, post_cache, argmax, b, k)
    return f, cache


def encode_backward(params: EncoderParams, cache, df: np.ndarray) -> dict[str, np.ndarray]:
    """Parameter gradients for a learned-mode forward pass."""
    pre_cache, post_cache, argmax, b, k = cache
    grads, dz = nn.mlp_backward(params.post, post_cache, df, prefix="enc.post.")
    dpooled = dz[:, : params.cfg.hidden]  # eigenvalue block carries no parameters
    dh = nn.maxpool_rows_backward(dpooled, argmax, b * k)
    pre_grads, _ = nn.mlp_backward(params.pre, pre_cache, dh, prefix="enc.pre.")
    grads.update(pre_grads)
    return grads


def _handcrafted_features(points: np.ndarray, cfg: EncoderConfig) -> np.ndarray:
    """Eigenvalue-ratio features over every neighbor within each radius.

    Covariances accumulate as sum / sum-of-outer-products so the full
    in-radius set contributes without a fixed neighbor cap; points are
    chunked to bound the pair-level intermediates.
    """
    tree = cKDTree(points)
    n = len(points)
    out = np.zeros((n, cfg.out_dim))
    chunk = 4096
    col = 0
    for radius in cfg.handcrafted_radii:
        for lo in range(0, n, chunk):
            hi = min(lo + chunk, n)
            lists = tree.query_ball_point(points[lo:hi], radius)
            counts = np.array([len(l) for l in lists])
            if counts.sum() == 0:
                continue
            idx = np.concatenate([np.asarray(l, dtype=np.int64) for l in lists])
            row = np.repeat(np.arange(hi - lo), counts)
            rel = points[idx] - points[lo + row]
            b = hi - lo
            s1 = np.zeros((b, 3))
            np.add.at(s1, row, rel)
            s2 = np.zeros((b, 3, 3))
            np.add.at(s2, row, rel[:, :, None] * rel[:, None, :])
            c = np.maximum(counts, 1).astype(np.float64)
            mu = s1 / c[:, None]
            cov = s2 / c[:, None, None] - mu[:, :, None] * mu[:, None, :]
            ev = np.linalg.eigvalsh(cov)[:, ::-1]
            lam1 = np.maximum(ev[:, 0], _EIG_GUARD)
            enough = counts >= 3
            out[lo:hi, col] = np.where(enough, (ev[:, 0] - ev[:, 1]) / lam1, 0.0)
            out[lo:hi, col + 1] = np.where(enough, (ev[:, 1] - ev[:, 2]) / lam1, 0.0)
            out[lo:hi, col + 2] = np.where(enough, ev[:, 2] / lam1, 0.0)
        col += 3
    return out


def encode(
    cloud: PointCloud | np.ndarray,
    graph: KnnGraph | None,
    cfg: EncoderConfig,
    params: EncoderParams | None = None,
    table: np.ndarray | None = None,
) -> np.ndarray:
    """Per-point features (N, out_dim) in eval mode.

    The learned mode needs ``params`` and either ``graph`` or a
    precomputed neighbor ``table``; the handcrafted mode needs neither.
    """
    pts = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=np.float64)
    if cfg.mode == "handcrafted":
        return _handcrafted_features(pts, cfg)
    if params is None or params.pre is None:
        raise ValueError("learned encoder needs initialized parameters")
    if table is None:
        if graph is None:
            raise ValueError("learned encoder needs a graph or neighbor table")
        table = neighbor_table(graph, cfg.k_neighbors)
    # chunk rows so the (rows * k_neighbors, hidden) intermediate stays small
    chunk = 16384
    n = len(pts)
    out = np.empty((n, cfg.out_dim))
    for lo in range(0, n, chunk):
        rows = np.arange(lo, min(lo + chunk, n))
        f, _ = encode_forward(pts, table, params, rows=rows, mode="eval")
        out[rows] = f
    return out
