"""Minimal differentiable building blocks on float64 numpy arrays.

Everything is expressed over 2D row-major arrays (batch rows, feature
columns).  An MLP is a chain of affine -> batchnorm -> ReLU layers; the
final layer of a head usually has neither so it emits raw logits.

Design notes:

* Parameters are plain numpy arrays mutated in place by ``adam_step``.
  ``MlpParams.named_arrays`` exposes them as a flat dict so several
  sub-networks can share one optimizer state.
* Forward passes return an opaque cache consumed by the matching
  backward pass.  Backward passes return gradient dicts keyed like
  ``named_arrays`` so they can be accumulated with ``accumulate_grads``.
* Non-finite activations are rejected at layer boundaries; silent NaN
  propagation into a checkpoint is much harder to debug than an early
  raise.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

# Sigmoid outputs are clamped away from {0, 1} before any log.
PROB_CLAMP = 1e-7

_BN_EPS = 1e-5


class NonFiniteError(ValueError):
    """An activation, loss, or gradient stopped being finite."""


def _check_finite(name: str, x: np.ndarray) -> None:
    if not np.isfinite(x).all():
        raise NonFiniteError(f"non-finite values in {name}")


# ---------------------------------------------------------------------------
# specs and parameters


@dataclass(frozen=True)
class MlpSpec:
    """Layer widths plus per-layer ReLU / batchnorm switches.

    ``widths`` has length L+1 for L affine layers.  ``relu[l]`` and
    ``batchnorm[l]`` configure what follows affine layer ``l``.
    """

    widths: tuple[int, ...]
    relu: tuple[bool, ...]
    batchnorm: tuple[bool, ...]

    def __post_init__(self) -> None:
        L = len(self.widths) - 1
        if L < 1:
            raise ValueError("MlpSpec needs at least one layer")
        if len(self.relu) != L or len(self.batchnorm) != L:
            raise ValueError("relu/batchnorm flags must match layer count")
        if any(w < 1 for w in self.widths):
            raise ValueError("layer widths must be positive")

    @classmethod
    def simple(cls, widths, batchnorm: bool = False) -> "MlpSpec":
        """ReLU (and optional batchnorm) after every layer except the last."""
        widths = tuple(int(w) for w in widths)
        L = len(widths) - 1
        relu = tuple(i < L - 1 for i in range(L))
        bn = tuple(batchnorm and i < L - 1 for i in range(L))
        return cls(widths, relu, bn)

    @property
    def n_layers(self) -> int:
        return len(self.widths) - 1


@dataclass
class MlpParams:
    spec: MlpSpec
    W: list = field(default_factory=list)
    b: list = field(default_factory=list)
    bn_gamma: list = field(default_factory=list)
    bn_beta: list = field(default_factory=list)
    bn_mean: list = field(default_factory=list)   # running mean (eval mode)
    bn_var: list = field(default_factory=list)    # running variance (eval mode)
    bn_momentum: float = 0.9

    def named_arrays(self, prefix: str = "") -> dict[str, np.ndarray]:
        """Trainable arrays as a flat name -> array dict (live views)."""
        out: dict[str, np.ndarray] = {}
        for l in range(self.spec.n_layers):
            out[f"{prefix}W{l}"] = self.W[l]
            out[f"{prefix}b{l}"] = self.b[l]
            if self.spec.batchnorm[l]:
                out[f"{prefix}g{l}"] = self.bn_gamma[l]
                out[f"{prefix}beta{l}"] = self.bn_beta[l]
        return out

    def state_arrays(self, prefix: str = "") -> dict[str, np.ndarray]:
        """Non-trainable state (batchnorm running statistics)."""
        out: dict[str, np.ndarray] = {}
        for l in range(self.spec.n_layers):
            if self.spec.batchnorm[l]:
                out[f"{prefix}rm{l}"] = self.bn_mean[l]
                out[f"{prefix}rv{l}"] = self.bn_var[l]
        return out


def init_mlp(spec: MlpSpec, rng: np.random.Generator, final_zero: bool = True) -> MlpParams:
    """He-initialized weights; the final layer starts at zero when asked.

    A zero final layer makes untrained sigmoid heads output exactly 0.5
    and untrained softmax heads output uniform weights, which gives the
    rest of the pipeline a sane cold-start behavior.
    """
    params = MlpParams(spec=spec)
    for l in range(spec.n_layers):
        fan_in, fan_out = spec.widths[l], spec.widths[l + 1]
        if final_zero and l == spec.n_layers - 1:
            W = np.zeros((fan_in, fan_out))
        else:
            W = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, fan_out))
        params.W.append(W)
        params.b.append(np.zeros(fan_out))
        if spec.batchnorm[l]:
            params.bn_gamma.append(np.ones(fan_out))
            params.bn_beta.append(np.zeros(fan_out))
            params.bn_mean.append(np.zeros(fan_out))
            params.bn_var.append(np.ones(fan_out))
        else:
            params.bn_gamma.append(None)
            params.bn_beta.append(None)
            params.bn_mean.append(None)
            params.bn_var.append(None)
    return params


# ---------------------------------------------------------------------------
# forward / backward


def mlp_forward(params: MlpParams, x: np.ndarray, mode: str = "eval"):
    """Run the MLP; returns (output, cache) with cache feeding the backward.

    ``mode`` is "train" (batch statistics, running stats updated) or
    "eval" (running statistics, no side effects).  Eval mode is
    deterministic and batch-size independent per sample.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != params.spec.widths[0]:
        raise ValueError(f"input must be (B, {params.spec.widths[0]}), got {x.shape}")
    _check_finite("mlp input", x)
    spec = params.spec
    layers = []
    h = x
    for l in range(spec.n_layers):
        z = h @ params.W[l] + params.b[l]
        bn_cache = None
        if spec.batchnorm[l]:
            if mode == "train":
                mu = z.mean(axis=0)
                var = z.var(axis=0)
                inv = 1.0 / np.sqrt(var + _BN_EPS)
                zhat = (z - mu) * inv
                m = params.bn_momentum
                params.bn_mean[l][:] = m * params.bn_mean[l] + (1 - m) * mu
                params.bn_var[l][:] = m * params.bn_var[l] + (1 - m) * var
            else:
                inv = 1.0 / np.sqrt(params.bn_var[l] + _BN_EPS)
                zhat = (z - params.bn_mean[l]) * inv
            bn_cache = (zhat, inv)
            z = params.bn_gamma[l] * zhat + params.bn_beta[l]
        relu_mask = None
        if spec.relu[l]:
            relu_mask = z > 0.0
            z = z * relu_mask
        layers.append((h, bn_cache, relu_mask))
        h = z
    _check_finite("mlp output", h)
    return h, (layers, mode)


def mlp_backward(params: MlpParams, cache, dy: np.ndarray, prefix: str = ""):
    """Backward pass; returns (gradient dict, gradient w.r.t. input)."""
    layers, mode = cache
    spec = params.spec
    grads: dict[str, np.ndarray] = {}
    d = np.asarray(dy, dtype=np.float64)
    for l in range(spec.n_layers - 1, -1, -1):
        h, bn_cache, relu_mask = layers[l]
        if relu_mask is not None:
            d = d * relu_mask
        if spec.batchnorm[l]:
            zhat, inv = bn_cache
            grads[f"{prefix}g{l}"] = (d * zhat).sum(axis=0)
            grads[f"{prefix}beta{l}"] = d.sum(axis=0)
            dzhat = d * params.bn_gamma[l]
            if mode == "train":
                if zhat.shape[0] == 1:
                    # batch of one: zhat is identically zero, output does
                    # not depend on z
                    d = np.zeros_like(dzhat)
                else:
                    d = inv * (
                        dzhat
                        - dzhat.mean(axis=0)
                        - zhat * (dzhat * zhat).mean(axis=0)
                    )
            else:
                d = dzhat * inv
        grads[f"{prefix}W{l}"] = h.T @ d
        grads[f"{prefix}b{l}"] = d.sum(axis=0)
        d = d @ params.W[l].T
    return grads, d


def accumulate_grads(total: dict[str, np.ndarray], part: dict[str, np.ndarray]) -> None:
    for k, v in part.items():
        if k in total:
            total[k] = total[k] + v
        else:
            total[k] = v


# ---------------------------------------------------------------------------
# pooling and pointwise ops


def maxpool_rows(x: np.ndarray, group: int):
    """Max over consecutive groups of ``group`` rows, per column.

    Rows not divisible by ``group`` are padded with -inf (padding never
    wins the max).  Returns (pooled, argmax) where argmax holds original
    row indices used by the backward pass.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"maxpool_rows expects 2D input, got {x.shape}")
    if group < 1:
        raise ValueError("group must be >= 1")
    rows, cols = x.shape
    pad = (-rows) % group
    if pad:
        x = np.vstack([x, np.full((pad, cols), -np.inf)])
    g = x.reshape(-1, group, cols)
    arg_local = g.argmax(axis=1)  # (G, C)
    pooled = np.take_along_axis(g, arg_local[:, None, :], axis=1)[:, 0, :]
    base = np.arange(g.shape[0])[:, None] * group
    argmax = arg_local + base
    return pooled, argmax


def maxpool_rows_backward(dy: np.ndarray, argmax: np.ndarray, rows: int) -> np.ndarray:
    """Scatter pooled gradients back to the argmax rows."""
    dy = np.asarray(dy, dtype=np.float64)
    cols = dy.shape[1]
    dx = np.zeros((rows, cols))
    cols_idx = np.broadcast_to(np.arange(cols), argmax.shape)
    # argmax may point at padding rows only if a whole group was padding,
    # which cannot happen for rows >= 1
    np.add.at(dx, (argmax.ravel(), cols_idx.ravel()), dy.ravel())
    return dx


def sigmoid(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def sigmoid_clamped(z: np.ndarray):
    """Sigmoid clamped to [PROB_CLAMP, 1 - PROB_CLAMP].

    Returns (p, cache); the clamp is part of the function, so its
    derivative is zero wherever the clamp is active.
    """
    raw = sigmoid(z)
    p = np.clip(raw, PROB_CLAMP, 1.0 - PROB_CLAMP)
    active = (raw > PROB_CLAMP) & (raw < 1.0 - PROB_CLAMP)
    return p, (p, active)


def sigmoid_clamped_backward(dy: np.ndarray, cache) -> np.ndarray:
    p, active = cache
    return dy * p * (1.0 - p) * active


def softmax_rows(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    shifted = x - x.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def softmax_rows_backward(s: np.ndarray, dy: np.ndarray) -> np.ndarray:
    dot = (dy * s).sum(axis=1, keepdims=True)
    return s * (dy - dot)


# ---------------------------------------------------------------------------
# losses


def bce(p: np.ndarray, y: np.ndarray):
    """Mean binary cross-entropy on probabilities; returns (loss, dL/dp)."""
    p = np.asarray(p, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if p.shape != y.shape:
        raise ValueError("probability/label shape mismatch")
    pc = np.clip(p, PROB_CLAMP, 1.0 - PROB_CLAMP)
    n = len(p)
    loss = float(-(y * np.log(pc) + (1 - y) * np.log(1 - pc)).mean())
    inside = (p > PROB_CLAMP) & (p < 1.0 - PROB_CLAMP)
    dp = np.where(inside, (-y / pc + (1 - y) / (1 - pc)) / n, 0.0)
    return loss, dp


def balanced_bce(p: np.ndarray, y: np.ndarray):
    """Class-balanced BCE: half the weight on positives, half on negatives.

    Equivalent to plain BCE on a batch where the minority class has been
    duplicated up to parity.  Falls back to plain BCE with a warning when
    the batch holds a single class.
    """
    p = np.asarray(p, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if p.shape != y.shape:
        raise ValueError("probability/label shape mismatch")
    n_pos = int((y > 0.5).sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        warnings.warn("balanced_bce batch has a single class; using plain BCE", stacklevel=2)
        return bce(p, y)
    pc = np.clip(p, PROB_CLAMP, 1.0 - PROB_CLAMP)
    w = np.where(y > 0.5, 0.5 / n_pos, 0.5 / n_neg)
    loss = float(-(w * (y * np.log(pc) + (1 - y) * np.log(1 - pc))).sum())
    inside = (p > PROB_CLAMP) & (p < 1.0 - PROB_CLAMP)
    dp = np.where(inside, w * (-y / pc + (1 - y) / (1 - pc)), 0.0)
    return loss, dp


def mse_points(v: np.ndarray, v_gt: np.ndarray):
    """Mean squared Euclidean norm over rows; returns (loss, dL/dv)."""
    v = np.asarray(v, dtype=np.float64)
    v_gt = np.asarray(v_gt, dtype=np.float64)
    if v.shape != v_gt.shape:
        raise ValueError("prediction/target shape mismatch")
    n = len(v)
    diff = v - v_gt
    loss = float((diff ** 2).sum() / n)
    return loss, 2.0 * diff / n


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamState) -> None:
    """One Adam update, in place.  Keys missing a gradient are untouched."""
    state.t += 1
    t = state.t
    b1, b2 = state.beta1, state.beta2
    for k, g in grads.items():
        if k not in params:
            raise KeyError(f"gradient for unknown parameter {k!r}")
        _check_finite(f"grad[{k}]", np.asarray(g))
        if k not in state.m:
            state.m[k] = np.zeros_like(params[k])
            state.v[k] = np.zeros_like(params[k])
        state.m[k] = b1 * state.m[k] + (1 - b1) * g
        state.v[k] = b2 * state.v[k] + (1 - b2) * (g * g)
        mhat = state.m[k] / (1 - b1 ** t)
        vhat = state.v[k] / (1 - b2 ** t)
        params[k] -= state.lr * mhat / (np.sqrt(vhat) + state.eps)


# ---------------------------------------------------------------------------
# gradient checking


def gradient_check(
    f,
    arrays: dict[str, np.ndarray],
    h: float = 1e-5,
    rel_tol: float = 1e-4,
    abs_floor: float = 1e-7,
    max_entries: int = 0,
    rng: np.random.Generator | None = None,
) -> float:
    """Compare analytic gradients with central differences.

    ``f()`` must return ``(loss, grads)`` where grads maps the keys of
    ``arrays`` to analytic gradients, evaluated at the current values of
    ``arrays`` (which this function perturbs in place and restores).

    Checks every entry unless ``max_entries > 0``, in which case that many
    entries per array are sampled with ``rng``.  Returns the worst error
    observed, and raises ``AssertionError`` when an entry exceeds
    ``rel_tol * max(|num|, |ana|) + abs_floor``.
    """
    _, grads = f()
    worst = 0.0
    for name, arr in arrays.items():
        flat = arr.reshape(-1)
        g_ana = np.asarray(grads[name]).reshape(-1)
        idx = np.arange(flat.size)
        if max_entries and flat.size > max_entries:
            if rng is None:
                rng = np.random.default_rng(0)
            idx = rng.choice(flat.size, size=max_entries, replace=False)
        for i in idx:
            keep = flat[i]
            flat[i] = keep + h
            lp, _ = f()
            flat[i] = keep - h
            lm, _ = f()
            flat[i] = keep
            g_num = (lp - lm) / (2 * h)
            err = abs(g_num - g_ana[i])
            bound = rel_tol * max(abs(g_num), abs(g_ana[i])) + abs_floor
            worst = max(worst, err - bound)
            if err > bound:
                raise AssertionError(
                    f"gradient mismatch at {name}[{i}]: numeric {g_num:.6g} "
                    f"vs analytic {g_ana[i]:.6g} (err {err:.3g} > bound {bound:.3g})"
                )
    return worst
