"""Reusable experiment recipes shared by scripts/ and the test suite.

The "desk corpus" is a small benchmark of desk-scale shapes (boxes,
L-shaped blocks, triangular prisms, staircases) scanned at a reduced ray
budget so one full train/eval cycle fits in CPU minutes.  Keeping the
recipes here means the runnable scripts and the acceptance tests drive
the exact same configurations.
"""

from __future__ import annotations

import os
from dataclasses import replace

from . import metrics, synth
from .infer import InferenceConfig, extract_wireframe
from .model import ModelConfig, train

DESK_FAMILIES = ("box", "lshape", "prism", "staircase")
DESK_SCAN = synth.ScanConfig(rays_per_camera=1200, noise_sigma=0.01)
DESK_DATASET = synth.DatasetConfig(
    n_train=40,
    n_val=10,
    n_test=10,
    families=DESK_FAMILIES,
    scan=DESK_SCAN,
    seed=7,
)

# Detection patches on the desk clouds span a geodesic radius near 0.08,
# so positive training seeds are drawn from a matching band around each
# vertex; the inference-time seeds land anywhere in the patch.  Tilt-only
# augmentation: the corpus already varies which axis plays which role, and
# the full 24-orientation group slows localiser convergence several-fold.
DESK_MODEL = ModelConfig(
    epochs=30,
    pos_seed_radius=0.06,
    batchnorm=True,
    steps_per_shape=5,
    edges_per_step=32,
    augment_base_rotations=False,
    refresh_every=3,
    val_every=10,
)


def desk_dataset_config(noise_sigma: float | None = None) -> synth.DatasetConfig:
    dcfg = DESK_DATASET
    if noise_sigma is not None:
        dcfg = replace(dcfg, scan=replace(dcfg.scan, noise_sigma=noise_sigma))
    return dcfg


def make_desk_corpus(root_dir: str, noise_sigma: float | None = None) -> dict:
    """Generate the desk corpus under root_dir; same geometry at every sigma."""
    return synth.make_dataset(root_dir, desk_dataset_config(noise_sigma))


def desk_model_config(**overrides) -> ModelConfig:
    return replace(DESK_MODEL, **overrides) if overrides else DESK_MODEL


def train_desk_model(
    corpus_dir: str,
    checkpoint_path: str,
    cfg: ModelConfig | None = None,
    seed: int = 0,
    log_path: str | None = None,
    verbose: bool = False,
):
    cfg = cfg or DESK_MODEL
    train_samples = synth.load_split(corpus_dir, "train")
    val_samples = synth.load_split(corpus_dir, "val")
    return train(
        train_samples,
        val_samples,
        cfg,
        seed=seed,
        log_path=log_path,
        checkpoint_path=checkpoint_path,
        verbose=verbose,
    )


def eval_split(
    corpus_dir: str,
    bundle,
    split: str = "test",
    icfg: InferenceConfig | None = None,
) -> metrics.CorpusEval:
    """Run inference over a corpus split and score it."""
    samples = synth.load_split(corpus_dir, split)
    items = []
    for s in samples:
        result = extract_wireframe(s.cloud, bundle, icfg)
        items.append((s.name, result.wireframe, s.gt, s.cloud))
    return metrics.eval_corpus(items)


def corpus_cache_dir(root: str, tag: str) -> str:
    path = os.path.join(root, tag)
    os.makedirs(path, exist_ok=True)
    return path
