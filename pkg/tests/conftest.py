"""Shared fixtures.

Expensive artifacts (scanned corpora, trained models) are cached under
``.cache/`` keyed by a hash of the source modules that produce them, so
editing the code invalidates stale artifacts automatically while repeat
test runs stay fast.  Everything is lazy: running only the cheap module
tests never triggers a training run.
"""

from __future__ import annotations

import hashlib
import json
import os
import shutil
import time

import numpy as np
import pytest

from cloudwire import experiments, model, synth

TESTS_DIR = os.path.dirname(os.path.abspath(__file__))
REPO = os.path.dirname(TESTS_DIR)
PKG = os.path.join(REPO, "src", "cloudwire")
CACHE = os.path.join(REPO, ".cache")

# artifact cache keys: corpus files depend on the first group only, trained
# models on the full pipeline
CORPUS_MODULES = ("core", "synth")
MODEL_MODULES = (
    "core",
    "synth",
    "neigh",
    "nn",
    "backbone",
    "model",
    "infer",
    "metrics",
    "experiments",
)


def source_hash(modules) -> str:
    h = hashlib.sha256()
    for m in modules:
        with open(os.path.join(PKG, m + ".py"), "rb") as fh:
            h.update(fh.read())
    return h.hexdigest()[:12]


def cached_corpus(sigma: float) -> str:
    """Desk corpus at the given noise level; same geometry at every sigma."""
    tag = f"corpus_s{sigma:g}_{source_hash(CORPUS_MODULES)}"
    root = os.path.join(CACHE, tag)
    if not os.path.exists(os.path.join(root, "manifest.json")):
        shutil.rmtree(root, ignore_errors=True)
        os.makedirs(CACHE, exist_ok=True)
        experiments.make_desk_corpus(root, noise_sigma=sigma)
    return root


def cached_model(name: str, corpus_dir: str, cfg=None, seed: int = 0):
    """Train (or reload) a desk model; returns (bundle, rows_or_None, path).

    First training writes a ``.meta.json`` sidecar with the measured wall
    time so timing assertions keep working on cached reloads.
    """
    tag = f"model_{name}_{source_hash(MODEL_MODULES)}"
    path = os.path.join(CACHE, tag + ".npz")
    log = os.path.join(CACHE, tag + ".log.csv")
    if not os.path.exists(path):
        os.makedirs(CACHE, exist_ok=True)
        t0 = time.perf_counter()
        bundle, rows = experiments.train_desk_model(
            corpus_dir, path, cfg, seed=seed, log_path=log
        )
        seconds = time.perf_counter() - t0
        model.save_bundle(bundle, path)
        meta = {
            "train_seconds": seconds,
            "epochs": (cfg or experiments.DESK_MODEL).epochs,
        }
        with open(os.path.join(CACHE, tag + ".meta.json"), "w") as fh:
            json.dump(meta, fh)
        return bundle, rows, path
    return model.load_bundle(path), None, path


def cached_model_meta(name: str) -> dict:
    """Timing sidecar recorded when the named model was first trained."""
    tag = f"model_{name}_{source_hash(MODEL_MODULES)}"
    with open(os.path.join(CACHE, tag + ".meta.json")) as fh:
        return json.load(fh)


@pytest.fixture(scope="session")
def desk_corpus() -> str:
    return cached_corpus(0.01)


@pytest.fixture(scope="session")
def desk_corpus_sigma0() -> str:
    return cached_corpus(0.0)


@pytest.fixture(scope="session")
def desk_corpus_sigma002() -> str:
    return cached_corpus(0.02)


@pytest.fixture(scope="session")
def desk_model(desk_corpus):
    """The main trained model used across acceptance criteria."""
    bundle, _, path = cached_model("main", desk_corpus)
    return bundle


@pytest.fixture(scope="session")
def desk_test_samples(desk_corpus):
    return synth.load_split(desk_corpus, "test")


@pytest.fixture(scope="session")
def tiny_corpus(tmp_path_factory) -> str:
    """Six small fast shapes for integration tests that need real scans."""
    root = str(tmp_path_factory.mktemp("tiny_corpus"))
    dcfg = synth.DatasetConfig(
        n_train=4,
        n_val=1,
        n_test=1,
        families=("box", "lshape"),
        scan=synth.ScanConfig(rays_per_camera=260, noise_sigma=0.01),
        seed=11,
    )
    synth.make_dataset(root, dcfg)
    return root


@pytest.fixture(scope="session")
def box_scan():
    """One clean dense box scan: (cloud, gt) in the normalized frame."""
    from cloudwire.core import normalize

    rng = np.random.default_rng(42)
    mesh = synth.make_shape("box", synth.sample_shape_params("box", rng))
    cloud = synth.virtual_scan(
        mesh, synth.ScanConfig(rays_per_camera=1200, noise_sigma=0.0, seed=3)
    )
    ncloud, tf = normalize(cloud)
    return ncloud, mesh.gt_wireframe.transformed(tf)
