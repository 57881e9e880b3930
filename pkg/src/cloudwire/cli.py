"""Command line interface.

Subcommands: ``scan`` (generate synthetic shapes), ``train`` (fit a
model on a corpus), ``infer`` (extract a wireframe from one cloud),
``eval`` (score predictions against ground truth), ``export`` (convert a
wireframe to OBJ).  Every subcommand prints its resolved configuration
and seed before doing work, so runs are reproducible from their logs
alone.  ``--config FILE`` points at a JSON object whose keys mirror the
flags; explicit flags win over the file, the file wins over defaults.
Exit codes: 0 success, 1 runtime failure, 2 usage errors (including
missing input files).
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import replace

import numpy as np

from . import backbone, infer, metrics, model, synth
from .core import ParseError, read_cloud, read_wireframe, write_obj, write_wireframe
from .neigh import build_knn_graph


def _read_config(path, parser) -> dict:
    if path is None:
        return {}
    if not os.path.exists(path):
        parser.error(f"config file not found: {path}")
    with open(path) as fh:
        try:
            cfg = json.load(fh)
        except json.JSONDecodeError as exc:
            parser.error(f"config file {path} is not valid JSON: {exc}")
    if not isinstance(cfg, dict):
        parser.error(f"config file {path} must hold a JSON object")
    return cfg


def _resolve(args, parser, defaults: dict) -> dict:
    """Merge defaults < config file < explicit flags into one dict.

    Flags parse with default None so an absent flag is distinguishable
    from an explicit one; config keys use the flag names with dashes
    replaced by underscores.
    """
    file_cfg = _read_config(getattr(args, "config", None), parser)
    unknown = set(file_cfg) - set(defaults)
    if unknown:
        parser.error(f"unknown config keys: {sorted(unknown)}")
    out = dict(defaults)
    out.update(file_cfg)
    for key in defaults:
        flag_val = getattr(args, key, None)
        if flag_val is not None:
            out[key] = flag_val
    return out


def _print_resolved(command: str, cfg: dict) -> None:
    print(json.dumps({"command": command, "config": cfg}, sort_keys=True))


# ---------------------------------------------------------------------------
# scan


_SCAN_DEFAULTS = {
    "shape": None,
    "count": None,
    "sigma": synth.ScanConfig().noise_sigma,
    "clip": synth.ScanConfig().noise_clip,
    "rays": synth.ScanConfig().rays_per_camera,
    "seed": 0,
    "n_train": synth.DatasetConfig().n_train,
    "n_val": synth.DatasetConfig().n_val,
    "n_test": synth.DatasetConfig().n_test,
    "families": ",".join(synth.DatasetConfig().families),
    "threads": 1,
}


def cmd_scan(args, parser) -> int:
    cfg = _resolve(args, parser, _SCAN_DEFAULTS)
    scan = synth.ScanConfig(
        rays_per_camera=int(cfg["rays"]),
        noise_sigma=float(cfg["sigma"]),
        noise_clip=float(cfg["clip"]),
    )
    _print_resolved("scan", {**cfg, "out": args.out})
    if cfg["shape"] is not None:
        if cfg["shape"] not in synth.SHAPE_FAMILIES:
            parser.error(f"unknown shape family {cfg['shape']!r}; options: {', '.join(synth.SHAPE_FAMILIES)}")
        count = int(cfg["count"]) if cfg["count"] is not None else 1
        names = synth.make_flat_dataset(args.out, cfg["shape"], count, scan, seed=int(cfg["seed"]))
        print(f"wrote {len(names)} {cfg['shape']} shape(s) under {args.out}")
        return 0
    if cfg["count"] is not None:
        parser.error("--count requires --shape (corpus sizes come from n_train/n_val/n_test)")
    families = tuple(s.strip() for s in str(cfg["families"]).split(",") if s.strip())
    for fam in families:
        if fam not in synth.SHAPE_FAMILIES:
            parser.error(f"unknown shape family {fam!r}; options: {', '.join(synth.SHAPE_FAMILIES)}")
    dcfg = synth.DatasetConfig(
        n_train=int(cfg["n_train"]),
        n_val=int(cfg["n_val"]),
        n_test=int(cfg["n_test"]),
        families=families,
        scan=scan,
        seed=int(cfg["seed"]),
    )
    manifest = synth.make_dataset(args.out, dcfg)
    print(f"wrote {len(manifest['samples'])} shapes under {args.out}")
    return 0


# ---------------------------------------------------------------------------
# train


_TRAIN_DEFAULTS = {
    "epochs": model.ModelConfig().epochs,
    "m": model.ModelConfig().m,
    "alpha": model.ModelConfig().alpha,
    "beta": model.ModelConfig().beta,
    "ablate_edge_sets": "",
    "seed": 0,
    "model": {},
    "threads": 1,
}


def cmd_train(args, parser) -> int:
    if not os.path.isdir(args.corpus):
        parser.error(f"corpus directory not found: {args.corpus}")
    cfg = _resolve(args, parser, _TRAIN_DEFAULTS)
    overrides = dict(cfg["model"])
    if not isinstance(overrides, dict):
        parser.error("config key 'model' must be an object of model-config fields")
    overrides["epochs"] = int(cfg["epochs"])
    overrides["m"] = int(cfg["m"])
    overrides["alpha"] = float(cfg["alpha"])
    overrides["beta"] = float(cfg["beta"])
    if cfg["ablate_edge_sets"]:
        excluded = tuple(s.strip() for s in str(cfg["ablate_edge_sets"]).split(",") if s.strip())
        for kind in excluded:
            if kind not in model.EDGE_SET_KINDS:
                parser.error(f"unknown edge set {kind!r}; options: {', '.join(model.EDGE_SET_KINDS)}")
        kept = tuple(k for k in model.EDGE_SET_KINDS if k not in excluded)
        if not kept:
            parser.error("cannot exclude every edge set")
        overrides["use_edge_sets"] = kept
    base = model.ModelConfig().to_dict()
    enc = dict(base["encoder"])
    enc.update(overrides.pop("encoder", {}))
    merged = {**base, **overrides, "encoder": enc}
    unknown = set(merged) - set(base)
    if unknown:
        parser.error(f"unknown model config keys: {sorted(unknown)}")
    try:
        mcfg = model.ModelConfig.from_dict(merged)
    except (TypeError, ValueError) as exc:
        parser.error(f"bad model config: {exc}")
    _print_resolved("train", {**cfg, "model": mcfg.to_dict(), "corpus": args.corpus, "out": args.out})
    train_samples = synth.load_split(args.corpus, "train")
    try:
        val_samples = synth.load_split(args.corpus, "val")
    except FileNotFoundError:
        val_samples = []
    if not train_samples:
        parser.error(f"no training samples under {args.corpus}")
    bundle, rows = model.train(
        train_samples,
        val_samples,
        mcfg,
        seed=int(cfg["seed"]),
        log_path=args.log,
        checkpoint_path=args.out,
        verbose=not args.quiet,
    )
    model.save_bundle(bundle, args.out)
    last = rows[-1]
    print(
        f"trained {mcfg.epochs} epochs; final losses "
        f"pat {last.l_pat:.4f} vert {last.l_vert:.5f} edge {last.l_edge:.4f} "
        f"val_msap {last.val_msap:.4f}; checkpoint {args.out}"
    )
    return 0


# ---------------------------------------------------------------------------
# infer


_INFER_DEFAULTS = {
    "vertex_thresh": infer.InferenceConfig().vertex_prob_thresh,
    "edge_thresh": infer.InferenceConfig().edge_prob_thresh,
    "nms_radius": infer.InferenceConfig().vertex_nms_radius,
    "nms_eta": infer.InferenceConfig().edge_nms_eta,
    "collinear_tol": infer.InferenceConfig().collinear_tol,
    "tau_surf": None,
    "seed": 0,
    "threads": 1,
}


def _inference_config(cfg: dict, args, parser) -> infer.InferenceConfig:
    try:
        return infer.InferenceConfig(
            vertex_prob_thresh=float(cfg["vertex_thresh"]),
            edge_prob_thresh=float(cfg["edge_thresh"]),
            vertex_nms_radius=float(cfg["nms_radius"]),
            edge_nms_eta=float(cfg["nms_eta"]),
            collinear_tol=float(cfg["collinear_tol"]),
            tau_surf=None if cfg["tau_surf"] is None else float(cfg["tau_surf"]),
            do_vertex_nms=not getattr(args, "no_vertex_nms", False),
            do_edge_nms=not getattr(args, "no_edge_nms", False),
            do_straighten=not getattr(args, "no_straighten", False),
        )
    except ValueError as exc:
        parser.error(f"bad inference config: {exc}")


def write_features_text(path, features: np.ndarray) -> None:
    """Sidecar dump: one whitespace-separated row of reals per point."""
    np.savetxt(path, features, fmt="%.8g")


def read_features_text(path) -> np.ndarray:
    feats = np.loadtxt(path, dtype=np.float64, ndmin=2)
    return feats


def cmd_infer(args, parser) -> int:
    for path in (args.model, args.cloud):
        if not os.path.exists(path):
            parser.error(f"file not found: {path}")
    cfg = _resolve(args, parser, _INFER_DEFAULTS)
    icfg = _inference_config(cfg, args, parser)
    _print_resolved("infer", {**cfg, "model": args.model, "cloud": args.cloud})
    bundle = model.load_bundle(args.model)
    cloud = read_cloud(args.cloud)
    features = graph = table = None
    if args.dump_features:
        from .core import normalize

        ncloud, _ = normalize(cloud)
        graph = build_knn_graph(ncloud, bundle.config.knn_k)
        if bundle.config.encoder.mode == "learned":
            table = backbone.neighbor_table(graph, bundle.config.encoder.k_neighbors)
        features = backbone.encode(ncloud, graph, bundle.config.encoder, bundle.encoder, table=table)
        write_features_text(args.dump_features, features)
        print(f"features ({features.shape[0]} x {features.shape[1]}) -> {args.dump_features}")
    result = infer.extract_wireframe(
        cloud, bundle, icfg, features=features, graph=graph, table=table
    )
    out = args.out
    if out is None:
        stem = args.cloud[:-4] if args.cloud.endswith(".xyz") else args.cloud
        out = stem + ".pred.wf.json"
    write_wireframe(result.wireframe, out)
    if args.obj:
        write_obj(result.wireframe, args.obj)
    if args.dump_scores:
        diag = {
            "n_seeds": result.n_seeds,
            "n_vertex_candidates": result.n_vertex_candidates,
            "n_vertices": result.n_vertices,
            "n_edge_candidates": result.n_edge_candidates,
            "n_edges_on_surface": result.n_edges_on_surface,
            "n_edges_verified": result.n_edges_verified,
            "vertex_scores": [float(s) for s in result.wireframe.vertex_scores],
            "edge_scores": [float(s) for s in result.wireframe.edge_scores],
            "seconds": result.seconds,
        }
        with open(args.dump_scores, "w") as fh:
            json.dump(diag, fh, indent=1, sort_keys=True)
            fh.write("\n")
    print(
        f"{result.wireframe.n_vertices} vertices, {result.wireframe.n_edges} edges "
        f"in {result.seconds:.2f}s -> {out}"
    )
    return 0


# ---------------------------------------------------------------------------
# eval


_EVAL_DEFAULTS = {
    "cv": 1.0,
    "ce": 1.0,
    "seed": 0,
    "threads": 1,
    "vertex_thresh": infer.InferenceConfig().vertex_prob_thresh,
    "edge_thresh": infer.InferenceConfig().edge_prob_thresh,
    "nms_radius": infer.InferenceConfig().vertex_nms_radius,
    "nms_eta": infer.InferenceConfig().edge_nms_eta,
    "collinear_tol": infer.InferenceConfig().collinear_tol,
    "tau_surf": None,
}


def _dump_pr_curves(out_dir, name, pred, gt, cloud) -> None:
    rows = []
    for eta in metrics.VERTEX_AP_THRESHOLDS:
        curve = metrics.vertex_pr(pred, gt, eta)
        for p, r in zip(curve.precision, curve.recall):
            rows.append({"metric": "vertex", "eta": eta, "precision": p, "recall": r})
    for eta in metrics.EDGE_AP_THRESHOLDS:
        curve = metrics.edge_point_pr(pred, gt, cloud, eta)
        for p, r in zip(curve.precision, curve.recall):
            rows.append({"metric": "edge_point", "eta": eta, "precision": p, "recall": r})
    for eta in metrics.STRUCTURAL_AP_THRESHOLDS:
        curve = metrics.structural_pr(pred, gt, eta)
        for p, r in zip(curve.precision, curve.recall):
            rows.append({"metric": "structural", "eta": eta, "precision": p, "recall": r})
    with open(os.path.join(out_dir, name + ".pr.csv"), "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["metric", "eta", "precision", "recall"])
        w.writeheader()
        w.writerows(rows)


def cmd_eval(args, parser) -> int:
    if not os.path.isdir(args.gt):
        parser.error(f"ground-truth directory not found: {args.gt}")
    if args.features and not os.path.isdir(args.features):
        parser.error(f"features directory not found: {args.features}")
    cfg = _resolve(args, parser, _EVAL_DEFAULTS)
    samples = synth.load_samples(args.gt)
    if not samples:
        parser.error(f"no samples under {args.gt}")
    items = []
    if os.path.isdir(args.pred):
        _print_resolved("eval", {**cfg, "pred": args.pred, "gt": args.gt})
        for s in samples:
            ppath = os.path.join(args.pred, s.name + ".wf.json")
            if not os.path.exists(ppath):
                parser.error(f"missing prediction: {ppath}")
            items.append((s.name, read_wireframe(ppath), s.gt, s.cloud))
    else:
        if not os.path.exists(args.pred):
            parser.error(f"prediction source not found: {args.pred}")
        icfg = _inference_config(cfg, args, parser)
        _print_resolved("eval", {**cfg, "pred": args.pred, "gt": args.gt})
        bundle = model.load_bundle(args.pred)
        for s in samples:
            features = None
            if args.features:
                fpath = os.path.join(args.features, s.name + ".features.txt")
                if not os.path.exists(fpath):
                    parser.error(f"missing features file: {fpath}")
                features = read_features_text(fpath)
            result = infer.extract_wireframe(s.cloud, bundle, icfg, features=features)
            items.append((s.name, result.wireframe, s.gt, s.cloud))
    ce = metrics.eval_corpus(items, c_v=float(cfg["cv"]), c_e=float(cfg["ce"]))
    for o in ce.objects:
        print(
            f"{o.name:24s} map_v {o.map_v:.4f}  map_e {o.map_e:.4f}  "
            f"msap {o.msap:.4f}  wed {o.wed:.4f}"
        )
    print(
        f"{'mean':24s} map_v {ce.map_v:.4f}  map_e {ce.map_e:.4f}  "
        f"msap {ce.msap:.4f}  wed {ce.mean_wed:.4f}"
    )
    if args.csv:
        rows = [o.as_row() for o in ce.objects]
        keys = sorted({k for r in rows for k in r}, key=lambda k: (k != "name", k))
        with open(args.csv, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=keys)
            w.writeheader()
            w.writerows(rows)
        print(f"per-object metrics -> {args.csv}")
    if args.pr_dump:
        os.makedirs(args.pr_dump, exist_ok=True)
        for (name, pred, gt, cloud) in items:
            _dump_pr_curves(args.pr_dump, name, pred, gt, cloud)
        print(f"PR curves -> {args.pr_dump}")
    return 0


# ---------------------------------------------------------------------------
# export


def cmd_export(args, parser) -> int:
    if not os.path.exists(args.input):
        parser.error(f"file not found: {args.input}")
    wf = read_wireframe(args.input)
    out = args.out or (args.input + ".obj")
    write_obj(wf, out)
    print(f"{wf.n_vertices} vertices, {wf.n_edges} edges -> {out}")
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cloudwire",
        description="Vectorized wireframe extraction from 3D point clouds.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="JSON file whose keys mirror the flags")
        sp.add_argument("--seed", type=int, help="random seed (default 0)")
        sp.add_argument(
            "--threads",
            type=int,
            help="accepted for interface compatibility; the implementation is single-threaded",
        )

    sp = sub.add_parser("scan", help="generate synthetic scanned shapes")
    sp.add_argument("--out", required=True, help="output directory")
    sp.add_argument("--shape", help="single family flat mode (box, lshape, prism, staircase, ...)")
    sp.add_argument("--count", type=int, help="number of shapes in --shape mode")
    sp.add_argument("--sigma", type=float, help="scanner noise sigma")
    sp.add_argument("--clip", type=float, help="noise truncation bound")
    sp.add_argument("--rays", type=int, help="rays per camera")
    sp.add_argument("--n-train", dest="n_train", type=int, help="corpus-mode train count")
    sp.add_argument("--n-val", dest="n_val", type=int, help="corpus-mode val count")
    sp.add_argument("--n-test", dest="n_test", type=int, help="corpus-mode test count")
    sp.add_argument("--families", help="corpus-mode comma-separated shape families")
    common(sp)
    sp.set_defaults(func=cmd_scan)

    sp = sub.add_parser("train", help="train a model on a corpus")
    sp.add_argument("--corpus", required=True, help="corpus directory (train/ and val/ splits)")
    sp.add_argument("--out", required=True, help="output checkpoint (.npz)")
    sp.add_argument("--log", help="training log CSV (epoch, losses, val msAP)")
    sp.add_argument("--epochs", type=int, help="epoch count")
    sp.add_argument("--m", type=int, help="patch size (points per detection patch)")
    sp.add_argument("--alpha", type=float, help="vertex localization loss weight")
    sp.add_argument("--beta", type=float, help="edge verification loss weight")
    sp.add_argument(
        "--ablate-edge-sets",
        dest="ablate_edge_sets",
        help="comma-separated edge training sets to EXCLUDE (gt+, gt-, pred+, pred-)",
    )
    sp.add_argument("--quiet", action="store_true", help="suppress per-epoch lines")
    common(sp)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("infer", help="extract a wireframe from a point cloud")
    sp.add_argument("--model", required=True, help="checkpoint from train")
    sp.add_argument("--cloud", required=True, help="cloud file (x y z per line)")
    sp.add_argument("--out", help="output wireframe JSON (default: <cloud>.pred.wf.json)")
    sp.add_argument("--obj", help="also write the wireframe as OBJ")
    sp.add_argument("--vertex-thresh", dest="vertex_thresh", type=float, help="vertex probability threshold")
    sp.add_argument("--edge-thresh", dest="edge_thresh", type=float, help="edge probability threshold")
    sp.add_argument("--nms-radius", dest="nms_radius", type=float, help="vertex suppression radius")
    sp.add_argument("--nms-eta", dest="nms_eta", type=float, help="edge suppression displacement bound")
    sp.add_argument("--collinear-tol", dest="collinear_tol", type=float, help="straightening angle tolerance (rad)")
    sp.add_argument("--tau-surf", dest="tau_surf", type=float, help="surface pruning distance (default 2x NN spacing)")
    sp.add_argument("--no-vertex-nms", action="store_true")
    sp.add_argument("--no-edge-nms", action="store_true")
    sp.add_argument("--no-straighten", action="store_true")
    sp.add_argument("--dump-features", dest="dump_features", help="write per-point features (text, normalized frame)")
    sp.add_argument("--dump-scores", dest="dump_scores", help="write extraction diagnostics JSON")
    common(sp)
    sp.set_defaults(func=cmd_infer)

    sp = sub.add_parser("eval", help="score predictions against ground truth")
    sp.add_argument("--pred", required=True, help="directory of {name}.wf.json predictions, or a checkpoint to run")
    sp.add_argument("--gt", required=True, help="directory of {name}.xyz + {name}.wf.json ground truth")
    sp.add_argument("--cv", type=float, help="vertex translation cost (default 1)")
    sp.add_argument("--ce", type=float, help="edge edit cost per unit length (default 1)")
    sp.add_argument("--csv", help="per-object metrics CSV")
    sp.add_argument("--pr-dump", dest="pr_dump", help="directory for per-object PR curve CSVs")
    sp.add_argument("--features", help="directory of {name}.features.txt files to reuse")
    sp.add_argument("--vertex-thresh", dest="vertex_thresh", type=float)
    sp.add_argument("--edge-thresh", dest="edge_thresh", type=float)
    sp.add_argument("--nms-radius", dest="nms_radius", type=float)
    sp.add_argument("--nms-eta", dest="nms_eta", type=float)
    sp.add_argument("--collinear-tol", dest="collinear_tol", type=float)
    sp.add_argument("--tau-surf", dest="tau_surf", type=float)
    sp.add_argument("--no-vertex-nms", action="store_true")
    sp.add_argument("--no-edge-nms", action="store_true")
    sp.add_argument("--no-straighten", action="store_true")
    common(sp)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("export", help="convert a wireframe JSON to OBJ")
    sp.add_argument("--input", required=True, help="wireframe JSON")
    sp.add_argument("--out", help="output OBJ path (default: <input>.obj)")
    common(sp)
    sp.set_defaults(func=cmd_export)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args, parser)
    except model.TrainingDiverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ParseError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
