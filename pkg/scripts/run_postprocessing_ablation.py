"""Post-processing ablation on one trained model.

Evaluates the same checkpoint under three inference settings: raw
thresholded output (no suppression, no straightening), suppression only,
and the full pipeline.  Trains the standard desk model first if the
work directory has no checkpoint.
"""

import argparse
import os

from cloudwire import experiments, model
from cloudwire.infer import InferenceConfig

VARIANTS = {
    "raw": InferenceConfig(do_vertex_nms=False, do_edge_nms=False, do_straighten=False),
    "nms-only": InferenceConfig(do_straighten=False),
    "nms+straighten": InferenceConfig(),
}


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--work-dir", default="runs/desk")
    ap.add_argument("--sigma", type=float, default=0.01)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--epochs", type=int, default=None)
    args = ap.parse_args()

    corpus = os.path.join(args.work_dir, f"corpus_sigma{args.sigma:g}")
    if not os.path.exists(os.path.join(corpus, "manifest.json")):
        print(f"generating corpus -> {corpus}", flush=True)
        experiments.make_desk_corpus(corpus, args.sigma)
    ckpt = os.path.join(args.work_dir, f"desk_sigma{args.sigma:g}.npz")
    if not os.path.exists(ckpt):
        overrides = {} if args.epochs is None else {"epochs": args.epochs}
        cfg = experiments.desk_model_config(**overrides)
        experiments.train_desk_model(
            corpus, ckpt, cfg, seed=args.seed,
            log_path=ckpt[: -len(".npz")] + ".log.csv", verbose=True,
        )

    bundle = model.load_bundle(ckpt)
    print(f"\n{'variant':>16s} {'map_v':>8s} {'msap':>8s} {'wed':>8s}")
    for name, icfg in VARIANTS.items():
        ce = experiments.eval_split(corpus, bundle, "test", icfg=icfg)
        print(f"{name:>16s} {ce.map_v:8.3f} {ce.msap:8.3f} {ce.mean_wed:8.3f}")


if __name__ == "__main__":
    main()
