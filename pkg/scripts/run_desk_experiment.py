"""Train the desk model and report held-out metrics.

Generates the 60-shape desk corpus (40 train / 10 val / 10 test) if it
is not already under the work directory, trains the standard model, and
prints per-object and mean metrics on the test split.  Artifacts are
cached by path, so re-running only repeats the missing stages.
"""

import argparse
import os

from cloudwire import experiments, model


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--work-dir", default="runs/desk")
    ap.add_argument("--sigma", type=float, default=0.01, help="scanner noise")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--epochs", type=int, default=None, help="override epoch count")
    ap.add_argument("--fresh", action="store_true", help="retrain even if a checkpoint exists")
    args = ap.parse_args()

    corpus = os.path.join(args.work_dir, f"corpus_sigma{args.sigma:g}")
    if not os.path.exists(os.path.join(corpus, "manifest.json")):
        print(f"generating corpus -> {corpus}", flush=True)
        experiments.make_desk_corpus(corpus, args.sigma)

    ckpt = os.path.join(args.work_dir, f"desk_sigma{args.sigma:g}.npz")
    if args.fresh or not os.path.exists(ckpt):
        overrides = {} if args.epochs is None else {"epochs": args.epochs}
        cfg = experiments.desk_model_config(**overrides)
        experiments.train_desk_model(
            corpus, ckpt, cfg, seed=args.seed,
            log_path=ckpt[: -len(".npz")] + ".log.csv", verbose=True,
        )

    bundle = model.load_bundle(ckpt)
    ce = experiments.eval_split(corpus, bundle, "test")
    for o in ce.objects:
        print(
            f"{o.name:24s} map_v {o.map_v:.3f}  map_e {o.map_e:.3f}  "
            f"msap {o.msap:.3f}  wed {o.wed:.3f}"
        )
    print(
        f"{'mean':24s} map_v {ce.map_v:.3f}  map_e {ce.map_e:.3f}  "
        f"msap {ce.msap:.3f}  wed {ce.mean_wed:.3f}"
    )


if __name__ == "__main__":
    main()
