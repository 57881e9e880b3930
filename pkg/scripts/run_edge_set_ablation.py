"""Edge-sample-set ablation: which of the four training sets matter?

Trains the desk model with restricted combinations of the edge sample
sets (ground-truth only, predicted only, positives only) and compares
held-out msAP against the full four-set configuration.
"""

import argparse
import os

from cloudwire import experiments, model

VARIANTS = {
    "full": ("gt+", "gt-", "pred+", "pred-"),
    "gt-only": ("gt+", "gt-"),
    "pred-only": ("pred+", "pred-"),
    "positives-only": ("gt+", "pred+"),
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

    rows = []
    for name, sets in VARIANTS.items():
        suffix = "" if name == "full" else f".{name}"
        # the full model is shared with run_desk_experiment
        ckpt = os.path.join(args.work_dir, f"desk_sigma{args.sigma:g}{suffix}.npz")
        if not os.path.exists(ckpt):
            overrides = {"use_edge_sets": sets}
            if args.epochs is not None:
                overrides["epochs"] = args.epochs
            cfg = experiments.desk_model_config(**overrides)
            print(f"training {name} -> {ckpt}", flush=True)
            experiments.train_desk_model(
                corpus, ckpt, cfg, seed=args.seed,
                log_path=ckpt[: -len(".npz")] + ".log.csv", verbose=True,
            )
        ce = experiments.eval_split(corpus, model.load_bundle(ckpt), "test")
        rows.append((name, ce.msap))

    print(f"\n{'variant':>16s} {'msap':>8s}")
    for name, msap in rows:
        print(f"{name:>16s} {msap:8.3f}")
    full = dict(rows)["full"]
    beaten = [n for n, v in rows if n != "full" and v < full]
    print(f"full beats: {', '.join(beaten) if beaten else 'none'}")


if __name__ == "__main__":
    main()
