"""Noise-level sweep: train and evaluate at several scanner sigmas.

Each sigma gets its own corpus (same geometry seed, different noise) and
its own model; the summary table shows how msAP degrades as the scans
get noisier.  Shares the work directory layout with run_desk_experiment,
so already-trained sigmas are reused.
"""

import argparse
import os

from cloudwire import experiments, model


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--work-dir", default="runs/desk")
    ap.add_argument(
        "--sigmas", default="0,0.01,0.02",
        help="comma-separated noise levels (default 0,0.01,0.02)",
    )
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--epochs", type=int, default=None)
    args = ap.parse_args()
    sigmas = [float(s) for s in args.sigmas.split(",") if s.strip()]

    rows = []
    for sigma in sigmas:
        corpus = os.path.join(args.work_dir, f"corpus_sigma{sigma:g}")
        if not os.path.exists(os.path.join(corpus, "manifest.json")):
            print(f"generating corpus -> {corpus}", flush=True)
            experiments.make_desk_corpus(corpus, sigma)
        ckpt = os.path.join(args.work_dir, f"desk_sigma{sigma:g}.npz")
        if not os.path.exists(ckpt):
            overrides = {} if args.epochs is None else {"epochs": args.epochs}
            cfg = experiments.desk_model_config(**overrides)
            print(f"training sigma={sigma:g} -> {ckpt}", flush=True)
            experiments.train_desk_model(
                corpus, ckpt, cfg, seed=args.seed,
                log_path=ckpt[: -len(".npz")] + ".log.csv", verbose=True,
            )
        ce = experiments.eval_split(corpus, model.load_bundle(ckpt), "test")
        rows.append((sigma, ce))

    print(f"\n{'sigma':>8s} {'map_v':>8s} {'map_e':>8s} {'msap':>8s} {'wed':>8s}")
    for sigma, ce in rows:
        print(f"{sigma:8g} {ce.map_v:8.3f} {ce.map_e:8.3f} {ce.msap:8.3f} {ce.mean_wed:8.3f}")
    msaps = [ce.msap for _, ce in rows]
    ordered = all(a >= b for a, b in zip(msaps, msaps[1:]))
    print(f"msAP monotone non-increasing with sigma: {ordered}")


if __name__ == "__main__":
    main()
