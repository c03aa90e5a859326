"""Deep GAT on Cora: plain training against ADR self-distillation over a beta grid."""

import argparse

from _common import DATA, load_cora
from smoothkit.experiments import gat_config, over_seeds


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--layers", type=int, default=8)
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--betas", type=float, nargs="+", default=[0.1, 1.0, 10.0])
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--data", default=DATA)
    args = p.parse_args()
    g = load_cora(args.data)
    seeds = range(args.seeds)
    base = over_seeds(g, lambda s: gat_config(args.layers, s), seeds)
    print(f"baseline: test {base.mean:.2f} +- {base.std:.2f}, val {base.val_mean:.2f}", flush=True)
    results = {}
    for b in args.betas:
        results[b] = over_seeds(g, lambda s, b=b: gat_config(args.layers, s, alpha=args.alpha, beta=b), seeds)
        r = results[b]
        print(f"beta={b}: test {r.mean:.2f} +- {r.std:.2f}, val {r.val_mean:.2f}", flush=True)
    # ties on validation go to the smaller beta
    chosen = min(results, key=lambda b: (-results[b].val_mean, b))
    print(f"chosen by validation: beta={chosen}, gain {results[chosen].mean - base.mean:+.2f}")


if __name__ == "__main__":
    main()
