"""2-layer GAT on Cora with the reference citation-graph hyperparameters, over several seeds."""

import argparse

from _common import DATA, load_cora
from smoothkit.experiments import gat_config, over_seeds


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--data", default=DATA)
    args = p.parse_args()
    g = load_cora(args.data)
    s = over_seeds(g, lambda seed: gat_config(2, seed), range(args.seeds))
    for seed, acc in enumerate(s.test):
        print(f"seed {seed}: test {100 * acc:.1f}")
    print(f"mean {s.mean:.2f} +- {s.std:.2f} ({s.seconds:.0f}s)")


if __name__ == "__main__":
    main()
