"""Per-epoch, per-layer NDR of a GraphSage model on Cora, with and without ADR."""

import argparse

from _common import DATA, load_cora
from smoothkit.experiments import sage_config
from smoothkit.train import train_node


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--layers", type=int, default=4)
    p.add_argument("--beta", type=float, default=1.0)
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="ndr_curves", help="CSV prefix")
    p.add_argument("--data", default=DATA)
    args = p.parse_args()
    g = load_cora(args.data)
    for tag, beta in (("baseline", 0.0), ("adr", args.beta)):
        run = train_node(g, sage_config(args.layers, args.seed, args.epochs, beta=beta))
        run.metrics.write_csv(f"{args.out}_{tag}.csv")
        last = [run.metrics.column(f"ndr_{l}")[-1] for l in range(1, args.layers + 1)]
        print(f"{tag}: final NDR per layer " + " ".join(f"{x:.4f}" for x in last) + f"; test {100 * run.test_acc:.1f}")


if __name__ == "__main__":
    main()
