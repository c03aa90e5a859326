"""10-fold cross-validation on a TU-format dataset directory."""

import argparse

from smoothkit.config import TrainConfig
from smoothkit.distill import DistillConfig
from smoothkit.graph import load_tu
from smoothkit.layers import ModelConfig
from smoothkit.train import train_graph


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("directory")
    p.add_argument("name")
    p.add_argument("--backbone", default="gcn")
    p.add_argument("--layers", type=int, default=4)
    p.add_argument("--hidden", type=int, default=64)
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--alpha", type=float, default=0.0)
    p.add_argument("--beta", type=float, default=0.0)
    p.add_argument("--gamma", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args()
    batch = load_tu(args.directory, args.name)
    cfg = TrainConfig(
        model=ModelConfig(args.backbone, args.layers, args.hidden),
        distill=DistillConfig(args.alpha, args.beta, args.gamma),
        task="graph",
        epochs=args.epochs,
        seed=args.seed,
    )
    res = train_graph(batch, cfg)
    print("fold accuracies: " + " ".join(f"{100 * a:.1f}" for a in res.fold_test))
    print(f"mean {100 * res.mean:.2f} +- {100 * res.std:.2f}")


if __name__ == "__main__":
    main()
