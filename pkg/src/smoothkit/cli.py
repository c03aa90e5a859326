"""Command line entry point: ``smoothkit {train,profile-ndr,convert,check,grid}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .config import from_dict, load_config
from .distill import layer_ndrs
from .graph import ConfigError, FormatError, Graph, load_citation, load_tu
from .layers import load_checkpoint
from .oracle import run_checks
from .train import grid_search, run


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    if args.output_dir:
        cfg = cfg.with_overrides({"output_dir": args.output_dir})
    summary = run(cfg)
    print(json.dumps(summary, indent=2))
    return 0


def cmd_profile(args) -> int:
    model, manifest = load_checkpoint(args.checkpoint)
    g = Graph.load(args.graph)
    fp = model.forward(g, training=False)
    print("layer ndr_mean ndr_l2 valid")
    for s in layer_ndrs(g, fp.hidden):
        print(f"{s.layer} {s.summary('mean'):.6f} {s.summary('l2'):.6f} {int(s.valid.sum())}")
    if g.labels is not None and "test" in g.masks:
        acc = float(np.mean(fp.logits.value.argmax(1)[g.masks["test"]] == g.labels[g.masks["test"]]))
        print(f"test_acc {acc:.4f}")
    return 0


def cmd_convert(args) -> int:
    if args.format == "citation":
        if not args.cites:
            raise ConfigError("citation conversion needs --cites")
        obj = load_citation(args.input, args.cites).to_json()
    else:
        if not args.name:
            raise ConfigError("tu conversion needs --name")
        batch = load_tu(args.input, args.name).assign_folds(args.folds, args.seed)
        obj = batch.to_json()
    Path(args.output).write_text(json.dumps(obj))
    print(f"wrote {args.output}")
    return 0


def cmd_check(args) -> int:
    reports = run_checks(fast=args.fast)
    for r in reports:
        print(r.line())
    failed = [r.name for r in reports if not r.passed]
    if failed:
        print("failed: " + ", ".join(failed), file=sys.stderr)
        return 1
    return 0


def cmd_grid(args) -> int:
    spec = json.loads(Path(args.config).read_text())
    unknown = set(spec) - {"base", "space", "csv"}
    if unknown or "space" not in spec:
        raise ConfigError(f"grid config needs 'space' (and optional 'base', 'csv'); got {sorted(spec)}")
    base = from_dict(spec.get("base", {}))
    csv_path = args.csv or spec.get("csv")
    rows = grid_search(spec["space"], base, csv_path=csv_path)
    for r in rows:
        print(json.dumps(r))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="smoothkit", description="GNN self-distillation toolkit")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train from a JSON config")
    t.add_argument("--config", required=True)
    t.add_argument("--output-dir")
    t.set_defaults(func=cmd_train)

    pr = sub.add_parser("profile-ndr", help="per-layer NDR of a saved model")
    pr.add_argument("--checkpoint", required=True)
    pr.add_argument("--graph", required=True, help="canonical graph JSON")
    pr.set_defaults(func=cmd_profile)

    c = sub.add_parser("convert", help="raw citation / TU files to canonical JSON")
    c.add_argument("--format", choices=("citation", "tu"), required=True)
    c.add_argument("--input", required=True, help=".content file or TU directory")
    c.add_argument("--cites")
    c.add_argument("--name")
    c.add_argument("--folds", type=int, default=10)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--output", required=True)
    c.set_defaults(func=cmd_convert)

    ch = sub.add_parser("check", help="run the oracle suite")
    ch.add_argument("--fast", action="store_true", help="fewer trials")
    ch.set_defaults(func=cmd_check)

    g = sub.add_parser("grid", help="grid search from a JSON grid file")
    g.add_argument("--config", required=True)
    g.add_argument("--csv")
    g.set_defaults(func=cmd_grid)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, FormatError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
