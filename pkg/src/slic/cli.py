"""Command-line entry point (``slic`` or ``python -m slic``).

Exit codes: 0 success, 2 usage/config error, 3 data error, 4 numerical failure.
"""

import argparse
import json
import os
import sys
from dataclasses import fields

from . import clustering
from .core import DataError, DomainError, NumericalError, UsageError, rng_stream
from .data import SynthConfig, generate_synthetic, load_dataset, save_dataset, split_train_test, write_features
from .harness import (
    TrainConfig,
    ablation_csv,
    compute_all_embeddings,
    evaluate_retrieval,
    run_ablation,
    train,
    write_json,
)
from .metrics import nmi
from .model import load_checkpoint, save_checkpoint

EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 2, 3, 4


def _read_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc


def _synth_config(d):
    known = {f.name for f in fields(SynthConfig)}
    if set(d) - known:
        raise UsageError(f"unknown synth config keys: {sorted(set(d) - known)}")
    return SynthConfig(**d)


def cmd_synth(args):
    cfg = _synth_config(_read_json(args.config))
    path = save_dataset(generate_synthetic(cfg), args.out)
    print(path)


def cmd_cluster(args):
    ds = load_dataset(args.data)
    if args.checkpoint:
        enc, _ = load_checkpoint(args.checkpoint)
        emb = compute_all_embeddings(enc, ds, "center", args.tap)
    else:
        emb = ds.features[:, ds.clips_per_video // 2, 0, :]
    if args.method == "finch":
        parts = clustering.finch(emb).partitions
    else:
        if args.k_clusters is None:
            raise UsageError(f"--k-clusters is required for {args.method}")
        fn = clustering.kmeans if args.method == "kmeans" else clustering.spherical_kmeans
        parts = [fn(emb, args.k_clusters, rng_stream(args.seed, "cluster"))]
    out = {"method": args.method, "partitions": [[int(i) for i in p.assignment] for p in parts]}
    if ds.labels is not None:
        out["nmi_vs_labels"] = [nmi(p, ds.labels) for p in parts]
    write_json(args.out, out)


def cmd_train(args):
    ds = load_dataset(args.data)
    cfg = TrainConfig.from_dict(_read_json(args.config)) if args.config else TrainConfig()
    if args.eval_every is not None:
        cfg.eval_every = args.eval_every
    eval_ds = load_dataset(args.eval_data) if args.eval_data else None
    enc, log = train(ds, cfg, eval_ds=eval_ds)
    os.makedirs(args.out, exist_ok=True)
    save_checkpoint(os.path.join(args.out, "checkpoint.bin"), enc, seed=cfg.seed, epoch=cfg.epochs)
    with open(os.path.join(args.out, "metrics.csv"), "w", newline="") as fh:
        fh.write(log.to_csv())
    write_json(os.path.join(args.out, "config.resolved.json"), cfg.to_dict())
    if log.final is not None:
        write_json(os.path.join(args.out, "report.json"), log.final.to_dict())


def cmd_eval(args):
    enc, _ = load_checkpoint(args.checkpoint)
    rep = evaluate_retrieval(
        enc, load_dataset(args.train_data), load_dataset(args.test_data),
        tap=args.tap, clips=args.clips, seed=args.seed,
    )
    write_json(args.out, rep.to_dict())


def cmd_ablate(args):
    ds = load_dataset(args.data)
    cfg = TrainConfig.from_dict(_read_json(args.config)) if args.config else TrainConfig()
    if args.test_data:
        train_ds, test_ds = ds, load_dataset(args.test_data)
    else:
        train_ds, test_ds = split_train_test(ds, args.test_fraction, seed=cfg.seed)
    grid = {}
    if args.preset == "clustering" and args.kmeans_k:
        grid["kmeans_ks"] = tuple(args.kmeans_k)
    cells = run_ablation(args.preset, train_ds, test_ds, cfg, **grid)
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, f"ablation_{args.preset}.csv"), "w", newline="") as fh:
        fh.write(ablation_csv(args.preset, cells))
    for name, cell in cells.items():
        with open(os.path.join(args.out, f"{name}.metrics.csv"), "w", newline="") as fh:
            fh.write(cell.log.to_csv())


def cmd_export(args):
    enc, _ = load_checkpoint(args.checkpoint)
    ds = load_dataset(args.data)
    policy, _, m = args.policy.partition(":")
    if policy not in ("center", "uniform_avg"):
        raise UsageError(f"unknown policy {args.policy!r}")
    emb = compute_all_embeddings(enc, ds, policy, args.tap, int(m) if m else None)
    write_features(args.out, emb)
    meta = {
        "format_version": 1,
        "num_videos": int(emb.shape[0]),
        "clips_per_video": 1,
        "views": ["embedding"],
        "raw_dim": int(emb.shape[1]),
        "dtype": "f32le",
        "features_file": os.path.basename(args.out),
    }
    if ds.labels is not None:
        meta["labels"] = [int(v) for v in ds.labels]
    write_json(os.path.splitext(args.out)[0] + ".json", meta)


def build_parser():
    p = argparse.ArgumentParser(prog="slic", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic dataset")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("cluster", help="cluster raw features or checkpoint embeddings")
    s.add_argument("--data", required=True)
    s.add_argument("--method", choices=["finch", "kmeans", "spherical"], default="finch")
    s.add_argument("--k-clusters", type=int)
    s.add_argument("--checkpoint")
    s.add_argument("--tap", choices=["head", "backbone"], default="head")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_cluster)

    s = sub.add_parser("train", help="self-supervised training run")
    s.add_argument("--data", required=True)
    s.add_argument("--config")
    s.add_argument("--eval-data")
    s.add_argument("--eval-every", type=int)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="nearest-neighbour retrieval recall@k")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--train-data", required=True)
    s.add_argument("--test-data", required=True)
    s.add_argument("--tap", choices=["head", "backbone"], default="head")
    s.add_argument("--clips", type=int, default=10)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("ablate", help="run an ablation preset")
    s.add_argument("--preset", choices=["components", "clustering", "positives"], required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--config")
    s.add_argument("--test-data")
    s.add_argument("--test-fraction", type=float, default=0.2)
    s.add_argument("--kmeans-k", type=int, nargs="+")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_ablate)

    s = sub.add_parser("export-embeddings", help="write per-video embeddings (SLICFEAT)")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--policy", default="center")
    s.add_argument("--tap", choices=["head", "backbone"], default="head")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_export)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, DomainError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return 0


if __name__ == "__main__":
    sys.exit(main())
