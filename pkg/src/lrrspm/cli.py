"""``lrrspm`` command line: codebook, run, compare, inspect."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import bench, persist
from .config import ExperimentConfig, load_config, parse_value
from .encoding import ENCODERS, THRESHOLD_MODES
from .errors import LrrSpmError
from .pyramid import POOLINGS

# flag -> dotted config key
_FLAG_KEYS = {
    "dataset": "dataset",
    "per_class_train": "per_class_train",
    "trials": "trials",
    "seed": "base_seed",
    "max_per_image": "max_per_image",
    "codebook": "codebook",
    "output": "output",
    "workers": "workers",
    "k": "kmeans.k",
    "kmeans_iters": "kmeans.max_iters",
    "encoder": "encoder.variant",
    "lam": "encoder.lam",
    "epsilon": "encoder.epsilon",
    "threshold_mode": "encoder.threshold_mode",
    "lambda_sc": "encoder.lambda_sc",
    "knn": "encoder.knn",
    "levels": "pyramid.levels",
    "pooling": "pyramid.pooling",
    "c_reg": "svm.c_reg",
    "svm_epochs": "svm.max_epochs",
    "step": "sift.step",
    "patch": "sift.patch",
}


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", action="append", default=None, metavar="JSON",
                   help="experiment config file (repeatable for compare)")
    p.add_argument("--dataset", help="dataset root: <root>/<class>/<images>")
    p.add_argument("--per-class-train", type=int)
    p.add_argument("--trials", type=int)
    p.add_argument("--seed", type=int, help="base seed; trial t uses seed + t")
    p.add_argument("--max-per-image", type=int, help="descriptors sampled per image for k-means")
    p.add_argument("--codebook", help="codebook artifact path")
    p.add_argument("--output", help="output directory")
    p.add_argument("--workers", type=int)
    p.add_argument("--k", type=int, help="codebook size")
    p.add_argument("--kmeans-iters", type=int)
    p.add_argument("--encoder", choices=ENCODERS)
    p.add_argument("--lambda", dest="lam", type=float, help="LRR regularization")
    p.add_argument("--epsilon", type=float, help="LRR threshold energy fraction")
    p.add_argument("--threshold-mode", choices=THRESHOLD_MODES)
    p.add_argument("--lambda-sc", type=float)
    p.add_argument("--knn", type=int)
    p.add_argument("--levels", type=lambda s: [int(v) for v in s.split(",")], help="e.g. 0,1,2")
    p.add_argument("--pooling", choices=POOLINGS)
    p.add_argument("--c-reg", type=float)
    p.add_argument("--svm-epochs", type=int)
    p.add_argument("--step", type=int)
    p.add_argument("--patch", type=int)
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override any config key, e.g. --set encoder.beta=1e-3")
    p.add_argument("--save-model", action="store_true", default=None)
    p.add_argument("--save-features", action="store_true", default=None)


def _overrides(args) -> dict:
    out = {key: getattr(args, flag) for flag, key in _FLAG_KEYS.items()}
    out["save_model"] = args.save_model
    out["save_features"] = args.save_features
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep:
            raise LrrSpmError(f"--set expects KEY=VALUE, got {item!r}")
        out[key.strip()] = parse_value(value)
    return out


def _configs(args) -> list[ExperimentConfig]:
    bases = [load_config(p) for p in args.config] if args.config else [ExperimentConfig()]
    configs = [b.with_overrides(_overrides(args)) for b in bases]
    for c in configs:
        if not c.dataset:
            raise LrrSpmError("no dataset given (use --dataset or a config file)")
    return configs


def _cmd_codebook(args) -> int:
    cfg = _configs(args)[0]
    path = bench.cmd_codebook(cfg, args.out)
    cb = persist.load("codebook", path)
    print(f"codebook {path}: m={cb.m} k={cb.k} hash={cb.content_hash}")
    return 0


def _cmd_run(args) -> int:
    cfg = _configs(args)[0]
    report = bench.cmd_run(cfg)
    sys.stdout.write(bench.summary_csv([report.summary_row()]))
    for r in report.records:
        if r["status"] != "ok":
            print(f"trial {r['trial']} failed: {r['error']}", file=sys.stderr)
    return 0 if report.aggregate["n_ok"] else 1


def _cmd_compare(args) -> int:
    configs = _configs(args)
    if args.encoders:
        if len(configs) != 1:
            raise LrrSpmError("--encoders needs exactly one base config")
        configs = [configs[0].for_encoder(e.strip()) for e in args.encoders.split(",")]
    out = Path(configs[0].output)
    result = bench.cmd_compare(configs, out)
    sys.stdout.write(result.csv())
    for note in result.notes:
        print(f"note: {note}", file=sys.stderr)
    return 0


def describe_artifact(path) -> dict:
    art = persist.read_artifact(path)
    arrays = {}
    for name, a in art.arrays.items():
        arrays[name] = {
            "shape": list(a.shape),
            "min": float(a.min()) if a.size else None,
            "max": float(a.max()) if a.size else None,
            "finite": bool(np.all(np.isfinite(a))),
        }
    header = {k: v for k, v in art.header.items() if k not in ("arrays", "labels")}
    if "labels" in art.header:
        header["n_labels"] = len(art.header["labels"])
    return {"kind": art.kind, "header": header, "arrays": arrays}


def _cmd_inspect(args) -> int:
    print(json.dumps(describe_artifact(args.artifact), indent=2))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lrrspm", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("codebook", help="learn and save the k-means codebook")
    _add_config_flags(p)
    p.add_argument("--out", help="codebook file (default: --codebook or <output>/codebook.lrr)")
    p.set_defaults(func=_cmd_codebook)

    p = sub.add_parser("run", help="run all trials for one encoder")
    _add_config_flags(p)
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("compare", help="run several encoders on one codebook")
    _add_config_flags(p)
    p.add_argument("--encoders", help="comma list, e.g. lrr,vq,sc,llc")
    p.set_defaults(func=_cmd_compare)

    p = sub.add_parser("inspect", help="print an artifact file's header")
    p.add_argument("artifact")
    p.set_defaults(func=_cmd_inspect)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (LrrSpmError, OSError) as exc:
        print(f"lrrspm: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
