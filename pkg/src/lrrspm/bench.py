"""Benchmark harness: codebook building, repeated trials and encoder comparison."""
from __future__ import annotations

import csv
import io
import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import persist
from .classify import evaluate, svm_train
from .codebook import Codebook, kmeans_train, sample_descriptors
from .config import ExperimentConfig
from .dataset_io import DatasetIndex, SplitSpec, load_image, scan_dataset, split_dataset
from .encoding import Encoder
from .errors import ConsistencyError, InvalidInputError
from .features import extract_dense_sift
from .pyramid import pool

log = logging.getLogger(__name__)

SUMMARY_FIELDS = ("encoder", "k", "accuracy_mean", "accuracy_std", "coding_s", "classify_s")
COMPARE_FIELDS = SUMMARY_FIELDS + (
    "encode_descriptors_per_s",
    "coding_speedup_vs_sc",
    "encode_speedup_vs_sc",
    "classify_speedup_vs_sc",
)


def codebook_path(config: ExperimentConfig) -> Path:
    return Path(config.codebook) if config.codebook else Path(config.output) / "codebook.lrr"


def trial_split(index: DatasetIndex, config: ExperimentConfig, trial: int):
    return split_dataset(index, SplitSpec(config.per_class_train, config.base_seed + trial))


def build_codebook(config: ExperimentConfig, index: DatasetIndex | None = None) -> Codebook:
    """k-means over descriptors sampled from the trial-0 training split."""
    index = index or scan_dataset(config.dataset)
    train, _ = trial_split(index, config, 0)
    X = sample_descriptors(train, config.sift, config.max_per_image, config.base_seed)
    log.info("k-means on %d descriptors, k=%d", X.shape[1], config.kmeans.k)
    return kmeans_train(X, config.kmeans)


def _codebook_meta(config: ExperimentConfig) -> dict:
    d = config.to_dict()
    return {
        "sift": d["sift"],
        "kmeans": d["kmeans"],
        "max_per_image": config.max_per_image,
        "per_class_train": config.per_class_train,
        "split_seed": config.base_seed,
    }


def cmd_codebook(config: ExperimentConfig, path=None) -> Path:
    path = Path(path) if path else codebook_path(config)
    cb = build_codebook(config)
    persist.save("codebook", cb, path, meta=_codebook_meta(config))
    return path


def resolve_codebook(config: ExperimentConfig, index: DatasetIndex | None = None) -> Codebook:
    """Load the configured codebook file, building and saving it if absent."""
    path = codebook_path(config)
    if path.exists():
        cb = persist.load("codebook", path)
        if cb.m != config.sift.descriptor_dim:
            raise InvalidInputError(f"codebook dim {cb.m} != descriptor dim {config.sift.descriptor_dim}")
        return cb
    cb = build_codebook(config, index)
    persist.save("codebook", cb, path, meta=_codebook_meta(config))
    return cb


@dataclass
class ExperimentReport:
    encoder: str
    k: int
    codebook_hash: str
    feature_dim: int
    projection_s: float
    config: dict
    records: list[dict] = field(default_factory=list)

    @property
    def ok_records(self) -> list[dict]:
        return [r for r in self.records if r["status"] == "ok"]

    @property
    def failed_trials(self) -> list[int]:
        return [r["trial"] for r in self.records if r["status"] != "ok"]

    @property
    def aggregate(self) -> dict:
        return aggregate_records(self.records)

    def to_dict(self) -> dict:
        return {
            "encoder": self.encoder,
            "k": self.k,
            "codebook_hash": self.codebook_hash,
            "feature_dim": self.feature_dim,
            "projection_s": self.projection_s,
            "config": self.config,
            "trials": self.records,
            "failed_trials": self.failed_trials,
            "aggregate": self.aggregate,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentReport":
        return cls(
            d["encoder"], d["k"], d["codebook_hash"], d["feature_dim"],
            d["projection_s"], d["config"], list(d["trials"]),
        )

    def summary_row(self) -> dict:
        agg = self.aggregate
        return {
            "encoder": self.encoder,
            "k": self.k,
            "accuracy_mean": agg["accuracy_mean"],
            "accuracy_std": agg["accuracy_std"],
            "coding_s": agg["coding_s_mean"],
            "classify_s": agg["classify_s_mean"],
        }


def aggregate_records(records: list[dict]) -> dict:
    """Mean and sample standard deviation over successful trials.

    With a single successful trial the standard deviation is reported as 0.
    """
    ok = [r for r in records if r["status"] == "ok"]
    if not ok:
        return {"n_ok": 0, "accuracy_mean": None, "accuracy_std": None,
                "coding_s_mean": None, "encode_s_mean": None, "classify_s_mean": None,
                "encode_descriptors_per_s": None}
    acc = np.array([r["accuracy"] for r in ok])
    n_desc = sum(r["n_descriptors"] for r in ok)
    enc = sum(r["encode_s"] for r in ok)
    return {
        "n_ok": len(ok),
        "accuracy_mean": float(acc.mean()),
        "accuracy_std": float(acc.std(ddof=1)) if len(ok) > 1 else 0.0,
        "coding_s_mean": float(np.mean([r["coding_s"] for r in ok])),
        "encode_s_mean": float(np.mean([r["encode_s"] for r in ok])),
        "classify_s_mean": float(np.mean([r["classify_s"] for r in ok])),
        "encode_descriptors_per_s": float(n_desc / enc) if enc > 0 else None,
    }


def _image_feature(path, encoder: Encoder, config: ExperimentConfig):
    field_ = extract_dense_sift(load_image(path), config.sift)
    t0 = time.perf_counter()
    codes = encoder.encode(field_)
    t1 = time.perf_counter()
    feat = pool(codes, field_, config.pyramid, encoder.default_pooling)
    t2 = time.perf_counter()
    return feat.values, field_.n, t1 - t0, t2 - t1


def encode_index(index: DatasetIndex, encoder: Encoder, config: ExperimentConfig):
    """Pyramid features for every sample plus summed encode/pool timings."""

    def work(path):
        return _image_feature(path, encoder, config)

    if config.workers > 1:
        with ThreadPoolExecutor(config.workers) as ex:
            results = list(ex.map(work, index.paths))
    else:
        results = [work(p) for p in index.paths]
    F = np.stack([r[0] for r in results]) if results else np.zeros((0, 0))
    return (
        F,
        int(sum(r[1] for r in results)),
        float(sum(r[2] for r in results)),
        float(sum(r[3] for r in results)),
    )


def run_trial(index, encoder: Encoder, config: ExperimentConfig, trial: int, keep=None) -> dict:
    seed = config.base_seed + trial
    train, test = trial_split(index, config, trial)
    F_tr, nd_tr, enc_tr, pool_tr = encode_index(train, encoder, config)
    F_te, nd_te, enc_te, pool_te = encode_index(test, encoder, config)
    t0 = time.perf_counter()
    model = svm_train(F_tr, train.labels, replace(config.svm, seed=seed), index.classes)
    report = evaluate(model, F_te, test.labels)
    classify_s = time.perf_counter() - t0
    if keep is not None:
        keep.update(model=model, train=(F_tr, train.labels), test=(F_te, test.labels))
    encode_s = enc_tr + enc_te
    return {
        "trial": trial,
        "seed": seed,
        "status": "ok",
        "accuracy": report.mean_accuracy,
        "overall_accuracy": report.overall_accuracy,
        "per_class_accuracy": report.per_class_accuracy,
        "absent_classes": report.absent_classes,
        "n_train": len(train),
        "n_test": len(test),
        "n_descriptors": nd_tr + nd_te,
        "encode_s": encode_s,
        "pool_s": pool_tr + pool_te,
        "coding_s": encode_s + pool_tr + pool_te,
        "classify_s": classify_s,
        "feature_dim": int(F_tr.shape[1]),
    }


def run_experiment(config: ExperimentConfig, codebook: Codebook | None = None,
                   index: DatasetIndex | None = None) -> tuple[ExperimentReport, dict]:
    """All trials of one encoder; a failing trial is recorded, not raised."""
    index = index or scan_dataset(config.dataset)
    codebook = codebook or resolve_codebook(config, index)
    t0 = time.perf_counter()
    encoder = Encoder(codebook, config.encoder)
    projection_s = time.perf_counter() - t0
    report = ExperimentReport(
        encoder=encoder.tag,
        k=codebook.k,
        codebook_hash=codebook.content_hash,
        feature_dim=config.pyramid.dimension(codebook.k),
        projection_s=projection_s,
        config=config.to_dict(),
    )
    last: dict = {}
    for t in range(config.trials):
        try:
            report.records.append(run_trial(index, encoder, config, t, keep=last))
        except Exception as exc:  # noqa: BLE001 - trial failures are reported
            log.error("trial %d failed: %s", t, exc)
            report.records.append({"trial": t, "seed": config.base_seed + t,
                                   "status": "failed", "error": f"{type(exc).__name__}: {exc}"})
    extras = {"encoder": encoder, "codebook": codebook, "last_trial": last}
    return report, extras


def summary_csv(rows: list[dict], fieldnames=SUMMARY_FIELDS) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(fieldnames), lineterminator="\n", extrasaction="ignore")
    w.writeheader()
    for r in rows:
        w.writerow({k: ("" if r.get(k) is None else r.get(k)) for k in fieldnames})
    return buf.getvalue()


def _save_trial_artifacts(config, report, extras, out: Path) -> None:
    last = extras["last_trial"]
    if not last:
        return
    meta = {"encoder": config.encoder.to_dict(), "pyramid": config.to_dict()["pyramid"],
            "sift": config.to_dict()["sift"], "trial": report.records[-1]["trial"]}
    classes = tuple(last["model"].class_names)
    if config.save_model:
        tm = persist.TrainedModel(last["model"], report.codebook_hash, meta)
        persist.save("model", tm, out / f"model_{report.encoder}.lrr")
        if extras["encoder"].projection is not None:
            persist.save("projection", extras["encoder"].projection, out / "projection.lrr")
    if config.save_features:
        for split in ("train", "test"):
            F, y = last[split]
            fs = persist.FeatureSet(F, y, classes, report.codebook_hash, {**meta, "split": split})
            persist.save("features", fs, out / f"features_{report.encoder}_{split}.lrr")


def write_report(report: ExperimentReport, out_dir) -> tuple[Path, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    jpath = out / f"report_{report.encoder}.json"
    cpath = out / f"summary_{report.encoder}.csv"
    jpath.write_text(json.dumps(report.to_dict(), indent=2) + "\n")
    cpath.write_text(summary_csv([report.summary_row()]))
    return jpath, cpath


def cmd_run(config: ExperimentConfig) -> ExperimentReport:
    report, extras = run_experiment(config)
    out = Path(config.output)
    write_report(report, out)
    _save_trial_artifacts(config, report, extras, out)
    return report


@dataclass
class Comparison:
    reports: list[ExperimentReport]
    rows: list[dict]
    notes: list[str]

    def csv(self) -> str:
        return summary_csv(self.rows, COMPARE_FIELDS)


def _ratio(num, den):
    if num is None or den is None or den == 0:
        return None
    return float(num / den)


def comparison_rows(reports: list[ExperimentReport]) -> tuple[list[dict], list[str]]:
    rows = []
    for r in reports:
        row = r.summary_row()
        agg = r.aggregate
        row["encode_s"] = agg["encode_s_mean"]
        row["encode_descriptors_per_s"] = agg["encode_descriptors_per_s"]
        rows.append(row)
    notes = []
    sc = next((row for row in rows if row["encoder"] == "sc"), None)
    for row in rows:
        if sc is None:
            row.update(coding_speedup_vs_sc=None, encode_speedup_vs_sc=None, classify_speedup_vs_sc=None)
        else:
            row["coding_speedup_vs_sc"] = _ratio(sc["coding_s"], row["coding_s"])
            row["encode_speedup_vs_sc"] = _ratio(sc["encode_s"], row["encode_s"])
            row["classify_speedup_vs_sc"] = _ratio(sc["classify_s"], row["classify_s"])
    if sc is None:
        notes.append("no sc row: speedup ratios omitted")
    return rows, notes


def cmd_compare(configs: list[ExperimentConfig], out_dir=None) -> Comparison:
    """Run every config against one shared codebook and tabulate.

    Configs naming different codebook files must still agree on the
    codebook content hash; otherwise the comparison is refused.
    """
    if not configs:
        raise InvalidInputError("nothing to compare")
    index = scan_dataset(configs[0].dataset)
    books: dict[Path, Codebook] = {}
    for cfg in configs:
        p = codebook_path(cfg)
        if p not in books:
            books[p] = resolve_codebook(cfg, index if cfg.dataset == configs[0].dataset else None)
    hashes = {cb.content_hash for cb in books.values()}
    if len(hashes) > 1:
        raise ConsistencyError("compared configs use different codebooks: "
                               + ", ".join(f"{p} ({cb.content_hash[:12]})" for p, cb in books.items()))
    reports = []
    for cfg in configs:
        ix = index if cfg.dataset == configs[0].dataset else None
        report, extras = run_experiment(cfg, books[codebook_path(cfg)], ix)
        reports.append(report)
        if out_dir is not None:
            write_report(report, out_dir)
    rows, notes = comparison_rows(reports)
    result = Comparison(reports, rows, notes)
    if out_dir is not None:
        out = Path(out_dir)
        (out / "compare.csv").write_text(result.csv())
        (out / "compare.json").write_text(json.dumps({"rows": rows, "notes": notes}, indent=2) + "\n")
    return result
