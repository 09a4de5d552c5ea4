import csv
import io
import json

import numpy as np
import pytest
from PIL import Image

from lrrspm import bench, persist
from lrrspm.cli import describe_artifact, main
from lrrspm.config import ExperimentConfig, load_config
from lrrspm.errors import ConsistencyError, InvalidInputError


def make_stripes(root, per_class=6, size=40, seed=0):
    """Two classes: vertical and horizontal gratings with jittered phase."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size]
    for name, coord in (("horizontal", yy), ("vertical", xx)):
        d = root / name
        d.mkdir(parents=True)
        for i in range(per_class):
            img = 0.5 + 0.4 * np.sin(2 * np.pi * coord / 8 + rng.uniform(0, 2 * np.pi))
            img = np.clip(img + rng.normal(0, 0.02, img.shape), 0, 1)
            Image.fromarray(np.uint8(np.round(img * 255))).save(d / f"{i:02d}.png")
    return root


@pytest.fixture(scope="module")
def stripes(tmp_path_factory):
    return make_stripes(tmp_path_factory.mktemp("stripes"))


def small_config(dataset, out, **kw):
    base = ExperimentConfig(dataset=str(dataset), output=str(out), per_class_train=3, trials=1)
    overrides = {"kmeans.k": 8, "kmeans.max_iters": 20, "max_per_image": 40}
    overrides.update(kw)
    return base.with_overrides(overrides)


def strip_timing(records):
    timing = {"encode_s", "pool_s", "coding_s", "classify_s"}
    return [{k: v for k, v in r.items() if k not in timing} for r in records]


# -- codebook ---------------------------------------------------------------

def test_codebook_dims_and_rerun_bytes(object_dataset, tmp_path):
    cfg = small_config(object_dataset, tmp_path)
    a = bench.cmd_codebook(cfg, tmp_path / "a.lrr")
    b = bench.cmd_codebook(cfg, tmp_path / "b.lrr")
    cb = persist.load("codebook", a)
    assert (cb.m, cb.k) == (128, 8)
    assert a.read_bytes() == b.read_bytes()


def test_two_cluster_images_give_two_centers(stripes, tmp_path):
    cfg = small_config(stripes, tmp_path, **{"kmeans.k": 2})
    cb = persist.load("codebook", bench.cmd_codebook(cfg))
    assert cb.k == 2
    # one center per grating orientation: they differ in the dominant bins
    a, b = cb.centers.T
    assert np.dot(a, b) < 0.5 * np.linalg.norm(a) * np.linalg.norm(b)


def test_existing_codebook_is_reused(object_dataset, tmp_path):
    cfg = small_config(object_dataset, tmp_path)
    path = bench.cmd_codebook(cfg)
    before = path.stat().st_mtime_ns
    cb = bench.resolve_codebook(cfg)
    assert path.stat().st_mtime_ns == before
    assert cb.content_hash == persist.load("codebook", path).content_hash


# -- run ----------------------------------------------------------------------

def test_single_trial_on_separable_toy(stripes, tmp_path):
    report = bench.cmd_run(small_config(stripes, tmp_path))
    assert len(report.records) == 1
    assert report.records[0]["accuracy"] == 1.0
    out = json.loads((tmp_path / "report_lrr.json").read_text())
    assert out["aggregate"]["accuracy_mean"] == 1.0
    rows = list(csv.DictReader(io.StringIO((tmp_path / "summary_lrr.csv").read_text())))
    assert list(rows[0]) == list(bench.SUMMARY_FIELDS)
    assert rows[0]["encoder"] == "lrr" and float(rows[0]["accuracy_mean"]) == 1.0


def test_five_trials_aggregate(object_dataset, tmp_path):
    cfg = small_config(object_dataset, tmp_path, trials=5)
    report = bench.cmd_run(cfg)
    assert [r["trial"] for r in report.records] == [0, 1, 2, 3, 4]
    assert [r["seed"] for r in report.records] == [0, 1, 2, 3, 4]
    stored = json.loads((tmp_path / "report_lrr.json").read_text())
    acc = np.array([r["accuracy"] for r in stored["trials"]])
    agg = stored["aggregate"]
    assert agg["n_ok"] == 5
    assert abs(agg["accuracy_mean"] - acc.mean()) <= 1e-12
    assert abs(agg["accuracy_std"] - acc.std(ddof=1)) <= 1e-12
    assert abs(agg["coding_s_mean"] - np.mean([r["coding_s"] for r in stored["trials"]])) <= 1e-12
    assert report.feature_dim == 8 * 21
    for r in report.records:
        assert r["n_train"] == 12 and r["n_test"] == 36
        assert r["coding_s"] == pytest.approx(r["encode_s"] + r["pool_s"])


def test_same_config_same_accuracies(object_dataset, tmp_path):
    cfg = small_config(object_dataset, tmp_path, trials=2)
    a = bench.run_experiment(cfg)[0]
    b = bench.run_experiment(cfg)[0]
    assert strip_timing(a.records) == strip_timing(b.records)


def test_worker_count_does_not_change_results(object_dataset, tmp_path):
    cfg = small_config(object_dataset, tmp_path)
    one = bench.run_experiment(cfg)[0]
    four = bench.run_experiment(cfg.with_overrides({"workers": 4}))[0]
    assert strip_timing(one.records) == strip_timing(four.records)


def test_failed_trial_is_recorded(object_dataset, tmp_path):
    # 12 images per class: a split needing 12 training images leaves none for test
    cfg = small_config(object_dataset, tmp_path)
    bench.cmd_codebook(cfg)
    report = bench.cmd_run(cfg.with_overrides({"per_class_train": 12}))
    assert report.failed_trials == [0]
    assert "InsufficientSamplesError" in report.records[0]["error"]
    assert report.aggregate["n_ok"] == 0


def test_report_round_trips_through_dict(object_dataset, tmp_path):
    report = bench.run_experiment(small_config(object_dataset, tmp_path))[0]
    back = bench.ExperimentReport.from_dict(json.loads(json.dumps(report.to_dict())))
    assert back.aggregate == report.aggregate


# -- compare ------------------------------------------------------------------

def test_compare_all_encoders(object_dataset, tmp_path):
    base = small_config(object_dataset, tmp_path)
    result = bench.cmd_compare([base.for_encoder(e) for e in ("lrr", "vq", "sc", "llc")], tmp_path)
    rows = {r["encoder"]: r for r in result.rows}
    assert set(rows) == {"lrr", "vq", "sc", "llc"}
    assert rows["sc"]["encode_speedup_vs_sc"] == 1.0
    assert rows["lrr"]["encode_speedup_vs_sc"] > 0.0  # throughput itself is an acceptance check
    assert result.notes == []
    table = list(csv.DictReader(io.StringIO((tmp_path / "compare.csv").read_text())))
    assert [r["encoder"] for r in table] == ["lrr", "vq", "sc", "llc"]
    assert list(table[0]) == list(bench.COMPARE_FIELDS)
    assert len({r.codebook_hash for r in result.reports}) == 1


def test_compare_duplicate_encoder_rows_match(object_dataset, tmp_path):
    base = small_config(object_dataset, tmp_path)
    result = bench.cmd_compare([base, base])
    a, b = result.reports
    assert strip_timing(a.records) == strip_timing(b.records)
    assert result.rows[0]["accuracy_mean"] == result.rows[1]["accuracy_mean"]


def test_compare_without_sc_omits_ratios(object_dataset, tmp_path):
    base = small_config(object_dataset, tmp_path)
    result = bench.cmd_compare([base, base.for_encoder("vq")], tmp_path)
    assert result.notes == ["no sc row: speedup ratios omitted"]
    assert all(r["encode_speedup_vs_sc"] is None for r in result.rows)
    table = list(csv.DictReader(io.StringIO(result.csv())))
    assert table[0]["coding_speedup_vs_sc"] == ""


def test_compare_refuses_mixed_codebooks(object_dataset, tmp_path):
    a = small_config(object_dataset, tmp_path, codebook=str(tmp_path / "a.lrr"))
    b = small_config(object_dataset, tmp_path, codebook=str(tmp_path / "b.lrr"), **{"kmeans.seed": 1})
    with pytest.raises(ConsistencyError):
        bench.cmd_compare([a, b])


def test_compare_needs_configs():
    with pytest.raises(InvalidInputError):
        bench.cmd_compare([])


# -- config ---------------------------------------------------------------------

def test_config_defaults_follow_protocol():
    cfg = ExperimentConfig()
    assert (cfg.trials, cfg.kmeans.k, cfg.sift.step) == (5, 256, 6)
    assert (cfg.encoder.lam, cfg.encoder.epsilon) == (0.7, 0.98)
    assert cfg.pyramid.levels == (0, 1, 2)


def test_config_file_and_overrides(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"dataset": "/x", "trials": 2, "encoder": {"variant": "sc"}}))
    cfg = load_config(p)
    assert cfg.trials == 2 and cfg.encoder.variant == "sc"
    cfg2 = cfg.with_overrides({"encoder.lam": 0.5, "pyramid.levels": [0, 1]})
    assert cfg2.encoder.lam == 0.5 and cfg2.pyramid.levels == (0, 1)
    assert ExperimentConfig.from_dict(cfg2.to_dict()) == cfg2


def test_config_rejects_unknown_keys(tmp_path):
    with pytest.raises(InvalidInputError):
        ExperimentConfig().with_overrides({"encoder.gamma": 1})
    with pytest.raises(InvalidInputError):
        ExperimentConfig.from_dict({"datset": "x"})
    with pytest.raises(InvalidInputError):
        ExperimentConfig(trials=0)


# -- command line -----------------------------------------------------------------

def test_cli_run_and_inspect(stripes, tmp_path, capsys):
    args = ["run", "--dataset", str(stripes), "--output", str(tmp_path), "--trials", "1",
            "--per-class-train", "3", "--k", "8", "--kmeans-iters", "20", "--max-per-image", "40",
            "--save-model", "--save-features"]
    assert main(args) == 0
    out = capsys.readouterr().out
    assert out.splitlines()[0] == ",".join(bench.SUMMARY_FIELDS)
    for name in ("codebook.lrr", "model_lrr.lrr", "projection.lrr",
                 "features_lrr_train.lrr", "features_lrr_test.lrr"):
        assert (tmp_path / name).exists()
    cb = persist.load("codebook", tmp_path / "codebook.lrr")
    model = persist.load("model", tmp_path / "model_lrr.lrr", codebook=cb)
    assert model.model.feature_dim == 8 * 21
    persist.load("projection", tmp_path / "projection.lrr", codebook=cb)
    feats = persist.load("features", tmp_path / "features_lrr_test.lrr", codebook=cb)
    assert feats.features.shape == (6, 168)

    assert main(["inspect", str(tmp_path / "model_lrr.lrr")]) == 0
    info = json.loads(capsys.readouterr().out)
    assert info["kind"] == "model"
    assert info["arrays"]["weights"]["shape"] == [2, 168]
    assert describe_artifact(tmp_path / "features_lrr_test.lrr")["header"]["n_labels"] == 6


def test_cli_compare_with_encoder_list(object_dataset, tmp_path, capsys):
    args = ["compare", "--dataset", str(object_dataset), "--output", str(tmp_path), "--trials", "1",
            "--per-class-train", "3", "--k", "8", "--kmeans-iters", "20", "--encoders", "lrr,vq"]
    assert main(args) == 0
    captured = capsys.readouterr()
    assert captured.out.splitlines()[0] == ",".join(bench.COMPARE_FIELDS)
    assert "no sc row" in captured.err


def test_cli_codebook_command(object_dataset, tmp_path, capsys):
    out = tmp_path / "cb.lrr"
    assert main(["codebook", "--dataset", str(object_dataset), "--k", "4", "--out", str(out),
                 "--per-class-train", "3", "--set", "kmeans.max_iters=5"]) == 0
    assert "m=128 k=4" in capsys.readouterr().out
    assert out.exists()


def test_cli_errors_exit_nonzero(tmp_path, capsys):
    assert main(["run", "--dataset", str(tmp_path / "missing")]) == 2
    assert "error" in capsys.readouterr().err
    assert main(["run"]) == 2
    assert main(["inspect", str(tmp_path / "nothing.lrr")]) == 2
    assert main(["run", "--dataset", "x", "--set", "novalue"]) == 2
    with pytest.raises(SystemExit):
        main(["bogus"])


def test_cli_run_all_trials_failed_exit_code(object_dataset, tmp_path):
    args = ["run", "--dataset", str(object_dataset), "--output", str(tmp_path), "--trials", "1",
            "--per-class-train", "12", "--k", "4", "--kmeans-iters", "5"]
    # k-means uses the trial-0 split, which already fails here
    assert main(args) == 2
