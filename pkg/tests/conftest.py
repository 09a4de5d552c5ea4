from pathlib import Path

import numpy as np
import pytest
from PIL import Image


def _prototype(rng, size):
    """Textured blob on a dark background, distinct per class."""
    yy, xx = np.mgrid[0:size, 0:size] / size
    img = np.zeros((size, size))
    for _ in range(3):
        theta = rng.uniform(0, np.pi)
        freq = rng.uniform(4, 14)
        phase = rng.uniform(0, 2 * np.pi)
        img += np.cos(2 * np.pi * freq * (xx * np.cos(theta) + yy * np.sin(theta)) + phase)
    cx, cy = rng.uniform(0.35, 0.65, size=2)
    ax, ay = rng.uniform(0.18, 0.32, size=2)
    mask = ((xx - cx) / ax) ** 2 + ((yy - cy) / ay) ** 2 <= 1.0
    img = 0.5 + 0.12 * img
    img = np.where(mask, np.clip(img, 0, 1), 0.05)
    return img


def make_object_dataset(root: Path, n_classes=4, per_class=12, size=48, seed=0, noise=0.02,
                        max_angle=25.0):
    """COIL-like corpus: each class is one object seen at nearby poses."""
    rng = np.random.default_rng(seed)
    root = Path(root)
    for c in range(n_classes):
        proto = _prototype(rng, size)
        d = root / f"obj{c:02d}"
        d.mkdir(parents=True, exist_ok=True)
        base = Image.fromarray(np.uint8(np.round(proto * 255)))
        for i in range(per_class):
            angle = max_angle * (2.0 * i / max(per_class - 1, 1) - 1.0)
            shift = tuple(int(v) for v in rng.integers(-3, 4, size=2))
            rot = base.rotate(angle, resample=Image.BILINEAR, translate=shift, fillcolor=13)
            rot = np.asarray(rot, dtype=np.float64) / 255
            rot = np.clip(rot + rng.normal(0, noise, rot.shape), 0, 1)
            Image.fromarray(np.uint8(np.round(rot * 255))).save(d / f"obj{c:02d}__{i:03d}.png")
    return root


@pytest.fixture(scope="session")
def object_dataset(tmp_path_factory):
    return make_object_dataset(tmp_path_factory.mktemp("objects"))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# -- acceptance reporting -----------------------------------------------------------
# Tests tagged ``@pytest.mark.criterion(n, "summary")`` roll up into one
# PASS/FAIL line per criterion at the end of the session.

_criteria: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, summary): acceptance criterion n")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or (rep.when != "call" and not rep.failed and not rep.skipped):
        return
    n, summary = mark.args
    entry = _criteria.setdefault(n, {"summary": summary, "passed": 0, "failed": [], "skipped": 0})
    if rep.failed:
        entry["failed"].append(item.name)
    elif rep.skipped:
        entry["skipped"] += 1
    elif rep.when == "call":
        entry["passed"] += 1


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n in sorted(_criteria):
        e = _criteria[n]
        ok = not e["failed"] and e["passed"] > 0
        status = "PASS" if ok else "FAIL"
        tail = f" ({len(e['failed'])} failing: {', '.join(e['failed'])})" if e["failed"] else ""
        tr.write_line(f"criterion {n:>2} {status}  {e['summary']}  [{e['passed']} checks passed]{tail}")
