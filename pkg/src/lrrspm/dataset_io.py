"""Image decoding, directory-per-class dataset indexing and seeded splits."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import (
    DecodeError,
    InsufficientSamplesError,
    InvalidDatasetError,
    InvalidInputError,
)

IMAGE_EXTENSIONS = frozenset({".png", ".pgm", ".jpg", ".jpeg"})

# ITU-R BT.601 luma weights
LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])


@dataclass(frozen=True, eq=False)
class GrayImage:
    """Grayscale raster with intensities in [0, 1].

    ``pixels`` has shape ``(height, width)``; the row-major flattening of
    this array is the canonical pixel order.
    """

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float64)
        if px.ndim != 2:
            raise InvalidInputError(f"expected a 2-D raster, got shape {px.shape}")
        if px.size == 0:
            raise InvalidInputError("zero-area image")
        if not np.all(np.isfinite(px)) or px.min() < 0.0 or px.max() > 1.0:
            raise InvalidInputError("intensities must lie in [0, 1]")
        px = px.copy()
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def size(self) -> tuple[int, int]:
        return (self.width, self.height)


def _to_unit_gray(img: Image.Image) -> np.ndarray:
    mode = img.mode
    if mode in ("I;16", "I;16B", "I;16L", "I;16N"):
        return np.asarray(img, dtype=np.float64) / 65535.0
    if mode == "I":
        arr = np.asarray(img, dtype=np.float64)
        peak = 65535.0 if arr.max(initial=0) > 255 else 255.0
        return np.clip(arr / peak, 0.0, 1.0)
    if mode == "F":
        return np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0)
    if mode == "1":
        img = img.convert("L")
        mode = "L"
    if mode == "L":
        return np.asarray(img, dtype=np.float64) / 255.0
    if mode == "LA":
        return np.asarray(img.getchannel("L"), dtype=np.float64) / 255.0
    rgb = np.asarray(img.convert("RGB"), dtype=np.float64) / 255.0
    return np.clip(rgb @ LUMA_WEIGHTS, 0.0, 1.0)


def load_image(path) -> GrayImage:
    """Decode a PNG/PGM/JPEG file into a :class:`GrayImage`.

    Color inputs are reduced with the BT.601 luma weights; integer formats
    are scaled by their full-scale value.
    """
    path = Path(path)
    try:
        with Image.open(path) as img:
            img.load()
            if img.width == 0 or img.height == 0:
                raise InvalidInputError(f"zero-area image: {path}")
            pixels = _to_unit_gray(img)
    except InvalidInputError:
        raise
    except (OSError, UnidentifiedImageError, ValueError) as exc:
        raise DecodeError(f"cannot decode image {path}: {exc}") from exc
    return GrayImage(pixels)


def is_image_file(path: Path) -> bool:
    return path.is_file() and path.suffix.lower() in IMAGE_EXTENSIONS


@dataclass(frozen=True)
class DatasetIndex:
    """Ordered class names plus ``(path, class_id)`` samples."""

    classes: tuple[str, ...]
    samples: tuple[tuple[Path, int], ...]

    def __post_init__(self):
        object.__setattr__(self, "classes", tuple(self.classes))
        object.__setattr__(
            self, "samples", tuple((Path(p), int(c)) for p, c in self.samples)
        )
        if len(set(self.classes)) != len(self.classes):
            raise InvalidDatasetError("class names must be unique")
        s = len(self.classes)
        for p, c in self.samples:
            if not 0 <= c < s:
                raise InvalidDatasetError(f"class id {c} out of range for {p}")

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def paths(self) -> list[Path]:
        return [p for p, _ in self.samples]

    @property
    def labels(self) -> np.ndarray:
        return np.array([c for _, c in self.samples], dtype=np.int64)

    def class_samples(self, class_id: int) -> list[tuple[Path, int]]:
        return [sc for sc in self.samples if sc[1] == class_id]


def scan_dataset(root) -> DatasetIndex:
    """Index ``<root>/<class_name>/<image files>``.

    Classes and files are sorted lexicographically so the index (and every
    seeded split derived from it) is reproducible across filesystems.
    """
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"dataset root not found: {root}")
    class_dirs = sorted((d for d in root.iterdir() if d.is_dir()), key=lambda d: d.name)
    if not class_dirs:
        raise InvalidDatasetError(f"no class directories under {root}")
    classes = []
    samples = []
    for class_id, d in enumerate(class_dirs):
        files = sorted((f for f in d.iterdir() if is_image_file(f)), key=lambda f: f.name)
        if not files:
            raise InvalidDatasetError(f"class {d.name!r} contains no images")
        classes.append(d.name)
        samples.extend((f, class_id) for f in files)
    return DatasetIndex(tuple(classes), tuple(samples))


@dataclass(frozen=True)
class SplitSpec:
    per_class_train: int
    seed: int = 0

    def __post_init__(self):
        if self.per_class_train < 1:
            raise InvalidInputError("per_class_train must be >= 1")
        if not 0 <= self.seed < 2**64:
            raise InvalidInputError("seed must be a 64-bit unsigned integer")


def split_dataset(index: DatasetIndex, spec: SplitSpec) -> tuple[DatasetIndex, DatasetIndex]:
    """Draw ``spec.per_class_train`` training samples from every class.

    Each class is shuffled by its own generator seeded with
    ``(seed, class_id)``, so adding or removing a class leaves the other
    classes' splits untouched. Both halves keep the index's sample order.
    """
    train, test = [], []
    for class_id, name in enumerate(index.classes):
        members = index.class_samples(class_id)
        if len(members) <= spec.per_class_train:
            raise InsufficientSamplesError(
                f"class {name!r} has {len(members)} samples, needs more than "
                f"{spec.per_class_train}"
            )
        rng = np.random.default_rng([spec.seed, class_id])
        chosen = np.zeros(len(members), dtype=bool)
        chosen[rng.permutation(len(members))[: spec.per_class_train]] = True
        train.extend(m for m, keep in zip(members, chosen) if keep)
        test.extend(m for m, keep in zip(members, chosen) if not keep)
    return DatasetIndex(index.classes, tuple(train)), DatasetIndex(index.classes, tuple(test))
