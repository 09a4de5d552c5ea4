"""Dense single-scale SIFT on a regular grid.

Gradients come from central differences with replicated borders. Each
pixel's magnitude is split linearly between its two nearest orientation
bins and bilinearly between its nearest spatial cells, i.e. trilinear
soft-binning without a Gaussian window. Descriptors are L2-normalized,
clamped at 0.2 and renormalized.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .dataset_io import GrayImage
from .errors import InvalidInputError

CLAMP = 0.2
_NORM_FLOOR = 1e-12


@dataclass(frozen=True)
class SiftParams:
    step: int = 6
    patch: int = 16
    spatial_bins: int = 4
    orientation_bins: int = 8

    def __post_init__(self):
        if min(self.step, self.patch, self.spatial_bins, self.orientation_bins) < 1:
            raise InvalidInputError("SIFT parameters must be positive")
        if self.patch % self.spatial_bins:
            raise InvalidInputError("patch must be divisible by spatial_bins")

    @property
    def descriptor_dim(self) -> int:
        return self.spatial_bins**2 * self.orientation_bins

    @property
    def cell(self) -> int:
        return self.patch // self.spatial_bins


@dataclass(frozen=True, eq=False)
class DescriptorField:
    """Descriptors of one image as columns of an ``(m, n)`` matrix.

    ``positions`` is ``(n, 2)`` holding the ``(x, y)`` patch centers.
    """

    descriptors: np.ndarray
    positions: np.ndarray
    image_size: tuple[int, int]

    def __post_init__(self):
        X = np.asarray(self.descriptors, dtype=np.float64)
        pos = np.asarray(self.positions, dtype=np.float64).reshape(-1, 2)
        if X.ndim != 2 or X.shape[1] != pos.shape[0]:
            raise InvalidInputError("descriptor and position counts differ")
        w, h = self.image_size
        if pos.size and (
            pos.min() < 0 or np.any(pos[:, 0] >= w) or np.any(pos[:, 1] >= h)
        ):
            raise InvalidInputError("descriptor position outside the image")
        object.__setattr__(self, "descriptors", X)
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "image_size", (int(w), int(h)))

    @property
    def n(self) -> int:
        return self.descriptors.shape[1]

    @property
    def m(self) -> int:
        return self.descriptors.shape[0]


def grid_shape(width: int, height: int, params: SiftParams) -> tuple[int, int]:
    """Number of grid columns and rows that keep the whole patch inside."""
    if width < params.patch or height < params.patch:
        return (0, 0)
    return (
        (width - params.patch) // params.step + 1,
        (height - params.patch) // params.step + 1,
    )


def dense_grid(width: int, height: int, params: SiftParams) -> list[tuple[float, float]]:
    """Patch centers in row-major order; empty when the image is too small."""
    nx, ny = grid_shape(width, height, params)
    half = params.patch / 2
    xs = [half + i * params.step for i in range(nx)]
    ys = [half + j * params.step for j in range(ny)]
    return [(x, y) for y in ys for x in xs]


def gradient_orientation_maps(pixels: np.ndarray, nbins: int) -> np.ndarray:
    """Per-pixel gradient magnitude split over orientation bins.

    Returns an ``(H, W, nbins)`` array; bin ``o`` is centered on angle
    ``2*pi*o/nbins`` measured from the +x axis towards +y (image rows).
    """
    padded = np.pad(pixels, 1, mode="edge")
    gx = 0.5 * (padded[1:-1, 2:] - padded[1:-1, :-2])
    gy = 0.5 * (padded[2:, 1:-1] - padded[:-2, 1:-1])
    mag = np.hypot(gx, gy)
    theta = np.mod(np.arctan2(gy, gx), 2 * np.pi)
    pos = theta * (nbins / (2 * np.pi))
    lo = np.floor(pos)
    frac = pos - lo
    lo = lo.astype(np.intp) % nbins
    hi = (lo + 1) % nbins
    maps = np.zeros(pixels.shape + (nbins,))
    rows, cols = np.indices(pixels.shape)
    # each (row, col) occurs once per statement, so fancy += does not drop writes
    maps[rows, cols, lo] += mag * (1.0 - frac)
    maps[rows, cols, hi] += mag * frac
    return maps


def spatial_weights(params: SiftParams) -> np.ndarray:
    """``(spatial_bins, patch)`` bilinear weights of patch pixels per cell."""
    cell = params.cell
    centers = (np.arange(params.spatial_bins) + 0.5) * cell - 0.5
    u = np.arange(params.patch)
    return np.maximum(0.0, 1.0 - np.abs(u[None, :] - centers[:, None]) / cell)


def raw_histograms(maps: np.ndarray, origins_x, origins_y, params: SiftParams) -> np.ndarray:
    """Unnormalized histograms for patches with the given top-left corners.

    ``origins_x``/``origins_y`` are 1-D integer arrays defining a grid;
    output has shape ``(len(origins_y), len(origins_x), descriptor_dim)``
    with the descriptor laid out as (cell row, cell column, orientation).
    """
    p = params.patch
    windows = sliding_window_view(maps, (p, p), axis=(0, 1))
    windows = windows[np.ix_(origins_y, origins_x)]  # (ny, nx, O, p_rows, p_cols)
    W = spatial_weights(params)
    tmp = np.tensordot(windows, W, axes=([4], [1]))  # (ny, nx, O, p_rows, bx)
    hist = np.tensordot(tmp, W, axes=([3], [1]))  # (ny, nx, O, bx, by)
    hist = hist.transpose(0, 1, 4, 3, 2)  # (ny, nx, by, bx, O)
    return hist.reshape(hist.shape[0], hist.shape[1], -1)


def normalize_descriptors(hist: np.ndarray, clamp: float = CLAMP) -> np.ndarray:
    """Row-wise SIFT normalization: unit norm, clamp, unit norm again.

    Rows with (numerically) zero mass map to the zero vector.
    """
    h = np.array(hist, dtype=np.float64, ndmin=2)
    norms = np.linalg.norm(h, axis=1, keepdims=True)
    live = norms[:, 0] > _NORM_FLOOR
    out = np.zeros_like(h)
    u = np.minimum(h[live] / norms[live], clamp)
    out[live] = u / np.linalg.norm(u, axis=1, keepdims=True)
    return out


def _check_patch(image: GrayImage, center, params: SiftParams) -> tuple[int, int]:
    half = params.patch / 2
    x0, y0 = center[0] - half, center[1] - half
    if not (float(x0).is_integer() and float(y0).is_integer()):
        raise InvalidInputError("patch corner must fall on a pixel")
    x0, y0 = int(x0), int(y0)
    if x0 < 0 or y0 < 0 or x0 + params.patch > image.width or y0 + params.patch > image.height:
        raise InvalidInputError(f"patch centered at {tuple(center)} leaves the image")
    return x0, y0


def sift_descriptor(image: GrayImage, center, params: SiftParams = SiftParams()) -> np.ndarray:
    x0, y0 = _check_patch(image, center, params)
    maps = gradient_orientation_maps(image.pixels, params.orientation_bins)
    hist = raw_histograms(maps, np.array([x0]), np.array([y0]), params)
    return normalize_descriptors(hist.reshape(1, -1))[0]


def extract_dense_sift(image: GrayImage, params: SiftParams = SiftParams()) -> DescriptorField:
    """One descriptor per :func:`dense_grid` center, in the same order."""
    nx, ny = grid_shape(image.width, image.height, params)
    if nx == 0:
        raise InvalidInputError(
            f"image {image.width}x{image.height} is smaller than the {params.patch}px patch"
        )
    maps = gradient_orientation_maps(image.pixels, params.orientation_bins)
    ox = np.arange(nx) * params.step
    oy = np.arange(ny) * params.step
    hist = raw_histograms(maps, ox, oy, params).reshape(nx * ny, -1)
    desc = normalize_descriptors(hist)
    half = params.patch / 2
    gx, gy = np.meshgrid(ox + half, oy + half)
    positions = np.column_stack([gx.ravel(), gy.ravel()])
    return DescriptorField(desc.T.copy(), positions, image.size)
