"""Visual codebook learned by k-means over sampled training descriptors."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .dataset_io import DatasetIndex, load_image
from .errors import InvalidDatasetError, InvalidInputError
from .features import SiftParams, extract_dense_sift

DISTINCT_TOL = 1e-9


def content_hash(*arrays: np.ndarray) -> str:
    """SHA-256 over shapes and little-endian float64 bytes."""
    h = hashlib.sha256()
    for a in arrays:
        a = np.ascontiguousarray(a, dtype="<f8")
        h.update(repr(a.shape).encode())
        h.update(a.tobytes())
    return h.hexdigest()


def sq_distances(X: np.ndarray, C: np.ndarray) -> np.ndarray:
    """``(n, k)`` squared Euclidean distances between columns of X and C."""
    xx = np.einsum("ij,ij->j", X, X)
    cc = np.einsum("ij,ij->j", C, C)
    d = xx[:, None] - 2.0 * (X.T @ C) + cc[None, :]
    return np.maximum(d, 0.0, out=d)


@dataclass(frozen=True, eq=False)
class Codebook:
    """k cluster centers stored as the columns of an ``(m, k)`` matrix."""

    centers: np.ndarray

    def __post_init__(self):
        D = np.array(self.centers, dtype=np.float64)
        if D.ndim != 2 or D.shape[1] < 2:
            raise InvalidInputError("codebook needs at least two centers")
        if not np.all(np.isfinite(D)):
            raise InvalidInputError("codebook centers must be finite")
        d2 = sq_distances(D, D)
        np.fill_diagonal(d2, np.inf)
        if d2.min() <= DISTINCT_TOL**2:
            # the expanded form is inexact for near-duplicates, confirm directly
            i, j = np.unravel_index(np.argmin(d2), d2.shape)
            if np.linalg.norm(D[:, i] - D[:, j]) <= DISTINCT_TOL:
                raise InvalidInputError(f"codebook centers {i} and {j} coincide")
        D.setflags(write=False)
        object.__setattr__(self, "centers", D)

    @property
    def m(self) -> int:
        return self.centers.shape[0]

    @property
    def k(self) -> int:
        return self.centers.shape[1]

    @property
    def content_hash(self) -> str:
        return content_hash(self.centers)


@dataclass(frozen=True)
class KmeansParams:
    k: int = 256
    max_iters: int = 100
    rel_tol: float = 1e-4
    seed: int = 0

    def __post_init__(self):
        if self.k < 2 or self.max_iters < 1 or self.rel_tol < 0:
            raise InvalidInputError("need k >= 2, max_iters >= 1, rel_tol >= 0")


@dataclass
class KmeansResult:
    codebook: Codebook
    labels: np.ndarray
    objective_history: list[float] = field(default_factory=list)
    n_iter: int = 0


def sample_descriptors(
    train: DatasetIndex, params: SiftParams, max_per_image: int = 200, seed: int = 0
) -> np.ndarray:
    """Up to ``max_per_image`` non-zero descriptors from each training image.

    Image ``i`` is subsampled by a generator seeded with ``(seed, i)``;
    columns keep their grid order within an image.
    """
    if len(train) == 0:
        raise InvalidInputError("empty training index")
    blocks = []
    for i, path in enumerate(train.paths):
        X = extract_dense_sift(load_image(path), params).descriptors
        X = X[:, np.any(X != 0.0, axis=0)]
        if X.shape[1] > max_per_image:
            rng = np.random.default_rng([seed, i])
            keep = np.sort(rng.choice(X.shape[1], size=max_per_image, replace=False))
            X = X[:, keep]
        blocks.append(X)
    out = np.concatenate(blocks, axis=1)
    if out.shape[1] == 0:
        raise InvalidDatasetError("no non-zero descriptors in the training images")
    return out


def _count_distinct(X: np.ndarray) -> int:
    return np.unique(X.T, axis=0).shape[0]


def kmeans_init_plusplus(X: np.ndarray, k: int, seed: int = 0) -> np.ndarray:
    """k-means++ seeding over the columns of X; returns ``(m, k)`` centers."""
    X = np.asarray(X, dtype=np.float64)
    n = X.shape[1]
    if k < 1 or _count_distinct(X) < k:
        raise InvalidInputError(f"need at least {k} distinct descriptors to seed {k} centers")
    rng = np.random.default_rng(seed)
    idx = [int(rng.integers(n))]
    closest = np.sum((X - X[:, idx[0]][:, None]) ** 2, axis=0)
    for _ in range(1, k):
        cdf = np.cumsum(closest)
        # side="right" never lands on a zero-weight (already chosen) point
        j = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
        if j >= n:
            j = int(np.flatnonzero(closest > 0)[-1])
        idx.append(j)
        closest = np.minimum(closest, np.sum((X - X[:, j][:, None]) ** 2, axis=0))
    return X[:, idx].copy()


def _assign(X: np.ndarray, centers: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    d2 = sq_distances(X, centers)
    labels = np.argmin(d2, axis=1)  # first minimum on ties
    diff = X - centers[:, labels]
    return labels, np.einsum("ij,ij->j", diff, diff)


def _update_means(X: np.ndarray, labels: np.ndarray, point_cost: np.ndarray, k: int):
    """Recompute means, reseeding empty clusters with the worst-fit points."""
    labels = labels.copy()
    counts = np.bincount(labels, minlength=k)
    empty = np.flatnonzero(counts == 0)
    if empty.size:
        order = np.argsort(-point_cost, kind="stable")
        pos = 0
        for j in empty:
            while counts[labels[order[pos]]] <= 1:
                pos += 1
            i = order[pos]
            counts[labels[i]] -= 1
            labels[i] = j
            counts[j] = 1
            pos += 1
    # sorted segment sums: fixed reduction order per center
    order = np.argsort(labels, kind="stable")
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    sums = np.add.reduceat(X[:, order], starts, axis=1)
    return sums / counts[None, :], labels


def kmeans_lloyd(X: np.ndarray, init: np.ndarray, params: KmeansParams) -> KmeansResult:
    """Lloyd iterations from the given initial centers."""
    k = init.shape[1]
    centers = init.copy()
    history: list[float] = []
    prev_labels = None
    it = 0
    for it in range(1, params.max_iters + 1):
        labels, cost = _assign(X, centers)
        obj = float(cost.sum())
        history.append(obj)
        unchanged = prev_labels is not None and np.array_equal(labels, prev_labels)
        centers, labels = _update_means(X, labels, cost, k)
        if unchanged:
            break
        if len(history) > 1:
            before = history[-2]
            if before <= 0.0 or (before - obj) / before < params.rel_tol:
                break
        prev_labels = labels
    return KmeansResult(Codebook(centers), labels, history, it)


def kmeans_train(X: np.ndarray, params: KmeansParams = KmeansParams()) -> Codebook:
    """Learn a codebook from descriptor columns ``X`` of shape ``(m, n)``."""
    return kmeans_fit(X, params).codebook


def kmeans_fit(X: np.ndarray, params: KmeansParams = KmeansParams()) -> KmeansResult:
    X = np.asarray(X, dtype=np.float64)
    init = kmeans_init_plusplus(X, params.k, params.seed)
    return kmeans_lloyd(X, init, params)


def objective(X: np.ndarray, codebook: Codebook) -> float:
    """Sum over descriptors of the squared distance to the nearest center."""
    return float(_assign(np.asarray(X, dtype=np.float64), codebook.centers)[1].sum())
