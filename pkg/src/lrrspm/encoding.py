"""Descriptor encoders over a fixed codebook.

The low-rank encoder is a single precomputed projection: for codebook
``D`` (m x k) and regularization ``lam``,

    P = (D^T D + lam I)^{-1} D^T,      C = P X,

i.e. each code is the ridge solution minimizing
``||x - D c||^2 + lam ||c||^2`` (see :func:`ridge_residual`). Columns of
C are scaled to unit L2 norm and then their trivial entries are zeroed by
:func:`threshold_codes`.

The baselines are hard vector quantization, L1 sparse coding solved by
cyclic coordinate descent, and locality-constrained linear coding.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numba
import numpy as np
from scipy import linalg

from .codebook import Codebook, sq_distances
from .errors import InvalidInputError, LinearAlgebraError

ENCODERS = ("lrr", "vq", "sc", "llc")
THRESHOLD_MODES = ("cumulative_energy", "literal")
PROJECTION_RTOL = 1e-8


def _columns(x) -> np.ndarray:
    X = getattr(x, "descriptors", x)
    X = np.asarray(X, dtype=np.float64)
    return X[:, None] if X.ndim == 1 else X


@dataclass(frozen=True, eq=False)
class CodeMatrix:
    """Codes of n descriptors as the columns of a ``(k, n)`` array."""

    codes: np.ndarray
    encoder_tag: str
    normalized: bool = False

    def __post_init__(self):
        if self.encoder_tag not in ENCODERS:
            raise InvalidInputError(f"unknown encoder tag {self.encoder_tag!r}")
        if not np.all(np.isfinite(self.codes)):
            raise InvalidInputError("codes contain NaN or Inf")

    @property
    def k(self) -> int:
        return self.codes.shape[0]

    @property
    def n(self) -> int:
        return self.codes.shape[1]


@dataclass(frozen=True, eq=False)
class Projection:
    matrix: np.ndarray
    lam: float
    codebook_hash: str

    @property
    def k(self) -> int:
        return self.matrix.shape[0]

    @property
    def m(self) -> int:
        return self.matrix.shape[1]


def projection_residual(D: np.ndarray, lam: float, P: np.ndarray) -> float:
    """``||(D^T D + lam I) P - D^T||_F / ||D^T||_F``."""
    G = D.T @ D
    G[np.diag_indices_from(G)] += lam
    return float(np.linalg.norm(G @ P - D.T) / np.linalg.norm(D))


def build_projection(codebook: Codebook, lam: float = 0.7) -> Projection:
    """Cholesky solve of the k x k system ``(D^T D + lam I) P = D^T``."""
    if not lam > 0:
        raise InvalidInputError("lambda must be positive")
    D = codebook.centers
    G = D.T @ D
    G[np.diag_indices_from(G)] += lam
    try:
        factor = linalg.cho_factor(G, lower=False, check_finite=True)
        P = linalg.cho_solve(factor, D.T)
    except linalg.LinAlgError as exc:
        raise LinearAlgebraError(f"projection system is not positive definite: {exc}") from exc
    res = projection_residual(D, lam, P)
    if not res <= PROJECTION_RTOL:
        raise LinearAlgebraError(f"projection residual {res:.3e} exceeds {PROJECTION_RTOL:g}")
    P.setflags(write=False)
    return Projection(P, float(lam), codebook.content_hash)


def lrr_raw_codes(P: Projection, descriptors) -> np.ndarray:
    X = _columns(descriptors)
    if X.shape[0] != P.m:
        raise InvalidInputError(f"descriptor dim {X.shape[0]} != projection dim {P.m}")
    return P.matrix @ X


def normalize_columns(C: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(C, axis=0)
    out = np.zeros_like(C)
    live = norms > 0
    out[:, live] = C[:, live] / norms[live]
    return out


def threshold_codes(C, epsilon: float = 0.98, mode: str = "cumulative_energy"):
    """Zero the trivial entries of every code column.

    ``cumulative_energy`` keeps, per column, the shortest run of entries
    (largest ``|c|`` first) whose absolute sum reaches ``epsilon`` of the
    column's absolute sum; entries tied with the last kept magnitude are
    kept too. ``literal`` keeps ``c_j`` iff ``k * c_j / sum(c) < epsilon``
    using signed values exactly as written; columns summing to zero
    follow IEEE division. All-zero columns pass through in both modes.
    """
    if not 0 < epsilon <= 1:
        raise InvalidInputError("epsilon must lie in (0, 1]")
    wrapped = isinstance(C, CodeMatrix)
    A = np.asarray(C.codes if wrapped else C, dtype=np.float64)
    if mode == "cumulative_energy":
        out = _threshold_energy(A, epsilon)
    elif mode == "literal":
        out = _threshold_literal(A, epsilon)
    else:
        raise InvalidInputError(f"unknown threshold mode {mode!r}")
    if wrapped:
        return CodeMatrix(out, C.encoder_tag, C.normalized)
    return out


def _threshold_energy(A: np.ndarray, epsilon: float) -> np.ndarray:
    mag = np.abs(A)
    S = -np.sort(-mag, axis=0)
    # mass left after each prefix, summed tail-first so it is exactly 0
    # once only zeros remain (epsilon = 1 is then the identity)
    tail = np.cumsum(S[::-1], axis=0)[::-1]
    total = tail[0]
    after = np.vstack([tail[1:], np.zeros((1, A.shape[1]))])
    ok = after <= (1.0 - epsilon) * total
    cut = np.argmax(ok, axis=0)
    cut_value = S[cut, np.arange(A.shape[1])]
    keep = (mag >= cut_value) & (mag > 0)
    return np.where(keep, A, 0.0)


def _threshold_literal(A: np.ndarray, epsilon: float) -> np.ndarray:
    k = A.shape[0]
    s = A.sum(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = k * A / s
    keep = ratio < epsilon
    zero_col = ~np.any(A != 0, axis=0)
    keep[:, zero_col] = True
    return np.where(keep, A, 0.0)


def encode_lrr(
    P: Projection, field, epsilon: float = 0.98, mode: str = "cumulative_energy"
) -> CodeMatrix:
    C = normalize_columns(lrr_raw_codes(P, field))
    return CodeMatrix(threshold_codes(C, epsilon, mode), "lrr", normalized=True)


def ridge_residual(D: np.ndarray, x: np.ndarray, c: np.ndarray, lam: float) -> np.ndarray:
    """Gradient of ``1/2 ||x - D c||^2 + lam/2 ||c||^2``; zero at ``c = P x``.

    Works column-wise when ``x`` and ``c`` are matrices.
    """
    return D.T @ (D @ c - x) + lam * c


def encode_vq(codebook: Codebook, field) -> CodeMatrix:
    X = _columns(field)
    if X.shape[0] != codebook.m:
        raise InvalidInputError(f"descriptor dim {X.shape[0]} != codebook dim {codebook.m}")
    idx = np.argmin(sq_distances(X, codebook.centers), axis=1)
    C = np.zeros((codebook.k, X.shape[1]))
    C[idx, np.arange(X.shape[1])] = 1.0
    return CodeMatrix(C, "vq")


@numba.njit(cache=True, nogil=True)
def _lasso_cd(G, Bt, lam, max_iter, tol):
    # Bt is (n, k) = (D^T X)^T; rows of G double as columns (symmetric)
    n, k = Bt.shape
    Ct = np.zeros((n, k))
    q = np.zeros(k)
    half = 0.5 * lam
    for i in range(n):
        c = Ct[i]
        b = Bt[i]
        q[:] = 0.0
        for _ in range(max_iter):
            biggest = 0.0
            for j in range(k):
                gjj = G[j, j]
                if gjj <= 0.0:
                    continue
                cj = c[j]
                rho = b[j] - q[j] + gjj * cj
                if rho > half:
                    new = (rho - half) / gjj
                elif rho < -half:
                    new = (rho + half) / gjj
                else:
                    new = 0.0
                delta = new - cj
                if delta != 0.0:
                    g = G[j]
                    for r in range(k):
                        q[r] += g[r] * delta
                    c[j] = new
                    if abs(delta) > biggest:
                        biggest = abs(delta)
            if biggest < tol:
                break
    return Ct


def sc_objective(D: np.ndarray, x: np.ndarray, c: np.ndarray, lam: float) -> float:
    """``||x - D c||^2 + lam ||c||_1``."""
    r = x - D @ c
    return float(r @ r + lam * np.abs(c).sum())


def encode_sc(
    codebook: Codebook, field, lambda_sc: float = 0.15, max_iter: int = 200, tol: float = 1e-5
) -> CodeMatrix:
    """Per-column ``min ||x - D c||^2 + lambda_sc ||c||_1``, zero start.

    Stops when a full sweep moves no coordinate by ``tol`` or more.
    """
    if not lambda_sc > 0:
        raise InvalidInputError("lambda_sc must be positive")
    X = _columns(field)
    D = codebook.centers
    if X.shape[0] != D.shape[0]:
        raise InvalidInputError(f"descriptor dim {X.shape[0]} != codebook dim {D.shape[0]}")
    G = np.ascontiguousarray(D.T @ D)
    Bt = np.ascontiguousarray((D.T @ X).T)
    Ct = _lasso_cd(G, Bt, float(lambda_sc), int(max_iter), float(tol))
    return CodeMatrix(np.ascontiguousarray(Ct.T), "sc")


def encode_llc(codebook: Codebook, field, knn: int = 5, beta: float = 1e-4) -> CodeMatrix:
    """Locality-constrained linear coding over the ``knn`` nearest centers.

    Solves ``(G + beta * tr(G) I) w = 1`` on the shifted local Gram matrix
    and rescales ``w`` to sum to one.
    """
    X = _columns(field)
    D = codebook.centers
    k = D.shape[1]
    if X.shape[0] != D.shape[0]:
        raise InvalidInputError(f"descriptor dim {X.shape[0]} != codebook dim {D.shape[0]}")
    if not 1 <= knn <= k:
        raise InvalidInputError(f"knn must lie in [1, {k}]")
    n = X.shape[1]
    nn = np.argsort(sq_distances(X, D), axis=1, kind="stable")[:, :knn]
    C = np.zeros((k, n))
    if knn == 1:
        C[nn[:, 0], np.arange(n)] = 1.0
        return CodeMatrix(C, "llc")
    Z = D[:, nn] - X[:, :, None]  # (m, n, knn)
    G = np.einsum("mni,mnj->nij", Z, Z)
    tr = np.trace(G, axis1=1, axis2=2)
    reg = np.where(tr > 0, beta * tr, beta)
    G[:, np.arange(knn), np.arange(knn)] += reg[:, None]
    w = np.linalg.solve(G, np.ones((n, knn, 1)))[:, :, 0]
    w /= w.sum(axis=1, keepdims=True)
    C[nn, np.arange(n)[:, None]] = w
    return CodeMatrix(C, "llc")


@dataclass(frozen=True)
class EncoderConfig:
    variant: str = "lrr"
    lam: float = 0.7
    epsilon: float = 0.98
    threshold_mode: str = "cumulative_energy"
    lambda_sc: float = 0.15
    sc_max_iter: int = 200
    sc_tol: float = 1e-5
    knn: int = 5
    beta: float = 1e-4

    def __post_init__(self):
        if self.variant not in ENCODERS:
            raise InvalidInputError(f"unknown encoder {self.variant!r}")
        if not self.lam > 0:
            raise InvalidInputError("lambda must be positive")
        if not 0 < self.epsilon <= 1:
            raise InvalidInputError("epsilon must lie in (0, 1]")
        if self.threshold_mode not in THRESHOLD_MODES:
            raise InvalidInputError(f"unknown threshold mode {self.threshold_mode!r}")
        if not self.lambda_sc > 0 or self.knn < 1:
            raise InvalidInputError("lambda_sc must be positive and knn >= 1")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "EncoderConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise InvalidInputError(f"unknown encoder options: {sorted(unknown)}")
        return cls(**d)


class Encoder:
    """Binds a codebook and config; ``encode`` maps descriptors to codes.

    The low-rank projection is built once here, so per-image encoding is
    a single matrix product plus thresholding.
    """

    def __init__(self, codebook: Codebook, config: EncoderConfig = EncoderConfig()):
        self.codebook = codebook
        self.config = config
        self.projection = build_projection(codebook, config.lam) if config.variant == "lrr" else None
        if config.variant == "sc":
            # compile the solver now so per-image timings never include JIT time
            _lasso_cd(np.eye(2), np.ones((1, 2)), 0.1, 1, 0.0)

    @property
    def tag(self) -> str:
        return self.config.variant

    @property
    def default_pooling(self) -> str:
        return "sum_histogram" if self.tag == "vq" else "max"

    def encode(self, field) -> CodeMatrix:
        cfg = self.config
        if cfg.variant == "lrr":
            return encode_lrr(self.projection, field, cfg.epsilon, cfg.threshold_mode)
        if cfg.variant == "vq":
            return encode_vq(self.codebook, field)
        if cfg.variant == "sc":
            return encode_sc(self.codebook, field, cfg.lambda_sc, cfg.sc_max_iter, cfg.sc_tol)
        return encode_llc(self.codebook, field, cfg.knn, cfg.beta)
