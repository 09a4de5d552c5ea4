"""Binary artifact files for codebooks, projections, models and features.

Layout (all integers little-endian)::

    offset 0   8 bytes   magic b"LRRSPM01"
    offset 8   uint32    kind code (1 codebook, 2 projection, 3 model, 4 features)
    offset 12  uint64    header length H in bytes
    offset 20  H bytes   UTF-8 JSON header, keys sorted, no whitespace
    offset 20+H          payload: float64 '<f8' arrays, row-major, in the
                         order of header["arrays"] (each {"name", "shape"})

The header always carries ``kind`` and, for every kind other than
codebook, the ``codebook_hash`` of the codebook the artifact derives from.
"""
from __future__ import annotations

import json
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .classify import LinearModel
from .codebook import Codebook
from .encoding import Projection
from .errors import ArtifactError, HashMismatchError, KindMismatchError

MAGIC = b"LRRSPM01"
KIND_CODES = {"codebook": 1, "projection": 2, "model": 3, "features": 4}
KIND_NAMES = {v: k for k, v in KIND_CODES.items()}
_PREFIX = struct.Struct("<8sIQ")


@dataclass(frozen=True, eq=False)
class TrainedModel:
    model: LinearModel
    codebook_hash: str
    meta: dict = field(default_factory=dict)


@dataclass(frozen=True, eq=False)
class FeatureSet:
    features: np.ndarray  # (n, d)
    labels: np.ndarray  # (n,)
    class_names: tuple[str, ...]
    codebook_hash: str
    meta: dict = field(default_factory=dict)


@dataclass
class Artifact:
    kind: str
    header: dict
    arrays: dict[str, np.ndarray]


def _encode(kind: str, header: dict, arrays: list[tuple[str, np.ndarray]]) -> bytes:
    header = dict(header)
    header["kind"] = kind
    header["arrays"] = [{"name": n, "shape": list(np.shape(a))} for n, a in arrays]
    blob = json.dumps(header, sort_keys=True, separators=(",", ":"), ensure_ascii=False).encode()
    parts = [_PREFIX.pack(MAGIC, KIND_CODES[kind], len(blob)), blob]
    parts += [np.ascontiguousarray(a, dtype="<f8").tobytes() for _, a in arrays]
    return b"".join(parts)


def _write_atomic(path: Path, data: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _serialize(kind: str, obj, meta: dict | None):
    meta = dict(meta or {})
    if kind == "codebook":
        if not isinstance(obj, Codebook):
            raise TypeError("codebook kind needs a Codebook")
        header = {"m": obj.m, "k": obj.k, "content_hash": obj.content_hash, "meta": meta}
        return header, [("centers", obj.centers)]
    if kind == "projection":
        if not isinstance(obj, Projection):
            raise TypeError("projection kind needs a Projection")
        header = {"k": obj.k, "m": obj.m, "lambda": obj.lam, "codebook_hash": obj.codebook_hash, "meta": meta}
        return header, [("P", obj.matrix)]
    if kind == "model":
        if not isinstance(obj, TrainedModel):
            raise TypeError("model kind needs a TrainedModel")
        m = obj.model
        header = {
            "class_names": list(m.class_names),
            "feature_dim": m.feature_dim,
            "codebook_hash": obj.codebook_hash,
            "meta": {**obj.meta, **meta},
        }
        return header, [("weights", m.weights), ("bias", m.bias)]
    if kind == "features":
        if not isinstance(obj, FeatureSet):
            raise TypeError("features kind needs a FeatureSet")
        header = {
            "class_names": list(obj.class_names),
            "labels": [int(v) for v in obj.labels],
            "codebook_hash": obj.codebook_hash,
            "meta": {**obj.meta, **meta},
        }
        return header, [("features", obj.features)]
    raise ArtifactError(f"unknown artifact kind {kind!r}")


def dumps(kind: str, obj, meta: dict | None = None) -> bytes:
    header, arrays = _serialize(kind, obj, meta)
    return _encode(kind, header, arrays)


def save(kind: str, obj, path, meta: dict | None = None) -> None:
    """Write ``obj`` as an artifact of ``kind`` via temp file + rename."""
    path = Path(path)
    data = dumps(kind, obj, meta)
    try:
        _write_atomic(path, data)
    except OSError as exc:
        raise ArtifactError(f"cannot write {path}: {exc}") from exc


def parse(data: bytes, source: str = "<bytes>") -> Artifact:
    if len(data) < _PREFIX.size:
        raise ArtifactError(f"{source}: file too short for an artifact prefix")
    magic, code, hlen = _PREFIX.unpack_from(data)
    if magic != MAGIC:
        raise ArtifactError(f"{source}: bad magic {magic!r}")
    if code not in KIND_NAMES:
        raise ArtifactError(f"{source}: unknown kind code {code}")
    start = _PREFIX.size
    if len(data) < start + hlen:
        raise ArtifactError(f"{source}: header length mismatch")
    try:
        header = json.loads(data[start : start + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ArtifactError(f"{source}: corrupt header: {exc}") from exc
    kind = KIND_NAMES[code]
    if header.get("kind") != kind:
        raise ArtifactError(f"{source}: header kind {header.get('kind')!r} != {kind!r}")
    specs = header.get("arrays", [])
    sizes = [int(np.prod(s["shape"], dtype=np.int64)) for s in specs]
    offset = start + hlen
    if len(data) - offset != 8 * sum(sizes):
        raise ArtifactError(f"{source}: payload length mismatch")
    arrays = {}
    for spec, size in zip(specs, sizes):
        a = np.frombuffer(data, dtype="<f8", count=size, offset=offset)
        arrays[spec["name"]] = a.astype(np.float64).reshape(spec["shape"])
        offset += 8 * size
    return Artifact(kind, header, arrays)


def read_artifact(path) -> Artifact:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise ArtifactError(f"cannot read {path}: {exc}") from exc
    return parse(data, str(path))


def _rebuild(art: Artifact, source: str):
    h, a = art.header, art.arrays
    if art.kind == "codebook":
        cb = Codebook(a["centers"])
        if cb.content_hash != h["content_hash"]:
            raise ArtifactError(f"{source}: codebook content hash does not match its payload")
        return cb
    if art.kind == "projection":
        return Projection(a["P"], float(h["lambda"]), h["codebook_hash"])
    if art.kind == "model":
        model = LinearModel(a["weights"], a["bias"], tuple(h["class_names"]))
        return TrainedModel(model, h["codebook_hash"], h.get("meta", {}))
    return FeatureSet(
        a["features"],
        np.asarray(h["labels"], dtype=np.int64),
        tuple(h["class_names"]),
        h["codebook_hash"],
        h.get("meta", {}),
    )


def loads(kind: str, data: bytes, codebook: Codebook | None = None, source: str = "<bytes>"):
    art = parse(data, source)
    if art.kind != kind:
        raise KindMismatchError(f"{source}: expected a {kind} artifact, found {art.kind}")
    obj = _rebuild(art, source)
    if codebook is not None:
        stored = art.header.get("content_hash") if kind == "codebook" else art.header["codebook_hash"]
        if stored != codebook.content_hash:
            raise HashMismatchError(
                f"{source}: built from codebook {stored[:12]}..., "
                f"expected {codebook.content_hash[:12]}..."
            )
    return obj


def load(kind: str, path, codebook: Codebook | None = None):
    """Inverse of :func:`save`; with ``codebook``, also checks provenance."""
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise ArtifactError(f"cannot read {path}: {exc}") from exc
    return loads(kind, data, codebook, str(path))
