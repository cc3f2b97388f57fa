"""Model bundles: one file carrying the whole scoring pipeline from source to target.

Byte layout (all integers little-endian)::

    offset  size  field
    0       4     magic b"NIDT"
    4       4     u32 format version (1)
    8       4     u32 header length N
    12      N     header, UTF-8 JSON (sorted keys, compact separators)
    12+N    ...   payload: for each weight tensor in layer order
                    u32 ndim, ndim x u32 dims, prod(dims) x float32

The header holds the architecture, column schema, categorical encoding,
feature selection, scaler bounds, the tensor manifest and free-form metadata.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .dataset import UNSW_NB15, ColumnSchema, EncodingMap, FlowRecord, load_csv, to_matrix
from .features import FeatureSelection, ScalerParams, transform
from .fileio import atomic_open
from .model import ArchitectureSpec, Model, classify, predict_proba

MAGIC = b"NIDT"
VERSION = 1
_PREFIX = struct.Struct("<4sII")
_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3


class BundleError(ValueError):
    pass


class BadMagicError(BundleError):
    pass


class UnsupportedVersionError(BundleError):
    pass


class PayloadLengthError(BundleError):
    def __init__(self, expected: int, actual: int):
        super().__init__(f"payload is {actual} bytes, header declares {expected} bytes")
        self.expected = expected
        self.actual = actual


class HeaderSchemaError(BundleError):
    pass


class InconsistentBundleError(BundleError):
    """Raised at export time when selection, scaler and model disagree."""


def fnv1a64(data: bytes) -> int:
    h = _FNV_OFFSET
    for byte in memoryview(data):
        h = ((h ^ byte) * _FNV_PRIME) & 0xFFFFFFFFFFFFFFFF
    return h


def digest(data: bytes) -> str:
    """64-bit FNV-1a of ``data`` as 16 hex digits."""
    return f"{fnv1a64(data):016x}"


def file_digest(path: str | os.PathLike) -> str:
    return digest(Path(path).read_bytes())


def _tensor_manifest(model: Model) -> list[dict]:
    return [{"layer": i, "name": name, "shape": list(shape)} for i, name, shape in model.param_shapes()]


def encode_bundle(
    model: Model,
    selection: FeatureSelection,
    scaler: ScalerParams,
    encoding: EncodingMap,
    schema: ColumnSchema = UNSW_NB15,
    metadata: Mapping | None = None,
) -> bytes:
    if selection.k != model.spec.input_features:
        raise InconsistentBundleError(
            f"selection has {selection.k} features but the model takes {model.spec.input_features}"
        )
    if tuple(scaler.columns) != tuple(selection.kept):
        raise InconsistentBundleError("scaler columns differ from the feature selection")
    features = set(schema.feature_columns)
    unknown = [c for c in selection.kept if c not in features]
    if unknown:
        raise InconsistentBundleError(f"selected feature {unknown[0]!r} is not a schema feature column")
    missing = [c for c in schema.categorical_columns if c not in encoding.codes]
    if missing:
        raise InconsistentBundleError(f"encoding has no codes for column {missing[0]!r}")
    header = {
        "format": "nidt-bundle",
        "architecture": model.spec.to_dict(),
        "schema": schema.to_dict(),
        "encoding": encoding.to_dict(),
        "selection": list(selection.kept),
        "scaler": scaler.to_dict(),
        "tensors": _tensor_manifest(model),
        "metadata": dict(metadata or {}),
    }
    text = json.dumps(header, sort_keys=True, separators=(",", ":"), ensure_ascii=False, allow_nan=False)
    head = text.encode("utf-8")
    parts = [_PREFIX.pack(MAGIC, VERSION, len(head)), head]
    for arr in model.tensors():
        parts.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(parts)


def export_bundle(
    model: Model,
    selection: FeatureSelection,
    scaler: ScalerParams,
    encoding: EncodingMap,
    path: str | os.PathLike,
    schema: ColumnSchema = UNSW_NB15,
    metadata: Mapping | None = None,
) -> tuple[int, str]:
    """Write the bundle atomically; returns ``(byte_count, fnv1a64_hex)``.

    Shape checks run before anything touches the disk.
    """
    blob = encode_bundle(model, selection, scaler, encoding, schema, metadata)
    with atomic_open(path, "wb") as fh:
        fh.write(blob)
    return len(blob), digest(blob)


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise HeaderSchemaError(msg)


def _validate_header(h) -> None:
    _require(isinstance(h, dict), "header is not a JSON object")
    for key, typ in (
        ("architecture", dict),
        ("schema", dict),
        ("encoding", dict),
        ("selection", list),
        ("scaler", dict),
        ("tensors", list),
        ("metadata", dict),
    ):
        _require(key in h, f"header is missing {key!r}")
        _require(isinstance(h[key], typ), f"header field {key!r} must be a {typ.__name__}")
    arch = h["architecture"]
    for key in ("family", "input_features", "layers"):
        _require(key in arch, f"architecture is missing {key!r}")
    sc = h["scaler"]
    for key in ("columns", "x_min", "x_max"):
        _require(isinstance(sc.get(key), list), f"scaler field {key!r} must be a list")
    _require(sc["columns"] == h["selection"], "scaler columns differ from the selection")
    _require(len(sc["x_min"]) == len(sc["x_max"]) == len(sc["columns"]), "scaler bounds have the wrong length")
    _require(len(h["selection"]) == arch["input_features"], "selection size differs from the model input width")


def decode_bundle(blob: bytes):
    """Parse and validate a bundle; returns ``(header, model)``."""
    if len(blob) < _PREFIX.size:
        raise BadMagicError(f"file is {len(blob)} bytes, too short for a bundle")
    magic, version, head_len = _PREFIX.unpack_from(blob)
    if magic != MAGIC:
        raise BadMagicError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise UnsupportedVersionError(f"bundle version {version} is not supported (expected {VERSION})")
    start = _PREFIX.size
    if start + head_len > len(blob):
        raise HeaderSchemaError(f"header declares {head_len} bytes but only {len(blob) - start} remain")
    try:
        header = json.loads(blob[start : start + head_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise HeaderSchemaError(f"header is not valid UTF-8 JSON: {exc}") from None
    _validate_header(header)
    try:
        spec = ArchitectureSpec.from_dict(header["architecture"])
        model = Model(spec, np.float32)
    except (KeyError, TypeError, ValueError) as exc:
        raise HeaderSchemaError(f"invalid architecture: {exc}") from None
    slots = model.param_shapes()
    manifest = [(t.get("layer"), t.get("name"), tuple(t.get("shape", ()))) for t in header["tensors"]]
    _require(manifest == [(i, n, tuple(s)) for i, n, s in slots], "tensor manifest does not match the architecture")

    expected = sum(4 + 4 * len(s) + 4 * int(np.prod(s)) for _, _, s in slots)
    payload = memoryview(blob)[start + head_len :]
    if len(payload) != expected:
        raise PayloadLengthError(expected, len(payload))
    arrays = []
    off = 0
    for i, name, shape in slots:
        (ndim,) = struct.unpack_from("<I", payload, off)
        dims = struct.unpack_from(f"<{ndim}I", payload, off + 4)
        off += 4 + 4 * ndim
        if tuple(dims) != tuple(shape):
            raise HeaderSchemaError(f"layer {i} {name}: payload shape {dims} differs from declared {shape}")
        count = int(np.prod(shape))
        arr = np.frombuffer(payload, dtype="<f4", count=count, offset=off).reshape(shape).astype(np.float32)
        off += 4 * count
        arrays.append(arr)
    model.set_tensors(arrays)
    return header, model


@dataclass(frozen=True)
class InferenceEngine:
    """Frozen scoring pipeline: encode, select, scale (source-fitted bounds), network.

    Weight arrays are read-only and nothing here trains; one engine can serve
    any number of threads.
    """

    model: Model
    schema: ColumnSchema
    encoding: EncodingMap
    selection: FeatureSelection
    scaler: ScalerParams
    metadata: Mapping
    threads: int = 1
    clip: bool = True

    def features(self, records: Sequence[FlowRecord]) -> np.ndarray:
        X, _ = to_matrix(records, self.encoding, self.schema)
        return transform(X, self.selection, self.scaler, clip=self.clip).values

    def score(self, records: Sequence[FlowRecord], threads: int | None = None) -> np.ndarray:
        if len(records) == 0:
            return np.empty(0, dtype=np.float32)
        return predict_proba(self.model, self.features(records), threads=threads or self.threads)

    def load_records(self, path: str | os.PathLike) -> list[FlowRecord]:
        return load_csv(path, self.schema)


def import_bundle(path: str | os.PathLike, threads: int = 1, clip: bool = True) -> InferenceEngine:
    header, model = decode_bundle(Path(path).read_bytes())
    for layer in model.layers:
        for arr in layer.params.values():
            arr.setflags(write=False)
    try:
        schema = ColumnSchema.from_dict(header["schema"])
        encoding = EncodingMap.from_dict(header["encoding"])
        selection = FeatureSelection(tuple(header["selection"]))
        scaler = ScalerParams.from_dict(header["scaler"])
    except (KeyError, TypeError, ValueError) as exc:
        raise HeaderSchemaError(f"invalid pipeline section: {exc}") from None
    return InferenceEngine(model, schema, encoding, selection, scaler, header["metadata"], threads, clip)


def infer(engine: InferenceEngine, records: Sequence[FlowRecord], threshold: float = 0.5, threads: int | None = None):
    """Scores and 0/1 labels for raw records."""
    scores = engine.score(records, threads)
    return scores, classify(scores, threshold)
