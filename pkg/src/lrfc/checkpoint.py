"""Binary model checkpoints: magic, version, JSON metadata, f32 payload.

Layout: 4-byte magic "LRFC", u32 little-endian version, u64 little-endian
metadata length, UTF-8 JSON metadata, then for each entry in metadata
order the parameter values as little-endian float32 in row-major order
(factorized layers store u_k then w_k).  Model parameters live on the
float32 grid, so save -> load -> save is byte-identical and the loaded
model evaluates exactly like the saved one.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .exceptions import ValidationError
from .linalg import TruncatedFactors
from .model import CompressibleModel

MAGIC = b"LRFC"
VERSION = 1
_HEADER = struct.Struct("<4sIQ")


def _payload_entries(model: CompressibleModel):
    for i in range(model.num_layers):
        yield f"w{i + 1}", model.params[f"w{i + 1}"]
        yield f"b{i + 1}", model.params[f"b{i + 1}"]


def _entry_metadata(name: str, value) -> dict:
    if isinstance(value, TruncatedFactors):
        return {
            "name": name,
            "rows": int(value.u_k.shape[0]),
            "cols": int(value.w_k.shape[1]),
            "storage": "factorized",
            "rank": int(value.rank),
        }
    if value.ndim == 1:
        return {"name": name, "rows": 1, "cols": int(value.shape[0]), "storage": "full"}
    return {
        "name": name,
        "rows": int(value.shape[0]),
        "cols": int(value.shape[1]),
        "storage": "full",
    }


def _to_f32_bytes(array: np.ndarray) -> bytes:
    return np.ascontiguousarray(array, dtype="<f4").tobytes()


def model_to_bytes(model: CompressibleModel, dataset_seed: int) -> bytes:
    """Serialize the model plus the seed of the dataset it was trained on."""
    entries = []
    payload = bytearray()
    for name, value in _payload_entries(model):
        entries.append(_entry_metadata(name, value))
        if isinstance(value, TruncatedFactors):
            payload += _to_f32_bytes(value.u_k)
            payload += _to_f32_bytes(value.w_k)
        else:
            payload += _to_f32_bytes(value)
    metadata = {
        "layers": entries,
        "model": {"dims": list(model.dims)},
        "dataset_seed": int(dataset_seed),
    }
    blob = json.dumps(metadata, separators=(",", ":")).encode("utf-8")
    return _HEADER.pack(MAGIC, VERSION, len(blob)) + blob + bytes(payload)


def model_from_bytes(data: bytes) -> tuple[CompressibleModel, dict]:
    """Rebuild a model; raises a validation error on any malformed field."""
    if len(data) < _HEADER.size:
        raise ValidationError("checkpoint truncated before header")
    magic, version, meta_len = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise ValidationError(f"bad checkpoint magic {magic!r}")
    if version != VERSION:
        raise ValidationError(f"unsupported checkpoint version {version}")
    meta_end = _HEADER.size + meta_len
    if len(data) < meta_end:
        raise ValidationError("checkpoint truncated inside metadata")
    try:
        metadata = json.loads(data[_HEADER.size:meta_end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ValidationError(f"unreadable checkpoint metadata: {exc}") from exc
    try:
        dims = tuple(int(d) for d in metadata["model"]["dims"])
        entries = metadata["layers"]
    except (KeyError, TypeError) as exc:
        raise ValidationError(f"incomplete checkpoint metadata: {exc}") from exc

    params: dict = {}
    offset = meta_end
    for entry in entries:
        name = entry["name"]
        rows, cols = int(entry["rows"]), int(entry["cols"])
        if entry["storage"] == "factorized":
            rank = int(entry["rank"])
            u_k, offset = _read_array(data, offset, (rows, rank))
            w_k, offset = _read_array(data, offset, (rank, cols))
            params[name] = TruncatedFactors(rank, u_k, w_k)
        elif rows == 1 and name.startswith("b"):
            vec, offset = _read_array(data, offset, (cols,))
            params[name] = vec
        else:
            mat, offset = _read_array(data, offset, (rows, cols))
            params[name] = mat
    if offset != len(data):
        raise ValidationError(
            f"checkpoint payload length mismatch: {len(data) - meta_end} bytes "
            f"found, {offset - meta_end} implied by metadata"
        )
    model = CompressibleModel(dims=dims, params=params)
    _check_shapes(model)
    return model, metadata


def _read_array(data: bytes, offset: int, shape: tuple[int, ...]):
    count = int(np.prod(shape))
    end = offset + 4 * count
    if end > len(data):
        raise ValidationError("checkpoint payload truncated")
    array = np.frombuffer(data, dtype="<f4", count=count, offset=offset)
    return array.astype(np.float64).reshape(shape), end


def _check_shapes(model: CompressibleModel) -> None:
    for spec in model.layer_specs:
        value = model.params.get(spec.name)
        if value is None:
            raise ValidationError(f"checkpoint missing layer {spec.name!r}")
        if isinstance(value, TruncatedFactors):
            shape = (value.u_k.shape[0], value.w_k.shape[1])
        else:
            shape = value.shape
        if shape != (spec.rows, spec.cols):
            raise ValidationError(
                f"layer {spec.name!r} shape {shape} does not match spec "
                f"({spec.rows}, {spec.cols})"
            )


def save_model(path, model: CompressibleModel, dataset_seed: int) -> None:
    Path(path).write_bytes(model_to_bytes(model, dataset_seed))


def load_model(path) -> tuple[CompressibleModel, dict]:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise ValidationError(f"unreadable checkpoint {path}: {exc}") from exc
    return model_from_bytes(data)
