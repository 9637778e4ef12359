"""
Single-file tensor checkpoints.

Layout:

    bytes 0..8      little-endian uint64 N, the length of the JSON manifest
    bytes 8..8+N    UTF-8 JSON manifest
    bytes 8+N..     raw little-endian float blobs, one per tensor

The manifest records `format`, `dtype` and, per tensor in write order, its
`name`, `shape`, `offset` and `nbytes` (offsets relative to the blob section).
"""

import json
import struct
from collections.abc import Mapping

import numpy as np

from . import storage
from .diffcore import Tensor
from .errors import ContractError

FORMAT_VERSION = 1

_DTYPES = {"float64": "<f8", "float32": "<f4"}


def encode(tensors: Mapping[str, Tensor | np.ndarray], dtype: str = "float64", metadata: dict | None = None) -> bytes:
    if dtype not in _DTYPES:
        raise ContractError(f"checkpoint dtype must be one of {sorted(_DTYPES)}, got {dtype!r}")
    entries = []
    blobs = []
    offset = 0
    for name, value in tensors.items():
        arr = value.data if isinstance(value, Tensor) else np.asarray(value)
        blob = np.ascontiguousarray(arr, dtype=_DTYPES[dtype]).tobytes()
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": len(blob)})
        blobs.append(blob)
        offset += len(blob)
    manifest = {"format": FORMAT_VERSION, "dtype": dtype, "tensors": entries, "metadata": metadata or {}}
    header = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return struct.pack("<Q", len(header)) + header + b"".join(blobs)


def decode(payload: bytes) -> tuple[dict[str, np.ndarray], dict]:
    """Returns (name -> array, manifest). Arrays come back in their stored dtype."""
    if len(payload) < 8:
        raise ContractError("checkpoint is truncated before its manifest length")
    (header_len,) = struct.unpack("<Q", payload[:8])
    try:
        manifest = json.loads(payload[8 : 8 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ContractError("checkpoint manifest is not valid JSON") from exc
    if manifest.get("format") != FORMAT_VERSION:
        raise ContractError(f"unsupported checkpoint format {manifest.get('format')!r}")
    dtype = _DTYPES[manifest["dtype"]]
    blob_start = 8 + header_len
    arrays = {}
    for entry in manifest["tensors"]:
        start = blob_start + entry["offset"]
        end = start + entry["nbytes"]
        if end > len(payload):
            raise ContractError(f"checkpoint blob for {entry['name']!r} is truncated")
        arrays[entry["name"]] = np.frombuffer(payload[start:end], dtype=dtype).reshape(entry["shape"]).copy()
    return arrays, manifest


def save(path: str, tensors: Mapping[str, Tensor | np.ndarray], dtype: str = "float64", metadata: dict | None = None) -> str:
    storage.write_bytes(path, encode(tensors, dtype=dtype, metadata=metadata))
    return path


def load(path: str) -> tuple[dict[str, np.ndarray], dict]:
    return decode(storage.read_bytes(path))


def load_tensors(path: str, requires_grad: bool = False) -> dict[str, Tensor]:
    """Load as float64 Tensors; float32 checkpoints are upcast."""
    arrays, _ = load(path)
    return {name: Tensor(arr, requires_grad=requires_grad, dtype=np.float64) for name, arr in arrays.items()}
