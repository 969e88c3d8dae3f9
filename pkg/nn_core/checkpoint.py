"""
Binary container for checkpoints and uncertainty bundles.

Layout:
    8 bytes   magic b"MSMEQBLB"
    8 bytes   header length, little-endian uint64
    N bytes   header, canonical JSON (sorted keys):
              {"format", "meta", "tensors": [{"name", "shape", "offset", "nbytes"}]}
    payload   little-endian float32 arrays, row-major, back to back

Loading then saving reproduces the file byte for byte.
"""

import json
import struct
from collections import OrderedDict
from pathlib import Path
from typing import Any, Dict, Mapping, Tuple, Union

import numpy as np

from common.errors import MissingArtifactError, ShapeError
from common.run_protocol import canonical_json

MAGIC = b"MSMEQBLB"
BLOB_FORMAT = "msmeq-blob/1"
_LEN = struct.Struct("<Q")


def encode_blob(meta: Mapping[str, Any], arrays: Mapping[str, np.ndarray]) -> bytes:
    tensors = []
    chunks = []
    offset = 0
    for name, value in arrays.items():
        data = np.ascontiguousarray(np.asarray(value, dtype="<f4"))
        raw = data.tobytes(order="C")
        tensors.append({"name": name, "shape": list(data.shape), "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    header = canonical_json({"format": BLOB_FORMAT, "meta": dict(meta), "tensors": tensors}).encode("utf-8")
    return MAGIC + _LEN.pack(len(header)) + header + b"".join(chunks)


def decode_blob(data: bytes) -> Tuple[Dict[str, Any], "OrderedDict[str, np.ndarray]"]:
    if data[: len(MAGIC)] != MAGIC:
        raise ShapeError("not a checkpoint/bundle file (bad magic)")
    (length,) = _LEN.unpack_from(data, len(MAGIC))
    start = len(MAGIC) + _LEN.size
    header = json.loads(data[start : start + length].decode("utf-8"))
    if header.get("format") != BLOB_FORMAT:
        raise ShapeError("unsupported blob format", format=header.get("format"))
    payload = memoryview(data)[start + length :]
    arrays: "OrderedDict[str, np.ndarray]" = OrderedDict()
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        if entry["nbytes"] != 4 * count:
            raise ShapeError("tensor byte count does not match shape", name=entry["name"])
        chunk = payload[entry["offset"] : entry["offset"] + entry["nbytes"]]
        arrays[entry["name"]] = np.frombuffer(chunk, dtype="<f4").reshape(shape).astype(np.float64)
    return header["meta"], arrays


def write_blob(path: Union[str, Path], meta: Mapping[str, Any], arrays: Mapping[str, np.ndarray]) -> bytes:
    blob = encode_blob(meta, arrays)
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_bytes(blob)
    return blob


def read_blob(path: Union[str, Path]) -> Tuple[Dict[str, Any], "OrderedDict[str, np.ndarray]"]:
    p = Path(path)
    if not p.exists():
        raise MissingArtifactError(str(p))
    return decode_blob(p.read_bytes())


def to_float32_precision(values: np.ndarray) -> np.ndarray:
    """Round float64 values to what a checkpoint stores (exactly representable in float32)."""
    return np.asarray(values, dtype=np.float32).astype(np.float64)
