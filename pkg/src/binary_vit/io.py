"""On-disk formats: single tensors and whole models.

TensorFile layout (all little-endian)::

    offset 0   magic  b"BVT1"
    offset 4   dtype  u8   0 = float32, 1 = packed +-1 bits, 2 = packed 0/1 bits
    offset 5   rank   u8
    offset 6   dims   rank x u64
    then       payload: row-major float32, or for packed tensors each row's
               ceil(cols / 64) u64 words, LSB-first, rows padded independently

A rank-1 packed tensor is a single row. A model is a directory holding
``config.json`` and ``manifest.json`` plus one TensorFile per master tensor;
the manifest pins each file's byte length and SHA-256 so that nothing is
constructed from a truncated or altered save.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
from pathlib import Path

import numpy as np

from .bitpack import BitMatrix, BitVector, Encoding, words_for
from .errors import ConfigError, FormatError
from .model import Model, ModelConfig, param_specs

MAGIC = b"BVT1"
DTYPE_F32 = 0
MODEL_FORMAT = "binary-vit-model"
MODEL_VERSION = 1
_HEADER = struct.Struct("<4sBB")


class UnsupportedDtype(FormatError):
    pass


def encode_tensor(tensor) -> bytes:
    if isinstance(tensor, BitVector):
        return _header(int(tensor.encoding), (tensor.length,)) + tensor.words.astype("<u8").tobytes()
    if isinstance(tensor, BitMatrix):
        return (_header(int(tensor.encoding), (tensor.rows, tensor.cols))
                + tensor.words.astype("<u8").tobytes())
    if isinstance(tensor, np.ndarray) and tensor.dtype == np.float32:
        if tensor.ndim > 255:
            raise UnsupportedDtype("rank above 255 cannot be encoded")
        return _header(DTYPE_F32, tensor.shape) + np.ascontiguousarray(tensor, "<f4").tobytes()
    kind = tensor.dtype if isinstance(tensor, np.ndarray) else type(tensor).__name__
    raise UnsupportedDtype(f"cannot store {kind}; only float32 arrays and packed bits are supported")


def _header(dtype, dims) -> bytes:
    return _HEADER.pack(MAGIC, dtype, len(dims)) + struct.pack(f"<{len(dims)}Q", *dims)


def decode_tensor(data: bytes):
    if len(data) < _HEADER.size:
        raise FormatError("file too short for a tensor header", offset=len(data))
    magic, dtype, rank = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}", offset=0)
    dims_end = _HEADER.size + 8 * rank
    if len(data) < dims_end:
        raise FormatError("truncated dimension list", offset=len(data))
    dims = struct.unpack_from(f"<{rank}Q", data, _HEADER.size)
    payload = memoryview(data)[dims_end:]

    if dtype == DTYPE_F32:
        count = int(np.prod(dims, dtype=np.int64)) if dims else 1
        _expect(len(payload), 4 * count, dims_end)
        return np.frombuffer(payload, dtype="<f4").astype(np.float32).reshape(dims)
    if dtype in (Encoding.PLUS_MINUS, Encoding.ZERO_ONE):
        encoding = Encoding(dtype)
        if rank not in (1, 2):
            raise FormatError(f"packed tensors must have rank 1 or 2, got {rank}", offset=5)
        rows, cols = (1, dims[0]) if rank == 1 else dims
        nwords = words_for(cols)
        _expect(len(payload), 8 * rows * nwords, dims_end)
        words = np.frombuffer(payload, dtype="<u8").astype(np.uint64).reshape(rows, nwords)
        try:
            if rank == 1:
                return BitVector(words[0], cols, encoding)
            return BitMatrix(words, rows, cols, encoding)
        except ValueError as exc:
            raise FormatError(str(exc), offset=dims_end) from None
    raise UnsupportedDtype(f"unknown dtype code {dtype}", offset=4)


def _expect(actual, expected, offset):
    if actual != expected:
        raise FormatError(
            f"payload is {actual} bytes but the header implies {expected}",
            offset=offset + min(actual, expected),
        )


def write_tensor(path, tensor) -> None:
    Path(path).write_bytes(encode_tensor(tensor))


def read_tensor(path):
    return decode_tensor(Path(path).read_bytes())


def _tensor_file(name: str) -> str:
    return name + ".bvt"


def save_model(path, model: Model) -> None:
    """Write ``model`` into directory ``path`` (created if needed)."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    entries = []
    for name, arr in model.params.items():
        blob = encode_tensor(arr)
        (root / _tensor_file(name)).write_bytes(blob)
        entries.append({"name": name, "file": _tensor_file(name), "bytes": len(blob),
                        "sha256": hashlib.sha256(blob).hexdigest()})
    config = {"format": MODEL_FORMAT, "version": MODEL_VERSION, "config": model.cfg.to_dict()}
    (root / "config.json").write_text(json.dumps(config, indent=2, sort_keys=True) + "\n")
    manifest = {"format": MODEL_FORMAT, "version": MODEL_VERSION, "tensors": entries}
    # Manifest last: a save interrupted earlier leaves no loadable model.
    tmp = root / "manifest.json.tmp"
    tmp.write_text(json.dumps(manifest, indent=2) + "\n")
    os.replace(tmp, root / "manifest.json")


def _read_json(path: Path):
    try:
        return json.loads(path.read_text())
    except FileNotFoundError:
        raise FormatError(f"missing {path.name}") from None
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path.name} is not valid JSON: {exc.msg}", offset=exc.pos) from None


def _check_header(doc, what):
    if not isinstance(doc, dict) or doc.get("format") != MODEL_FORMAT:
        raise FormatError(f"{what} is not a {MODEL_FORMAT} file")
    if doc.get("version") != MODEL_VERSION:
        raise FormatError(f"{what} has version {doc.get('version')}, expected {MODEL_VERSION}")


def load_model(path) -> Model:
    root = Path(path)
    config = _read_json(root / "config.json")
    _check_header(config, "config.json")
    try:
        cfg = ModelConfig.from_dict(config["config"])
    except (KeyError, TypeError, ConfigError) as exc:
        raise FormatError(f"bad model config: {exc}") from None
    manifest = _read_json(root / "manifest.json")
    _check_header(manifest, "manifest.json")
    specs = param_specs(cfg)
    entries = manifest.get("tensors", [])
    if [e.get("name") for e in entries] != [name for name, _ in specs]:
        raise FormatError("manifest tensors do not match the model configuration")
    params = {}
    for entry, (name, shape) in zip(entries, specs):
        try:
            blob = (root / entry["file"]).read_bytes()
        except FileNotFoundError:
            raise FormatError(f"missing tensor file {entry['file']}") from None
        if len(blob) != entry["bytes"]:
            raise FormatError(f"{entry['file']} is {len(blob)} bytes, manifest says {entry['bytes']}",
                              offset=min(len(blob), entry["bytes"]))
        if hashlib.sha256(blob).hexdigest() != entry["sha256"]:
            raise FormatError(f"{entry['file']} checksum mismatch")
        arr = decode_tensor(blob)
        if not isinstance(arr, np.ndarray) or arr.shape != shape:
            raise FormatError(f"{name}: stored shape does not match {shape}")
        params[name] = arr
    return Model(cfg, params)
