"""Flat binary checkpoints: JSON header + named float32 payloads.

Layout: 8-byte magic, uint32 format version, uint64 header length, UTF-8
JSON header, then per entry a length-prefixed name, ndim, uint32 shape,
and little-endian float32 data. Parameters and buffers share one
namespace keyed by dotted module paths.
"""

from __future__ import annotations

import json
import struct
from typing import Dict, Tuple

import numpy as np

from .errors import CompatibilityError, ContractError
from .nn import Module

CKPT_MAGIC = b"PAVSCKPT"
FORMAT_VERSION = 1


def _entries(model: Module) -> Dict[str, np.ndarray]:
    out: Dict[str, np.ndarray] = {}
    for name, p in model.named_parameters():
        out[name] = p.data
    for name, b in model.named_buffers():
        out[name] = b
    return out


def save_checkpoint(path: str, model: Module, hyperparams: dict) -> None:
    entries = _entries(model)
    header = {"format_version": FORMAT_VERSION, "hyperparams": hyperparams,
              "entry_count": len(entries)}
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for name, arr in entries.items():
            nm = name.encode("utf-8")
            arr32 = np.ascontiguousarray(arr, dtype="<f4")
            fh.write(struct.pack("<H", len(nm)))
            fh.write(nm)
            fh.write(struct.pack("<B", arr32.ndim))
            fh.write(struct.pack(f"<{arr32.ndim}I", *arr32.shape))
            fh.write(arr32.tobytes())


def load_checkpoint(path: str) -> Tuple[dict, Dict[str, np.ndarray]]:
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != CKPT_MAGIC:
            raise ContractError(f"bad checkpoint magic {magic!r}")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != FORMAT_VERSION:
            raise CompatibilityError(
                f"checkpoint format {version}, reader supports {FORMAT_VERSION}")
        (hlen,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(hlen).decode("utf-8"))
        entries: Dict[str, np.ndarray] = {}
        for _ in range(header["entry_count"]):
            (nlen,) = struct.unpack("<H", fh.read(2))
            name = fh.read(nlen).decode("utf-8")
            (ndim,) = struct.unpack("<B", fh.read(1))
            shape = struct.unpack(f"<{ndim}I", fh.read(4 * ndim))
            count = int(np.prod(shape)) if ndim else 1
            entries[name] = np.frombuffer(
                fh.read(4 * count), dtype="<f4").reshape(shape).copy()
    return header, entries


def restore_model(model: Module, entries: Dict[str, np.ndarray]) -> None:
    """Load saved arrays into a freshly built model, strict on names/shapes."""
    have = _entries(model)
    missing = sorted(set(have) - set(entries))
    extra = sorted(set(entries) - set(have))
    if missing or extra:
        raise CompatibilityError(
            f"checkpoint mismatch; missing {missing[:4]}, unexpected {extra[:4]}")
    for name, p in model.named_parameters():
        saved = entries[name]
        if tuple(saved.shape) != tuple(p.data.shape):
            raise CompatibilityError(
                f"{name}: checkpoint shape {saved.shape} vs model {p.data.shape}")
        p.data = saved.astype(p.data.dtype)
    for name, buf in model.named_buffers():
        saved = entries[name]
        if tuple(saved.shape) != tuple(buf.shape):
            raise CompatibilityError(
                f"{name}: checkpoint shape {saved.shape} vs buffer {buf.shape}")
        buf[...] = saved.astype(buf.dtype)
