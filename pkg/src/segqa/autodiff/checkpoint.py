"""Checkpoint files: JSON header plus a little-endian float32 payload.

Layout: magic ``SEGCKPT1``, u64 header length, UTF-8 JSON header, payload.
The header lists every tensor as ``{"name", "shape", "offset"}`` (offset in
float32 elements) alongside free-form metadata.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from ..errors import FormatError

MAGIC = b"SEGCKPT1"


def save_checkpoint(path, tensors: dict[str, np.ndarray], header: dict | None = None) -> None:
    entries, chunks, offset = [], [], 0
    for name, arr in tensors.items():
        a = np.ascontiguousarray(arr, dtype="<f4")
        entries.append({"name": name, "shape": list(a.shape), "offset": offset})
        chunks.append(a.tobytes())
        offset += a.size
    doc = dict(header or {})
    doc["dtype"] = "float32"
    doc["tensors"] = entries
    hb = json.dumps(doc, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(hb)))
        fh.write(hb)
        for c in chunks:
            fh.write(c)


def load_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise FormatError(f"{path}: not a checkpoint file")
    (hlen,) = struct.unpack_from("<Q", raw, 8)
    try:
        header = json.loads(raw[16:16 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: corrupt checkpoint header") from exc
    payload = np.frombuffer(raw, dtype="<f4", offset=16 + hlen)
    tensors = {}
    for e in header["tensors"]:
        n = int(np.prod(e["shape"]))
        if e["offset"] + n > payload.size:
            raise FormatError(f"{path}: tensor {e['name']} truncated")
        tensors[e["name"]] = payload[e["offset"]:e["offset"] + n].reshape(e["shape"]).copy()
    return header, tensors
