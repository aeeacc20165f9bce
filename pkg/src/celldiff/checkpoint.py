"""Checkpoint files: text header (name, shape, offset) + flat float64 blob.

The binary section stores little-endian float64 values back to back; the
header records, per entry, its name, comma-separated shape, and element
offset into the blob.  Round trips are bit exact.
"""

from __future__ import annotations

import json

import numpy as np

MAGIC = "#celldiff-checkpoint v1"


class CheckpointError(IOError):
    pass


def save_checkpoint(path, arrays, extra=None):
    """Write named float64 arrays plus a JSON `extra` dict."""
    header_lines = [MAGIC, "#extra " + json.dumps(extra or {}, sort_keys=True)]
    offset = 0
    blobs = []
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name], dtype=np.float64)
        shape = ",".join(str(s) for s in arr.shape) or "scalar"
        header_lines.append(f"{name}\t{shape}\t{offset}")
        offset += arr.size
        blobs.append(arr)
    header_lines.append("#end")
    with open(path, "wb") as fh:
        fh.write(("\n".join(header_lines) + "\n").encode("utf-8"))
        for arr in blobs:
            fh.write(arr.astype("<f8").tobytes())


def load_checkpoint(path):
    """Returns (arrays dict, extra dict)."""
    with open(path, "rb") as fh:
        raw = fh.read()
    end_marker = b"#end\n"
    split = raw.find(end_marker)
    if split < 0 or not raw.startswith(MAGIC.encode("utf-8")):
        raise CheckpointError(f"not a checkpoint file: {path}")
    header = raw[:split].decode("utf-8").splitlines()
    blob = np.frombuffer(raw[split + len(end_marker):], dtype="<f8")
    extra = {}
    entries = []
    for line in header[1:]:
        if line.startswith("#extra "):
            extra = json.loads(line[len("#extra "):])
            continue
        name, shape_s, offset_s = line.split("\t")
        shape = () if shape_s == "scalar" else tuple(
            int(s) for s in shape_s.split(","))
        entries.append((name, shape, int(offset_s)))
    arrays = {}
    for name, shape, offset in entries:
        n = int(np.prod(shape)) if shape else 1
        arrays[name] = blob[offset:offset + n].reshape(shape).astype(np.float64)
    return arrays, extra
