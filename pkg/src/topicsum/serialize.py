"""Checkpoint container: one JSON header line followed by raw tensor bytes.

Layout of a checkpoint file:

    line 1   UTF-8 JSON, newline-terminated:
             {"format_version": 1, "kind": "<artifact kind>",
              "header": {...user metadata...},
              "tensors": [{"name": str, "shape": [int], "offset": int}, ...]}
    bytes    concatenated little-endian float64 buffers, row-major,
             in index order; "offset" counts bytes from the end of line 1.

All tensors are stored as float64 regardless of their in-memory dtype, so
a save/load roundtrip of float64 data is bit-exact.
"""

import json
import hashlib

import numpy as np

FORMAT_VERSION = 1


def write_checkpoint(path, kind: str, header: dict, tensors: dict) -> None:
    """Write named arrays with a versioned JSON header to ``path``."""
    index = []
    buffers = []
    offset = 0
    for name, arr in tensors.items():
        arr = np.ascontiguousarray(arr, dtype=np.float64)
        raw = arr.astype("<f8", copy=False).tobytes()
        index.append({"name": name, "shape": list(arr.shape), "offset": offset})
        buffers.append(raw)
        offset += len(raw)
    head = {
        "format_version": FORMAT_VERSION,
        "kind": kind,
        "header": header,
        "tensors": index,
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(head, sort_keys=True).encode("utf-8"))
        fh.write(b"\n")
        for raw in buffers:
            fh.write(raw)


def read_checkpoint(path, expect_kind: str | None = None):
    """Read a checkpoint; returns ``(kind, header, {name: float64 array})``.

    Every tensor's byte extent is validated against its declared shape.
    """
    with open(path, "rb") as fh:
        first = fh.readline()
        blob = fh.read()
    head = json.loads(first.decode("utf-8"))
    if head.get("format_version") != FORMAT_VERSION:
        raise ValueError(
            f"unsupported checkpoint format_version {head.get('format_version')!r} "
            f"in {path}"
        )
    kind = head["kind"]
    if expect_kind is not None and kind != expect_kind:
        raise ValueError(f"expected a {expect_kind!r} checkpoint, found {kind!r}")
    tensors = {}
    for entry in head["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        end = start + 8 * count
        if end > len(blob):
            raise ValueError(
                f"checkpoint {path} truncated: tensor {entry['name']!r} "
                f"needs bytes [{start}, {end}) of {len(blob)}"
            )
        arr = np.frombuffer(blob[start:end], dtype="<f8").reshape(shape)
        tensors[entry["name"]] = arr.astype(np.float64)
    return kind, head["header"], tensors


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def sha256_text(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def config_digest(obj) -> str:
    """Stable hash of a JSON-serializable config object."""
    return sha256_text(json.dumps(obj, sort_keys=True))
