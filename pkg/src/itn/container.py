"""Self-describing binary container used for checkpoints and serialized
datasets: an 8-byte magic, a JSON header (kind, metadata, entry table of
name/shape/dtype), then the raw little-endian payloads in table order."""

from __future__ import annotations

import json
import struct

import numpy as np

from .errors import DataFormatError

MAGIC = b"ITNBOX01"
_DTYPES = {"<f8", "<i8"}


def save_container(path, entries: dict, meta: dict, kind: str):
    table = []
    blobs = []
    for name, arr in entries.items():
        arr = np.asarray(arr)
        dt = "<i8" if np.issubdtype(arr.dtype, np.integer) else "<f8"
        arr = arr.astype(dt)
        table.append({"name": name, "shape": list(arr.shape), "dtype": dt})
        blobs.append(np.ascontiguousarray(arr).tobytes())
    header = json.dumps({"kind": kind, "meta": meta, "entries": table},
                        sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<Q", len(header)))
        f.write(header)
        for blob in blobs:
            f.write(blob)


def load_container(path, expected_kind=None):
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:8] != MAGIC:
        raise DataFormatError(f"bad container magic {raw[:8]!r}")
    (hlen,) = struct.unpack_from("<Q", raw, 8)
    if 16 + hlen > len(raw):
        raise DataFormatError("truncated container header")
    header = json.loads(raw[16:16 + hlen].decode())
    kind = header.get("kind")
    if expected_kind is not None and kind != expected_kind:
        raise DataFormatError(f"expected a {expected_kind} container, got {kind}")
    entries = {}
    off = 16 + hlen
    for ent in header["entries"]:
        if ent["dtype"] not in _DTYPES:
            raise DataFormatError(f"unsupported dtype {ent['dtype']}")
        shape = tuple(ent["shape"])
        nbytes = int(np.prod(shape, dtype=np.int64)) * 8
        if off + nbytes > len(raw):
            raise DataFormatError(f"truncated payload for entry {ent['name']}")
        entries[ent["name"]] = np.frombuffer(
            raw, dtype=ent["dtype"], count=int(np.prod(shape, dtype=np.int64)),
            offset=off).reshape(shape).copy()
        off += nbytes
    return kind, header["meta"], entries


def rng_state(gen: np.random.Generator) -> dict:
    return gen.bit_generator.state


def restore_rng(state: dict) -> np.random.Generator:
    bg = np.random.PCG64()
    bg.state = state
    return np.random.Generator(bg)


def save_dataset(path, dataset):
    save_container(path, {"images": dataset.images, "labels": dataset.labels},
                   {"num_classes": dataset.num_classes, "split": dataset.split},
                   kind="dataset")


def load_dataset(path):
    from .data import LabeledDataset
    _, meta, entries = load_container(path, expected_kind="dataset")
    return LabeledDataset(entries["images"], entries["labels"],
                          meta["num_classes"], meta["split"])
