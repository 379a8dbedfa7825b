"""Weights as a flat binary blob behind a JSON header; datasets as JSON lines.

Weight file layout: ``b"ABWM"``, little-endian uint32 header length, UTF-8
JSON header, then every tensor's raw little-endian bytes in header order.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from ..core import AbstractTransition, Vocabulary
from .network import GenerativeModel, ParametricModel

MAGIC = b"ABWM"
FORMAT_VERSION = 1
_KINDS = {"parametric": ParametricModel, "generative": GenerativeModel}


def save_weights(model, path, step: int = 0) -> None:
    tensors = []
    offset = 0
    blobs = []
    for name, arr in model.params.items():
        data = np.ascontiguousarray(arr, dtype=arr.dtype.newbyteorder("<")).tobytes()
        tensors.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": len(data)})
        offset += len(data)
        blobs.append(data)
    header = {
        "format_version": FORMAT_VERSION,
        "kind": model.kind,
        "dtype": model.dtype.str.lstrip("<>|="),
        "hidden": model.hidden,
        "heads": model.heads,
        "items_per_behaviour": model.items_per_behaviour,
        "identities": list(model.vocab.identities),
        "attributes": list(model.vocab.attributes),
        "seed": int(model.seed),
        "step": int(step),
        "tensors": tensors,
    }
    raw = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(raw)))
        fh.write(raw)
        for b in blobs:
            fh.write(b)


def read_header(path) -> dict:
    with open(path, "rb") as fh:
        if fh.read(4) != MAGIC:
            raise ValueError(f"{path} is not a weight file")
        (n,) = struct.unpack("<I", fh.read(4))
        return json.loads(fh.read(n))


def load_weights(path):
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise ValueError(f"{path} is not a weight file")
    (n,) = struct.unpack("<I", data[4:8])
    header = json.loads(data[8:8 + n])
    body = data[8 + n:]
    cls = _KINDS[header["kind"]]
    vocab = Vocabulary(tuple(header["identities"]), tuple(header["attributes"]))
    dtype = np.dtype(header["dtype"]).newbyteorder("<")
    model = cls(vocab, header["items_per_behaviour"], header["hidden"], header["seed"], np.dtype(header["dtype"]),
                header.get("heads", 1))
    params = {}
    for t in header["tensors"]:
        chunk = body[t["offset"]: t["offset"] + t["nbytes"]]
        params[t["name"]] = np.frombuffer(chunk, dtype=dtype).reshape(t["shape"]).astype(model.dtype)
    model.params = params
    model.touch()
    return model


def save_dataset(transitions, path) -> int:
    with open(path, "w") as fh:
        for t in transitions:
            fh.write(json.dumps(t.to_record(), separators=(",", ":")) + "\n")
    return len(transitions)


def load_dataset(path) -> list[AbstractTransition]:
    with open(path) as fh:
        return [AbstractTransition.from_record(json.loads(line)) for line in fh if line.strip()]
