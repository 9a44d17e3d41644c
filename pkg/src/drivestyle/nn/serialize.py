"""Versioned JSON weight container: an ordered list of (name, shape, values).

Python's float repr round-trips every double exactly, so save/load is
bit-exact.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..errors import DataError

FORMAT = "drivestyle-weights"
VERSION = 1


def dump_weights(state) -> dict:
    return {
        "format": FORMAT,
        "version": VERSION,
        "tensors": [
            {"name": name, "shape": list(arr.shape), "values": [float(v) for v in np.asarray(arr).ravel()]}
            for name, arr in state.items()
        ],
    }


def parse_weights(doc: dict) -> dict:
    if doc.get("format") != FORMAT:
        raise DataError(f"not a weight container (format={doc.get('format')!r})")
    if doc.get("version") != VERSION:
        raise DataError(f"unsupported weight container version {doc.get('version')!r}")
    state = {}
    for entry in doc["tensors"]:
        values = np.array(entry["values"], dtype=np.float64)
        shape = tuple(entry["shape"])
        if values.size != int(np.prod(shape)):
            raise DataError(f"tensor {entry['name']} has {values.size} values for shape {shape}")
        state[entry["name"]] = values.reshape(shape)
    return state


def save_weights(state, path) -> None:
    Path(path).write_text(json.dumps(dump_weights(state)))


def load_weights(path) -> dict:
    return parse_weights(json.loads(Path(path).read_text()))
