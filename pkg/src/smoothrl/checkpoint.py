"""Parameter checkpoint container.

A checkpoint is a JSON document holding a flat list of named float64
tensors (row-major) plus an open metadata mapping::

    {
      "format_version": 1,
      "meta": {...},
      "tensors": [
        {"name": "policy/l0.W", "shape": [3, 64], "data": [..row-major..]},
        ...
      ]
    }

Python's JSON float encoding uses repr, which round-trips IEEE doubles
exactly, so save/load is bit-faithful.  The format is append-only versioned:
readers reject versions they do not know.
"""

import json
import os
import tempfile

import numpy as np

FORMAT_VERSION = 1


def save_checkpoint(path, tensors, meta=None):
    """Write named arrays to ``path`` atomically."""
    doc = {
        "format_version": FORMAT_VERSION,
        "meta": dict(meta or {}),
        "tensors": [
            {
                "name": name,
                "shape": list(np.asarray(arr).shape),
                "data": np.asarray(arr, dtype=np.float64).ravel().tolist(),
            }
            for name, arr in tensors.items()
        ],
    }
    atomic_write_text(path, json.dumps(doc))


def load_checkpoint(path):
    """Read a checkpoint; returns (tensors: dict[str, ndarray], meta: dict)."""
    with open(path) as fh:
        doc = json.load(fh)
    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint format_version: {version!r}")
    tensors = {}
    for entry in doc["tensors"]:
        arr = np.asarray(entry["data"], dtype=np.float64).reshape(entry["shape"])
        tensors[entry["name"]] = arr
    return tensors, doc.get("meta", {})


def atomic_write_text(path, text):
    """Write via a temp file + rename so readers never see partial files."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
