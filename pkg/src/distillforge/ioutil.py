"""Deterministic JSON serialization shared by model files and run artifacts.

Every artifact this package writes goes through ``canonical_json_bytes`` so
that identical in-memory objects always produce identical bytes (sorted
keys, fixed separators, trailing newline, no timestamps).  Float values use
Python's shortest round-trip repr, so reloaded models predict bit-for-bit
the same.
"""

from __future__ import annotations

import json

import numpy as np


def _plain(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON-serializable: {type(obj)}")


def canonical_json_bytes(obj) -> bytes:
    text = json.dumps(obj, sort_keys=True, indent=1, separators=(",", ": "),
                      default=_plain, allow_nan=False)
    return (text + "\n").encode("utf-8")


def write_json(path, obj) -> None:
    with open(path, "wb") as fh:
        fh.write(canonical_json_bytes(obj))


def read_json(path):
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)
