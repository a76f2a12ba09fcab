"""JSON checkpoints: {"config", "params": [...], "running_stats": [...]}.

Floats are written with Python's shortest round-trip repr, so loading
reproduces every float64 bit for bit.
"""

from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path

import numpy as np


class CheckpointError(ValueError):
    pass


def atomic_write_text(path, text: str) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent or ".")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def checkpoint_document(config: dict, params, batchnorms, extra: dict | None = None) -> dict:
    doc = {
        "config": config,
        "params": [
            {"name": p.name, "shape": list(p.shape), "values": p.values.reshape(-1).tolist()} for p in params
        ],
        "running_stats": [
            {"name": bn.name, "mean": bn.running_mean.tolist(), "var": bn.running_var.tolist()}
            for bn in batchnorms
        ],
    }
    if extra:
        doc.update(extra)
    return doc


def save_checkpoint(path, config: dict, params, batchnorms, extra: dict | None = None) -> None:
    doc = checkpoint_document(config, params, batchnorms, extra)
    atomic_write_text(path, json.dumps(doc, allow_nan=False))


def read_checkpoint(path) -> dict:
    text = Path(path).read_text(encoding="utf-8")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path}: malformed JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    for key in ("config", "params", "running_stats"):
        if key not in doc:
            raise CheckpointError(f"{path}: missing key {key!r}")
    return doc


def restore_state(doc: dict, params, batchnorms) -> None:
    """Copy checkpoint values into already-constructed tensors, checking names and shapes."""
    by_name = {entry["name"]: entry for entry in doc["params"]}
    for p in params:
        entry = by_name.pop(p.name, None)
        if entry is None:
            raise CheckpointError(f"checkpoint has no values for parameter {p.name!r}")
        if tuple(entry["shape"]) != p.shape:
            raise CheckpointError(f"{p.name}: checkpoint shape {entry['shape']} != model shape {list(p.shape)}")
        values = np.asarray(entry["values"], dtype=np.float64)
        if values.size != p.size:
            raise CheckpointError(f"{p.name}: expected {p.size} values, found {values.size}")
        p.values[...] = values.reshape(p.shape)
    if by_name:
        raise CheckpointError(f"checkpoint has unknown parameters: {sorted(by_name)}")
    stats = {entry["name"]: entry for entry in doc["running_stats"]}
    for bn in batchnorms:
        entry = stats.get(bn.name)
        if entry is None:
            raise CheckpointError(f"checkpoint has no running stats for {bn.name!r}")
        bn.running_mean = np.asarray(entry["mean"], dtype=np.float64)
        bn.running_var = np.asarray(entry["var"], dtype=np.float64)
        if bn.running_mean.shape != (bn.dim,) or bn.running_var.shape != (bn.dim,):
            raise CheckpointError(f"{bn.name}: running stats have the wrong width")
