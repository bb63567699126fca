"""Checkpoint and trace persistence.

Ensemble checkpoints are flat binary: magic "MFLB", version u32, space tag
u32 (0 = euclidean, 1 = sphere), m u32, columns u32, then row-major little-
endian float64 weights, plus a JSON sidecar with run parameters.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Optional

import numpy as np

from .net import ParticleEnsemble

MAGIC = b"MFLB"
VERSION = 1
_SPACE_TAGS = {"euclidean": 0, "sphere": 1}
_TAG_SPACES = {v: k for k, v in _SPACE_TAGS.items()}


class CheckpointError(ValueError):
    pass


def save_ensemble(ensemble: ParticleEnsemble, path: str | Path,
                  meta: Optional[dict] = None) -> None:
    path = Path(path)
    m, cols = ensemble.weights.shape
    header = MAGIC + struct.pack("<IIII", VERSION, _SPACE_TAGS[ensemble.space], m, cols)
    body = np.ascontiguousarray(ensemble.weights, dtype="<f8").tobytes()
    path.write_bytes(header + body)
    path.with_suffix(path.suffix + ".json").write_text(
        json.dumps(meta or {}, indent=2, sort_keys=True))


def format_float(x: float) -> str:
    """Shortest round-trip decimal form; integers stay integral ('3.0')."""
    return repr(float(x))


def write_trace(records, path: str | Path) -> None:
    """Trace CSV: RFC-4180, LF line endings, round-trip float formatting."""
    from .euclidean import TraceRecord
    lines = [",".join(TraceRecord.COLUMNS)]
    for rec in records:
        step, *rest = rec.astuple()
        lines.append(",".join([str(step)] + [format_float(v) for v in rest]))
    Path(path).write_bytes(("\n".join(lines) + "\n").encode())


def read_trace(path: str | Path):
    from .euclidean import TraceRecord
    text = Path(path).read_text()
    lines = text.strip().split("\n")
    if lines[0] != ",".join(TraceRecord.COLUMNS):
        raise CheckpointError(f"unexpected trace header in {path}")
    records = []
    for line in lines[1:]:
        parts = line.split(",")
        records.append(TraceRecord(int(parts[0]), *map(float, parts[1:])))
    return records


def load_ensemble(path: str | Path) -> tuple[ParticleEnsemble, dict]:
    path = Path(path)
    raw = path.read_bytes()
    if raw[:4] != MAGIC:
        raise CheckpointError(f"{path} is not an ensemble checkpoint")
    version, tag, m, cols = struct.unpack("<IIII", raw[4:20])
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    if tag not in _TAG_SPACES:
        raise CheckpointError(f"unknown space tag {tag}")
    expected = 20 + 8 * m * cols
    if len(raw) != expected:
        raise CheckpointError(f"truncated checkpoint: {len(raw)} bytes, expected {expected}")
    weights = np.frombuffer(raw[20:], dtype="<f8").reshape(m, cols).copy()
    sidecar = path.with_suffix(path.suffix + ".json")
    meta = json.loads(sidecar.read_text()) if sidecar.exists() else {}
    return ParticleEnsemble(_TAG_SPACES[tag], weights), meta
