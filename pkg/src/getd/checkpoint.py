"""Binary model checkpoints with a JSON sidecar.

Layout: magic ``GETDCKPT``, uint32 format version, uint64 header length,
UTF-8 JSON header, then each parameter array as little-endian float64 in
header order. ``<path>.json`` repeats the header for inspection.
"""

from __future__ import annotations

import json
import math
import struct
from pathlib import Path

import numpy as np

from .errors import DataError
from .models import KBModel, model_from_arrays

MAGIC = b"GETDCKPT"
FORMAT_VERSION = 1


def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def save_checkpoint(m: KBModel, path, extra: dict | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    params = m.parameters()
    header = {
        "format_version": FORMAT_VERSION,
        **m.header(),
        "arrays": [{"name": k, "shape": list(v.shape)} for k, v in params.items()],
    }
    if extra:
        header["extra"] = extra
    blob = json.dumps(header).encode("utf-8")
    with path.open("wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", FORMAT_VERSION, len(blob)))
        fh.write(blob)
        for v in params.values():
            fh.write(np.ascontiguousarray(v, dtype="<f8").tobytes())
    sidecar_path(path).write_text(json.dumps(header, indent=2), encoding="utf-8")
    return path


def read_header(path) -> dict:
    with Path(path).open("rb") as fh:
        return _read_header(fh, path)


def _read_header(fh, path) -> dict:
    if fh.read(len(MAGIC)) != MAGIC:
        raise DataError(f"{path} is not a getd checkpoint")
    version, n = struct.unpack("<IQ", fh.read(12))
    if version != FORMAT_VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {version}")
    return json.loads(fh.read(n).decode("utf-8"))


def load_checkpoint(path) -> tuple[KBModel, dict]:
    path = Path(path)
    with path.open("rb") as fh:
        header = _read_header(fh, path)
        arrays = {}
        for spec in header["arrays"]:
            count = math.prod(spec["shape"])
            raw = fh.read(8 * count)
            if len(raw) != 8 * count:
                raise DataError(f"{path}: truncated array {spec['name']}")
            arrays[spec["name"]] = np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(spec["shape"])
    return model_from_arrays(header, arrays), header
