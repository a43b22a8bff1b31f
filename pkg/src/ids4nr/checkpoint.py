"""Binary checkpoints.

Layout: 8-byte magic, little-endian uint32 version, uint32 header length, a
UTF-8 JSON header, then the raw little-endian arrays it describes.  The
header records the training config, every parameter's name/section/shape,
the optimizer step and a CRC-32 of the payload.
"""

from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np

from .errors import CorruptCheckpoint, MissingFile
from .params import ParamLayout, ParamSpec
from .trainer import FeatureTables, ModelState, TrainConfig

MAGIC = b"IDS4NRCK"
VERSION = 1
_PREFIX = struct.Struct("<8sII")


def _le(a):
    a = np.ascontiguousarray(a)
    return a.astype(a.dtype.newbyteorder("<"), copy=False)


def save_checkpoint(model: ModelState, path, extra=None):
    arrays = {"theta": model.theta, "adam_m": model.m, "adam_v": model.v}
    arrays.update({f"features/{k}": v for k, v in model.features.arrays().items()})
    entries, chunks, offset = [], [], 0
    for name, arr in arrays.items():
        arr = _le(arr)
        raw = arr.tobytes()
        entries.append({"name": name, "dtype": arr.dtype.str, "shape": list(arr.shape),
                        "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    payload = b"".join(chunks)
    header = {
        "config": model.config.to_dict(),
        "step": model.step,
        "params": [{"name": s.name, "section": s.section, "shape": list(s.shape)}
                   for s in model.layout],
        "arrays": entries,
        "crc32": zlib.crc32(payload),
        "extra": extra or {},
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(_PREFIX.pack(MAGIC, VERSION, len(blob)))
        f.write(blob)
        f.write(payload)


def read_header(path):
    path = Path(path)
    if not path.is_file():
        raise MissingFile(path)
    data = path.read_bytes()
    if len(data) < _PREFIX.size:
        raise CorruptCheckpoint(f"{path}: truncated")
    magic, version, n = _PREFIX.unpack_from(data)
    if magic != MAGIC:
        raise CorruptCheckpoint(f"{path}: not an ids4nr checkpoint")
    if version != VERSION:
        raise CorruptCheckpoint(f"{path}: unsupported version {version}")
    try:
        header = json.loads(data[_PREFIX.size:_PREFIX.size + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError):
        raise CorruptCheckpoint(f"{path}: unreadable header") from None
    return header, data[_PREFIX.size + n:]


def load_checkpoint(path) -> ModelState:
    header, payload = read_header(path)
    try:
        if zlib.crc32(payload) != header["crc32"]:
            raise CorruptCheckpoint(f"{path}: checksum mismatch")
        arrays = {}
        for e in header["arrays"]:
            end = e["offset"] + e["nbytes"]
            if end > len(payload):
                raise CorruptCheckpoint(f"{path}: truncated payload")
            arr = np.frombuffer(payload[e["offset"]:end], dtype=np.dtype(e["dtype"]))
            arrays[e["name"]] = arr.reshape(e["shape"]).astype(arr.dtype.newbyteorder("="))
        layout = ParamLayout(ParamSpec(p["name"], p["section"], tuple(p["shape"]))
                             for p in header["params"])
        config = TrainConfig.from_dict(header["config"])
        feats = FeatureTables(**{k[len("features/"):]: v for k, v in arrays.items()
                                 if k.startswith("features/")})
        if arrays["theta"].shape != (layout.size,):
            raise CorruptCheckpoint(f"{path}: parameter buffer does not match its layout")
        return ModelState(config, layout, arrays["theta"], feats, arrays["adam_m"],
                          arrays["adam_v"], int(header["step"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise CorruptCheckpoint(f"{path}: {exc}") from None
