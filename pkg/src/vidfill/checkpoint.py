"""Model checkpoints: a JSON header (config, stage, parameter table) plus a
single float32 blob with a trailing CRC32. Byte-deterministic for identical
models, so golden-file comparisons work."""

import json
import struct
import zlib
from dataclasses import asdict

import numpy as np

from .backbone import BackboneConfig
from .model import ModelConfig, VideoInpainter

MAGIC = b"VPCK"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, model: VideoInpainter, stage=0, extra=None):
    params = model.named_parameters()
    header = {
        "config": _config_dict(model.cfg),
        "stage": stage,
        "extra": extra or {},
        "params": [{"name": n, "shape": list(t.shape)} for n, t in params],
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    payload = b"".join(np.ascontiguousarray(t.data, dtype="<f4").tobytes() for _, t in params)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<HI", VERSION, len(header_bytes)))
        fh.write(header_bytes)
        fh.write(payload)
        fh.write(struct.pack("<I", zlib.crc32(payload) & 0xFFFFFFFF))


def load_checkpoint(path):
    """Rebuild the model from a checkpoint; returns (model, stage, extra)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic")
    version, hlen = struct.unpack_from("<HI", blob, 4)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    header = json.loads(blob[10:10 + hlen].decode("utf-8"))
    payload = blob[10 + hlen:-4]
    (crc,) = struct.unpack_from("<I", blob, len(blob) - 4)
    if crc != (zlib.crc32(payload) & 0xFFFFFFFF):
        raise CheckpointError(f"{path}: CRC mismatch")

    cfg = _config_from_dict(header["config"])
    model = VideoInpainter(cfg)
    params = dict(model.named_parameters())
    off = 0
    for spec in header["params"]:
        name, shape = spec["name"], tuple(spec["shape"])
        if name not in params:
            raise CheckpointError(f"{path}: unknown parameter {name}")
        t = params[name]
        if tuple(t.shape) != shape:
            raise CheckpointError(f"{path}: shape mismatch for {name}")
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(payload, dtype="<f4", count=count, offset=off)
        t.data = arr.reshape(shape).astype(np.float32).copy()
        off += count * 4
    if off != len(payload):
        raise CheckpointError(f"{path}: payload size mismatch")
    return model, header["stage"], header.get("extra", {})


def _config_dict(cfg: ModelConfig):
    d = asdict(cfg)
    return d


def _config_from_dict(d):
    bb = BackboneConfig(**d.pop("backbone"))
    return ModelConfig(backbone=bb, **d)
