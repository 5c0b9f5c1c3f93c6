"""Binary clip container: one format for video, mask, latent and id-cache
artifacts. Little-endian throughout; the payload carries a trailing CRC32.

Layout: magic "VPCL" | version u16 | kind u8 | rank u8 | extents u32*rank |
fps f32 | payload (f32, or u8 for masks) | crc32 u32.

For id caches the extents are (n_layers, 2, Lid, d_model) and the fps slot
carries the producing clip's index.
"""

import struct
import zlib

import numpy as np

from .codec import LatentClip, MaskClip, VideoClip
from .resample import IdCache

MAGIC = b"VPCL"
VERSION = 1
KIND_VIDEO = 0
KIND_MASK = 1
KIND_LATENT = 2
KIND_IDCACHE = 3


class ContainerError(ValueError):
    """Malformed or corrupt container file."""


def _write(path, kind, array, fps):
    arr = np.ascontiguousarray(array)
    if kind == KIND_MASK:
        arr = arr.astype("<u1")
    else:
        arr = arr.astype("<f4")
    payload = arr.tobytes()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<HBB", VERSION, kind, arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        fh.write(struct.pack("<f", float(fps)))
        fh.write(payload)
        fh.write(struct.pack("<I", zlib.crc32(payload) & 0xFFFFFFFF))


def _read(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC:
        raise ContainerError(f"{path}: bad magic")
    version, kind, rank = struct.unpack_from("<HBB", blob, 4)
    if version != VERSION:
        raise ContainerError(f"{path}: unsupported version {version}")
    off = 8
    extents = struct.unpack_from(f"<{rank}I", blob, off)
    off += 4 * rank
    (fps,) = struct.unpack_from("<f", blob, off)
    off += 4
    elem = 1 if kind == KIND_MASK else 4
    count = int(np.prod(extents)) if rank else 1
    payload = blob[off:off + count * elem]
    if len(payload) != count * elem:
        raise ContainerError(f"{path}: truncated payload")
    (crc,) = struct.unpack_from("<I", blob, off + count * elem)
    if crc != (zlib.crc32(payload) & 0xFFFFFFFF):
        raise ContainerError(f"{path}: CRC mismatch")
    dtype = "<u1" if kind == KIND_MASK else "<f4"
    arr = np.frombuffer(payload, dtype=dtype).reshape(extents)
    return kind, arr.copy(), fps


def save_video(path, clip: VideoClip):
    _write(path, KIND_VIDEO, clip.frames, clip.fps)


def save_mask(path, mask: MaskClip, fps=0.0):
    _write(path, KIND_MASK, mask.frames, fps)


def save_latent(path, latent: LatentClip):
    _write(path, KIND_LATENT, latent.data, latent.fps)


def save_idcache(path, cache: IdCache):
    _write(path, KIND_IDCACHE, cache.to_array(), float(cache.clip_id))


def load(path):
    """Load any container; returns the matching domain object."""
    kind, arr, fps = _read(path)
    if kind == KIND_VIDEO:
        return VideoClip(arr, fps=fps)
    if kind == KIND_MASK:
        return MaskClip(arr)
    if kind == KIND_LATENT:
        return LatentClip(arr, fps=fps)
    if kind == KIND_IDCACHE:
        return IdCache.from_array(arr, clip_id=int(fps))
    raise ContainerError(f"{path}: unknown kind {kind}")


def load_video(path) -> VideoClip:
    obj = load(path)
    if not isinstance(obj, VideoClip):
        raise ContainerError(f"{path}: expected a video container")
    return obj


def load_mask(path) -> MaskClip:
    obj = load(path)
    if not isinstance(obj, MaskClip):
        raise ContainerError(f"{path}: expected a mask container")
    return obj


def export_ppm_sequence(clip: VideoClip, out_dir):
    """Write frames as binary P6 PPM files for eyeballing."""
    import os

    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for t in range(clip.num_frames):
        frame = (np.clip(clip.frames[t], 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
        h, w = frame.shape[1:]
        path = os.path.join(out_dir, f"frame_{t:05d}.ppm")
        with open(path, "wb") as fh:
            fh.write(f"P6\n{w} {h}\n255\n".encode())
            fh.write(frame.transpose(1, 2, 0).tobytes())
        paths.append(path)
    return paths
