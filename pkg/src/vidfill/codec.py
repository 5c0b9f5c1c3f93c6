"""Pixel/latent conversion: a fixed linear patch-mean codec, mask
downsampling via Catmull-Rom resampling, and masked-video construction.

The codec is training-free: per frame, each s-by-s patch is mean-pooled per
RGB channel, shifted to [-1, 1], and lifted to 4 latent channels through a
fixed orthonormal map. decode() inverts the lift and nearest-neighbor
upsamples. On s-blockwise-constant inputs the roundtrip is exact.
"""

from dataclasses import dataclass, field

import numpy as np

MASK_FILL = 0.5  # pixel fill for masked regions; maps to 0 in latent space

# 4x3 with orthonormal columns; column sums are 1, so an all-(-1) latent
# decodes below the [0,1] clamp in every pixel channel.
CHANNEL_LIFT = np.array(
    [
        [5.0 / 6.0, -1.0 / 6.0, -1.0 / 6.0],
        [-1.0 / 6.0, 5.0 / 6.0, -1.0 / 6.0],
        [-1.0 / 6.0, -1.0 / 6.0, 5.0 / 6.0],
        [0.5, 0.5, 0.5],
    ],
    dtype=np.float64,
)
_LIFT_SCALE = 1.0 / np.sqrt(3.0)  # keeps encoded values inside [-1, 1]


@dataclass
class VideoClip:
    """T x 3 x H x W pixel frames in [0, 1]."""

    frames: np.ndarray
    fps: float = 10.0

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float32)
        if self.frames.ndim != 4 or self.frames.shape[0] < 1 or self.frames.shape[1] != 3:
            raise ValueError(f"VideoClip expects (T,3,H,W), got {self.frames.shape}")
        if self.frames.min() < 0.0 or self.frames.max() > 1.0:
            raise ValueError("VideoClip values must lie in [0, 1]")

    @property
    def num_frames(self):
        return self.frames.shape[0]


@dataclass
class MaskClip:
    """T x 1 x H x W binary masks; 1 marks the region to inpaint."""

    frames: np.ndarray

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.uint8)
        if self.frames.ndim != 4 or self.frames.shape[1] != 1:
            raise ValueError(f"MaskClip expects (T,1,H,W), got {self.frames.shape}")
        if not np.isin(self.frames, (0, 1)).all():
            raise ValueError("MaskClip values must be 0 or 1")

    @property
    def num_frames(self):
        return self.frames.shape[0]


@dataclass
class LatentClip:
    """T x C' x H' x W' latent values produced by the codec."""

    data: np.ndarray
    spatial_factor: int = 2
    fps: float = 10.0

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float32)
        if self.data.ndim != 4:
            raise ValueError(f"LatentClip expects rank 4, got {self.data.shape}")

    @property
    def channels(self):
        return self.data.shape[1]


class LatentCodec:
    """Fixed linear stand-in for a VAE; pure and deterministic."""

    def __init__(self, spatial_factor=2, channels=4):
        if channels != CHANNEL_LIFT.shape[0]:
            raise ValueError(f"codec supports {CHANNEL_LIFT.shape[0]} latent channels, got {channels}")
        if spatial_factor < 1:
            raise ValueError("spatial_factor must be >= 1")
        self.s = int(spatial_factor)
        self.channels = channels

    def encode(self, clip: VideoClip) -> LatentClip:
        s = self.s
        t, c, h, w = clip.frames.shape
        if h % s or w % s:
            raise ValueError(f"frame extents {h}x{w} not divisible by spatial factor {s}")
        pooled = clip.frames.reshape(t, c, h // s, s, w // s, s).mean(axis=(3, 5), dtype=np.float64)
        y = 2.0 * pooled - 1.0
        z = np.einsum("ck,tkhw->tchw", CHANNEL_LIFT * _LIFT_SCALE, y)
        return LatentClip(z.astype(np.float32), spatial_factor=s, fps=clip.fps)

    def decode(self, latent: LatentClip) -> VideoClip:
        s = self.s
        z = latent.data.astype(np.float64)
        y = np.einsum("kc,tkhw->tchw", CHANNEL_LIFT / _LIFT_SCALE, z)
        pixels = np.clip((y + 1.0) / 2.0, 0.0, 1.0)
        up = pixels.repeat(s, axis=2).repeat(s, axis=3)
        return VideoClip(up.astype(np.float32), fps=latent.fps)


def _catmull_rom(d):
    """Catmull-Rom kernel (cubic, a = -0.5) at distance d >= 0."""
    d = abs(d)
    if d <= 1.0:
        return 1.5 * d**3 - 2.5 * d**2 + 1.0
    if d < 2.0:
        return -0.5 * (d**3 - 5.0 * d**2 + 8.0 * d - 4.0)
    return 0.0


def _resample_matrix(src, dst):
    """dst x src weight matrix for 1-D Catmull-Rom resampling.

    Uniform half-pixel-centered grid; source indices clamp at the borders.
    """
    if dst < 1:
        raise ValueError("target extent must be positive")
    weights = np.zeros((dst, src), dtype=np.float64)
    scale = src / dst
    for j in range(dst):
        x = (j + 0.5) * scale - 0.5
        base = int(np.floor(x))
        frac = x - base
        for tap in range(-1, 3):
            idx = min(max(base + tap, 0), src - 1)
            weights[j, idx] += _catmull_rom(tap - frac)
    return weights


def downsample_mask(mask: MaskClip, target) -> np.ndarray:
    """Resample masks to (H', W') per frame; clamped to [0, 1].

    Cubic overshoot is removed by the clamp so downstream occupancy
    thresholds stay meaningful. Returns float32 of shape (T, 1, H', W').
    """
    th, tw = target
    t, _, h, w = mask.frames.shape
    wr = _resample_matrix(h, th)
    wc = _resample_matrix(w, tw)
    src = mask.frames[:, 0].astype(np.float64)
    out = np.einsum("ij,tjk,lk->til", wr, src, wc)
    out = np.clip(out, 0.0, 1.0)
    return out[:, None].astype(np.float32)


def make_masked_video(video: VideoClip, mask: MaskClip) -> VideoClip:
    """Replace masked pixels with mid-gray; unmasked pixels are untouched."""
    if video.frames.shape[0] != mask.frames.shape[0] or video.frames.shape[2:] != mask.frames.shape[2:]:
        raise ValueError(
            f"video {video.frames.shape} and mask {mask.frames.shape} extents do not match")
    out = np.where(mask.frames == 1, np.float32(MASK_FILL), video.frames)
    return VideoClip(out, fps=video.fps)
