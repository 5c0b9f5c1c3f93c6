"""Synthetic moving-shape clips with exact masks and caption ids, plus the
curation stages: mask-quality filters, scene-transition splitting, interval
segmentation and pluggable selection scoring.

All filters are pure functions of their inputs; curate() processes entries
independently and reports every drop with the stage that caused it.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .codec import MaskClip, VideoClip

SHAPES = ("circle", "square")
PALETTE = (
    ("red", (1.0, 0.0, 0.0)),
    ("green", (0.0, 1.0, 0.0)),
    ("blue", (0.0, 0.0, 1.0)),
    ("yellow", (1.0, 1.0, 0.0)),
    ("cyan", (0.0, 1.0, 1.0)),
    ("magenta", (1.0, 0.0, 1.0)),
    ("white", (1.0, 1.0, 1.0)),
    ("gray", (0.5, 0.5, 0.5)),
)
CAPTION_VOCAB = len(SHAPES) * len(PALETTE)

MASK_VARIATION_LIMIT = 0.20
COVERAGE_RANGE = (0.30, 0.70)
TRANSITION_THRESHOLD = 0.3
INTERVAL_SECONDS = 10.0
MIN_CLIP_SECONDS = 6.0


def caption_id(shape, color_name):
    """Bijective (shape, color-name) -> integer codec."""
    si = SHAPES.index(shape)
    ci = [name for name, _ in PALETTE].index(color_name)
    return si * len(PALETTE) + ci


def caption_decode(cid):
    if not 0 <= cid < CAPTION_VOCAB:
        raise ValueError(f"caption id {cid} out of range")
    si, ci = divmod(cid, len(PALETTE))
    return SHAPES[si], PALETTE[ci][0]


def color_of(cid):
    _, name = caption_decode(cid)
    return np.array(dict(PALETTE)[name], dtype=np.float32)


@dataclass
class SceneSpec:
    shape: str  # circle | square
    color_name: str
    size: int  # radius / half-edge in pixels
    start: tuple  # (row, col) center at t = 0
    velocity: tuple = (0, 0)  # (dy, dx) pixels per frame
    background: str = "gradient"  # gradient | stripes | noise
    noise_seed: int = 0

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise ValueError(f"unknown shape {self.shape!r}")
        if self.color_name not in dict(PALETTE):
            raise ValueError(f"unknown color {self.color_name!r}")
        if self.background not in ("gradient", "stripes", "noise"):
            raise ValueError(f"unknown background {self.background!r}")
        if self.size < 1:
            raise ValueError("size must be >= 1")

    @property
    def caption(self):
        return caption_id(self.shape, self.color_name)


def _background(spec, T, H, W, rng):
    if spec.background == "gradient":
        ramp = (np.arange(W) / max(W - 1, 1) * 0.6 + 0.2).astype(np.float32)
        frame = np.broadcast_to(ramp, (3, H, W))
        return np.broadcast_to(frame, (T, 3, H, W)).copy()
    if spec.background == "stripes":
        stripes = (((np.arange(H) // 4) % 2) * 0.5 + 0.25).astype(np.float32)
        frame = np.broadcast_to(stripes[:, None], (3, H, W))
        return np.broadcast_to(frame, (T, 3, H, W)).copy()
    noise_rng = np.random.default_rng(spec.noise_seed)
    return noise_rng.uniform(0.0, 1.0, (T, 3, H, W)).astype(np.float32)


def _shape_support(spec, cy, cx, H, W):
    yy, xx = np.mgrid[0:H, 0:W]
    if spec.shape == "circle":
        return (yy - cy) ** 2 + (xx - cx) ** 2 <= spec.size ** 2
    return (np.abs(yy - cy) <= spec.size) & (np.abs(xx - cx) <= spec.size)


def generate_synthetic(spec: SceneSpec, T, H, W, seed=0):
    """Render a moving shape with hard edges; the mask is the exact shape
    support. Raises if the trajectory would leave the frame."""
    for t in range(T):
        cy = spec.start[0] + spec.velocity[0] * t
        cx = spec.start[1] + spec.velocity[1] * t
        if not (spec.size <= cy <= H - 1 - spec.size and spec.size <= cx <= W - 1 - spec.size):
            raise ValueError(f"shape leaves frame at t={t} (center {cy},{cx})")
    rng = np.random.default_rng(seed)
    frames = _background(spec, T, H, W, rng)
    masks = np.zeros((T, 1, H, W), dtype=np.uint8)
    color = np.array(dict(PALETTE)[spec.color_name], dtype=np.float32)
    for t in range(T):
        cy = spec.start[0] + spec.velocity[0] * t
        cx = spec.start[1] + spec.velocity[1] * t
        support = _shape_support(spec, cy, cx, H, W)
        for c in range(3):
            frames[t, c][support] = color[c]
        masks[t, 0][support] = 1
    return VideoClip(frames), MaskClip(masks), spec.caption


def random_scene(rng, T, H, W, colors=None, backgrounds=("gradient", "stripes", "noise")):
    """Draw a SceneSpec guaranteed to stay in frame for T frames."""
    colors = colors or [name for name, _ in PALETTE]
    size = int(rng.integers(max(2, H // 8), max(3, H // 4)))
    max_v = 1 if H < 48 else 2
    for _ in range(100):
        vy, vx = int(rng.integers(-max_v, max_v + 1)), int(rng.integers(-max_v, max_v + 1))
        lo_y, hi_y = size, H - 1 - size - abs(vy) * (T - 1)
        lo_x, hi_x = size, W - 1 - size - abs(vx) * (T - 1)
        if hi_y < lo_y or hi_x < lo_x:
            continue
        sy = int(rng.integers(lo_y, hi_y + 1)) + (abs(vy) * (T - 1) if vy < 0 else 0)
        sx = int(rng.integers(lo_x, hi_x + 1)) + (abs(vx) * (T - 1) if vx < 0 else 0)
        return SceneSpec(
            shape=SHAPES[int(rng.integers(len(SHAPES)))],
            color_name=colors[int(rng.integers(len(colors)))],
            size=size, start=(sy, sx), velocity=(vy, vx),
            background=backgrounds[int(rng.integers(len(backgrounds)))],
            noise_seed=int(rng.integers(2**31)))
    raise RuntimeError("could not place a shape inside the frame")


# -- mask statistics and filters ------------------------------------------------


@dataclass
class MaskStats:
    areas: list  # per-frame mask pixel counts
    frame_area: int

    @classmethod
    def from_mask(cls, mask: MaskClip):
        areas = [int(a) for a in mask.frames.sum(axis=(1, 2, 3))]
        return cls(areas=areas, frame_area=int(np.prod(mask.frames.shape[2:])))


def mask_variation_filter(stats: MaskStats):
    """Pass iff the worst consecutive relative area change is < 20% (strict).

    Delta uses a floor of 1 in the denominator, so a 0 -> positive jump
    fails by design.
    """
    if len(stats.areas) < 2:
        raise ValueError("variation filter needs at least two frames")
    delta = 0.0
    for a, b in zip(stats.areas, stats.areas[1:]):
        delta = max(delta, abs(b - a) / max(a, 1))
    return delta < MASK_VARIATION_LIMIT, delta


def coverage_filter(stats: MaskStats):
    """Pass iff every frame's mask-area fraction lies in [0.30, 0.70]."""
    if not stats.areas:
        raise ValueError("coverage filter needs at least one frame")
    lo, hi = COVERAGE_RANGE
    fracs = [a / stats.frame_area for a in stats.areas]
    return all(lo <= f <= hi for f in fracs), fracs


def detect_scene_transitions(video: VideoClip, threshold=TRANSITION_THRESHOLD):
    """Cut at t iff mean |frame_t - frame_{t-1}| exceeds the threshold."""
    if video.num_frames < 2:
        raise ValueError("scene detection needs at least two frames")
    diffs = np.abs(np.diff(video.frames.astype(np.float64), axis=0)).mean(axis=(1, 2, 3))
    return [t + 1 for t, d in enumerate(diffs) if d > threshold]


def split_scenes(total_frames, cuts):
    """Frame ranges between consecutive cuts."""
    edges = [0] + sorted(cuts) + [total_frames]
    return [(a, b) for a, b in zip(edges, edges[1:]) if b > a]


def split_clips(segments, fps):
    """Partition each segment into 10-second chunks from its start; a
    trailing chunk is kept iff it spans at least 6 seconds."""
    if fps <= 0:
        raise ValueError("fps must be positive")
    chunk = int(round(INTERVAL_SECONDS * fps))
    min_len = MIN_CLIP_SECONDS * fps
    out = []
    for start, end in segments:
        pos = start
        while pos + chunk <= end:
            out.append((pos, pos + chunk))
            pos += chunk
        if end - pos >= min_len:
            out.append((pos, end))
    return out


def selection_scores(video: VideoClip, bins=64):
    """Built-in proxies: luminance-histogram entropy (aesthetic), mean
    absolute inter-frame difference (motion), constant pass (safety)."""
    luma = video.frames.mean(axis=1)
    hist, _ = np.histogram(luma, bins=bins, range=(0.0, 1.0))
    p = hist / hist.sum()
    nz = p[p > 0]
    entropy = float(-(nz * np.log2(nz)).sum() / math.log2(bins))
    if video.num_frames > 1:
        motion = float(np.abs(np.diff(video.frames.astype(np.float64), axis=0)).mean())
    else:
        motion = 0.0
    return {"aesthetic": entropy, "motion": motion, "safety": 1.0}


# -- manifest & curation -----------------------------------------------------------


@dataclass
class ManifestEntry:
    clip_path: str
    mask_path: str
    caption_id: int
    fps: float
    provenance: str = ""

    def line(self):
        return "\t".join([self.clip_path, self.mask_path, str(self.caption_id),
                          repr(self.fps), self.provenance])

    @classmethod
    def parse(cls, line):
        parts = line.rstrip("\n").split("\t")
        if len(parts) < 4:
            raise ValueError(f"malformed manifest line: {line!r}")
        prov = parts[4] if len(parts) > 4 else ""
        return cls(parts[0], parts[1], int(parts[2]), float(parts[3]), prov)


def read_manifest(path):
    entries = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                entries.append(ManifestEntry.parse(line))
    return entries


def write_manifest(path, entries):
    with open(path, "w", encoding="utf-8") as fh:
        for e in entries:
            fh.write(e.line() + "\n")


@dataclass
class CurationConfig:
    variation: bool = True
    coverage: bool = True
    transitions: bool = True
    intervals: bool = True
    transition_threshold: float = TRANSITION_THRESHOLD
    min_aesthetic: float = 0.0
    min_motion: float = 0.0
    min_safety: float = 0.0


def curate(entries, cfg: CurationConfig, out_dir, loader, writer):
    """Apply mask filters, transition splitting, interval segmentation and
    selection thresholds, in that order.

    loader(entry) -> (VideoClip, MaskClip); writer(entry, video, mask,
    suffix) -> (clip_path, mask_path) materializes split sub-clips.
    Returns (kept_entries, drop_log); every input entry lands in exactly
    one of the two, unreadable entries are dropped with stage "read".
    """
    kept = []
    drops = []
    for entry in entries:
        try:
            video, mask = loader(entry)
        except Exception as exc:  # noqa: BLE001 - any unreadable entry is a data drop
            drops.append((entry, "read", str(exc)))
            continue
        stats = MaskStats.from_mask(mask)
        if cfg.variation:
            ok, delta = mask_variation_filter(stats)
            if not ok:
                drops.append((entry, "variation", f"delta={delta:.4f}"))
                continue
        if cfg.coverage:
            ok, _ = coverage_filter(stats)
            if not ok:
                drops.append((entry, "coverage", "frame outside 30-70% band"))
                continue
        if cfg.transitions:
            cuts = detect_scene_transitions(video, cfg.transition_threshold)
            segments = split_scenes(video.num_frames, cuts)
        else:
            segments = [(0, video.num_frames)]
        if cfg.intervals:
            ranges = split_clips(segments, entry.fps)
        else:
            ranges = segments
        if not ranges:
            drops.append((entry, "interval", "no segment of at least 6s"))
            continue
        scores = selection_scores(video)
        if (scores["aesthetic"] < cfg.min_aesthetic or scores["motion"] < cfg.min_motion
                or scores["safety"] < cfg.min_safety):
            drops.append((entry, "selection", str(scores)))
            continue
        if len(ranges) == 1 and ranges[0] == (0, video.num_frames):
            kept.append(ManifestEntry(entry.clip_path, entry.mask_path, entry.caption_id,
                                      entry.fps, provenance="passed:all"))
        else:
            for j, (a, b) in enumerate(ranges):
                sub_v = VideoClip(video.frames[a:b].copy(), fps=video.fps)
                sub_m = MaskClip(mask.frames[a:b].copy())
                cpath, mpath = writer(entry, sub_v, sub_m, f"{j:02d}")
                kept.append(ManifestEntry(cpath, mpath, entry.caption_id, entry.fps,
                                          provenance=f"passed:all;split:{a}-{b}"))
    return kept, drops
