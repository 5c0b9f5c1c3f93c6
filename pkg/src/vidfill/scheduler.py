"""Any-length inpainting: overlapping clip windows, pixel-space overlap
blending, first-frame handoff between clips, and ID-cache threading.
Clips are strictly sequential (handoff and cache dependencies)."""

from dataclasses import dataclass

import numpy as np

from .codec import MASK_FILL, MaskClip, VideoClip
from .diffusion import SAMPLE_STEPS, sample
from .resample import cache_from_clip


@dataclass
class ClipPlan:
    """Ordered [start, end) windows covering the full frame range.

    Consecutive windows overlap by exactly `overlap`; only the last window
    may be shorter than clip_len.
    """

    clip_len: int
    overlap: int
    windows: list

    def __post_init__(self):
        f, o = self.clip_len, self.overlap
        if not 0 <= o < f:
            raise ValueError(f"overlap {o} must satisfy 0 <= o < clip_len {f}")
        for i, (s, e) in enumerate(self.windows):
            if e - s > f or e <= s:
                raise ValueError(f"window {i} [{s},{e}) malformed for clip_len {f}")
            if i and self.windows[i - 1][1] - s != o:
                raise ValueError(f"windows {i - 1} and {i} do not overlap by {o}")

    def __len__(self):
        return len(self.windows)


def plan_clips(total, clip_len, overlap) -> ClipPlan:
    """Windows start at multiples of (clip_len - overlap); the last window
    is end-aligned to `total` and may be shorter."""
    if total < 1:
        raise ValueError("need at least one frame")
    if not 0 <= overlap < clip_len:
        raise ValueError(f"overlap {overlap} must satisfy 0 <= o < clip_len {clip_len}")
    if total <= clip_len:
        return ClipPlan(clip_len, overlap, [(0, total)])
    stride = clip_len - overlap
    n_full = (total - clip_len) // stride + 1
    windows = [(k * stride, k * stride + clip_len) for k in range(n_full)]
    if windows[-1][1] < total:
        windows.append((n_full * stride, total))
    return ClipPlan(clip_len, overlap, windows)


def blend_weights(overlap):
    """Incoming-clip ramp w_j = (j+1)/(o+1); strictly inside (0, 1)."""
    return (np.arange(1, overlap + 1, dtype=np.float64)) / (overlap + 1)


def blend_overlap(prev_frames, cur_frames, w):
    """out_j = (1 - w_j) * prev_j + w_j * cur_j, computed as
    prev + w * (cur - prev) so equal inputs pass through bit-exactly."""
    prev = np.asarray(prev_frames, dtype=np.float64)
    cur = np.asarray(cur_frames, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    if prev.shape[0] != cur.shape[0] or prev.shape[0] != w.shape[0]:
        raise ValueError(f"overlap lengths differ: {prev.shape[0]}, {cur.shape[0]}, {w.shape[0]}")
    wexp = w.reshape((-1,) + (1,) * (prev.ndim - 1))
    return (prev + wexp * (cur - prev)).astype(np.float32)


def handoff_index(plan: ClipPlan, k):
    """Global index of the final pre-overlap frame of clip k-1."""
    if k < 1:
        raise ValueError("clip 0 has no predecessor")
    return plan.windows[k][0] - 1


def handoff_condition(prev_result_frames, plan: ClipPlan, k):
    """The frame reused as clip k's I2V condition and first masked-video
    frame: the last frame of the previous clip before the overlap."""
    idx = handoff_index(plan, k)
    start_prev = plan.windows[k - 1][0]
    return prev_result_frames[idx - start_prev]


def mean_color_fill(frame, mask_frame):
    """Default first-clip bootstrap: fill the masked region with the mean
    color of the unmasked pixels (mid-gray when fully masked)."""
    frame = np.asarray(frame, dtype=np.float32)
    m = np.asarray(mask_frame)[0].astype(bool)
    out = frame.copy()
    if m.all():
        out[:, m] = MASK_FILL
        return out
    for c in range(frame.shape[0]):
        out[c, m] = frame[c][~m].mean()
    return out


def ground_truth_fill(frame, mask_frame):
    """Test-mode bootstrap: keep the source frame as-is."""
    return np.asarray(frame, dtype=np.float32).copy()


def inpaint_clip(model, video: VideoClip, mask: MaskClip, caption_id, steps=SAMPLE_STEPS,
                 seed=0, clip_index=0, blend_known_region=False, id_cache=None,
                 first_frame_filler=mean_color_fill, handoff_frame=None, trace=None) -> VideoClip:
    """Single-clip sampling with the mode-appropriate first-frame handling.

    In i2v mode the first frame is made fully known: for clip 0 the filler
    inpaints it, for later clips the handoff frame replaces it; its mask
    row is cleared and it doubles as the image condition.
    """
    rng = np.random.default_rng([seed, clip_index])
    frames = video.frames
    mframes = mask.frames
    first = None
    if model.cfg.backbone.mode == "i2v" or handoff_frame is not None:
        if handoff_frame is not None:
            first = np.asarray(handoff_frame, dtype=np.float32)
        else:
            first = first_frame_filler(frames[0], mframes[0])
        frames = frames.copy()
        frames[0] = np.clip(first, 0.0, 1.0)
        mframes = mframes.copy()
        mframes[0] = 0
    eff_video = VideoClip(frames, fps=video.fps)
    eff_mask = MaskClip(mframes)
    if model.cfg.backbone.mode != "i2v":
        first = None
    return sample(model, eff_video, eff_mask, caption_id, steps=steps, rng=rng,
                  blend_known_region=blend_known_region, id_cache=id_cache,
                  first_frame=first, trace=trace), eff_mask


def run_long_inpaint(model, video: VideoClip, mask: MaskClip, caption_id,
                     clip_len=8, overlap=2, steps=SAMPLE_STEPS, seed=0,
                     resample_on=True, blend_known_region=False,
                     first_frame_filler=mean_color_fill, trace=None,
                     debug_sink=None) -> VideoClip:
    """Windowed inpainting over the full clip with overlap blending,
    handoff conditioning and optional ID-cache threading.

    trace, when a dict, records per-clip diagnostics (id token counts).
    debug_sink, when given, receives (clip_index, VideoClip) per window.
    """
    total = video.num_frames
    plan = plan_clips(total, clip_len, overlap)
    out = np.zeros_like(video.frames)
    cache = None
    w = blend_weights(overlap)

    for k, (s, e) in enumerate(plan.windows):
        sub_video = VideoClip(video.frames[s:e].copy(), fps=video.fps)
        sub_mask = MaskClip(mask.frames[s:e].copy())
        handoff = handoff_condition(out[plan.windows[k - 1][0]:plan.windows[k - 1][1]],
                                    plan, k) if k else None
        clip_trace = {} if trace is not None else None
        result, eff_mask = inpaint_clip(
            model, sub_video, sub_mask, caption_id, steps=steps, seed=seed,
            clip_index=k, blend_known_region=blend_known_region,
            id_cache=cache if resample_on else None,
            first_frame_filler=first_frame_filler, handoff_frame=handoff,
            trace=clip_trace)
        if debug_sink is not None:
            debug_sink(k, result)
        if trace is not None:
            trace.setdefault("clips", []).append(clip_trace)

        if k == 0:
            out[s:e] = result.frames
        else:
            n_overlap = plan.windows[k - 1][1] - s
            if n_overlap:
                out[s:s + n_overlap] = blend_overlap(
                    out[s:s + n_overlap], result.frames[:n_overlap], w[:n_overlap])
            out[s + n_overlap:e] = result.frames[n_overlap:]

        if resample_on:
            cache = cache_from_clip(model, result, eff_mask, caption_id, clip_id=k)

    frames = np.where(mask.frames == 1, out, video.frames)
    return VideoClip(frames, fps=video.fps)
