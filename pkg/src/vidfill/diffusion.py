"""Noise schedule, training objective, mask augmentation, the deterministic
DDIM sampler (with optional latent blending of the known region), and the
two-stage training driver.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .backbone import Conditioning
from .codec import LatentClip, MaskClip, VideoClip, downsample_mask, make_masked_video
from .model import VideoInpainter
from .optim import make_optimizer

TRAIN_STEPS = 100
SAMPLE_STEPS = 20
_ALPHA_FLOOR = 1e-5
_COSINE_OFFSET = 0.008


class NoiseSchedule:
    """Cosine cumulative-signal schedule over steps 0..S.

    alpha_bar is strictly decreasing, exactly 1 at t=0 and < 0.01 at t=S.
    The same continuous curve underlies every discretization, so a 20-step
    sampler stays consistent with a 100-step training schedule.
    """

    def __init__(self, steps=TRAIN_STEPS):
        if steps < 1:
            raise ValueError("schedule needs at least one step")
        self.steps = steps
        u = np.arange(steps + 1, dtype=np.float64) / steps
        f = np.cos((u + _COSINE_OFFSET) / (1.0 + _COSINE_OFFSET) * math.pi / 2.0) ** 2
        ab = np.maximum(f / f[0], _ALPHA_FLOOR)
        if not np.all(np.diff(ab) < 0):
            raise ValueError(f"alpha_bar not strictly decreasing for {steps} steps")
        if abs(ab[0] - 1.0) > 1e-6 or ab[-1] >= 0.01:
            raise ValueError("alpha_bar endpoint bounds violated")
        self.alpha_bar = ab

    def add_noise(self, z0, t, eps):
        """z_t = sqrt(ab_t) * z0 + sqrt(1 - ab_t) * eps."""
        z0 = np.asarray(z0)
        eps = np.asarray(eps)
        if eps.shape != z0.shape:
            raise ValueError(f"eps shape {eps.shape} does not match z0 {z0.shape}")
        if not 0 <= t <= self.steps:
            raise ValueError(f"timestep {t} outside 0..{self.steps}")
        ab = self.alpha_bar[t]
        return (math.sqrt(ab) * z0 + math.sqrt(1.0 - ab) * eps).astype(np.float32)


def add_noise(z0, t, eps, schedule: NoiseSchedule):
    return schedule.add_noise(z0, t, eps)


@dataclass
class TrainConfig:
    lr: float = 1e-3  # paper scale uses 1e-5; toy default
    stage1_steps: int = 2000  # paper: 80,000
    stage2_steps: int = 200  # paper: 2,000
    optimizer: str = "sgd"
    momentum: float = 0.9
    schedule_steps: int = TRAIN_STEPS
    kernel_range: tuple = None  # derived from resolution when None
    augment: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.stage1_steps < 0 or self.stage2_steps < 0:
            raise ValueError("step counts must be non-negative")
        if self.kernel_range is not None and self.kernel_range[0] > self.kernel_range[1]:
            raise ValueError("kernel range is empty")


def scaled_kernel_range(height, paper_range=(8, 32), paper_height=480):
    """Morphology kernel bounds rescaled from the full-resolution recipe:
    k = round(k_paper * H / 480), clamped to >= 1."""
    lo = max(1, round(paper_range[0] * height / paper_height))
    hi = max(1, round(paper_range[1] * height / paper_height))
    return lo, hi


def _shift_window(frames, k, reducer, pad_value):
    """Min/max filter with a k x k structuring element centered at k//2."""
    t, h, w = frames.shape
    out = None
    lo = -(k // 2)
    hi = k - 1 - k // 2
    padded = np.pad(frames, ((0, 0), (k, k), (k, k)), constant_values=pad_value)
    for dy in range(lo, hi + 1):
        for dx in range(lo, hi + 1):
            view = padded[:, k + dy:k + dy + h, k + dx:k + dx + w]
            out = view.copy() if out is None else reducer(out, view)
    return out


def dilate(mask_frames, k):
    """Window max; outside the frame counts as background."""
    return _shift_window(mask_frames, k, np.maximum, 0)


def erode(mask_frames, k):
    """Window min; outside the frame counts as foreground so that
    dilation-then-erosion (closing) stays extensive at the borders."""
    return _shift_window(mask_frames, k, np.minimum, 1)


def augment_mask(mask: MaskClip, rng, kernel_range) -> MaskClip:
    """Random dilation or erosion, one kernel per clip.

    An erosion that empties the mask is re-rolled once, then accepted.
    """
    lo, hi = kernel_range
    for _ in range(2):
        k = int(rng.integers(lo, hi + 1))
        op = dilate if rng.integers(2) == 0 else erode
        out = op(mask.frames[:, 0], k)
        if out.any():
            break
    return MaskClip(out[:, None])


def training_loss(model: VideoInpainter, schedule: NoiseSchedule, video: VideoClip,
                  mask: MaskClip, caption_id, rng, t=None, eps=None,
                  self_resample=False):
    """Epsilon-prediction MSE over the whole frame (no mask weighting).

    t is sampled uniformly from 1..S and eps from the unit normal unless
    given explicitly.
    """
    z0 = model.codec.encode(video)
    lat_shape = z0.data.shape
    m_lat = downsample_mask(mask, lat_shape[2:])
    z0_masked = model.codec.encode(make_masked_video(video, mask))
    if t is None:
        t = int(rng.integers(1, schedule.steps + 1))
    if eps is None:
        eps = rng.standard_normal(lat_shape).astype(np.float32)
    z_t = schedule.add_noise(z0.data, t, eps)
    first = video.frames[0] if model.cfg.backbone.mode == "i2v" else None
    cond = Conditioning(timestep=t, caption_id=caption_id, first_frame=first)
    pred = model.predict_noise(z_t, z0_masked.data, m_lat, cond, self_resample=self_resample)
    diff = ad.sub(pred, Tensor(eps.reshape(pred.shape)))
    return ad.tmean(ad.mul(diff, diff))


def _clip_latent_mask(m_lat):
    """Cells to regenerate: majority-masked latent cells."""
    return np.asarray(m_lat) > 0.5


def sample(model: VideoInpainter, video: VideoClip, mask: MaskClip, caption_id,
           steps=SAMPLE_STEPS, rng=None, blend_known_region=False, id_cache=None,
           first_frame=None, train_steps=TRAIN_STEPS, trace=None) -> VideoClip:
    """Deterministic DDIM reverse process from pure noise.

    Every step runs the injected forward (with resampled attention when an
    id_cache is given). With blend_known_region the unmasked latent region
    is overwritten with the appropriately noised source after each step.
    The final frame is composited so unmasked pixels equal the source.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    sched = NoiseSchedule(steps)
    z0_src = model.codec.encode(video)
    lat_shape = z0_src.data.shape
    m_lat = downsample_mask(mask, lat_shape[2:])
    z0_masked = model.codec.encode(make_masked_video(video, mask)).data
    keep_lat = ~_clip_latent_mask(m_lat)

    extra_kv = None
    if id_cache is not None and not id_cache.empty:
        extra_kv = id_cache.as_extra_kv(model.cfg.backbone.n_layers)
        if trace is not None:
            trace["id_tokens"] = id_cache.token_count

    if model.cfg.backbone.mode == "i2v" and first_frame is None:
        first_frame = video.frames[0]

    z = rng.standard_normal(lat_shape).astype(np.float32)
    for k in range(steps, 0, -1):
        t_model = k * train_steps // steps
        cond = Conditioning(timestep=t_model, caption_id=caption_id, first_frame=first_frame)
        eps_hat = model.predict_noise(z, z0_masked, m_lat, cond, extra_kv=extra_kv).data
        ab_t = sched.alpha_bar[k]
        ab_prev = sched.alpha_bar[k - 1]
        x0_hat = (z - math.sqrt(1.0 - ab_t) * eps_hat) / math.sqrt(ab_t)
        x0_hat = np.clip(x0_hat, -1.0, 1.0)  # codec latents live in [-1, 1]
        z = (math.sqrt(ab_prev) * x0_hat + math.sqrt(1.0 - ab_prev) * eps_hat).astype(np.float32)
        if blend_known_region:
            noise = rng.standard_normal(lat_shape).astype(np.float32)
            known = sched.add_noise(z0_src.data, k - 1, noise)
            z = np.where(keep_lat, known, z)

    out = model.codec.decode(LatentClip(z, spatial_factor=z0_src.spatial_factor, fps=video.fps))
    frames = np.where(mask.frames == 1, out.frames, video.frames)
    return VideoClip(frames, fps=video.fps)


def _frozen_check(params):
    for name, p in params:
        if p.requires_grad:
            raise RuntimeError(f"parameter {name} unexpectedly trainable")
        if p.grad is not None and np.any(p.grad != 0):
            raise RuntimeError(f"frozen parameter {name} accumulated gradient")


def two_stage_train(model: VideoInpainter, dataset, cfg: TrainConfig,
                    stages=(1, 2), log=None):
    """Stage 1 trains the context encoder with the backbone frozen; stage 2
    freezes everything but the ID adapters and trains with current-region
    KV concatenation. Returns per-stage loss histories.

    dataset: sequence of (VideoClip, MaskClip, caption_id).
    log: optional callable(step, stage, loss).
    """
    if not dataset:
        raise ValueError("dataset is empty")
    from .resample import train_adapter_step

    schedule = NoiseSchedule(cfg.schedule_steps)
    rng = np.random.default_rng(cfg.seed)
    history = {}

    if 1 in stages:
        model.set_trainable(backbone=False, context=True, adapters=False)
        opt = make_optimizer(cfg.optimizer, model.context_params(), cfg.lr, cfg.momentum)
        losses = []
        for step in range(cfg.stage1_steps):
            video, mask, caption = dataset[int(rng.integers(len(dataset)))]
            mask = _maybe_augment(mask, video, cfg, rng)
            opt.zero_grad()
            loss = training_loss(model, schedule, video, mask, caption, rng)
            ad.backward(loss)
            _frozen_check([(n, p) for n, p in model.named_parameters()
                           if not n.startswith("context.")])
            opt.step()
            losses.append(loss.item())
            if log:
                log(step, 1, losses[-1])
        history[1] = losses

    if 2 in stages:
        model.set_trainable(backbone=False, context=False, adapters=True)
        opt = make_optimizer(cfg.optimizer, model.adapter_params(), cfg.lr, cfg.momentum)
        losses = []
        for step in range(cfg.stage2_steps):
            video, mask, caption = dataset[int(rng.integers(len(dataset)))]
            mask = _maybe_augment(mask, video, cfg, rng)
            loss_val = train_adapter_step(model, opt, schedule, (video, mask, caption), rng)
            losses.append(loss_val)
            if log:
                log(step, 2, losses[-1])
        history[2] = losses

    model.set_trainable(backbone=False, context=False, adapters=False)
    return history


def _maybe_augment(mask, video, cfg, rng):
    if not cfg.augment:
        return mask
    krange = cfg.kernel_range or scaled_kernel_range(video.frames.shape[2])
    return augment_mask(mask, rng, krange)
