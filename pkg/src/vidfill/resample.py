"""Inpainting-region ID resampling: low-rank adapters on the backbone's
attention projections plus key/value concatenation of identity tokens —
the current clip's masked-region tokens during training, the previous
clip's inpainted-region tokens at inference.
"""

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .backbone import DiTBlock


class LayerAdapter:
    """Per-layer low-rank updates to the q/k/v projection maps.

    W_eff = W + scale * (B @ A) with B zero-initialized, so a fresh
    adapter leaves the projections exactly unchanged.
    """

    def __init__(self, d_model, rank, scale, rng, register, prefix):
        self.scale = scale
        self.a = {}
        self.b = {}
        for name in ("q", "k", "v"):
            a = (rng.standard_normal((d_model, rank)) / np.sqrt(rank)).astype(np.float32)
            self.a[name] = register(f"{prefix}.{name}.a", a)
            self.b[name] = register(f"{prefix}.{name}.b", np.zeros((rank, d_model), dtype=np.float32))

    def apply(self, name, w: Tensor) -> Tensor:
        delta = ad.matmul(self.a[name], self.b[name])
        if self.scale != 1.0:
            delta = ad.mul(delta, self.scale)
        return w + delta


class IdAdapterSet:
    """One LayerAdapter per backbone layer."""

    def __init__(self, n_layers, d_model, rank=4, scale=1.0, seed=2):
        self.rank = rank
        self.scale = scale
        self._params = []
        rng = np.random.default_rng(seed)

        def register(name, arr):
            t = Tensor(arr, requires_grad=True)
            self._params.append((name, t))
            return t

        self.layers = [
            LayerAdapter(d_model, rank, scale, rng, register, f"adapter{i}")
            for i in range(n_layers)
        ]

    def __getitem__(self, i):
        return self.layers[i]

    def __len__(self):
        return len(self.layers)

    def named_parameters(self):
        return list(self._params)

    def parameters(self):
        return [t for _, t in self._params]


@dataclass
class IdCache:
    """Per-layer masked-region K/V tokens from a completed clip.

    Empty caches (no layers) are legal and make resampling a no-op.
    """

    clip_id: int = 0
    keys: list = field(default_factory=list)  # per layer: (Lid, d_model) float32
    values: list = field(default_factory=list)

    def __post_init__(self):
        if len(self.keys) != len(self.values):
            raise ValueError("IdCache key/value layer counts differ")
        for k, v in zip(self.keys, self.values):
            if k.shape != v.shape:
                raise ValueError(f"IdCache layer shapes differ: {k.shape} vs {v.shape}")

    @property
    def empty(self):
        return not self.keys or self.keys[0].shape[0] == 0

    @property
    def token_count(self):
        return 0 if not self.keys else self.keys[0].shape[0]

    def as_extra_kv(self, n_layers):
        """Per-layer (K_id, V_id) list for Backbone.forward, or None if empty."""
        if self.empty:
            return None
        if len(self.keys) != n_layers:
            raise ValueError(f"IdCache has {len(self.keys)} layers, model has {n_layers}")
        return [(self.keys[i], self.values[i]) for i in range(n_layers)]

    def to_array(self):
        """Pack as (n_layers, 2, Lid, d) for container serialization."""
        if not self.keys:
            return np.zeros((0, 2, 0, 0), dtype=np.float32)
        return np.stack([np.stack([k, v]) for k, v in zip(self.keys, self.values)]).astype(np.float32)

    @classmethod
    def from_array(cls, arr, clip_id=0):
        arr = np.asarray(arr, dtype=np.float32)
        if arr.ndim != 4 or (arr.size and arr.shape[1] != 2):
            raise ValueError(f"IdCache array must be (n_layers, 2, Lid, d), got {arr.shape}")
        keys = [arr[i, 0].copy() for i in range(arr.shape[0])]
        values = [arr[i, 1].copy() for i in range(arr.shape[0])]
        return cls(clip_id=clip_id, keys=keys, values=values)


def extract_region_tokens(hidden, fg, block: DiTBlock, adapter=None):
    """Project the flagged rows of `hidden` with the layer's (adapted)
    K and V maps. An empty flag set yields empty (0, d) token matrices."""
    hidden = hidden if isinstance(hidden, Tensor) else Tensor(hidden)
    fg = np.asarray(fg, dtype=bool)
    if fg.shape[0] != hidden.shape[0]:
        raise ValueError(f"flag length {fg.shape[0]} does not match {hidden.shape[0]} rows")
    rows = np.flatnonzero(fg)
    if rows.size == 0:
        d = hidden.shape[1]
        return Tensor(np.zeros((0, d), dtype=np.float32)), Tensor(np.zeros((0, d), dtype=np.float32))
    gathered = ad.gather_rows(hidden, rows)
    k_id = block._projection("k", gathered, adapter)
    v_id = block._projection("v", gathered, adapter)
    return k_id, v_id


def train_adapter_step(model, optimizer, schedule, batch, rng):
    """One adapter update with the current batch's masked-region tokens
    concatenated to every layer's KV set. The backbone and context encoder
    must be frozen; any unfrozen or gradient-carrying frozen parameter is
    a hard failure."""
    from . import autodiff as ad
    from .diffusion import training_loss

    frozen = [(n, p) for n, p in model.named_parameters() if not n.startswith("adapters.")]
    for name, p in frozen:
        if p.requires_grad:
            raise RuntimeError(f"parameter {name} must be frozen during adapter training")

    video, mask, caption = batch
    optimizer.zero_grad()
    loss = training_loss(model, schedule, video, mask, caption, rng, self_resample=True)
    ad.backward(loss)
    for name, p in frozen:
        if p.grad is not None and np.linalg.norm(p.grad) != 0.0:
            raise RuntimeError(f"frozen parameter {name} received gradient")
    optimizer.step()
    return loss.item()


def cache_from_clip(model, clip, mask, caption_id, clip_id=0, t_cache=0) -> IdCache:
    """Record per-layer masked-region K/V from one clean forward pass.

    Runs at t_cache (default 0: the clean latent) over the sampled clip;
    an empty masked region yields an empty cache.
    """
    from .backbone import Conditioning
    from .codec import downsample_mask, make_masked_video

    z0 = model.codec.encode(clip)
    m_lat = downsample_mask(mask, z0.data.shape[2:])
    z0_masked = model.codec.encode(make_masked_video(clip, mask))
    first = clip.frames[0] if model.cfg.backbone.mode == "i2v" else None
    cond = Conditioning(timestep=t_cache, caption_id=caption_id, first_frame=first)
    record = {}
    model.injected_forward(z0.data, z0_masked.data, m_lat, cond,
                           self_resample=True, kv_record=record)
    n = model.cfg.backbone.n_layers
    keys = [record[i][0] for i in range(1, n + 1)]
    values = [record[i][1] for i in range(1, n + 1)]
    if keys[0].shape[0] == 0:
        return IdCache(clip_id=clip_id)
    return IdCache(clip_id=clip_id, keys=keys, values=values)


def resample_attention(q, k, v, id_kv):
    """Attention over [K, K_id] and [V, V_id]; ID tokens are pure memory
    tokens (no positional offset, attendable by every query)."""
    k_id, v_id = id_kv
    k_id = k_id if isinstance(k_id, Tensor) else Tensor(k_id)
    v_id = v_id if isinstance(v_id, Tensor) else Tensor(v_id)
    q = q if isinstance(q, Tensor) else Tensor(q)
    k = k if isinstance(k, Tensor) else Tensor(k)
    v = v if isinstance(v, Tensor) else Tensor(v)
    if k_id.shape[0] == 0:
        return ad.scaled_dot_attention(q, k, v)
    if k_id.shape[1] != q.shape[1]:
        raise ad.ShapeError(f"id token dim {k_id.shape[1]} != query dim {q.shape[1]}")
    return ad.scaled_dot_attention(q, ad.concat([k, k_id], axis=0), ad.concat([v, v_id], axis=0))
