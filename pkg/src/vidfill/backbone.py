"""Toy video diffusion transformer: patchified latent tokens through
adaLN-modulated self-attention blocks, with per-layer hooks for additive
feature injection and extra key/value tokens.

Hooks are strictly neutral when absent or zero: a forward with zero
injections and no extra KV reproduces the hook-free forward exactly.
"""

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .codec import LatentClip


@dataclass
class BackboneConfig:
    n_layers: int = 4
    d_model: int = 64
    n_heads: int = 4
    patch: int = 2
    caption_vocab: int = 16
    mode: str = "i2v"  # "t2v" | "i2v"
    latent_channels: int = 4
    mlp_ratio: int = 4
    positional: bool = True
    lift_eps: float = 1e-6

    def __post_init__(self):
        if self.n_layers < 2 or self.n_layers % 2:
            raise ValueError(f"n_layers must be even and >= 2, got {self.n_layers}")
        if self.d_model % self.n_heads:
            raise ValueError(f"d_model {self.d_model} not divisible by n_heads {self.n_heads}")
        if self.d_model % 2:
            raise ValueError("d_model must be even")
        if self.mode not in ("t2v", "i2v"):
            raise ValueError(f"mode must be 't2v' or 'i2v', got {self.mode!r}")


@dataclass
class TokenSeq:
    """Flattened spatiotemporal tokens with their grid and foreground flags."""

    tokens: Tensor  # (L, d_model)
    grid: tuple  # (T, Gy, Gx); token index = (t*Gy + y)*Gx + x
    fg_flag: Optional[np.ndarray] = None  # per-token bool; True = overlaps masked region

    def __post_init__(self):
        t, gy, gx = self.grid
        if self.tokens.shape[0] != t * gy * gx:
            raise ValueError(f"token count {self.tokens.shape[0]} does not match grid {self.grid}")
        if self.fg_flag is None:
            self.fg_flag = np.zeros(self.tokens.shape[0], dtype=bool)

    def __len__(self):
        return self.tokens.shape[0]

    def index_of(self, t, y, x):
        _, gy, gx = self.grid
        return (t * gy + y) * gx + x

    def coords_of(self, index):
        _, gy, gx = self.grid
        t, rem = divmod(index, gy * gx)
        y, x = divmod(rem, gx)
        return t, y, x


@dataclass
class Conditioning:
    timestep: int
    caption_id: int
    first_frame: Optional[np.ndarray] = None  # (3, H, W) pixels, I2V only


def timestep_sinusoid(t, dim):
    """Closed-form sinusoidal embedding: [cos(t*f) | sin(t*f)] halves.

    f_i = 10000^(-i/half). At t = 0 this is ones followed by zeros.
    """
    half = dim // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half, dtype=np.float64) / half)
    args = float(t) * freqs
    return np.concatenate([np.cos(args), np.sin(args)]).astype(np.float32)


def _coord_sinusoid(pos, dim):
    half = dim // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half, dtype=np.float64) / half)
    args = np.asarray(pos, dtype=np.float64)[:, None] * freqs[None, :]
    return np.concatenate([np.cos(args), np.sin(args)], axis=1)


def positional_encoding(grid, d_model, t_offset=0):
    """Deterministic (L, d) encoding from per-token (t, y, x) coordinates.

    The channel budget is split into three even-sized chunks (t gets the
    remainder). t_offset shifts the temporal coordinate; condition tokens
    use t = -1 to stay distinct from frame 0.
    """
    t, gy, gx = grid
    dc = 2 * (d_model // 6)
    dt = d_model - 2 * dc
    tt, yy, xx = np.meshgrid(np.arange(t), np.arange(gy), np.arange(gx), indexing="ij")
    parts = [
        _coord_sinusoid(tt.reshape(-1) + t_offset, dt),
        _coord_sinusoid(yy.reshape(-1), dc),
        _coord_sinusoid(xx.reshape(-1), dc),
    ]
    return np.concatenate(parts, axis=1).astype(np.float32)


class DiTBlock:
    """AdaLN-modulated self-attention + MLP block.

    Attention accepts optional extra key/value rows (pure memory tokens,
    no positional offset), optional self-resampling row indices whose K/V
    get appended, and an optional recorder capturing those rows.
    """

    def __init__(self, cfg: BackboneConfig, rng, register, prefix):
        d = cfg.d_model
        hidden = cfg.mlp_ratio * d
        self.cfg = cfg
        self.d_head = d // cfg.n_heads

        def p(name, shape, std=0.02):
            arr = (rng.standard_normal(shape) * std).astype(np.float32)
            return register(f"{prefix}.{name}", arr)

        def zeros(name, shape):
            return register(f"{prefix}.{name}", np.zeros(shape, dtype=np.float32))

        self.wq, self.bq = p("attn.wq", (d, d)), zeros("attn.bq", (d,))
        self.wk, self.bk = p("attn.wk", (d, d)), zeros("attn.bk", (d,))
        self.wv, self.bv = p("attn.wv", (d, d)), zeros("attn.bv", (d,))
        self.wo, self.bo = p("attn.wo", (d, d)), zeros("attn.bo", (d,))
        self.w1, self.b1 = p("mlp.w1", (d, hidden)), zeros("mlp.b1", (hidden,))
        self.w2, self.b2 = p("mlp.w2", (hidden, d)), zeros("mlp.b2", (d,))
        self.mod_w, self.mod_b = p("mod.w", (d, 6 * d)), zeros("mod.b", (6 * d,))
        self._ln_gamma = Tensor(np.ones(d, dtype=np.float32))
        self._ln_beta = Tensor(np.zeros(d, dtype=np.float32))

    def parameters(self):
        return [self.wq, self.bq, self.wk, self.bk, self.wv, self.bv, self.wo, self.bo,
                self.w1, self.b1, self.w2, self.b2, self.mod_w, self.mod_b]

    def _modulation(self, cond_vec):
        d = self.cfg.d_model
        m = ad.matmul(ad.silu(cond_vec), self.mod_w) + self.mod_b.reshape(1, -1)
        return [ad.narrow(m, 1, i * d, d) for i in range(6)]

    def _projection(self, name, x, adapter=None):
        w = getattr(self, "w" + name)
        b = getattr(self, "b" + name)
        if adapter is not None:
            w = adapter.apply(name, w)
        return ad.matmul(x, w) + b.reshape(1, -1)

    def attention(self, x, adapter=None, extra_kv=None, resample_rows=None, record=None):
        q = self._projection("q", x, adapter)
        k = self._projection("k", x, adapter)
        v = self._projection("v", x, adapter)

        if record is not None and resample_rows is not None:
            record.append((k.data[resample_rows].copy(), v.data[resample_rows].copy()))

        k_full, v_full = k, v
        if resample_rows is not None and len(resample_rows):
            k_full = ad.concat([k_full, ad.gather_rows(k, resample_rows)], axis=0)
            v_full = ad.concat([v_full, ad.gather_rows(v, resample_rows)], axis=0)
        if extra_kv is not None:
            k_id, v_id = extra_kv
            k_id = k_id if isinstance(k_id, Tensor) else Tensor(k_id)
            v_id = v_id if isinstance(v_id, Tensor) else Tensor(v_id)
            if k_id.shape[0] != v_id.shape[0]:
                raise ad.ShapeError(f"extra_kv row counts differ: {k_id.shape} vs {v_id.shape}")
            if k_id.shape[0]:
                if k_id.shape[1] != self.cfg.d_model:
                    raise ad.ShapeError(
                        f"extra_kv feature dim {k_id.shape[1]} != d_model {self.cfg.d_model}")
                k_full = ad.concat([k_full, k_id], axis=0)
                v_full = ad.concat([v_full, v_id], axis=0)

        # Heads are column blocks, so splitting after the KV concat matches
        # a per-head concat exactly; batched matmuls keep the gemms large.
        nh, dh = self.cfg.n_heads, self.d_head
        lq, lk = q.shape[0], k_full.shape[0]
        qh = ad.transpose(ad.reshape(q, lq, nh, dh), (1, 0, 2))
        kh = ad.transpose(ad.reshape(k_full, lk, nh, dh), (1, 0, 2))
        vh = ad.transpose(ad.reshape(v_full, lk, nh, dh), (1, 0, 2))
        scores = ad.mul(ad.bmm(qh, ad.transpose(kh, (0, 2, 1))), 1.0 / math.sqrt(dh))
        mixed = ad.bmm(ad.softmax(scores, axis=2), vh)
        merged = ad.reshape(ad.transpose(mixed, (1, 0, 2)), lq, nh * dh)
        return ad.matmul(merged, self.wo) + self.bo.reshape(1, -1)

    def forward(self, x, cond_vec, adapter=None, extra_kv=None, resample_rows=None, record=None):
        shift1, scale1, gate1, shift2, scale2, gate2 = self._modulation(cond_vec)
        h = ad.layer_norm(x, self._ln_gamma, self._ln_beta)
        h = ad.mul(h, scale1 + 1.0) + shift1
        x = x + ad.mul(self.attention(h, adapter, extra_kv, resample_rows, record), gate1)
        h = ad.layer_norm(x, self._ln_gamma, self._ln_beta)
        h = ad.mul(h, scale2 + 1.0) + shift2
        h = ad.matmul(ad.silu(ad.matmul(h, self.w1) + self.b1.reshape(1, -1)), self.w2)
        h = h + self.b2.reshape(1, -1)
        return x + ad.mul(h, gate2)


class Backbone:
    """Noise-prediction transformer over patchified latent clips."""

    def __init__(self, cfg: BackboneConfig, seed=0):
        self.cfg = cfg
        self._params = []
        rng = np.random.default_rng(seed)

        def register(name, arr):
            t = Tensor(arr, requires_grad=True)
            self._params.append((name, t))
            return t

        d = cfg.d_model
        in_dim = cfg.latent_channels * cfg.patch * cfg.patch
        self.patch_w = register("patch.w", (rng.standard_normal((in_dim, d)) * 0.02).astype(np.float32))
        self.patch_b = register("patch.b", np.zeros(d, dtype=np.float32))
        self.t_w1 = register("t_embed.w1", (rng.standard_normal((d, d)) * 0.02).astype(np.float32))
        self.t_b1 = register("t_embed.b1", np.zeros(d, dtype=np.float32))
        self.t_w2 = register("t_embed.w2", (rng.standard_normal((d, d)) * 0.02).astype(np.float32))
        self.t_b2 = register("t_embed.b2", np.zeros(d, dtype=np.float32))
        self.caption_table = register(
            "caption.table", (rng.standard_normal((cfg.caption_vocab, d)) * 0.02).astype(np.float32))
        self.blocks = [DiTBlock(cfg, rng, register, f"block{i}") for i in range(cfg.n_layers)]
        self.final_gamma = register("final.gamma", np.ones(d, dtype=np.float32))
        self.final_beta = register("final.beta", np.zeros(d, dtype=np.float32))
        self.out_w = register("out.w", (rng.standard_normal((d, in_dim)) * 0.02).astype(np.float32))
        self.out_b = register("out.b", np.zeros(in_dim, dtype=np.float32))
        self._perm_cache = {}

    # -- parameters -----------------------------------------------------------

    def named_parameters(self):
        return list(self._params)

    def parameters(self):
        return [t for _, t in self._params]

    def param_count(self):
        return sum(t.size for t in self.parameters())

    # -- tokenization -----------------------------------------------------------

    def _patch_perm(self, shape):
        """Flat-index permutation mapping latent (T,C,H,W) to (L, C*p*p)."""
        if shape in self._perm_cache:
            return self._perm_cache[shape]
        t, c, h, w = shape
        p = self.cfg.patch
        gy, gx = h // p, w // p
        tt, yy, xx = np.meshgrid(np.arange(t), np.arange(gy), np.arange(gx), indexing="ij")
        cc, py, px = np.meshgrid(np.arange(c), np.arange(p), np.arange(p), indexing="ij")
        rows = ((tt * c)[..., None, None, None] + cc) * h
        rows = (rows + (yy * p)[..., None, None, None] + py) * w
        rows = rows + (xx * p)[..., None, None, None] + px
        perm = rows.reshape(t * gy * gx, c * p * p)
        inv = np.empty(perm.size, dtype=np.int64)
        inv[perm.reshape(-1)] = np.arange(perm.size, dtype=np.int64)
        self._perm_cache[shape] = (perm, inv.reshape(t, c, h, w))
        return self._perm_cache[shape]

    def patchify(self, latent, t_offset=0, fg_flag=None):
        """Project each p x p x C' patch to d_model and add positions."""
        if isinstance(latent, LatentClip):
            x = Tensor(latent.data)
        elif isinstance(latent, Tensor):
            x = latent
        else:
            x = Tensor(np.asarray(latent, dtype=np.float32))
        t, c, h, w = x.shape
        p = self.cfg.patch
        if h % p or w % p:
            raise ValueError(f"latent extents {h}x{w} not divisible by patch {p}")
        if c != self.cfg.latent_channels:
            raise ValueError(f"latent has {c} channels, config expects {self.cfg.latent_channels}")
        perm, _ = self._patch_perm((t, c, h, w))
        patches = ad.take_flat(x, perm)
        tokens = ad.matmul(patches, self.patch_w) + self.patch_b.reshape(1, -1)
        grid = (t, h // p, w // p)
        if self.cfg.positional:
            tokens = tokens + Tensor(positional_encoding(grid, self.cfg.d_model, t_offset))
        return TokenSeq(tokens=tokens, grid=grid, fg_flag=fg_flag)

    def unpatchify(self, seq: TokenSeq) -> Tensor:
        """Learned output projection, then inverse patch arrangement."""
        t, gy, gx = seq.grid
        p = self.cfg.patch
        c = self.cfg.latent_channels
        shape = (t, c, gy * p, gx * p)
        _, inv = self._patch_perm(shape)
        out = ad.matmul(seq.tokens, self.out_w) + self.out_b.reshape(1, -1)
        return ad.take_flat(out, inv)

    # -- conditioning -----------------------------------------------------------

    def embed_timestep(self, t) -> Tensor:
        base = Tensor(timestep_sinusoid(t, self.cfg.d_model).reshape(1, -1))
        h = ad.silu(ad.matmul(base, self.t_w1) + self.t_b1.reshape(1, -1))
        return ad.matmul(h, self.t_w2) + self.t_b2.reshape(1, -1)

    def embed_caption(self, caption_id) -> Tensor:
        if not 0 <= caption_id < self.cfg.caption_vocab:
            raise ValueError(f"caption id {caption_id} out of range [0, {self.cfg.caption_vocab})")
        return ad.gather_rows(self.caption_table, np.array([caption_id]))

    def cond_vector(self, cond: Conditioning) -> Tensor:
        return self.embed_timestep(cond.timestep) + self.embed_caption(cond.caption_id)

    # -- forward ------------------------------------------------------------------

    def forward(self, seq: TokenSeq, cond: Conditioning, injections=None, extra_kv=None,
                cond_latent=None, adapters=None, resample_fg=None, kv_record=None,
                collect_hidden=None) -> TokenSeq:
        """Run the block stack and return noise-prediction tokens.

        injections / extra_kv are sequences indexed by layer 1..n (element
        i-1 applies after / inside layer i); None entries are skipped.
        resample_fg appends the flagged video tokens' K/V at every layer;
        kv_record, when a list-per-layer dict is given, captures them.
        """
        n = self.cfg.n_layers
        L = len(seq)
        d = self.cfg.d_model
        if injections is not None and len(injections) != n:
            raise ValueError(f"expected {n} injection slots, got {len(injections)}")
        if extra_kv is not None and len(extra_kv) != n:
            raise ValueError(f"expected {n} extra_kv slots, got {len(extra_kv)}")

        x = seq.tokens
        n_cond = 0
        if self.cfg.mode == "i2v":
            if cond_latent is None:
                raise ValueError("i2v mode requires a first-frame condition latent")
            cond_seq = self.patchify(cond_latent, t_offset=-1)
            n_cond = len(cond_seq)
            x = ad.concat([cond_seq.tokens, x], axis=0)
        elif cond.first_frame is not None:
            raise ValueError("t2v mode does not accept a first-frame condition")

        cond_vec = self.cond_vector(cond)
        rows = None
        if resample_fg is not None:
            rows = np.flatnonzero(np.asarray(resample_fg, dtype=bool)) + n_cond

        for i, block in enumerate(self.blocks):
            adapter = adapters[i] if adapters is not None else None
            kv = extra_kv[i] if extra_kv is not None else None
            rec = [] if kv_record is not None else None
            x = block.forward(x, cond_vec, adapter=adapter, extra_kv=kv,
                              resample_rows=rows, record=rec)
            if rec:
                kv_record[i + 1] = rec[0]
            if injections is not None and injections[i] is not None:
                inj = injections[i]
                inj = inj if isinstance(inj, Tensor) else Tensor(inj)
                if inj.shape != (L, d):
                    raise ValueError(f"injection at layer {i + 1} has shape {inj.shape}, expected {(L, d)}")
                if n_cond:
                    inj = ad.concat([Tensor(np.zeros((n_cond, d), dtype=np.float32)), inj], axis=0)
                x = x + inj
            if collect_hidden is not None:
                collect_hidden.append(x.data.copy())

        x = ad.layer_norm(x, self.final_gamma, self.final_beta)
        if n_cond:
            x = ad.narrow(x, 0, n_cond, L)
        return TokenSeq(tokens=x, grid=seq.grid, fg_flag=seq.fg_flag)
