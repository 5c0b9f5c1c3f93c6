"""Assembled inpainting model: backbone + context encoder + ID adapters
behind one forward that wires selection, group-wise injection and
resampling hooks together.
"""

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor
from .backbone import Backbone, BackboneConfig, Conditioning, TokenSeq
from .codec import LatentCodec, VideoClip
from .context import ContextEncoder, SelectionMask, build_selection, group_for_layer, select_background
from .resample import IdAdapterSet


@dataclass
class ModelConfig:
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    context_depth: int = 2
    context_caption: bool = True
    use_context: bool = True
    use_select: bool = True
    adapter_rank: int = 4
    adapter_scale: float = 1.0
    spatial_factor: int = 2
    seed: int = 0


class VideoInpainter:
    """Single checkpointable unit holding all trainable pieces."""

    def __init__(self, cfg: ModelConfig):
        self.cfg = cfg
        self.codec = LatentCodec(cfg.spatial_factor, cfg.backbone.latent_channels)
        self.backbone = Backbone(cfg.backbone, seed=cfg.seed)
        self.context = None
        if cfg.use_context:
            self.context = ContextEncoder(
                self.backbone, depth=cfg.context_depth,
                use_caption=cfg.context_caption, seed=cfg.seed + 1)
        self.adapters = IdAdapterSet(
            cfg.backbone.n_layers, cfg.backbone.d_model,
            rank=cfg.adapter_rank, scale=cfg.adapter_scale, seed=cfg.seed + 2)

    # -- parameters ---------------------------------------------------------------

    def named_parameters(self):
        out = [("backbone." + n, t) for n, t in self.backbone.named_parameters()]
        if self.context is not None:
            out += [("context." + n, t) for n, t in self.context.named_parameters()]
        out += [("adapters." + n, t) for n, t in self.adapters.named_parameters()]
        return out

    def backbone_params(self):
        return self.backbone.parameters()

    def context_params(self):
        return [] if self.context is None else self.context.parameters()

    def adapter_params(self):
        return self.adapters.parameters()

    def set_trainable(self, backbone=False, context=False, adapters=False):
        for t in self.backbone_params():
            t.requires_grad = backbone
        for t in self.context_params():
            t.requires_grad = context
        for t in self.adapter_params():
            t.requires_grad = adapters

    # -- geometry -------------------------------------------------------------------

    def token_grid(self, latent_shape):
        t, _, h, w = latent_shape
        p = self.cfg.backbone.patch
        return (t, h // p, w // p)

    def token_fg(self, m_latent, grid):
        """Foreground flag per token: any footprint cell above threshold."""
        sel = build_selection(m_latent, grid, self.cfg.backbone.patch)
        return ~sel.keep

    # -- forward --------------------------------------------------------------------

    def injected_forward(self, z_t, z0_masked, m_resized, cond: Conditioning,
                         extra_kv=None, self_resample=False, kv_record=None,
                         collect_hidden=None, trace=None) -> TokenSeq:
        """Context-encoder pass, background-selective group-wise injection,
        then the backbone forward with any resampling hooks."""
        if not isinstance(z_t, Tensor):
            z_t = Tensor(np.asarray(z_t, dtype=np.float32))
        m = np.asarray(m_resized, dtype=np.float32)
        if m.ndim == 3:
            m = m[:, None]
        bb = self.cfg.backbone
        grid = self.token_grid(z_t.shape)
        fg = self.token_fg(m, grid)
        seq = self.backbone.patchify(z_t, fg_flag=fg)

        cond_latent = None
        if bb.mode == "i2v":
            if cond.first_frame is None:
                raise ValueError("i2v conditioning requires first_frame")
            frame = VideoClip(np.asarray(cond.first_frame, dtype=np.float32)[None])
            cond_latent = self.codec.encode(frame).data
        elif cond.first_frame is not None:
            raise ValueError("t2v conditioning must not carry first_frame")

        injections = None
        if self.context is not None:
            ctx_in = self.context.build_context_input(z_t, z0_masked, m)
            caption = cond.caption_id if self.cfg.context_caption else None
            groups = self.context.context_forward(ctx_in, cond.timestep, caption)
            if self.cfg.use_select:
                sel = SelectionMask(keep=~fg)
                groups = [select_background(g, sel) for g in groups]
            layer_groups = [group_for_layer(i, bb.n_layers, self.context.depth)
                            for i in range(1, bb.n_layers + 1)]
            injections = [groups[g - 1] for g in layer_groups]
            if trace is not None:
                trace["layer_groups"] = layer_groups
                trace["keep"] = ~fg
                trace["injections"] = [g.data.copy() for g in groups]

        return self.backbone.forward(
            seq, cond, injections=injections, extra_kv=extra_kv,
            cond_latent=cond_latent, adapters=self.adapters,
            resample_fg=(fg if self_resample else None),
            kv_record=kv_record, collect_hidden=collect_hidden)

    def predict_noise(self, z_t, z0_masked, m_resized, cond: Conditioning,
                      extra_kv=None, self_resample=False, kv_record=None) -> Tensor:
        """Latent-space noise prediction (unpatchified injected forward)."""
        out = self.injected_forward(z_t, z0_masked, m_resized, cond,
                                    extra_kv=extra_kv, self_resample=self_resample,
                                    kv_record=kv_record)
        return self.backbone.unpatchify(out)
