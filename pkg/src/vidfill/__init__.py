"""Desk-scale dual-branch video inpainting."""

__version__ = "0.1.0"

from .autodiff import Tensor, backward
from .backbone import Backbone, BackboneConfig, Conditioning, TokenSeq
from .codec import LatentCodec, LatentClip, MaskClip, VideoClip
from .context import ContextEncoder, SelectionMask, group_for_layer
from .model import ModelConfig, VideoInpainter
from .resample import IdAdapterSet, IdCache

__all__ = [
    "Tensor", "backward",
    "Backbone", "BackboneConfig", "Conditioning", "TokenSeq",
    "LatentCodec", "LatentClip", "MaskClip", "VideoClip",
    "ContextEncoder", "SelectionMask", "group_for_layer",
    "ModelConfig", "VideoInpainter",
    "IdAdapterSet", "IdCache",
]
