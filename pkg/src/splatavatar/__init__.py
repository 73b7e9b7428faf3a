"""Gaussian head avatars from one to four images.

A transformer encoder turns the input views into UV-space Gaussian maps and
identity features, a small UNet adds expression-dependent offsets inside the
face region, and a differentiable splatting renderer closes the loop.
"""

__version__ = "0.1.0"

from .asset import AvatarAsset, load_asset, save_asset
from .model import AvatarModel, ModelConfig
from .rig import ExpressionParams, build_rig

__all__ = [
    "AvatarAsset",
    "AvatarModel",
    "ExpressionParams",
    "ModelConfig",
    "build_rig",
    "load_asset",
    "save_asset",
]
