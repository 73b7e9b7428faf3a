"""The full avatar model: reconstruction net + dynamic UNet over one texel space."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, checkpoint
from .config import apply_flat, read_kv, to_flat, write_kv
from .dynamic import UNet, UNetConfig, build_driving_map, decode_delta, fuse_dynamic
from .recon import AvatarCanonical, ReconConfig, ReconNet, reconstruct
from .render import Camera, RenderedFrame, gather_cloud, render
from .rig import ExpressionParams, HeadRig, build_rig
from .uvmaps import GaussianMaps, TexelSpace, activate

MODEL_VERSION = "1"


@dataclass
class ModelConfig:
    recon: ReconConfig = field(default_factory=ReconConfig)
    unet: UNetConfig = field(default_factory=UNetConfig)
    rig_seed: int = 0
    seed: int = 0

    def validate(self) -> None:
        self.recon.validate()
        self.unet.validate()
        if self.unet.id_dim != self.recon.id_dim:
            raise ValueError("UNet id_dim must match the reconstruction id_dim")


class AvatarModel:
    def __init__(self, cfg: ModelConfig | None = None, rig: HeadRig | None = None):
        cfg = cfg or ModelConfig()
        cfg.validate()
        self.cfg = cfg
        self.rig = rig if rig is not None else build_rig(cfg.rig_seed)
        self.space = TexelSpace.build(self.rig, cfg.recon.uv_res)
        self.recon = ReconNet(cfg.recon, seed=cfg.seed)
        self.unet = UNet(cfg.unet, seed=cfg.seed + 1)
        self._drive_cache: dict = {}

    # -- parameters ---------------------------------------------------------------
    def named_parameters(self) -> dict:
        out = {f"recon.{k}": v for k, v in self.recon.named_parameters().items()}
        out.update({f"unet.{k}": v for k, v in self.unet.named_parameters().items()})
        return out

    def state_dict(self) -> dict:
        return {k: p.data.copy() for k, p in self.named_parameters().items()}

    def load_state_dict(self, state: dict) -> None:
        self.recon.load_state_dict({k[6:]: v for k, v in state.items() if k.startswith("recon.")})
        self.unet.load_state_dict({k[5:]: v for k, v in state.items() if k.startswith("unet.")})

    def save(self, path) -> None:
        """Writes ``path`` (weights) and ``path`` + ``.cfg`` (key=value config)."""
        checkpoint.save(path, self.state_dict())
        write_kv(str(path) + ".cfg", {**to_flat(self.cfg), "model_version": MODEL_VERSION},
                 header="splatavatar model config")

    @classmethod
    def load(cls, path, rig: HeadRig | None = None) -> "AvatarModel":
        cfg = ModelConfig()
        items = read_kv(str(path) + ".cfg")
        items.pop("model_version", None)
        apply_flat(cfg, items)
        m = cls(cfg, rig)
        m.load_state_dict(checkpoint.load(path))
        return m

    # -- forward paths ----------------------------------------------------------------
    def reconstruct(self, images, masks=None, features=None) -> AvatarCanonical:
        return reconstruct(self.recon, images, self.space, masks, features)

    def driving_map(self, expr: ExpressionParams) -> np.ndarray:
        key = expr.psi.tobytes()
        hit = self._drive_cache.get(key)
        if hit is None:
            hit = build_driving_map(self.rig, expr, self.space.binding)
            if len(self._drive_cache) > 256:
                self._drive_cache.clear()
            self._drive_cache[key] = hit
        return hit

    def dynamic_maps(self, f_id: Tensor, raw: Tensor, expr: ExpressionParams, dyn_mask=None) -> GaussianMaps:
        delta = decode_delta(f_id, self.driving_map(expr), self.unet, self.space)
        mask = self.space.dyn_mask if dyn_mask is None else dyn_mask
        return fuse_dynamic(raw, delta, mask, self.space)

    def drive(self, f_id: Tensor, raw: Tensor, expr: ExpressionParams, camera: Camera,
              background=(0.0, 0.0, 0.0), dyn_mask=None) -> RenderedFrame:
        maps = self.dynamic_maps(f_id, raw, expr, dyn_mask)
        cloud = gather_cloud(maps, self.space.binding, self.rig, expr, self.space.texel_weights)
        return render(cloud, camera, background)

    def static_maps(self, raw: Tensor) -> GaussianMaps:
        return activate(raw, self.space.anchors, self.space)

