"""Expression-driven deltas: driving position map -> UNet -> masked raw-space fusion."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .autodiff import Tensor, ops
from .autodiff.nn import Conv2d, Module
from .rig import ExpressionParams, HeadRig, TexelBinding, deform, uv_position_map
from .uvmaps import N_CHANNELS, GaussianMaps, TexelSpace, activate


@dataclass
class UNetConfig:
    id_dim: int = 16
    base: int = 32
    depth: int = 3  # number of down (and up) stages
    out_channels: int = N_CHANNELS

    @property
    def in_channels(self) -> int:
        return self.id_dim + 3

    def widths(self) -> list[int]:
        return [min(self.base * 2**i, self.base * 4) for i in range(self.depth + 1)]

    def validate(self) -> None:
        if self.out_channels != N_CHANNELS:
            raise ValueError(f"UNet must output {N_CHANNELS} channels")
        if self.depth < 1:
            raise ValueError("UNet needs at least one down stage")

    def to_dict(self) -> dict:
        return asdict(self)


class UNet(Module):
    """Strided-conv encoder, nearest-upsample decoder with concatenated skips.
    The final 1x1 conv starts at zero so an untrained UNet outputs no deltas."""

    def __init__(self, cfg: UNetConfig | None = None, seed: int = 0, dtype=np.float32):
        cfg = cfg or UNetConfig()
        cfg.validate()
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        w = cfg.widths()
        self.inc = Conv2d(cfg.in_channels, w[0], 3, rng, dtype=dtype)
        self.downs = [Conv2d(w[i], w[i + 1], 3, rng, stride=2, padding=1, dtype=dtype) for i in range(cfg.depth)]
        self.mid = Conv2d(w[-1], w[-1], 3, rng, dtype=dtype)
        self.ups = []
        c = w[-1]
        for i in reversed(range(cfg.depth)):
            self.ups.append(Conv2d(c + w[i], w[i], 3, rng, dtype=dtype))
            c = w[i]
        self.outc = Conv2d(c, cfg.out_channels, 1, rng, dtype=dtype, zero=True)

    @property
    def dtype(self):
        return self.inc.weight.dtype

    def forward(self, x: Tensor) -> Tensor:
        """(H, W, C_in) or (N, H, W, C_in) -> same spatial size with 14 channels."""
        single = x.ndim == 3
        if single:
            x = ops.reshape(x, (1,) + x.shape)
        h, w = x.shape[1:3]
        if h % 2**self.cfg.depth or w % 2**self.cfg.depth:
            raise ValueError(f"UV size {h}x{w} must be divisible by {2**self.cfg.depth}")
        skips = []
        x = ops.relu(self.inc(x))
        for down in self.downs:
            skips.append(x)
            x = ops.relu(down(x))
        x = ops.relu(self.mid(x))
        for up in self.ups:
            x = ops.upsample_nearest(x, 2)
            x = ops.relu(up(ops.concat([x, skips.pop()], axis=-1)))
        out = self.outc(x)
        return ops.reshape(out, out.shape[1:]) if single else out


def build_driving_map(rig: HeadRig, expr: ExpressionParams, binding: TexelBinding) -> np.ndarray:
    """Position map of the expression-deformed (unposed) rig surface; zero at invalid texels."""
    return uv_position_map(rig, deform(rig, expr), binding)[0]


def driving_input(p_driving: np.ndarray, space: TexelSpace) -> np.ndarray:
    """Normalized UNet position input: offset from the neutral surface in units of
    the position range, zero at invalid texels."""
    x = (np.asarray(p_driving) - space.anchors) / space.position_range
    return np.where(space.binding.valid[..., None], x, 0.0)


def decode_delta(f_id: Tensor, p_driving: np.ndarray, unet: UNet, space: TexelSpace) -> Tensor:
    """Concatenate identity features with the driving map and decode raw deltas (H, W, 14)."""
    if f_id.shape[-1] != unet.cfg.id_dim:
        raise ValueError(f"identity features have {f_id.shape[-1]} channels, UNet expects {unet.cfg.id_dim}")
    if p_driving.shape[:2] != f_id.shape[:2]:
        raise ValueError(f"driving map {p_driving.shape[:2]} does not match features {f_id.shape[:2]}")
    drive = Tensor(driving_input(p_driving, space).astype(f_id.dtype))
    return unet(ops.concat([f_id, drive], axis=-1))


def fuse_raw(raw_st: Tensor, delta: Tensor, dyn_mask: np.ndarray) -> Tensor:
    """raw_st + M_dyn * delta; texels outside the mask keep raw_st exactly."""
    return raw_st + ops.masked_mul(delta, np.asarray(dyn_mask, dtype=bool)[..., None])


def fuse_dynamic(raw_st: Tensor, delta: Tensor, dyn_mask: np.ndarray, space: TexelSpace) -> GaussianMaps:
    """Dynamic maps G_dyn: deltas added in raw space under the mask, then re-activated."""
    if raw_st.shape != delta.shape:
        raise ValueError(f"static {raw_st.shape} and delta {delta.shape} maps differ in shape")
    return activate(fuse_raw(raw_st, delta, dyn_mask), space.anchors, space)
