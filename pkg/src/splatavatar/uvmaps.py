"""UV-space Gaussian attribute maps and the texel space they live in.

Raw maps carry 14 channels per texel in the order
position(3), opacity(1), scale(3), color(3), rotation(4). Activation turns
raw values into valid Gaussian attributes regardless of the raw values:

    position = anchor + 0.1 * extent * tanh(raw)
    opacity  = sigmoid(raw)
    scale    = min(scale_unit * softplus(raw), 0.05 * extent)
    color    = sigmoid(raw)
    rotation = normalize(raw + (1, 0, 0, 0))
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, ops
from .rig import HeadRig, TexelBinding, bind_texels, deform, ExpressionParams, interpolate_vertex_attr, region_mask, dynamic_mask

N_CHANNELS = 14
SLICES = {
    "position": slice(0, 3),
    "opacity": slice(3, 4),
    "scale": slice(4, 7),
    "color": slice(7, 10),
    "rotation": slice(10, 14),
}
POSITION_RANGE = 0.1  # fraction of rig extent
SCALE_MAX = 0.05  # fraction of rig extent
INIT_SCALE_SPACING = 0.6  # initial scale as a fraction of texel spacing


@dataclass
class GaussianMaps:
    """Activated per-texel attributes; arrays or tensors of shape (..., k)."""

    position: object
    opacity: object
    scale: object
    color: object
    rotation: object

    def numpy(self) -> "GaussianMaps":
        conv = lambda x: x.data if isinstance(x, Tensor) else np.asarray(x)  # noqa: E731
        return GaussianMaps(*(conv(getattr(self, k)) for k in SLICES))

    def as_array(self) -> np.ndarray:
        m = self.numpy()
        return np.concatenate([m.position, m.opacity, m.scale, m.color, m.rotation], axis=-1)


@dataclass
class TexelSpace:
    """A rig bound to a UV resolution, plus everything derived from that."""

    rig: HeadRig
    binding: TexelBinding
    anchors: np.ndarray  # (H, W, 3) neutral surface points (P_init)
    valid_index: np.ndarray  # (M,) flat row-major indices of valid texels
    texel_weights: np.ndarray  # (M, J) interpolated skin weights
    region_masks: dict
    dyn_mask: np.ndarray  # (H, W) bool
    extent: float
    spacing: np.ndarray  # (H, W) local texel spacing in meters
    scale_unit: float
    scale_max: float

    @classmethod
    def build(cls, rig: HeadRig, resolution=64) -> "TexelSpace":
        binding = bind_texels(rig, resolution)
        neutral = deform(rig, ExpressionParams.neutral(rig.n_expr, rig.n_joints))
        anchors = interpolate_vertex_attr(rig, neutral, binding)
        valid_index = np.flatnonzero(binding.valid)
        weights = interpolate_vertex_attr(rig, rig.skin_weights, binding).reshape(-1, rig.n_joints)[valid_index]
        weights /= weights.sum(axis=1, keepdims=True)
        masks = {name: region_mask(rig, name, binding) for name in rig.regions}
        extent = rig.extent
        spacing = texel_spacing(anchors, binding.valid)
        s_init = INIT_SCALE_SPACING * float(np.median(spacing[binding.valid]))
        return cls(
            rig=rig,
            binding=binding,
            anchors=anchors,
            valid_index=valid_index,
            texel_weights=weights,
            region_masks=masks,
            dyn_mask=dynamic_mask(rig, binding),
            extent=extent,
            spacing=spacing,
            scale_unit=s_init / np.log(2.0),
            scale_max=SCALE_MAX * extent,
        )

    @property
    def resolution(self) -> tuple[int, int]:
        return self.binding.resolution

    @property
    def n_gaussians(self) -> int:
        return len(self.valid_index)

    @property
    def position_range(self) -> float:
        return POSITION_RANGE * self.extent

    @property
    def init_scale(self) -> float:
        return self.scale_unit * np.log(2.0)

    def valid_rows(self, x):
        """(H, W, C) map -> (M, C) rows at valid texels; tensors stay differentiable."""
        h, w = self.resolution
        if isinstance(x, Tensor):
            return ops.gather(x.reshape(h * w, x.shape[-1]), self.valid_index, unique=True)
        x = np.asarray(x)
        return x.reshape(h * w, *x.shape[2:])[self.valid_index]

    def scatter(self, rows: np.ndarray, fill=0.0) -> np.ndarray:
        """(M, C) valid-texel rows -> (H, W, C) map."""
        h, w = self.resolution
        out = np.full((h * w,) + rows.shape[1:], fill, dtype=rows.dtype)
        out[self.valid_index] = rows
        return out.reshape((h, w) + rows.shape[1:])


def texel_spacing(position_map: np.ndarray, valid: np.ndarray) -> np.ndarray:
    """Distance to the farther valid 4-neighbour, per texel (0 for isolated texels)."""
    h, w = valid.shape
    best = np.zeros((h, w))
    for axis in (0, 1):
        for shift in (1, -1):
            nb = np.roll(position_map, shift, axis=axis)
            nb_valid = np.roll(valid, shift, axis=axis)
            if axis == 0:
                edge = (slice(0, 1), slice(None)) if shift == 1 else (slice(h - 1, h), slice(None))
            else:
                edge = (slice(None), slice(0, 1)) if shift == 1 else (slice(None), slice(w - 1, w))
            nb_valid = nb_valid.copy()
            nb_valid[edge] = False
            d = np.linalg.norm(position_map - nb, axis=-1)
            best = np.where(valid & nb_valid, np.maximum(best, d), best)
    return best


def activate(raw: Tensor, anchors, space: TexelSpace) -> GaussianMaps:
    """Raw (..., 14) tensor -> activated attributes. ``anchors`` broadcasts
    against the position channels."""
    if raw.shape[-1] != N_CHANNELS:
        raise ValueError(f"raw maps need {N_CHANNELS} channels, got {raw.shape[-1]}")
    p = ops.tanh(raw[..., SLICES["position"]]) * space.position_range + np.asarray(anchors, dtype=raw.dtype)
    a = ops.sigmoid(raw[..., SLICES["opacity"]])
    s = ops.clip(ops.softplus(raw[..., SLICES["scale"]]) * space.scale_unit, None, space.scale_max)
    c = ops.sigmoid(raw[..., SLICES["color"]])
    r = raw[..., SLICES["rotation"]] + np.array([1.0, 0.0, 0.0, 0.0], dtype=raw.dtype)
    r = r / ops.sqrt(ops.sum(r * r, axis=-1, keepdims=True) + 1e-12)
    return GaussianMaps(p, a, s, c, r)


def raw_from_attributes(maps: GaussianMaps, anchors, space: TexelSpace, eps: float = 1e-6) -> np.ndarray:
    """Inverse of ``activate`` for in-range attributes (used to seed tests and fixtures)."""
    m = maps.numpy()
    off = np.clip((m.position - anchors) / space.position_range, -1 + eps, 1 - eps)
    logit = lambda y: np.log(np.clip(y, eps, 1 - eps)) - np.log1p(-np.clip(y, eps, 1 - eps))  # noqa: E731
    s = np.clip(m.scale / space.scale_unit, eps, None)
    s_raw = np.where(s > 20, s, np.log(np.expm1(s)))
    q = m.rotation / np.linalg.norm(m.rotation, axis=-1, keepdims=True)
    q = np.where(q[..., :1] < 0, -q, q)
    r_raw = q - np.array([1.0, 0, 0, 0])
    return np.concatenate([np.arctanh(off), logit(m.opacity), s_raw, logit(m.color), r_raw], axis=-1)
