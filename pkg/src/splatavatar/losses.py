"""Training objective: photometric, structural, perceptual and regularizer terms.

Images are (H, W, 3) tensors in [0, 1]. Every term is minimized and is zero
on identical inputs.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass, fields
from typing import Callable

import numpy as np

from .autodiff import Tensor, ops
from .autodiff.gradcheck import register

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2
PYRAMID_SCALES = 3
_GRAD_EPS = 1e-6  # keeps the gradient magnitude differentiable on flat regions

COMPONENTS = ("l1", "ssim", "lpips", "mouth", "xyz", "scale")


@dataclass
class LossWeights:
    l1: float = 1.0
    ssim: float = 0.1
    lpips: float = 0.2
    mouth: float = 10.0
    xyz: float = 0.01
    scale: float = 1.0

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not (v >= 0.0 and math.isfinite(v)):
                raise ValueError(f"loss weight {f.name} must be finite and nonnegative, got {v}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class RegularizerAnchors:
    position: np.ndarray  # (H, W, 3) neutral surface points
    scale: np.ndarray  # (H, W, 3) initial scales
    valid: np.ndarray  # (H, W) bool

    @classmethod
    def from_space(cls, space) -> "RegularizerAnchors":
        h, w = space.resolution
        s = np.full((h, w, 3), space.init_scale)
        return cls(space.anchors, s, space.binding.valid)


def _as_tensor(x, like=None) -> Tensor:
    return x if isinstance(x, Tensor) else ops.as_tensor(np.asarray(x), like)


def _same_shape(a, b, what: str) -> None:
    if tuple(a.shape) != tuple(b.shape):
        raise ValueError(f"{what}: shape mismatch {a.shape} vs {b.shape}")


def l1(pred, gt) -> Tensor:
    pred = _as_tensor(pred)
    gt = _as_tensor(gt, pred)
    _same_shape(pred, gt, "l1")
    return ops.mean(ops.abs(pred - gt))


# -- SSIM ----------------------------------------------------------------------

def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(x**2) / (2 * sigma**2))
    return g / g.sum()


def _channels_first(x: Tensor) -> Tensor:
    """(H, W, C) -> (C, H, W, 1) so each channel filters independently."""
    h, w, c = x.shape
    return ops.reshape(ops.transpose(x, (2, 0, 1)), (c, h, w, 1))


def _blur_valid(x: Tensor, window: np.ndarray) -> Tensor:
    k = len(window)
    wx = window.reshape(1, k, 1, 1).astype(x.dtype)
    wy = window.reshape(k, 1, 1, 1).astype(x.dtype)
    return ops.conv2d(ops.conv2d(x, Tensor(wx), stride=1, padding=0), Tensor(wy), stride=1, padding=0)


def ssim_map(pred, gt) -> Tensor:
    pred = _as_tensor(pred)
    gt = _as_tensor(gt, pred)
    _same_shape(pred, gt, "ssim")
    h, w = pred.shape[:2]
    if h < SSIM_WINDOW or w < SSIM_WINDOW:
        raise ValueError(f"images of {h}x{w} are smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window")
    x = _channels_first(pred)
    y = _channels_first(gt)
    c = x.shape[0]
    stacked = ops.concat([x, y, x * x, y * y, x * y], axis=0)
    blurred = _blur_valid(stacked, gaussian_window())
    mx, my, exx, eyy, exy = (blurred[i * c : (i + 1) * c] for i in range(5))
    vx = exx - mx * mx
    vy = eyy - my * my
    cov = exy - mx * my
    num = (2.0 * mx * my + SSIM_C1) * (2.0 * cov + SSIM_C2)
    den = (mx * mx + my * my + SSIM_C1) * (vx + vy + SSIM_C2)
    return num / den


def ssim_loss(pred, gt) -> Tensor:
    """1 - mean SSIM."""
    return 1.0 - ops.mean(ssim_map(pred, gt))


# -- perceptual ----------------------------------------------------------------

_SOBEL_X = np.array([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]]) / 8.0


def _avg_pool2(x: Tensor) -> Tensor:
    n, h, w, c = x.shape
    h2, w2 = h // 2, w // 2
    x = x[:, : 2 * h2, : 2 * w2, :] if (h % 2 or w % 2) else x
    return ops.mean(ops.reshape(x, (n, h2, 2, w2, 2, c)), axis=(2, 4))


def gradient_pyramid(img, scales: int = PYRAMID_SCALES) -> list[Tensor]:
    """Per-channel Sobel gradient magnitudes at ``scales`` dyadic resolutions."""
    x = _channels_first(_as_tensor(img))
    k = np.stack([_SOBEL_X, _SOBEL_X.T], axis=-1).reshape(3, 3, 1, 2).astype(x.dtype)
    feats = []
    for s in range(scales):
        if s:
            x = _avg_pool2(x)
        if min(x.shape[1:3]) < 3:
            break
        g = ops.conv2d(x, Tensor(k), stride=1, padding=0)
        feats.append(ops.sqrt(ops.sum(g * g, axis=-1) + _GRAD_EPS))
    return feats


def gradient_pyramid_distance(pred, gt) -> Tensor:
    fp = gradient_pyramid(pred)
    fg = gradient_pyramid(gt)
    terms = [ops.mean((a - b) * (a - b)) for a, b in zip(fp, fg)]
    total = terms[0]
    for t in terms[1:]:
        total = total + t
    return total * (1.0 / len(terms))


METRICS: dict[str, Callable[[Tensor, Tensor], Tensor]] = {"gradient_pyramid": gradient_pyramid_distance}
DEFAULT_METRIC = "gradient_pyramid"


def register_metric(name: str, fn: Callable[[Tensor, Tensor], Tensor]) -> None:
    """Add a differentiable image distance usable as the perceptual term."""
    METRICS[name] = fn


def perceptual(pred, gt, metric: str | Callable = DEFAULT_METRIC) -> Tensor:
    pred = _as_tensor(pred)
    gt = _as_tensor(gt, pred)
    _same_shape(pred, gt, "perceptual")
    if callable(metric):
        fn = metric
    elif metric in METRICS:
        fn = METRICS[metric]
    else:
        raise KeyError(f"perceptual metric {metric!r} is not registered (known: {sorted(METRICS)})")
    return fn(pred, gt)


def mouth_perceptual(pred, gt, mask, metric: str | Callable = DEFAULT_METRIC) -> Tensor:
    """Perceptual distance between the images restricted to an image-space mask."""
    pred = _as_tensor(pred)
    gt = _as_tensor(gt, pred)
    m = np.asarray(mask, dtype=pred.dtype)
    if m.ndim == 2:
        m = m[..., None]
    if not m.any():
        warnings.warn("empty mouth mask; mouth term is zero", RuntimeWarning, stacklevel=2)
        return Tensor(np.zeros((), dtype=pred.dtype))
    return perceptual(ops.masked_mul(pred, m), gt * m, metric)


# -- regularizers --------------------------------------------------------------

def _masked_mean_sq(x: Tensor, ref: np.ndarray, valid: np.ndarray) -> Tensor:
    _same_shape(x, ref, "regularizer")
    v = np.asarray(valid, dtype=bool)
    n = int(v.sum())
    if n == 0:
        return Tensor(np.zeros((), dtype=x.dtype))
    d = ops.masked_mul(x - ref.astype(x.dtype), v[..., None])
    return ops.sum(d * d) * (1.0 / n)


def regularizers(position, scale, anchors: RegularizerAnchors):
    """(L_xyz, L_scale): mean over valid texels of squared deviation norms."""
    position = _as_tensor(position)
    scale = _as_tensor(scale)
    return (
        _masked_mean_sq(position, anchors.position, anchors.valid),
        _masked_mean_sq(scale, anchors.scale, anchors.valid),
    )


def total(components: dict, weights: LossWeights | None = None) -> Tensor:
    """Weighted sum of the named components; missing components count as 0."""
    weights = weights or LossWeights()
    unknown = set(components) - set(COMPONENTS)
    if unknown:
        raise KeyError(f"unknown loss components {sorted(unknown)}")
    out = None
    for name in COMPONENTS:
        if name not in components:
            continue
        c = _as_tensor(components[name])
        if not np.isfinite(c.data).all():
            raise ValueError(f"loss component {name} is not finite")
        term = c * getattr(weights, name)
        out = term if out is None else out + term
    return out if out is not None else Tensor(np.zeros(()))


# -- gradient catalog entries ----------------------------------------------------

def _image_pair(r, size=16):
    return [r.uniform(0.05, 0.95, (size, size, 3)), r.uniform(0.05, 0.95, (size, size, 3))]


def _mouth_sample_mask(size=16):
    m = np.zeros((size, size))
    m[4:12, 3:13] = 1.0
    return m


def _reg_sample(r):
    return [r.standard_normal((6, 6, 3)), r.uniform(0.1, 1.0, (6, 6, 3))]


_REG_ANCHORS = RegularizerAnchors(
    np.linspace(-1, 1, 108).reshape(6, 6, 3), np.full((6, 6, 3), 0.5), np.arange(36).reshape(6, 6) % 5 != 0
)

def _l1_sample(r):
    # keep every residual well away from the kink at zero
    a = r.uniform(0, 1, (6, 6, 3))
    return [a, a + r.uniform(0.01, 0.5, a.shape) * r.choice([-1.0, 1.0], a.shape)]


# Image losses mix thousands of pixels, so a few gradient entries are tiny
# cancellations (~1e-8); a smaller step keeps truncation error below them.
_LOSS_EPS = 1e-5

register("l1", l1, _l1_sample)
register("ssim", ssim_loss, _image_pair, _LOSS_EPS)
register("perceptual", perceptual, _image_pair, _LOSS_EPS)
register("mouth_perceptual", lambda p, g: mouth_perceptual(p, g, _mouth_sample_mask()), _image_pair, _LOSS_EPS)
register("l_xyz", lambda p, s: regularizers(p, s, _REG_ANCHORS)[0], _reg_sample)
register("l_scale", lambda p, s: regularizers(p, s, _REG_ANCHORS)[1], _reg_sample)
