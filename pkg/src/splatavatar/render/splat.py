"""Differentiable Gaussian splatting.

Pipeline: UV maps -> posed cloud (LBS) -> projection -> depth-sorted
front-to-back compositing. Everything up to the 2D conics is built from
autodiff ops; compositing is a single custom op backed by the selected
rasterization kernel.

Kernel constants:
  * 2D low-pass blur of 0.3 px^2 added to each projected covariance.
  * Each Gaussian touches the pixels whose centers fall inside the bounding
    box of its 3-sigma ellipse (half-widths 3*sqrt(cov_xx), 3*sqrt(cov_yy)).
  * Primitives with camera-space depth <= near are culled.
  * Compositing order is ascending depth, ties by primitive index.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..autodiff import Tensor, grad, ops
from ..autodiff.tensor import make_result
from ..rig import ExpressionParams, HeadRig, TexelBinding, interpolate_vertex_attr, skinning
from . import backend
from .camera import Camera

BLUR = 0.3
CUTOFF_SIGMA = 3.0


@dataclass
class GaussianCloud:
    """Per-primitive attributes; arrays or tensors. Opacity is (M, 1)."""

    position: object
    rotation: object
    scale: object
    opacity: object
    color: object

    def __len__(self):
        return self.position.shape[0]

    def numpy(self) -> "GaussianCloud":
        conv = lambda x: x.data if isinstance(x, Tensor) else np.asarray(x)  # noqa: E731
        return GaussianCloud(*(conv(getattr(self, k)) for k in self.fields()))

    def tensors(self, requires_grad=False, dtype=None) -> "GaussianCloud":
        """Fresh leaf tensors holding a copy of the attributes."""
        src = self.numpy()
        return GaussianCloud(
            *(Tensor(np.array(getattr(src, k), dtype=dtype), requires_grad=requires_grad) for k in self.fields())
        )

    def take(self, index) -> "GaussianCloud":
        index = np.asarray(index, dtype=np.intp)
        pick = lambda x: ops.gather(x, index, unique=True) if isinstance(x, Tensor) else np.asarray(x)[index]  # noqa: E731
        return GaussianCloud(*(pick(getattr(self, k)) for k in self.fields()))

    @staticmethod
    def fields():
        return ("position", "rotation", "scale", "opacity", "color")


@dataclass
class RenderedFrame:
    rgb: object  # (H, W, 3)
    alpha: object  # (H, W)
    stats: dict = field(default_factory=dict)

    def numpy(self):
        conv = lambda x: x.data if isinstance(x, Tensor) else np.asarray(x)  # noqa: E731
        return conv(self.rgb), conv(self.alpha)


# -- cloud assembly ------------------------------------------------------------

def _quat_left_matrix(q: np.ndarray) -> np.ndarray:
    """(M, 4) -> (M, 4, 4) matrices L with L(q) @ r == q * r."""
    w, x, y, z = np.moveaxis(q, -1, 0)
    return np.stack(
        [
            np.stack([w, -x, -y, -z], -1),
            np.stack([x, w, -z, y], -1),
            np.stack([y, z, w, -x], -1),
            np.stack([z, -y, x, w], -1),
        ],
        -2,
    )


def pose_points(positions, rotations, blended: np.ndarray, quats: np.ndarray):
    """Apply per-point blended skinning transforms to differentiable attributes."""
    dt = positions.dtype
    a = blended[:, :, :3].astype(dt)
    t = blended[:, :, 3].astype(dt)
    posed = ops.sum(ops.reshape(positions, (-1, 1, 3)) * a, axis=-1) + t
    left = _quat_left_matrix(quats).astype(dt)
    rot = ops.sum(ops.reshape(rotations, (-1, 1, 4)) * left, axis=-1)
    return posed, rot


def texel_skin_weights(rig: HeadRig, binding: TexelBinding) -> np.ndarray:
    """Skin weights interpolated to the valid texels, rows renormalized."""
    w = interpolate_vertex_attr(rig, rig.skin_weights, binding)[binding.valid]
    return w / w.sum(axis=1, keepdims=True)


def gather_cloud(maps, binding: TexelBinding, rig: HeadRig, pose: ExpressionParams | None = None,
                 texel_weights: np.ndarray | None = None) -> GaussianCloud:
    """Valid texels of activated (H, W, k) maps -> posed cloud.

    ``maps`` holds tensors (differentiable) or arrays; positions and
    rotations are skinned with the texel-interpolated weights.
    """
    h, w = binding.resolution
    index = np.flatnonzero(binding.valid)

    def rows(x):
        x = x if isinstance(x, Tensor) else Tensor(np.asarray(x))
        if x.shape[:2] != (h, w):
            raise ValueError(f"map resolution {x.shape[:2]} does not match binding {(h, w)}")
        return ops.gather(ops.reshape(x, (h * w, x.shape[-1])), index, unique=True)

    pos, rot = rows(maps.position), rows(maps.rotation)
    cloud = GaussianCloud(pos, rot, rows(maps.scale), rows(maps.opacity), rows(maps.color))
    if pose is None or len(index) == 0:
        return cloud
    if texel_weights is None:
        texel_weights = texel_skin_weights(rig, binding)
    blended, quats = skinning(rig, pose, texel_weights)
    cloud.position, cloud.rotation = pose_points(pos, rot, blended, quats)
    return cloud


# -- projection ------------------------------------------------------------------

def _rotation_columns(q: Tensor):
    """Unit-normalized quaternion (M, 4) -> rotation matrix entries r[i][j] as (M,) tensors."""
    q = q / ops.sqrt(ops.sum(q * q, axis=-1, keepdims=True))
    w, x, y, z = (q[:, k] for k in range(4))
    return [
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ]


@dataclass
class Projection:
    means: Tensor  # (K, 2) pixel coordinates of kept primitives
    cov: Tensor  # (K, 3) 2D covariance (xx, xy, yy), blur included
    depth: np.ndarray  # (K,)
    kept: np.ndarray  # (K,) indices into the input cloud
    n_culled: int


def project(cloud: GaussianCloud, camera: Camera) -> Projection:
    pos = cloud.position if isinstance(cloud.position, Tensor) else Tensor(cloud.position)
    dt = pos.dtype
    Rw = camera.R.astype(dt)
    pc_all = ops.matmul(pos, Rw.T) + camera.t.astype(dt)
    z_all = pc_all.data[:, 2]
    kept = np.flatnonzero(z_all > camera.near)
    n_culled = len(z_all) - len(kept)
    if len(kept) == 0:
        empty = Tensor(np.zeros((0, 2), dtype=dt))
        return Projection(empty, Tensor(np.zeros((0, 3), dtype=dt)), np.zeros(0), kept, n_culled)
    sub = cloud.take(kept) if len(kept) < len(z_all) else cloud
    pc = ops.gather(pc_all, kept, unique=True) if len(kept) < len(z_all) else pc_all
    x, y, z = pc[:, 0], pc[:, 1], pc[:, 2]
    inv_z = 1.0 / z
    u = x * inv_z * camera.fx + camera.cx
    v = y * inv_z * camera.fy + camera.cy
    means = ops.stack([u, v], axis=-1)

    # T = J @ W, rows are (K, 3)
    inv_z2 = inv_z * inv_z
    a0 = ops.reshape(inv_z * camera.fx, (-1, 1))
    a2 = ops.reshape(-(x * inv_z2) * camera.fx, (-1, 1))
    b1 = ops.reshape(inv_z * camera.fy, (-1, 1))
    b2 = ops.reshape(-(y * inv_z2) * camera.fy, (-1, 1))
    t0 = a0 * Rw[0] + a2 * Rw[2]
    t1 = b1 * Rw[1] + b2 * Rw[2]

    # Sigma3 = (Rq S)(Rq S)^T, so Sigma2 = (T Rq S)(T Rq S)^T
    rq = _rotation_columns(sub.rotation if isinstance(sub.rotation, Tensor) else Tensor(sub.rotation))
    s = sub.scale if isinstance(sub.scale, Tensor) else Tensor(sub.scale)
    m0 = []
    m1 = []
    for j in range(3):
        col = ops.stack([rq[0][j], rq[1][j], rq[2][j]], axis=-1)  # (K, 3)
        sj = s[:, j]
        m0.append(ops.sum(t0 * col, axis=-1) * sj)
        m1.append(ops.sum(t1 * col, axis=-1) * sj)
    m0 = ops.stack(m0, axis=-1)
    m1 = ops.stack(m1, axis=-1)
    cxx = ops.sum(m0 * m0, axis=-1) + BLUR
    cxy = ops.sum(m0 * m1, axis=-1)
    cyy = ops.sum(m1 * m1, axis=-1) + BLUR
    cov = ops.stack([cxx, cxy, cyy], axis=-1)
    return Projection(means, cov, z.data.astype(np.float64), kept, n_culled)


def pixel_ranges(means: np.ndarray, cov: np.ndarray, width: int, height: int) -> np.ndarray:
    """Inclusive integer pixel boxes (x0, x1, y0, y1) covered by each 3-sigma box."""
    means = np.asarray(means, dtype=np.float64)
    cov = np.asarray(cov, dtype=np.float64)
    rx = CUTOFF_SIGMA * np.sqrt(cov[:, 0])
    ry = CUTOFF_SIGMA * np.sqrt(cov[:, 2])
    x0 = np.ceil(means[:, 0] - rx - 0.5)
    x1 = np.floor(means[:, 0] + rx - 0.5)
    y0 = np.ceil(means[:, 1] - ry - 0.5)
    y1 = np.floor(means[:, 1] + ry - 0.5)
    out = np.stack(
        [np.clip(x0, 0, width), np.clip(x1, -1, width - 1), np.clip(y0, 0, height), np.clip(y1, -1, height - 1)],
        axis=-1,
    )
    return np.ascontiguousarray(out.astype(np.int64))


def depth_order(depth: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(np.argsort(depth, kind="stable").astype(np.int64))


# -- compositing -----------------------------------------------------------------

def rasterize(means: Tensor, conics: Tensor, opacity: Tensor, colors: Tensor, order: np.ndarray,
              ranges: np.ndarray, background, width: int, height: int) -> Tensor:
    """Composite splats; returns an (H, W, 4) tensor of rgb and accumulated alpha."""
    k = backend.kernels()
    bg = np.ascontiguousarray(np.asarray(background, dtype=np.float64).reshape(3))
    args = (
        np.ascontiguousarray(means.data, dtype=np.float64),
        np.ascontiguousarray(conics.data, dtype=np.float64),
        np.ascontiguousarray(opacity.data.reshape(-1), dtype=np.float64),
        np.ascontiguousarray(colors.data, dtype=np.float64),
        np.ascontiguousarray(order, dtype=np.int64),
        np.ascontiguousarray(ranges, dtype=np.int64),
        bg,
        int(height),
        int(width),
    )
    rgb, alpha = k.rasterize_forward(*args)
    out = np.concatenate([np.asarray(rgb), np.asarray(alpha)[..., None]], axis=-1).astype(colors.dtype)

    def backward(g):
        g = np.asarray(g, dtype=np.float64)
        gm, gc, go, gcol = k.rasterize_backward(
            *args, np.ascontiguousarray(g[..., :3]), np.ascontiguousarray(g[..., 3])
        )
        return gm, gc, np.asarray(go).reshape(opacity.shape), gcol

    return make_result(out, (means, conics, opacity, colors), backward, "rasterize")


def render(cloud: GaussianCloud, camera: Camera, background=(0.0, 0.0, 0.0)) -> RenderedFrame:
    """Render a cloud; differentiable w.r.t. any tensor attributes of the cloud."""
    if len(cloud) == 0:
        bg = np.asarray(background, dtype=np.float64)
        rgb = np.broadcast_to(bg, (camera.height, camera.width, 3)).copy()
        return RenderedFrame(Tensor(rgb), Tensor(np.zeros((camera.height, camera.width))),
                             {"n_primitives": 0, "n_culled": 0})
    proj = project(cloud, camera)
    dt = proj.means.dtype
    if len(proj.kept) == 0:
        bg = np.asarray(background, dtype=dt)
        rgb = np.broadcast_to(bg, (camera.height, camera.width, 3)).copy()
        return RenderedFrame(Tensor(rgb), Tensor(np.zeros((camera.height, camera.width), dtype=dt)),
                             {"n_primitives": len(cloud), "n_culled": proj.n_culled})
    cxx, cxy, cyy = proj.cov[:, 0], proj.cov[:, 1], proj.cov[:, 2]
    det = cxx * cyy - cxy * cxy
    conics = ops.stack([cyy / det, -cxy / det, cxx / det], axis=-1)
    ranges = pixel_ranges(proj.means.data, proj.cov.data, camera.width, camera.height)
    order = depth_order(proj.depth)
    if len(proj.kept) < len(cloud):
        sub = cloud.take(proj.kept)
    else:
        sub = cloud
    opacity = sub.opacity if isinstance(sub.opacity, Tensor) else Tensor(sub.opacity)
    color = sub.color if isinstance(sub.color, Tensor) else Tensor(sub.color)
    out = rasterize(proj.means, conics, opacity, color, order, ranges, background, camera.width, camera.height)
    stats = {"n_primitives": len(cloud), "n_culled": proj.n_culled, "backend": backend.current_backend()}
    return RenderedFrame(out[..., :3], out[..., 3], stats)


def render_backward(cloud: GaussianCloud, camera: Camera, frame_grad, background=(0.0, 0.0, 0.0)) -> dict:
    """Gradients of <frame, frame_grad> w.r.t. every cloud attribute.

    ``frame_grad`` is an (H, W, 3) rgb gradient or an ``(rgb_grad, alpha_grad)`` pair.
    """
    leaf = cloud.tensors(requires_grad=True)
    frame = render(leaf, camera, background)
    if isinstance(frame_grad, tuple):
        g_rgb, g_a = frame_grad
    else:
        g_rgb, g_a = frame_grad, None
    terms = []
    if frame.rgb.requires_grad:
        terms.append(ops.sum(frame.rgb * np.asarray(g_rgb, dtype=frame.rgb.dtype)))
    if g_a is not None and frame.alpha.requires_grad:
        terms.append(ops.sum(frame.alpha * np.asarray(g_a, dtype=frame.alpha.dtype)))
    names = GaussianCloud.fields()
    if not terms:
        return {k: np.zeros_like(getattr(leaf, k).data) for k in names}
    total = terms[0] if len(terms) == 1 else terms[0] + terms[1]
    grads = grad(total, [getattr(leaf, k) for k in names])
    return dict(zip(names, grads))


# -- export ----------------------------------------------------------------------

def to_uint8(rgb) -> np.ndarray:
    rgb = rgb.data if isinstance(rgb, Tensor) else np.asarray(rgb)
    return np.round(np.clip(rgb, 0.0, 1.0) * 255.0).astype(np.uint8)


def save_png(image, path) -> None:
    from PIL import Image

    img = image.rgb if isinstance(image, RenderedFrame) else image
    Image.fromarray(to_uint8(img)).save(str(path))


def export_turntable(cloud: GaussianCloud, cameras, out_dir, background=(0.0, 0.0, 0.0)) -> Path:
    """Render one frame per camera into ``out_dir`` and write ``index.txt``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    lines = ["# frame file azimuth_deg fx width height"]
    flat = cloud.numpy()
    for i, cam in enumerate(cameras):
        frame = render(flat, cam, background)
        name = f"frame_{i:04d}.png"
        save_png(frame, out / name)
        c = cam.center
        az = np.degrees(np.arctan2(c[0], c[2]))
        lines.append(f"{i} {name} {az:.3f} {cam.fx:.3f} {cam.width} {cam.height}")
    (out / "index.txt").write_text("\n".join(lines) + "\n")
    return out / "index.txt"
