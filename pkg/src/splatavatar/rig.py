"""Procedural parametric head rig.

Expression blendshapes, a three-joint skeleton (global, neck, jaw) with
linear blend skinning, a UV layout with two extra teeth islands, and the
texel binding that anchors one Gaussian per covered UV texel.

Conventions: meters, +y up, the face looks down +z. Quaternions are
(w, x, y, z). UV maps are indexed ``[row, col]`` with texel centers at
``u = (col + 0.5) / W`` and ``v = (row + 0.5) / H``.
"""

from __future__ import annotations

import hashlib
import io
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

JOINT_NAMES = ("global", "neck", "jaw")
REGION_NAMES = ("face", "mouth", "eyes", "hair", "teeth")
DYNAMIC_REGIONS = ("face", "mouth", "eyes")
# a face belongs to a region when at least this many of its corners do
REGION_MIN_CORNERS = 2

_BIND_TOL = 1e-12


class RigError(ValueError):
    pass


# -- quaternions ---------------------------------------------------------------

def quat_normalize(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    return q / np.linalg.norm(q, axis=-1, keepdims=True)


def quat_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    aw, ax, ay, az = np.moveaxis(np.asarray(a, dtype=np.float64), -1, 0)
    bw, bx, by, bz = np.moveaxis(np.asarray(b, dtype=np.float64), -1, 0)
    return np.stack(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        axis=-1,
    )


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    w, x, y, z = np.moveaxis(quat_normalize(q), -1, 0)
    return np.stack(
        [
            np.stack([1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)], -1),
            np.stack([2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)], -1),
            np.stack([2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)], -1),
        ],
        axis=-2,
    )


def matrix_to_quat(m: np.ndarray) -> np.ndarray:
    """Rotation matrix to unit quaternion with w >= 0 (Shepperd's method)."""
    m = np.asarray(m, dtype=np.float64)
    flat = m.reshape(-1, 3, 3)
    out = np.empty((flat.shape[0], 4))
    for i, r in enumerate(flat):
        tr = r[0, 0] + r[1, 1] + r[2, 2]
        if tr > 0:
            s = np.sqrt(tr + 1.0) * 2
            q = [0.25 * s, (r[2, 1] - r[1, 2]) / s, (r[0, 2] - r[2, 0]) / s, (r[1, 0] - r[0, 1]) / s]
        elif r[0, 0] > r[1, 1] and r[0, 0] > r[2, 2]:
            s = np.sqrt(1.0 + r[0, 0] - r[1, 1] - r[2, 2]) * 2
            q = [(r[2, 1] - r[1, 2]) / s, 0.25 * s, (r[0, 1] + r[1, 0]) / s, (r[0, 2] + r[2, 0]) / s]
        elif r[1, 1] > r[2, 2]:
            s = np.sqrt(1.0 + r[1, 1] - r[0, 0] - r[2, 2]) * 2
            q = [(r[0, 2] - r[2, 0]) / s, (r[0, 1] + r[1, 0]) / s, 0.25 * s, (r[1, 2] + r[2, 1]) / s]
        else:
            s = np.sqrt(1.0 + r[2, 2] - r[0, 0] - r[1, 1]) * 2
            q = [(r[1, 0] - r[0, 1]) / s, (r[0, 2] + r[2, 0]) / s, (r[1, 2] + r[2, 1]) / s, 0.25 * s]
        q = np.asarray(q)
        out[i] = q if q[0] >= 0 else -q
    return quat_normalize(out).reshape(m.shape[:-2] + (4,))


def axis_angle_quat(axis, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    return np.concatenate([[np.cos(angle / 2)], np.sin(angle / 2) * axis])


IDENTITY_QUAT = np.array([1.0, 0.0, 0.0, 0.0])


# -- data types ----------------------------------------------------------------

@dataclass
class HeadRig:
    vertices: np.ndarray  # (V, 3)
    faces: np.ndarray  # (F, 3) int
    expr_basis: np.ndarray  # (E, V, 3)
    joint_positions: np.ndarray  # (J, 3) rest pivots; rest rotations are identity
    parents: np.ndarray  # (J,) int, -1 for the root
    skin_weights: np.ndarray  # (V, J)
    uv_coords: np.ndarray  # (F, 3, 2) per face corner
    regions: dict = field(default_factory=dict)  # name -> vertex index array
    joint_names: tuple = JOINT_NAMES

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_expr(self) -> int:
        return len(self.expr_basis)

    @property
    def n_joints(self) -> int:
        return len(self.joint_positions)

    @property
    def extent(self) -> float:
        """Largest side of the template's bounding box."""
        return float(np.ptp(self.vertices, axis=0).max())

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.vertices.min(axis=0) + self.vertices.max(axis=0))

    def validate(self) -> None:
        w = self.skin_weights
        if (w < -1e-9).any() or np.abs(w.sum(axis=1) - 1.0).max() > 1e-6:
            raise RigError("skin weights must be nonnegative with rows summing to 1")
        a, b, c = self.uv_coords[:, 0], self.uv_coords[:, 1], self.uv_coords[:, 2]
        area = 0.5 * np.abs((b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (c[:, 0] - a[:, 0]) * (b[:, 1] - a[:, 1]))
        bad = np.nonzero(area < 1e-12)[0]
        if bad.size:
            raise RigError(f"degenerate UV triangles: faces {bad[:10].tolist()}")
        for name, idx in self.regions.items():
            idx = np.asarray(idx)
            if idx.size and (idx.min() < 0 or idx.max() >= self.n_vertices):
                raise RigError(f"region '{name}' references vertices outside the mesh")
        if self.faces.min() < 0 or self.faces.max() >= self.n_vertices:
            raise RigError("face indices out of range")

    def to_bytes(self) -> bytes:
        return _dump_rig(self)

    def digest(self) -> str:
        return hashlib.sha256(self.to_bytes()).hexdigest()


@dataclass
class ExpressionParams:
    psi: np.ndarray  # (E,)
    joint_rots: np.ndarray  # (J, 4) local joint rotations
    global_rot: np.ndarray = field(default_factory=lambda: IDENTITY_QUAT.copy())
    transl: np.ndarray = field(default_factory=lambda: np.zeros(3))

    @classmethod
    def neutral(cls, n_expr: int, n_joints: int = len(JOINT_NAMES)) -> "ExpressionParams":
        return cls(np.zeros(n_expr), np.tile(IDENTITY_QUAT, (n_joints, 1)))

    def validate(self) -> None:
        for q in np.vstack([self.joint_rots, self.global_rot[None]]):
            if abs(np.linalg.norm(q) - 1.0) > 1e-6:
                raise RigError("pose quaternions must be unit-norm")

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.psi, self.joint_rots.reshape(-1), self.global_rot, self.transl])

    @classmethod
    def from_vector(cls, vec, n_expr: int, n_joints: int = len(JOINT_NAMES)) -> "ExpressionParams":
        vec = np.asarray(vec, dtype=np.float64)
        e, j = n_expr, n_joints
        return cls(
            vec[:e].copy(),
            vec[e : e + 4 * j].reshape(j, 4).copy(),
            vec[e + 4 * j : e + 4 * j + 4].copy(),
            vec[e + 4 * j + 4 : e + 4 * j + 7].copy(),
        )


@dataclass
class TexelBinding:
    face_index: np.ndarray  # (H, W) int32, -1 where invalid
    bary: np.ndarray  # (H, W, 3)
    valid: np.ndarray  # (H, W) bool

    @property
    def resolution(self) -> tuple[int, int]:
        return self.valid.shape

    @property
    def n_valid(self) -> int:
        return int(self.valid.sum())


# -- deformation ---------------------------------------------------------------

def deform(rig: HeadRig, expr: ExpressionParams) -> np.ndarray:
    """Template vertices displaced by the expression blendshapes (no skinning)."""
    psi = np.asarray(expr.psi, dtype=np.float64)
    if psi.shape != (rig.n_expr,):
        raise RigError(f"expected {rig.n_expr} expression coefficients, got {psi.shape}")
    return rig.vertices + np.tensordot(psi, rig.expr_basis, axes=1)


def joint_transforms(rig: HeadRig, expr: ExpressionParams) -> np.ndarray:
    """Per-joint 4x4 transforms mapping rest-space points to posed space,
    including the global rigid transform."""
    rots = quat_to_matrix(expr.joint_rots)
    world = np.zeros((rig.n_joints, 4, 4))
    for j in range(rig.n_joints):
        local = np.eye(4)
        local[:3, :3] = rots[j]
        p = rig.parents[j]
        local[:3, 3] = rig.joint_positions[j] - (rig.joint_positions[p] if p >= 0 else 0.0)
        world[j] = local if p < 0 else world[p] @ local
    glob = np.eye(4)
    glob[:3, :3] = quat_to_matrix(expr.global_rot)
    glob[:3, 3] = expr.transl
    out = np.empty_like(world)
    for j in range(rig.n_joints):
        rest_inv = np.eye(4)
        rest_inv[:3, 3] = -rig.joint_positions[j]
        out[j] = glob @ world[j] @ rest_inv
    return out


def _check_weights(weights: np.ndarray) -> None:
    if (weights < -1e-6).any() or np.abs(weights.sum(axis=1) - 1.0).max() > 1e-6:
        raise RigError("skinning weight rows must be convex (nonnegative, summing to 1)")


def skinning(rig: HeadRig, expr: ExpressionParams, weights: np.ndarray):
    """Blended per-point transforms: (M, 3, 4) affine and (M, 4) rotation quats.

    Quaternions are blended as a normalized weighted sum after aligning each
    joint's sign with the point's largest-weight joint.
    """
    weights = np.asarray(weights, dtype=np.float64)
    _check_weights(weights)
    transforms = joint_transforms(rig, expr)
    blended = np.einsum("mj,jab->mab", weights, transforms[:, :3, :])
    jq = matrix_to_quat(transforms[:, :3, :3])
    ref = jq[np.argmax(weights, axis=1)]  # (M, 4)
    signs = np.sign(ref @ jq.T)  # (M, J)
    signs[signs == 0] = 1.0
    q = np.einsum("mj,mj,jq->mq", weights, signs, jq)
    return blended, quat_normalize(q)


def lbs(rig: HeadRig, expr: ExpressionParams, points: np.ndarray, weights: np.ndarray, rotations=None):
    """Linear blend skinning of points (and optionally their orientations)."""
    blended, q = skinning(rig, expr, weights)
    points = np.asarray(points, dtype=np.float64)
    posed = np.einsum("mab,mb->ma", blended[:, :, :3], points) + blended[:, :, 3]
    if rotations is None:
        return posed
    return posed, quat_normalize(quat_mul(q, rotations))


# -- UV binding & maps ---------------------------------------------------------

def bind_texels(rig: HeadRig, resolution) -> TexelBinding:
    """Bind each texel whose center lies inside a UV triangle to that face.

    Centers on an edge shared by several faces go to the lowest face index;
    a center strictly inside two faces means the layout overlaps.
    """
    h, w = (resolution, resolution) if np.isscalar(resolution) else resolution
    if h < 8 or w < 8:
        raise RigError("UV resolution must be at least 8x8")
    face_index = np.full((h, w), -1, dtype=np.int32)
    bary = np.zeros((h, w, 3))
    on_edge = np.zeros((h, w), dtype=bool)
    for f, tri in enumerate(rig.uv_coords):
        tx = tri[:, 0] * w - 0.5  # texel-index coordinates
        ty = tri[:, 1] * h - 0.5
        c0, c1 = max(int(np.ceil(tx.min() - 1e-9)), 0), min(int(np.floor(tx.max() + 1e-9)), w - 1)
        r0, r1 = max(int(np.ceil(ty.min() - 1e-9)), 0), min(int(np.floor(ty.max() + 1e-9)), h - 1)
        if c0 > c1 or r0 > r1:
            continue
        cols, rows = np.meshgrid(np.arange(c0, c1 + 1), np.arange(r0, r1 + 1))
        px, py = cols.astype(np.float64), rows.astype(np.float64)
        (x0, x1, x2), (y0, y1, y2) = tx, ty
        det = (y1 - y2) * (x0 - x2) + (x2 - x1) * (y0 - y2)
        b0 = ((y1 - y2) * (px - x2) + (x2 - x1) * (py - y2)) / det
        b1 = ((y2 - y0) * (px - x2) + (x0 - x2) * (py - y2)) / det
        b2 = 1.0 - b0 - b1
        bb = np.stack([b0, b1, b2], axis=-1)
        inside = (bb >= -_BIND_TOL).all(axis=-1)
        if not inside.any():
            continue
        edge = (bb <= _BIND_TOL).any(axis=-1)
        rr, cc = rows[inside], cols[inside]
        taken = face_index[rr, cc] >= 0
        if taken.any():
            clash = taken & ~(edge[inside] & on_edge[rr, cc])
            if clash.any():
                k = np.argmax(clash)
                other = int(face_index[rr[k], cc[k]])
                raise RigError(f"overlapping UV triangles: faces {other} and {f}")
        free = ~taken
        face_index[rr[free], cc[free]] = f
        bary[rr[free], cc[free]] = np.clip(bb[inside][free], 0.0, None)
        on_edge[rr[free], cc[free]] = edge[inside][free]
    valid = face_index >= 0
    # renormalize after clipping the -tol slack
    s = bary.sum(axis=-1, keepdims=True)
    bary = np.where(valid[..., None], bary / np.where(s > 0, s, 1.0), 0.0)
    return TexelBinding(face_index, bary, valid)


def interpolate_vertex_attr(rig: HeadRig, attr: np.ndarray, binding: TexelBinding) -> np.ndarray:
    """Barycentric interpolation of a per-vertex attribute into UV space."""
    attr = np.asarray(attr)
    if attr.shape[0] != rig.n_vertices:
        raise RigError(f"expected {rig.n_vertices} vertex rows, got {attr.shape[0]}")
    fi = np.where(binding.valid, binding.face_index, 0)
    corners = rig.faces[fi]  # (H, W, 3)
    vals = attr[corners]  # (H, W, 3, C)
    out = np.einsum("hwk,hwkc->hwc", binding.bary, vals.reshape(vals.shape[:3] + (-1,)))
    out[~binding.valid] = 0.0
    return out.reshape(binding.valid.shape + attr.shape[1:])


def uv_position_map(rig: HeadRig, vertices: np.ndarray, binding: TexelBinding):
    """(H, W, 3) surface positions at texel centers plus the validity mask."""
    return interpolate_vertex_attr(rig, vertices, binding), binding.valid.copy()


def region_mask(rig: HeadRig, region: str, binding: TexelBinding) -> np.ndarray:
    """Texels bound to faces with at least ``REGION_MIN_CORNERS`` region vertices."""
    if region not in rig.regions:
        raise RigError(f"unknown region '{region}'")
    member = np.zeros(rig.n_vertices, dtype=bool)
    member[np.asarray(rig.regions[region], dtype=np.intp)] = True
    face_in = member[rig.faces].sum(axis=1) >= REGION_MIN_CORNERS
    fi = np.where(binding.valid, binding.face_index, 0)
    return binding.valid & face_in[fi]


def dynamic_mask(rig: HeadRig, binding: TexelBinding) -> np.ndarray:
    m = np.zeros(binding.valid.shape, dtype=bool)
    for name in DYNAMIC_REGIONS:
        m |= region_mask(rig, name, binding)
    return m


# -- procedural construction ---------------------------------------------------

def _smoothstep(e0, e1, x):
    t = np.clip((x - e0) / (e1 - e0), 0.0, 1.0)
    return t * t * (3 - 2 * t)


def _unit_dir(lat, lon):
    return np.stack([np.sin(lon) * np.cos(lat), np.sin(lat), np.cos(lon) * np.cos(lat)], axis=-1)


def _ang_dist(dirs, lat, lon):
    c = _unit_dir(np.asarray(lat), np.asarray(lon))
    return np.arccos(np.clip(dirs @ c, -1.0, 1.0))


def _bump(dist, radius):
    t = np.clip(1.0 - (dist / radius) ** 2, 0.0, None)
    return t * t


def build_rig(seed: int = 0, n_lon: int = 32, n_lat: int = 18, n_expr: int = 10) -> HeadRig:
    """Deterministic low-poly head: lat-long shell, top pole, two teeth quads."""
    if not 1 <= n_expr <= 16:
        raise RigError("n_expr must be in [1, 16]")
    rng = np.random.default_rng(seed)
    d2r = np.pi / 180.0
    lat_lo, lat_hi = -55.0 * d2r, 78.0 * d2r
    lats = np.linspace(lat_lo, lat_hi, n_lat)
    lons = 2 * np.pi * (np.arange(n_lon) / n_lon - 0.5)
    glat, glon = np.meshgrid(lats, lons, indexing="ij")
    dirs = _unit_dir(glat, glon).reshape(-1, 3)
    flat_lat, flat_lon = glat.reshape(-1), glon.reshape(-1)

    radii = np.array([0.075, 0.095, 0.09]) * (1.0 + 0.03 * rng.uniform(-1, 1, 3))
    shell = dirs * radii
    normals = dirs / radii  # ellipsoid gradient direction
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    # narrower jaw and neck
    taper = 1.0 - 0.18 * _smoothstep(-15 * d2r, -50 * d2r, flat_lat)
    shell[:, 0] *= taper
    shell[:, 2] *= 1.0 - 0.25 * _smoothstep(-35 * d2r, -55 * d2r, flat_lat)
    nose = 0.02 * _bump(_ang_dist(dirs, -4 * d2r, 0.0), 0.28)
    sockets = sum(0.007 * _bump(_ang_dist(dirs, 12 * d2r, s * 0.38), 0.22) for s in (-1, 1))
    wobble = 0.002 * np.sin(3 * flat_lon + rng.uniform(0, 2 * np.pi)) * np.cos(2 * flat_lat)
    shell = shell + normals * (nose - sockets + wobble)[:, None]
    pole = np.array([[0.0, radii[1] * 1.0, 0.0]])

    # teeth proxy grids, 4 x 3 vertices each, just behind the lips
    mouth_lat = -22 * d2r
    mouth_y = radii[1] * np.sin(mouth_lat)
    mouth_z = radii[2] * np.cos(mouth_lat) - 0.012
    tx = np.linspace(-0.022, 0.022, 4)
    teeth = []
    for y0, y1 in ((mouth_y + 0.0015, mouth_y + 0.009), (mouth_y - 0.009, mouth_y - 0.0015)):
        ty = np.linspace(y1, y0, 3)
        gy, gx = np.meshgrid(ty, tx, indexing="ij")
        gz = mouth_z - 12.0 * gx**2
        teeth.append(np.stack([gx, gy, gz], axis=-1).reshape(-1, 3))
    vertices = np.vstack([shell, pole] + teeth)
    n_shell = n_lat * n_lon
    pole_idx = n_shell
    upper0, lower0 = n_shell + 1, n_shell + 13

    # faces + per-corner UVs
    v_top, v_bot, v_pole = 0.22, 0.98, 0.17

    def v_of(k):
        return v_top + (lats[-1] - lats[k]) / (lats[-1] - lats[0]) * (v_bot - v_top)

    faces, uvs = [], []
    for k in range(n_lat - 1):
        for j in range(n_lon):
            jn = (j + 1) % n_lon
            a, b = k * n_lon + j, k * n_lon + jn
            c, d = (k + 1) * n_lon + j, (k + 1) * n_lon + jn
            ua, ub = j / n_lon, (j + 1) / n_lon
            va, vc = v_of(k), v_of(k + 1)
            faces += [(a, b, d), (a, d, c)]
            uvs += [((ua, va), (ub, va), (ub, vc)), ((ua, va), (ub, vc), (ua, vc))]
    top = n_lat - 1
    for j in range(n_lon):
        jn = (j + 1) % n_lon
        faces.append((top * n_lon + j, top * n_lon + jn, pole_idx))
        uvs.append(((j / n_lon, v_of(top)), ((j + 1) / n_lon, v_of(top)), ((j + 0.5) / n_lon, v_pole)))
    for base, (u0, u1) in ((upper0, (0.08, 0.44)), (lower0, (0.56, 0.92))):
        vv0, vv1 = 0.03, 0.14
        for r in range(2):
            for c in range(3):
                a, b = base + r * 4 + c, base + r * 4 + c + 1
                cc, dd = base + (r + 1) * 4 + c, base + (r + 1) * 4 + c + 1
                ua, ub = u0 + (u1 - u0) * c / 3, u0 + (u1 - u0) * (c + 1) / 3
                va, vb = vv0 + (vv1 - vv0) * r / 2, vv0 + (vv1 - vv0) * (r + 1) / 2
                faces += [(a, b, dd), (a, dd, cc)]
                uvs += [((ua, va), (ub, va), (ub, vb)), ((ua, va), (ub, vb), (ua, vb))]
    faces = np.asarray(faces, dtype=np.int32)
    uvs = np.asarray(uvs, dtype=np.float64)

    # skinning
    n_v = len(vertices)
    w = np.zeros((n_v, 3))
    jaw = _smoothstep(-13 * d2r, -26 * d2r, flat_lat) * (1.0 - _smoothstep(0.9, 1.4, np.abs(flat_lon)))
    jaw *= 1.0 - _smoothstep(-40 * d2r, -50 * d2r, flat_lat)
    neck = _smoothstep(-38 * d2r, -52 * d2r, flat_lat)
    w[:n_shell, 2] = jaw
    w[:n_shell, 1] = neck * (1.0 - jaw)
    w[:n_shell, 0] = 1.0 - w[:n_shell, 1] - w[:n_shell, 2]
    w[pole_idx, 0] = 1.0
    w[upper0:lower0, 0] = 1.0
    w[lower0:, 2] = 1.0
    joints = np.array([[0.0, 0.0, 0.0], [0.0, -0.075, -0.01], [0.0, -0.012, 0.005]])
    parents = np.array([-1, 0, 1], dtype=np.int32)

    # regions
    def pick(mask):
        return np.nonzero(mask)[0].astype(np.int32)

    shell_mask = np.zeros(n_v, dtype=bool)
    shell_mask[:n_shell] = True
    lat_all = np.concatenate([flat_lat, np.full(n_v - n_shell, np.nan)])
    lon_all = np.concatenate([flat_lon, np.full(n_v - n_shell, np.nan)])
    dirs_all = np.vstack([dirs, np.zeros((n_v - n_shell, 3))])
    with np.errstate(invalid="ignore"):
        face_r = shell_mask & (np.abs(lon_all) < 1.1) & (lat_all > -45 * d2r) & (lat_all < 35 * d2r)
        eyes_r = shell_mask & (
            (_ang_dist(dirs_all, 12 * d2r, 0.38) < 0.24) | (_ang_dist(dirs_all, 12 * d2r, -0.38) < 0.24)
        )
        mouth_r = shell_mask & (np.hypot((lat_all - mouth_lat) / 0.2, lon_all / 0.42) < 1.0)
        hair_r = shell_mask & ((lat_all > 30 * d2r) | (np.abs(lon_all) > 1.6))
    hair_r[pole_idx] = True
    teeth_r = np.zeros(n_v, dtype=bool)
    teeth_r[upper0:] = True
    regions = {
        "face": pick(face_r),
        "mouth": pick(mouth_r),
        "eyes": pick(eyes_r),
        "hair": pick(hair_r),
        "teeth": pick(teeth_r),
    }

    # expression blendshapes: compact-support displacement fields on the shell
    specs = [
        # (centers [(lat_deg, lon)], radius, direction kind, amplitude)
        ([(24, 0.35), (24, -0.35)], 0.35, "up", 0.008),
        ([(20, 0.0)], 0.30, "furrow", 0.005),
        ([(12, 0.38)], 0.20, "down", 0.005),
        ([(12, -0.38)], 0.20, "down", 0.005),
        ([(-20, 0.30), (-20, -0.30)], 0.30, "smile", 0.008),
        ([(-22, 0.0)], 0.30, "forward", 0.008),
        ([(-22, 0.32), (-22, -0.32)], 0.28, "stretch", 0.008),
        ([(-10, 0.7), (-10, -0.7)], 0.40, "normal", 0.010),
        ([(0, 0.0)], 0.25, "up", 0.004),
        ([(-27, 0.0)], 0.25, "down", 0.006),
        ([(30, 0.0)], 0.50, "normal", 0.005),
        ([(-35, 0.0)], 0.35, "forward", 0.006),
        ([(5, 0.5), (5, -0.5)], 0.30, "up", 0.004),
        ([(-15, 0.45)], 0.30, "smile", 0.006),
        ([(-15, -0.45)], 0.30, "smile", 0.006),
        ([(-5, 0.0)], 0.35, "normal", -0.006),
    ]
    basis = np.zeros((n_expr, n_v, 3))
    for e in range(n_expr):
        centers, radius, kind, amp = specs[e]
        amp *= 1.0 + 0.1 * rng.uniform(-1, 1)
        field_ = np.zeros((n_shell, 3))
        for lat_deg, lon in centers:
            fall = _bump(_ang_dist(dirs, lat_deg * d2r, lon), radius)
            side = np.sign(lon) if lon != 0 else 1.0
            if kind == "up":
                dvec = np.tile([0.0, 1.0, 0.0], (n_shell, 1))
            elif kind == "down":
                dvec = np.tile([0.0, -1.0, 0.0], (n_shell, 1))
            elif kind == "forward":
                dvec = np.tile([0.0, 0.0, 1.0], (n_shell, 1))
            elif kind == "furrow":
                dvec = np.column_stack([-np.sign(shell[:, 0]) * 0.7, -np.ones(n_shell) * 0.7, np.zeros(n_shell)])
            elif kind == "smile":
                dvec = np.tile([0.6 * side, 0.8, -0.2], (n_shell, 1))
            elif kind == "stretch":
                dvec = np.tile([side, 0.0, -0.2], (n_shell, 1))
            else:
                dvec = normals
            field_ += amp * fall[:, None] * dvec
        basis[e, :n_shell] = field_

    rig = HeadRig(
        vertices=vertices,
        faces=faces,
        expr_basis=basis,
        joint_positions=joints,
        parents=parents,
        skin_weights=w,
        uv_coords=uvs,
        regions=regions,
    )
    # snap to the float32 file precision so save/load round-trips exactly
    return _snap(rig)


def _snap(rig: HeadRig) -> HeadRig:
    f32 = lambda a: np.asarray(a, dtype=np.float32).astype(np.float64)  # noqa: E731
    w = np.asarray(rig.skin_weights, dtype=np.float32).astype(np.float64)
    rig.vertices = f32(rig.vertices)
    rig.expr_basis = f32(rig.expr_basis)
    rig.joint_positions = f32(rig.joint_positions)
    rig.skin_weights = w
    rig.uv_coords = f32(rig.uv_coords)
    rig.validate()
    return rig


# -- rig file ------------------------------------------------------------------
#
#   magic      8 bytes  b"SAVRIG\0\0"
#   version    u32 (1)
#   counts     u32 x 5: V, F, E, J, R (regions)
#   vertices   f32 V*3
#   faces      i32 F*3
#   basis      f32 E*V*3
#   joints     f32 J*3 rest pivots
#   parents    i32 J
#   weights    f32 V*J
#   uv         f32 F*3*2
#   joint names: J x (u16 length, UTF-8 bytes)
#   regions:     R x (u16 length, UTF-8 name, u32 count, i32 * count)
#
# Everything little-endian.

RIG_MAGIC = b"SAVRIG\0\0"


def _dump_rig(rig: HeadRig) -> bytes:
    buf = io.BytesIO()
    buf.write(RIG_MAGIC)
    buf.write(struct.pack("<I", 1))
    v, f, e, j = rig.n_vertices, len(rig.faces), rig.n_expr, rig.n_joints
    buf.write(struct.pack("<5I", v, f, e, j, len(rig.regions)))
    for arr, dt in (
        (rig.vertices, "<f4"),
        (rig.faces, "<i4"),
        (rig.expr_basis, "<f4"),
        (rig.joint_positions, "<f4"),
        (rig.parents, "<i4"),
        (rig.skin_weights, "<f4"),
        (rig.uv_coords, "<f4"),
    ):
        buf.write(np.ascontiguousarray(arr, dtype=dt).tobytes())
    for name in rig.joint_names:
        raw = name.encode()
        buf.write(struct.pack("<H", len(raw)) + raw)
    for name in sorted(rig.regions):
        raw = name.encode()
        idx = np.asarray(rig.regions[name], dtype="<i4")
        buf.write(struct.pack("<H", len(raw)) + raw + struct.pack("<I", idx.size) + idx.tobytes())
    return buf.getvalue()


def save_rig(rig: HeadRig, path) -> None:
    Path(path).write_bytes(_dump_rig(rig))


def load_rig(path) -> HeadRig:
    return rig_from_bytes(Path(path).read_bytes())


def rig_from_bytes(blob: bytes) -> HeadRig:
    if blob[:8] != RIG_MAGIC:
        raise RigError("not a rig file")
    (version,) = struct.unpack_from("<I", blob, 8)
    if version != 1:
        raise RigError(f"unsupported rig version {version}")
    v, f, e, j, r = struct.unpack_from("<5I", blob, 12)
    pos = 32

    def take(dt, count, shape):
        nonlocal pos
        arr = np.frombuffer(blob, dtype=dt, count=count, offset=pos).reshape(shape)
        pos += count * np.dtype(dt).itemsize
        return arr

    vertices = take("<f4", v * 3, (v, 3)).astype(np.float64)
    faces = take("<i4", f * 3, (f, 3)).astype(np.int32)
    basis = take("<f4", e * v * 3, (e, v, 3)).astype(np.float64)
    joints = take("<f4", j * 3, (j, 3)).astype(np.float64)
    parents = take("<i4", j, (j,)).astype(np.int32)
    weights = take("<f4", v * j, (v, j)).astype(np.float64)
    uv = take("<f4", f * 6, (f, 3, 2)).astype(np.float64)
    names = []
    for _ in range(j):
        (n,) = struct.unpack_from("<H", blob, pos)
        names.append(blob[pos + 2 : pos + 2 + n].decode())
        pos += 2 + n
    regions = {}
    for _ in range(r):
        (n,) = struct.unpack_from("<H", blob, pos)
        name = blob[pos + 2 : pos + 2 + n].decode()
        pos += 2 + n
        (cnt,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        regions[name] = take("<i4", cnt, (cnt,)).astype(np.int32)
    rig = HeadRig(vertices, faces, basis, joints, parents, weights, uv, regions, tuple(names))
    rig.validate()
    return rig
