"""Synthetic closed-loop datasets and expression-distribution resampling.

A dataset directory holds::

    manifest.txt      key=value lines (see ``MANIFEST_KEYS``), '#' comments
    rig.bin           the shared head rig (``rig.save_rig`` format)
    expressions.csv   id,frame,psi_0..psi_{E-1},jaw_w,jaw_x,jaw_y,jaw_z,neck_w..neck_z,rot_w..rot_z,tx,ty,tz
    cameras.csv       view,fx,fy,cx,cy,r00..r22,tx,ty,tz,width,height,near
    frames.csv        id,frame,view,image,mask,mouth
    images/ masks/ mouth/   PNG files named id{ID}_f{FRAME}_v{VIEW}.png

Masks are 8-bit foreground alpha; mouth masks are the rendered coverage of
mouth and teeth Gaussians. Floats are written with ``repr`` so every stored
parameter reloads exactly.
"""

from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import Tensor
from .render import Camera, GaussianCloud, gather_cloud, render
from .render.splat import to_uint8
from .rig import (
    JOINT_NAMES,
    ExpressionParams,
    HeadRig,
    axis_angle_quat,
    build_rig,
    deform,
    interpolate_vertex_attr,
    load_rig,
    quat_mul,
    save_rig,
)
from .uvmaps import GaussianMaps, TexelSpace, raw_from_attributes

DATASET_FORMAT = "splatavatar-dataset"
DATASET_VERSION = 1
MANIFEST_KEYS = (
    "format", "version", "seed", "n_ids", "n_expr", "n_views", "image_size", "uv_res", "rig_seed",
    "focal", "distance", "elevation_deg", "background", "rig_sha256",
)
MOUTH_REGIONS = ("mouth", "teeth")

# base colors per region (linear RGB in [0, 1])
REGION_COLORS = {
    "face": (0.80, 0.60, 0.48),
    "mouth": (0.70, 0.25, 0.28),
    "eyes": (0.92, 0.92, 0.90),
    "hair": (0.25, 0.17, 0.10),
    "teeth": (0.95, 0.94, 0.88),
}
SKIN_DEFAULT = (0.78, 0.58, 0.47)
GT_OPACITY = 0.95
WRINKLE_GAIN = 25.0  # color change per meter of blendshape displacement


class DatasetError(RuntimeError):
    pass


# -- synthetic identities -------------------------------------------------------

def _smooth_field(rng: np.random.Generator, uv: np.ndarray, n_waves: int, max_freq: float, channels: int):
    """Band-limited noise: a sum of random sinusoids over UV, roughly unit scale."""
    out = np.zeros(uv.shape[:-1] + (channels,))
    for _ in range(n_waves):
        freq = rng.uniform(-max_freq, max_freq, 2)
        phase = rng.uniform(0, 2 * np.pi)
        amp = rng.standard_normal(channels)
        out += amp * np.sin(2 * np.pi * (uv @ freq) + phase)[..., None]
    return out / np.sqrt(n_waves)


def _vertex_field(rng, rig: HeadRig, n_waves: int, scale: float) -> np.ndarray:
    """Smooth per-vertex 3D displacement over the unit sphere of directions."""
    d = rig.vertices - rig.center
    d = d / np.maximum(np.linalg.norm(d, axis=1, keepdims=True), 1e-9)
    out = np.zeros_like(d)
    for _ in range(n_waves):
        k = rng.standard_normal(3) * 2.0
        out += rng.standard_normal(3) * np.sin(d @ k + rng.uniform(0, 2 * np.pi))[:, None]
    out /= np.sqrt(n_waves)
    m = np.abs(out).max()
    return out * (scale / m) if m > 0 else out


@dataclass
class SyntheticIdentity:
    seed: int
    maps: GaussianMaps  # neutral ground-truth attribute maps (arrays)
    wrinkles: np.ndarray  # (E, H, W, 3) color change per unit psi
    shape_offset: np.ndarray  # (H, W, 3) identity position offset from the template surface

    def maps_for(self, expr: ExpressionParams, space: TexelSpace) -> GaussianMaps:
        """Ground-truth maps under an expression (before skinning)."""
        valid = space.binding.valid[..., None]
        disp = interpolate_vertex_attr(space.rig, deform(space.rig, expr) - space.rig.vertices, space.binding)
        color = self.maps.color + np.tensordot(np.asarray(expr.psi), self.wrinkles, axes=1)
        color = np.where(valid, np.clip(color, 0.02, 0.98), 0.0)
        return GaussianMaps(
            np.where(valid, self.maps.position + disp, 0.0),
            self.maps.opacity,
            self.maps.scale,
            color,
            self.maps.rotation,
        )

    def raw_maps(self, space: TexelSpace) -> np.ndarray:
        """Neutral ground truth as raw 14-channel maps (zero at invalid texels)."""
        raw = raw_from_attributes(self.maps, space.anchors, space)
        return np.where(space.binding.valid[..., None], raw, 0.0)


def make_identity(space: TexelSpace, seed: int, jitter: float = 0.008) -> SyntheticIdentity:
    """A reproducible identity: smooth shape jitter, region-colored band-limited
    texture, isotropic scales from local texel spacing, expression wrinkles."""
    rng = np.random.default_rng([seed, 7919])
    rig = space.rig
    valid = space.binding.valid
    vmask = valid[..., None]
    h, w = space.resolution
    uv = np.stack(np.meshgrid((np.arange(w) + 0.5) / w, (np.arange(h) + 0.5) / h), axis=-1)

    offset_v = _vertex_field(rng, rig, 6, jitter)
    offset = interpolate_vertex_attr(rig, offset_v, space.binding)
    position = np.where(vmask, space.anchors + offset, 0.0)

    base = np.tile(np.asarray(SKIN_DEFAULT), (h, w, 1))
    tint = rng.uniform(-0.08, 0.08, 3)
    for name in ("hair", "face", "eyes", "mouth", "teeth"):
        if name in space.region_masks:
            base[space.region_masks[name]] = REGION_COLORS[name]
    hair_tone = rng.uniform(0.5, 1.6)
    base[space.region_masks["hair"]] *= hair_tone
    texture = _smooth_field(rng, uv, 24, 9.0, 3) * 0.07 + _smooth_field(rng, uv, 8, 3.0, 1) * 0.05
    color = np.clip(base + tint + texture, 0.03, 0.97)
    color = np.where(vmask, color, 0.0)

    s = np.clip(0.6 * space.spacing, 0.25 * space.init_scale, 0.9 * space.scale_max)
    scale = np.where(vmask, np.repeat(s[..., None], 3, axis=-1), 0.0)
    opacity = np.where(valid, GT_OPACITY, 0.0)[..., None]
    rotation = np.zeros((h, w, 4))
    rotation[..., 0] = 1.0

    # wrinkles: darkening/brightening proportional to each blendshape's displacement,
    # confined to the dynamic region
    disp_mag = np.stack(
        [np.linalg.norm(interpolate_vertex_attr(rig, rig.expr_basis[e], space.binding), axis=-1)
         for e in range(rig.n_expr)]
    )
    signs = rng.choice([-1.0, 1.0], rig.n_expr)
    wr = -WRINKLE_GAIN * signs[:, None, None] * disp_mag
    wr = np.where(space.dyn_mask[None], wr, 0.0)
    wrinkles = np.repeat(wr[..., None], 3, axis=-1) * np.array([1.0, 0.9, 0.85])
    return SyntheticIdentity(seed, GaussianMaps(position, opacity, scale, color, rotation), wrinkles, offset)


# -- expressions & cameras ----------------------------------------------------------

def random_expression(rng: np.random.Generator, rig: HeadRig, strength: float = 1.0) -> ExpressionParams:
    e = ExpressionParams.neutral(rig.n_expr, rig.n_joints)
    active = rng.choice(rig.n_expr, size=rng.integers(1, 4), replace=False)
    e.psi[active] = rng.uniform(-1.5, 1.5, len(active)) * strength
    jaw = JOINT_NAMES.index("jaw")
    neck = JOINT_NAMES.index("neck")
    e.joint_rots[jaw] = axis_angle_quat((1.0, 0.0, 0.0), rng.uniform(0.0, 0.3) * strength)
    e.joint_rots[neck] = quat_mul(
        axis_angle_quat((0.0, 1.0, 0.0), rng.uniform(-0.15, 0.15) * strength),
        axis_angle_quat((1.0, 0.0, 0.0), rng.uniform(-0.1, 0.1) * strength),
    )
    return e


def orbit_cameras(n_views: int, image_size: int, focal: float, distance: float, elevation_deg: float,
                  target) -> list[Camera]:
    """Evenly spaced over 360 degrees of azimuth, elevation alternating +/-."""
    cams = []
    for v in range(n_views):
        az = 2 * np.pi * v / n_views
        el = np.radians(elevation_deg) * (1 if v % 2 == 0 else -1) if n_views > 1 else 0.0
        cams.append(Camera.orbit(az, el, distance, focal, image_size, image_size, target=target))
    return cams


# -- rendering ground truth ---------------------------------------------------------

def _maps_tensors(maps: GaussianMaps) -> GaussianMaps:
    return GaussianMaps(*(Tensor(np.asarray(getattr(maps, k), dtype=np.float64)) for k in
                          ("position", "opacity", "scale", "color", "rotation")))


def gt_cloud(identity: SyntheticIdentity, expr: ExpressionParams, space: TexelSpace) -> GaussianCloud:
    maps = identity.maps_for(expr, space)
    return gather_cloud(_maps_tensors(maps), space.binding, space.rig, expr, space.texel_weights).numpy()


def mouth_indicator(space: TexelSpace) -> np.ndarray:
    m = np.zeros(space.resolution, dtype=bool)
    for name in MOUTH_REGIONS:
        m |= space.region_masks[name]
    return m


def render_gt(identity, expr, camera, space, background=(0.0, 0.0, 0.0)):
    """(rgb, alpha, mouth) float images of the ground-truth avatar."""
    cloud = gt_cloud(identity, expr, space)
    frame = render(cloud, camera, background)
    rgb, alpha = frame.numpy()
    ind = space.valid_rows(mouth_indicator(space)).astype(np.float64)
    mouth_cloud = GaussianCloud(cloud.position, cloud.rotation, cloud.scale, cloud.opacity,
                                np.repeat(ind[:, None], 3, axis=1))
    mouth = render(mouth_cloud, camera, (0.0, 0.0, 0.0)).numpy()[0][..., 0]
    return rgb, alpha, mouth


# -- dataset I/O --------------------------------------------------------------------

def _fmt(x) -> str:
    return repr(float(x))


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _read_csv(path: Path):
    with open(path, newline="") as f:
        r = csv.reader(f)
        header = next(r)
        return header, [row for row in r]


def expression_header(n_expr: int) -> list[str]:
    cols = ["id", "frame"] + [f"psi_{i}" for i in range(n_expr)]
    for j in JOINT_NAMES[1:]:
        cols += [f"{j}_{c}" for c in "wxyz"]
    cols += [f"rot_{c}" for c in "wxyz"] + ["tx", "ty", "tz"]
    return cols


def expression_row(expr: ExpressionParams) -> list[str]:
    vals = list(expr.psi) + list(expr.joint_rots[1:].reshape(-1)) + list(expr.global_rot) + list(expr.transl)
    return [_fmt(v) for v in vals]


def parse_expression(values, n_expr: int) -> ExpressionParams:
    v = np.array([float(x) for x in values])
    j = len(JOINT_NAMES)
    rots = np.tile(np.array([1.0, 0.0, 0.0, 0.0]), (j, 1))
    rots[1:] = v[n_expr : n_expr + 4 * (j - 1)].reshape(j - 1, 4)
    off = n_expr + 4 * (j - 1)
    return ExpressionParams(v[:n_expr].copy(), rots, v[off : off + 4].copy(), v[off + 4 : off + 7].copy())


def write_expression_csv(path, exprs) -> None:
    """Expression sequence CSV (frame, psi..., pose quaternions); ``id`` is 0."""
    exprs = list(exprs)
    n = len(exprs[0].psi)
    _write_csv(Path(path), expression_header(n), [["0", str(i)] + expression_row(e) for i, e in enumerate(exprs)])


def read_expression_csv(path) -> list[ExpressionParams]:
    header, rows = _read_csv(Path(path))
    n = sum(1 for h in header if h.startswith("psi_"))
    return [parse_expression(r[2:], n) for r in rows]


CAMERA_HEADER = ["view", "fx", "fy", "cx", "cy"] + [f"r{i}{j}" for i in range(3) for j in range(3)] + [
    "tx", "ty", "tz", "width", "height", "near"]


def write_camera_csv(path, cameras) -> None:
    rows = []
    for i, c in enumerate(cameras):
        rows.append([str(i)] + [_fmt(x) for x in [c.fx, c.fy, c.cx, c.cy, *c.R.reshape(-1), *c.t]]
                    + [str(c.width), str(c.height), _fmt(c.near)])
    _write_csv(Path(path), CAMERA_HEADER, rows)


def read_camera_csv(path) -> list[Camera]:
    _, rows = _read_csv(Path(path))
    cams = []
    for r in rows:
        v = [float(x) for x in r[1:17]]
        cams.append(Camera(v[0], v[1], v[2], v[3], np.array(v[4:13]).reshape(3, 3), np.array(v[13:16]),
                           int(r[17]), int(r[18]), float(r[19])))
    return cams


def _frame_name(i: int, f: int, v: int) -> str:
    return f"id{i:03d}_f{f:03d}_v{v:03d}.png"


def _save_png(path: Path, img: np.ndarray) -> None:
    from PIL import Image

    Image.fromarray(to_uint8(img)).save(str(path))


def load_png(path) -> np.ndarray:
    """PNG -> float64 array in [0, 1] ((H, W, 3) or (H, W))."""
    from PIL import Image

    with Image.open(path) as im:
        return np.asarray(im, dtype=np.float64) / 255.0


@dataclass
class DatasetManifest:
    root: Path
    meta: dict
    rig: HeadRig
    expressions: dict  # id -> list[ExpressionParams]
    cameras: list
    frames: list  # (id, frame, view, image, mask, mouth)
    _spaces: dict = field(default_factory=dict, repr=False)

    @property
    def ids(self) -> list[int]:
        return sorted(self.expressions)

    @property
    def uv_res(self) -> int:
        return int(self.meta["uv_res"])

    def identity_seed(self, i: int) -> int:
        return int(self.meta[f"identity.{i}.seed"])

    def space(self) -> TexelSpace:
        if "space" not in self._spaces:
            self._spaces["space"] = TexelSpace.build(self.rig, self.uv_res)
        return self._spaces["space"]

    def identity(self, i: int) -> SyntheticIdentity:
        return make_identity(self.space(), self.identity_seed(i))

    def frame_paths(self, i: int, f: int, v: int) -> tuple[Path, Path, Path]:
        return self.root / "images" / _frame_name(i, f, v), self.root / "masks" / _frame_name(i, f, v), \
            self.root / "mouth" / _frame_name(i, f, v)

    def load_frame(self, i: int, f: int, v: int):
        img, mask, mouth = self.frame_paths(i, f, v)
        return load_png(img), load_png(mask), load_png(mouth)

    def table(self) -> "ExpressionTable":
        ids, frames, psi = [], [], []
        for i in self.ids:
            for f, e in enumerate(self.expressions[i]):
                ids.append(i)
                frames.append(f)
                psi.append(e.psi)
        return ExpressionTable(np.array(ids), np.array(frames), np.array(psi))

    def validate(self) -> None:
        for _, _, _, img, mask, mouth in self.frames:
            for rel in (img, mask, mouth):
                if not (self.root / rel).is_file():
                    raise DatasetError(f"manifest references missing file {rel}")


def generate_dataset(out_dir, n_ids: int, n_expr: int, n_views: int, seed: int = 0, image_size: int = 128,
                     uv_res: int = 64, rig_seed: int = 0, focal: float | None = None, distance: float = 0.55,
                     elevation_deg: float = 15.0, log=None) -> DatasetManifest:
    """Render a synthetic multi-identity, multi-expression, multi-view dataset.

    Frame 0 of every identity is the neutral expression.
    """
    if min(n_ids, n_expr, n_views) <= 0:
        raise ValueError("identity, expression and view counts must be positive")
    root = Path(out_dir)
    for sub in ("images", "masks", "mouth"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    rig = build_rig(rig_seed)
    save_rig(rig, root / "rig.bin")
    space = TexelSpace.build(rig, uv_res)
    focal = float(focal if focal is not None else 2.2 * image_size)
    cams = orbit_cameras(n_views, image_size, focal, distance, elevation_deg, rig.center)
    rng = np.random.default_rng(seed)
    id_seeds = [int(s) for s in rng.integers(0, 2**31 - 1, n_ids)]

    meta = {
        "format": DATASET_FORMAT, "version": str(DATASET_VERSION), "seed": str(seed), "n_ids": str(n_ids),
        "n_expr": str(n_expr), "n_views": str(n_views), "image_size": str(image_size), "uv_res": str(uv_res),
        "rig_seed": str(rig_seed), "focal": _fmt(focal), "distance": _fmt(distance),
        "elevation_deg": _fmt(elevation_deg), "background": "0,0,0",
        "rig_sha256": hashlib.sha256((root / "rig.bin").read_bytes()).hexdigest(),
    }
    expressions = {}
    frames = []
    expr_rows = []
    for i, id_seed in enumerate(id_seeds):
        meta[f"identity.{i}.seed"] = str(id_seed)
        identity = make_identity(space, id_seed)
        erng = np.random.default_rng([seed, i, 104729])
        exprs = [ExpressionParams.neutral(rig.n_expr, rig.n_joints)]
        exprs += [random_expression(erng, rig) for _ in range(n_expr - 1)]
        expressions[i] = exprs
        for f, e in enumerate(exprs):
            expr_rows.append([str(i), str(f)] + expression_row(e))
            for v, cam in enumerate(cams):
                rgb, alpha, mouth = render_gt(identity, e, cam, space)
                name = _frame_name(i, f, v)
                _save_png(root / "images" / name, rgb)
                _save_png(root / "masks" / name, alpha)
                _save_png(root / "mouth" / name, mouth)
                frames.append((i, f, v, f"images/{name}", f"masks/{name}", f"mouth/{name}"))
        if log:
            log(f"event=identity_done id={i} frames={len(exprs) * len(cams)}")

    _write_csv(root / "expressions.csv", expression_header(rig.n_expr), expr_rows)
    write_camera_csv(root / "cameras.csv", cams)
    _write_csv(root / "frames.csv", ["id", "frame", "view", "image", "mask", "mouth"],
               [[str(a), str(b), str(c), d, e, g] for a, b, c, d, e, g in frames])
    lines = [f"# {DATASET_FORMAT} manifest"] + [f"{k}={v}" for k, v in meta.items()]
    (root / "manifest.txt").write_text("\n".join(lines) + "\n")
    return load_manifest(root)


def load_manifest(root) -> DatasetManifest:
    root = Path(root)
    if not (root / "manifest.txt").is_file():
        raise DatasetError(f"{root} has no manifest.txt")
    meta = {}
    for line in (root / "manifest.txt").read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        k, _, v = line.partition("=")
        meta[k.strip()] = v.strip()
    if meta.get("format") != DATASET_FORMAT:
        raise DatasetError(f"{root} is not a dataset directory")
    rig = load_rig(root / "rig.bin")
    header, rows = _read_csv(root / "expressions.csv")
    n = sum(1 for h in header if h.startswith("psi_"))
    expressions: dict[int, list] = {}
    for r in rows:
        expressions.setdefault(int(r[0]), []).append(parse_expression(r[2:], n))
    cams = read_camera_csv(root / "cameras.csv")
    _, frows = _read_csv(root / "frames.csv")
    frames = [(int(a), int(b), int(c), d, e, g) for a, b, c, d, e, g in frows]
    m = DatasetManifest(root, meta, rig, expressions, cams, frames)
    m.validate()
    return m


# -- expression tables and distribution adjustment -------------------------------------

@dataclass
class ExpressionTable:
    ids: np.ndarray  # (R,) int
    frames: np.ndarray  # (R,) int
    psi: np.ndarray  # (R, E)

    def __post_init__(self):
        self.ids = np.asarray(self.ids, dtype=np.int64)
        self.frames = np.asarray(self.frames, dtype=np.int64)
        self.psi = np.asarray(self.psi, dtype=np.float64)
        if self.psi.ndim != 2 or len(self.psi) != len(self.ids) or len(self.ids) != len(self.frames):
            raise ValueError("table columns must have matching row counts and a fixed psi dimension")

    def __len__(self):
        return len(self.ids)

    def rows_of(self, identity: int) -> np.ndarray:
        return np.flatnonzero(self.ids == identity)

    def to_csv(self, path) -> None:
        e = self.psi.shape[1]
        _write_csv(Path(path), ["id", "frame"] + [f"psi_{i}" for i in range(e)],
                   [[str(i), str(f)] + [_fmt(x) for x in p] for i, f, p in zip(self.ids, self.frames, self.psi)])

    @classmethod
    def from_csv(cls, path) -> "ExpressionTable":
        _, rows = _read_csv(Path(path))
        n_psi = None
        ids, frames, psi = [], [], []
        for r in rows:
            ids.append(int(r[0]))
            frames.append(int(r[1]))
            vals = [float(x) for x in r[2:]]
            if n_psi is None:
                n_psi = len(vals)
            elif len(vals) != n_psi:
                raise ValueError("rows have differing psi dimensions")
            psi.append(vals)
        return cls(np.array(ids), np.array(frames), np.array(psi).reshape(len(ids), n_psi or 0))


def cosine_similarity(table: ExpressionTable, anchor) -> np.ndarray:
    """cos(a, row) per row; NaN for zero-norm rows."""
    a = np.asarray(anchor, dtype=np.float64)
    na = np.linalg.norm(a)
    if na == 0:
        raise ValueError("anchor must be nonzero")
    nr = np.linalg.norm(table.psi, axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        cos = (table.psi @ a) / (nr * na)
    cos[nr == 0] = np.nan
    return cos


def rank_similar(table: ExpressionTable, anchor) -> np.ndarray:
    """All row indices ordered by descending cosine, ties by (id, frame), zero rows last."""
    if len(table) == 0:
        raise ValueError("empty expression table")
    cos = cosine_similarity(table, anchor)
    zero = np.isnan(cos)
    key = np.where(zero, 0.0, -cos)
    # lexsort: last key is primary
    return np.lexsort((table.frames, table.ids, key, zero))


def retrieve_similar(table: ExpressionTable, anchor_psi, top_k: int) -> list[tuple[int, int]]:
    """Top-k (id, frame) references by cosine similarity to ``anchor_psi``."""
    order = rank_similar(table, anchor_psi)[: max(int(top_k), 0)]
    return [(int(table.ids[r]), int(table.frames[r])) for r in order]


def select_anchors(table: ExpressionTable, k: int) -> np.ndarray:
    """Farthest-point sampling in psi space, seeded at the row farthest from the mean.
    Distance ties go to the lowest row index."""
    if k <= 0:
        raise ValueError("k must be positive")
    distinct = np.unique(table.psi, axis=0)
    if k > len(distinct):
        raise ValueError(f"k={k} exceeds the {len(distinct)} distinct expressions")
    psi = table.psi
    first = int(np.argmax(np.linalg.norm(psi - psi.mean(axis=0), axis=1)))
    chosen = [first]
    dmin = np.linalg.norm(psi - psi[first], axis=1)
    while len(chosen) < k:
        nxt = int(np.argmax(dmin))
        chosen.append(nxt)
        dmin = np.minimum(dmin, np.linalg.norm(psi - psi[nxt], axis=1))
    return psi[chosen].copy()


class SamplerError(ValueError):
    pass


@dataclass
class SamplingPlan:
    frames: dict  # id -> list of frame indices (anchor picks first, then random picks)
    n_anchor: dict  # id -> how many leading entries came from anchors
    anchors: np.ndarray

    def pairs(self) -> list[tuple[int, int]]:
        return [(i, f) for i in sorted(self.frames) for f in self.frames[i]]


def build_adjusted_sampler(table: ExpressionTable, k_anchor: int = 20, random_per_id: int = 6, seed: int = 0,
                           anchors: np.ndarray | None = None) -> SamplingPlan:
    """Per identity: for each anchor, its most similar not-yet-picked frame, then
    ``random_per_id`` random frames from the rest."""
    need = k_anchor + random_per_id
    anchors = select_anchors(table, k_anchor) if anchors is None else np.asarray(anchors, dtype=np.float64)
    short = [int(i) for i in np.unique(table.ids) if len(table.rows_of(i)) < need]
    if short:
        raise SamplerError(f"identities {short} have fewer than {need} frames")
    frames, n_anchor = {}, {}
    for i in np.unique(table.ids):
        rows = table.rows_of(i)
        sub = ExpressionTable(table.ids[rows], table.frames[rows], table.psi[rows])
        picked: list[int] = []
        for a in anchors:
            for r in rank_similar(sub, a):
                f = int(sub.frames[r])
                if f not in picked:
                    picked.append(f)
                    break
        rest = [int(f) for f in sub.frames if int(f) not in picked]
        rng = np.random.default_rng([seed, int(i)])
        extra = rng.choice(len(rest), size=random_per_id, replace=False) if random_per_id else []
        frames[int(i)] = picked + [rest[j] for j in extra]
        n_anchor[int(i)] = len(picked)
    return SamplingPlan(frames, n_anchor, anchors)


def build_uniform_sampler(table: ExpressionTable, per_id: int = 26, seed: int = 0) -> SamplingPlan:
    frames = {}
    for i in np.unique(table.ids):
        fr = table.frames[table.rows_of(i)]
        rng = np.random.default_rng([seed, int(i), 1])
        take = min(per_id, len(fr))
        frames[int(i)] = [int(f) for f in fr[rng.choice(len(fr), size=take, replace=False)]]
    return SamplingPlan(frames, {i: 0 for i in frames}, np.zeros((0, table.psi.shape[1])))


def anchor_neighborhood_mass(table: ExpressionTable, pairs, anchors, threshold: float = 0.9) -> float:
    """Fraction of sampled (id, frame) pairs within cosine ``threshold`` of some anchor."""
    lookup = {(int(i), int(f)): r for r, (i, f) in enumerate(zip(table.ids, table.frames))}
    rows = np.array([lookup[p] for p in pairs])
    psi = table.psi[rows]
    a = np.asarray(anchors, dtype=np.float64)
    na = np.linalg.norm(a, axis=1)
    nr = np.linalg.norm(psi, axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        cos = (psi @ a.T) / (nr[:, None] * na[None, :])
    cos = np.nan_to_num(cos, nan=-1.0)
    return float((cos.max(axis=1) >= threshold).mean())


@dataclass
class PCAResult:
    coords: np.ndarray  # (R, dim) projections of all table rows
    anchor_coords: np.ndarray  # (K, dim)
    mean: np.ndarray
    components: np.ndarray  # (dim, E)
    eigenvalues: np.ndarray  # all eigenvalues, descending


def pca_project(table: ExpressionTable, anchors, dim: int = 2, tol: float = 1e-12) -> PCAResult:
    """PCA fit on the anchors, then every table row projected."""
    a = np.asarray(anchors, dtype=np.float64)
    mean = a.mean(axis=0)
    centered = a - mean
    cov = centered.T @ centered / max(len(a) - 1, 1)
    vals, vecs = np.linalg.eigh(cov)
    order = np.argsort(vals)[::-1]
    vals, vecs = vals[order], vecs[:, order]
    if len(a) <= dim or vals[dim - 1] <= tol * max(vals[0], 1e-300):
        raise ValueError(f"anchors span fewer than {dim} dimensions; covariance is degenerate")
    comps = vecs[:, :dim].T
    return PCAResult((table.psi - mean) @ comps.T, centered @ comps.T, mean, comps, vals)


def planted_cluster_table(n_ids: int = 10, frames_per_id: int = 100, n_clusters: int = 20, n_expr: int = 10,
                          cluster_fraction: float = 0.15, seed: int = 0):
    """A table with a broad low-amplitude bulk plus rare, tight, high-amplitude clusters.

    Returns ``(table, centers, labels)`` with label -1 for bulk rows.
    """
    rng = np.random.default_rng(seed)
    centers = rng.standard_normal((n_clusters, n_expr))
    centers = 2.5 * centers / np.linalg.norm(centers, axis=1, keepdims=True)
    ids, frames, psi, labels = [], [], [], []
    for i in range(n_ids):
        for f in range(frames_per_id):
            if rng.random() < cluster_fraction:
                c = int(rng.integers(n_clusters))
                p = centers[c] + rng.standard_normal(n_expr) * 0.08
            else:
                c = -1
                p = rng.standard_normal(n_expr) * 0.3
            ids.append(i)
            frames.append(f)
            psi.append(p)
            labels.append(c)
    return ExpressionTable(np.array(ids), np.array(frames), np.array(psi)), centers, np.array(labels)
