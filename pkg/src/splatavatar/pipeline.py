"""Training, reconstruction, test-time refinement, animation and timing."""

from __future__ import annotations

import csv
import hashlib
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .asset import AvatarAsset, file_sha256
from .autodiff import Adam, NonFiniteError, Tensor, no_grad, ops
from .config import read_kv, to_flat, write_kv, apply_flat
from .data import (DatasetManifest, build_adjusted_sampler, build_uniform_sampler, load_png,
                   mouth_indicator)
from .dynamic import build_driving_map, decode_delta, fuse_dynamic
from .losses import (COMPONENTS, DEFAULT_METRIC, LossWeights, RegularizerAnchors, l1, mouth_perceptual,
                     perceptual, regularizers, ssim_loss, total)
from .model import MODEL_VERSION, AvatarModel
from .recon import ReconNet
from .render import Camera, RenderedFrame, gather_cloud, save_png
from .render.splat import depth_order, pixel_ranges, project, rasterize
from .rig import ExpressionParams

LOSS_COLUMNS = ("step",) + COMPONENTS + ("total",)
DECODER_PREFIXES = ("dec_in", "dec_up", "id_head", "gs_head")


def kv_line(**items) -> str:
    """One machine-parseable log line."""
    parts = []
    for k, v in items.items():
        if isinstance(v, float):
            v = f"{v:.6g}"
        parts.append(f"{k}={v}")
    return " ".join(parts)


def _print_log(line: str) -> None:
    print(line, flush=True)


def psnr(pred, gt) -> float:
    mse = float(np.mean((np.asarray(pred, dtype=np.float64) - np.asarray(gt, dtype=np.float64)) ** 2))
    return float("inf") if mse == 0 else 10.0 * math.log10(1.0 / mse)


# -- training -------------------------------------------------------------------------

class TrainingError(RuntimeError):
    def __init__(self, component: str, step: int, detail: str = ""):
        self.component = component
        self.step = step
        super().__init__(f"non-finite {component} at step {step}" + (f": {detail}" if detail else ""))


@dataclass
class TrainConfig:
    steps: int = 2000
    lr: float = 3e-5
    seed: int = 0
    min_inputs: int = 1
    max_inputs: int = 4
    supervision_views: int = 4
    checkpoint_every: int = 500
    log_every: int = 50
    sampler: str = "auto"  # auto | adjusted | uniform
    k_anchor: int = 20
    random_per_id: int = 6
    metric: str = DEFAULT_METRIC
    holdout: tuple[str, ...] = ()  # "id:frame:view" triples never used for training
    weights: LossWeights = field(default_factory=LossWeights)

    def validate(self) -> None:
        if self.steps < 0:
            raise ValueError("steps must be nonnegative")
        if not (self.lr > 0 and math.isfinite(self.lr)):
            raise ValueError("lr must be positive")
        if not 1 <= self.min_inputs <= self.max_inputs:
            raise ValueError("need 1 <= min_inputs <= max_inputs")
        if self.supervision_views < 1:
            raise ValueError("supervision_views must be >= 1")
        if self.checkpoint_every < 1:
            raise ValueError("checkpoint_every must be >= 1")
        if self.sampler not in ("auto", "adjusted", "uniform"):
            raise ValueError(f"unknown sampler {self.sampler!r}")
        LossWeights(**self.weights.to_dict())
        self.holdout_set()

    def holdout_set(self) -> set[tuple[int, int, int]]:
        out = set()
        for s in self.holdout:
            parts = s.split(":")
            if len(parts) != 3:
                raise ValueError(f"holdout entries look like id:frame:view, got {s!r}")
            out.add(tuple(int(p) for p in parts))
        return out

    def save(self, path) -> None:
        write_kv(path, to_flat(self), header="splatavatar training config")

    @classmethod
    def load(cls, path) -> "TrainConfig":
        cfg = cls()
        apply_flat(cfg, read_kv(path))
        return cfg


class FrameCache:
    """Decoded dataset images, loaded on first use."""

    def __init__(self, manifest: DatasetManifest, dtype=np.float32):
        self.manifest = manifest
        self.dtype = dtype
        self._hit: dict = {}

    def get(self, i: int, f: int, v: int):
        key = (i, f, v)
        if key not in self._hit:
            img, mask, mouth = self.manifest.load_frame(i, f, v)
            self._hit[key] = (img.astype(self.dtype), mask.astype(self.dtype), mouth > 0.5)
        return self._hit[key]


def plan_frames(manifest: DatasetManifest, cfg: TrainConfig, log=None) -> dict[int, list[int]]:
    """Frames per identity drawn by the configured sampler."""
    table = manifest.table()
    kind = cfg.sampler
    plan = None
    if kind in ("auto", "adjusted"):
        try:
            plan = build_adjusted_sampler(table, cfg.k_anchor, cfg.random_per_id, seed=cfg.seed)
        except ValueError as e:  # SamplerError or too few distinct expressions
            if kind == "adjusted":
                raise
            if log:
                log(kv_line(event="sampler_fallback", reason=str(e).replace(" ", "_")))
    if plan is None:
        per_id = max(len(v) for v in manifest.expressions.values())
        plan = build_uniform_sampler(table, per_id=per_id, seed=cfg.seed)
    out: dict[int, list[int]] = {}
    for i, f in plan.pairs():
        out.setdefault(int(i), [])
        if int(f) not in out[int(i)]:
            out[int(i)].append(int(f))
    return {i: sorted(fs) for i, fs in out.items()}


class Trainer:
    def __init__(self, model: AvatarModel, manifest: DatasetManifest, cfg: TrainConfig, out_dir=None,
                 log: Callable[[str], None] | None = _print_log):
        cfg.validate()
        if model.rig.digest() != manifest.rig.digest():
            raise ValueError("model and dataset use different rigs")
        self.model = model
        self.manifest = manifest
        self.cfg = cfg
        self.out_dir = Path(out_dir) if out_dir is not None else None
        self.log = log or (lambda s: None)
        self.rng = np.random.default_rng(cfg.seed)
        self.cache = FrameCache(manifest)
        self.anchors = RegularizerAnchors.from_space(model.space)
        self.params = model.named_parameters()
        self.opt = Adam(self.params, lr=cfg.lr)
        held = cfg.holdout_set()
        n_views = len(manifest.cameras)
        frames = plan_frames(manifest, cfg, self.log)
        self.supervision: dict[int, dict[int, list[int]]] = {}
        self.inputs: dict[int, list[tuple[int, int]]] = {}
        for i in manifest.ids:
            n_frames = len(manifest.expressions[i])
            self.inputs[i] = [(f, v) for f in range(n_frames) for v in range(n_views) if (i, f, v) not in held]
            sup = {}
            for f in frames.get(i, []):
                views = [v for v in range(n_views) if (i, f, v) not in held]
                if views:
                    sup[f] = views
            if sup and self.inputs[i]:
                self.supervision[i] = sup
        if not self.supervision:
            raise ValueError("no training frames left after removing held-out pairs")
        self.ids = sorted(self.supervision)
        self.step_count = 0

    def sample_batch(self):
        """(identity, input pairs, supervision pairs) for one step."""
        rng = self.rng
        i = self.ids[int(rng.integers(len(self.ids)))]
        pool = self.inputs[i]
        hi = min(self.cfg.max_inputs, len(pool))
        lo = min(self.cfg.min_inputs, hi)
        n_in = int(rng.integers(lo, hi + 1))
        inputs = [pool[k] for k in rng.choice(len(pool), size=n_in, replace=False)]
        frames = sorted(self.supervision[i])
        n_sup = min(self.cfg.supervision_views, len(frames))
        sup = []
        for f in rng.choice(frames, size=n_sup, replace=False):
            views = self.supervision[i][int(f)]
            sup.append((int(f), int(views[int(rng.integers(len(views)))])))
        return i, inputs, sup

    def losses(self, i: int, inputs, sup) -> dict[str, Tensor]:
        m = self.model
        imgs = np.stack([self.cache.get(i, f, v)[0] for f, v in inputs])
        f_id, raw = m.recon(imgs)
        comps = {k: [] for k in ("l1", "ssim", "lpips", "mouth")}
        for f, v in sup:
            gt, _, mouth = self.cache.get(i, f, v)
            frame = m.drive(f_id, raw, m_expr(self.manifest, i, f), self.manifest.cameras[v])
            rgb = frame.rgb
            gt_t = Tensor(gt.astype(rgb.dtype))
            comps["l1"].append(l1(rgb, gt_t))
            comps["ssim"].append(ssim_loss(rgb, gt_t))
            comps["lpips"].append(perceptual(rgb, gt_t, self.cfg.metric))
            if mouth.any():
                comps["mouth"].append(mouth_perceptual(rgb, gt_t, mouth, self.cfg.metric))
        out = {}
        for k, terms in comps.items():
            if terms:
                acc = terms[0]
                for t in terms[1:]:
                    acc = acc + t
                out[k] = acc * (1.0 / len(sup))
        st = m.static_maps(raw)
        out["xyz"], out["scale"] = regularizers(st.position, st.scale, self.anchors)
        return out

    def step(self) -> dict[str, float]:
        self.step_count += 1
        n = self.step_count
        i, inputs, sup = self.sample_batch()
        try:
            comps = self.losses(i, inputs, sup)
        except NonFiniteError as e:
            raise TrainingError(f"forward op {e.op}", n, str(e)) from e
        for k, c in comps.items():
            if not np.isfinite(c.data).all():
                raise TrainingError(k, n)
        loss = total(comps, self.cfg.weights)
        self.opt.zero_grad()
        try:
            loss.backward()
        except NonFiniteError as e:
            raise TrainingError(f"backward op {e.op}", n, str(e)) from e
        for k, p in self.params.items():
            if p.grad is not None and not np.isfinite(p.grad).all():
                raise TrainingError(f"gradient of {k}", n)
        self.opt.step()
        row = {k: float(comps[k].data) if k in comps else 0.0 for k in COMPONENTS}
        row["total"] = float(loss.data)
        return row

    def checkpoint_path(self, step: int) -> Path:
        return self.out_dir / f"ckpt_{step:06d}.ckpt"

    def save_checkpoint(self) -> Path | None:
        if self.out_dir is None:
            return None
        path = self.checkpoint_path(self.step_count)
        self.model.save(path)
        self.log(kv_line(event="checkpoint", step=self.step_count, path=str(path)))
        return path

    def run(self) -> list[dict]:
        cfg = self.cfg
        rows = []
        writer = fh = None
        if self.out_dir is not None:
            self.out_dir.mkdir(parents=True, exist_ok=True)
            cfg.save(self.out_dir / "train.cfg")
            fh = open(self.out_dir / "loss.csv", "w", newline="")
            writer = csv.writer(fh)
            writer.writerow(LOSS_COLUMNS)
        try:
            self.save_checkpoint()
            t0 = time.perf_counter()
            for _ in range(cfg.steps):
                row = self.step()
                row["step"] = self.step_count
                rows.append(row)
                if writer is not None:
                    writer.writerow([row["step"]] + [repr(row[k]) for k in LOSS_COLUMNS[1:]])
                    fh.flush()
                if self.step_count % cfg.log_every == 0 or self.step_count == cfg.steps:
                    self.log(kv_line(event="train", step=self.step_count, total=row["total"], l1=row["l1"],
                                     seconds=time.perf_counter() - t0))
                if self.step_count % cfg.checkpoint_every == 0 or self.step_count == cfg.steps:
                    self.save_checkpoint()
        finally:
            if fh is not None:
                fh.close()
        return rows


def m_expr(manifest: DatasetManifest, i: int, f: int) -> ExpressionParams:
    return manifest.expressions[i][f]


def train(manifest: DatasetManifest, config: TrainConfig, out_dir=None, model: AvatarModel | None = None,
          log=_print_log) -> tuple[AvatarModel, list[dict]]:
    manifest.validate()
    model = model or AvatarModel(rig=manifest.rig)
    tr = Trainer(model, manifest, config, out_dir, log)
    return model, tr.run()


def read_loss_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return [{k: (int(v) if k == "step" else float(v)) for k, v in r.items()} for r in csv.DictReader(fh)]


def latest_checkpoint(out_dir) -> Path:
    found = sorted(Path(out_dir).glob("ckpt_*.ckpt"))
    if not found:
        raise FileNotFoundError(f"no checkpoints in {out_dir}")
    return found[-1]


# -- evaluation -----------------------------------------------------------------------

def render_from_inputs(model: AvatarModel, images, expr: ExpressionParams, camera: Camera) -> np.ndarray:
    with no_grad():
        f_id, raw = model.recon(np.asarray(images))
        return model.drive(f_id, raw, expr, camera).rgb.data


def evaluate_pairs(model: AvatarModel, manifest: DatasetManifest, identity: int, input_pairs, eval_pairs):
    """PSNR of renders at each (frame, view) in ``eval_pairs`` from the given inputs."""
    cache = FrameCache(manifest)
    imgs = np.stack([cache.get(identity, f, v)[0] for f, v in input_pairs])
    with no_grad():
        f_id, raw = model.recon(imgs)
        out = []
        for f, v in eval_pairs:
            rgb = model.drive(f_id, raw, m_expr(manifest, identity, f), manifest.cameras[v]).rgb.data
            out.append(psnr(rgb, cache.get(identity, f, v)[0]))
    return out


# -- reconstruction -------------------------------------------------------------------

def image_hash(img: np.ndarray) -> str:
    a = np.ascontiguousarray(np.asarray(img, dtype=np.float32))
    return hashlib.sha256(a.tobytes()).hexdigest()


def load_images(paths) -> np.ndarray:
    imgs = []
    for p in paths:
        img = load_png(p)
        if img.ndim == 2:
            img = np.repeat(img[..., None], 3, axis=-1)
        imgs.append(img[..., :3])
    return np.stack(imgs)


def reconstruct_asset(model: AvatarModel, images, weights_path=None, masks=None, log=_print_log) -> AvatarAsset:
    images = np.asarray(images)
    if images.ndim == 3:
        images = images[None]
    if images.shape[0] == 0:
        raise ValueError("reconstruction needs at least one image")
    t0 = time.perf_counter()
    with no_grad():
        f_id, raw = model.recon(images, masks)
    dt = time.perf_counter() - t0
    if log:
        log(kv_line(event="reconstruct", n_images=images.shape[0], seconds=dt))
    return AvatarAsset(
        f_id.data.copy(),
        raw.data.copy(),
        model.rig,
        model.space.binding,
        str(weights_path) if weights_path else "",
        file_sha256(weights_path) if weights_path else "",
        [image_hash(im) for im in images],
        MODEL_VERSION,
        {"encode_seconds": dt},
    )


def model_for_asset(asset: AvatarAsset, weights_path=None) -> AvatarModel:
    """Loads the weights an asset refers to, checking their hash."""
    path = Path(weights_path or asset.unet_path)
    if not path.is_file():
        raise FileNotFoundError(f"model weights {path} not found")
    if asset.unet_sha256 and file_sha256(path) != asset.unet_sha256:
        raise ValueError(f"weights {path} do not match the hash recorded in the asset")
    model = AvatarModel.load(path, rig=asset.rig)
    if model.space.binding.resolution != asset.resolution:
        raise ValueError("asset resolution does not match the model")
    return model


# -- refinement -------------------------------------------------------------------------

class RefinementDiverged(RuntimeError):
    pass


@dataclass
class RefineReport:
    losses: list
    l1_before: float
    l1_after: float
    seconds: float


def _copy_recon(net: ReconNet) -> ReconNet:
    twin = ReconNet(net.cfg)
    twin.load_state_dict(net.state_dict())
    return twin


def _keep_fixed(x: Tensor, original: np.ndarray, mouth: np.ndarray) -> Tensor:
    """Values equal ``x`` off the mouth and ``original`` on it; no gradient reaches masked texels."""
    m = mouth[..., None].astype(x.dtype)
    return ops.masked_mul(x, 1.0 - m) + Tensor(original.astype(x.dtype) * m)


def refine(model: AvatarModel, asset: AvatarAsset, images, cameras, exprs=None, iters: int = 20, lr: float = 1e-4,
           scope: str = "all", weights: LossWeights | None = None, metric=DEFAULT_METRIC, max_ratio: float = 10.0,
           log=_print_log) -> tuple[AvatarAsset, RefineReport]:
    """Test-time optimization of the reconstruction network on its own input views.

    The dynamic UNet stays frozen and texels in the mouth region keep their
    feed-forward values. Returns the refined asset and a loss trace.
    """
    images = np.asarray(images)
    if images.ndim == 3:
        images = images[None]
    if len(cameras) != images.shape[0]:
        raise ValueError("need one camera per input image")
    if exprs is None:
        exprs = [ExpressionParams.neutral(model.rig.n_expr, model.rig.n_joints)] * images.shape[0]
    if iters < 0:
        raise ValueError("iters must be nonnegative")
    if scope not in ("all", "decoder"):
        raise ValueError(f"unknown refine scope {scope!r}")
    weights = weights or LossWeights()
    if iters == 0:
        return asset.copy(), RefineReport([], float("nan"), float("nan"), 0.0)

    net = _copy_recon(model.recon)
    params = net.named_parameters()
    if scope == "decoder":
        for k, p in params.items():
            p.requires_grad = k.split(".")[0] in DECODER_PREFIXES
        params = {k: p for k, p in params.items() if p.requires_grad}
    unet_flags = [p.requires_grad for p in model.unet.parameters()]
    model.unet.requires_grad_(False)
    mouth = mouth_indicator(model.space)
    opt = Adam(params, lr=lr)
    gts = [Tensor(im.astype(np.float32)) for im in images]

    def objective():
        f_id, raw = net(images)
        f_id = _keep_fixed(f_id, asset.f_id, mouth)
        raw = _keep_fixed(raw, asset.raw, mouth)
        loss = l1_sum = None
        for gt, cam, e in zip(gts, cameras, exprs):
            rgb = model.drive(f_id, raw, e, cam).rgb
            a = l1(rgb, gt)
            term = a * weights.l1 + ssim_loss(rgb, gt) * weights.ssim + perceptual(rgb, gt, metric) * weights.lpips
            loss = term if loss is None else loss + term
            l1_sum = a.data if l1_sum is None else l1_sum + a.data
        n = len(gts)
        return loss * (1.0 / n), float(l1_sum) / n, f_id, raw

    t0 = time.perf_counter()
    trace = []
    try:
        for it in range(iters + 1):
            loss, l1_val, f_id, raw = objective()
            trace.append(float(loss.data))
            if log:
                log(kv_line(event="refine", iter=it, loss=trace[-1], l1=l1_val))
            if it == 0:
                l1_before = l1_val
            elif trace[-1] > max_ratio * trace[0] or not math.isfinite(trace[-1]):
                raise RefinementDiverged(f"refinement loss {trace[-1]:.4g} exceeds {max_ratio}x the initial {trace[0]:.4g}")
            if it == iters:
                break
            opt.zero_grad()
            loss.backward()
            opt.step()
    except NonFiniteError as e:
        raise RefinementDiverged(f"refinement produced non-finite values in {e.op}") from e
    finally:
        for p, flag in zip(model.unet.parameters(), unet_flags):
            p.requires_grad = flag
    out = asset.copy()
    m3 = mouth[..., None]
    out.raw = np.where(m3, asset.raw, raw.data.astype(asset.raw.dtype))
    out.f_id = np.where(m3, asset.f_id, f_id.data.astype(asset.f_id.dtype))
    dt = time.perf_counter() - t0
    out.notes = {**asset.notes, "refine_iters": iters, "refine_seconds": dt}
    return out, RefineReport(trace, l1_before, l1_val, dt)


# -- animation --------------------------------------------------------------------------

def asset_tensors(asset: AvatarAsset) -> tuple[Tensor, Tensor]:
    return Tensor(asset.f_id), Tensor(asset.raw)


def animate(model: AvatarModel, asset: AvatarAsset, exprs, cameras, out_dir=None, background=(0.0, 0.0, 0.0),
            log=_print_log) -> tuple[list[np.ndarray], list[dict]]:
    """Render one frame per expression; a single camera is reused for every frame."""
    exprs = list(exprs)
    if not exprs:
        raise ValueError("expression sequence is empty")
    cameras = list(cameras)
    if len(cameras) == 1:
        cameras = cameras * len(exprs)
    if len(cameras) != len(exprs):
        raise ValueError(f"{len(cameras)} cameras for {len(exprs)} expressions")
    f_id, raw = asset_tensors(asset)
    frames, timing = [], []
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    with no_grad():
        for n, (e, cam) in enumerate(zip(exprs, cameras)):
            t0 = time.perf_counter()
            rgb = model.drive(f_id, raw, e, cam, background).rgb.data
            dt = time.perf_counter() - t0
            frames.append(rgb)
            timing.append({"frame": n, "ms": dt * 1e3})
            if out is not None:
                save_png(rgb, out / f"frame_{n:04d}.png")
    if out is not None:
        with open(out / "timing.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["frame", "ms"])
            for r in timing:
                w.writerow([r["frame"], f"{r['ms']:.4f}"])
    if log:
        ms = np.array([r["ms"] for r in timing])
        log(kv_line(event="animate", frames=len(frames), mean_ms=float(ms.mean()), fps=float(1e3 / ms.mean())))
    return frames, timing


# -- benchmark --------------------------------------------------------------------------

STAGES = ("driving_map", "unet", "lbs", "sort", "composite")
REFERENCE_FIGURES = {"drive_ms": 22.0, "fps": 45.0, "encode_s": 0.4, "refine_s": 10.0}


def drive_stages(model: AvatarModel, f_id: Tensor, raw: Tensor, expr: ExpressionParams, camera: Camera,
                 background=(0.0, 0.0, 0.0), primitive_repeat: int = 1) -> tuple[dict, np.ndarray]:
    """One drive-path frame with each stage timed separately (seconds)."""
    t = {}
    clock = time.perf_counter
    with no_grad():
        t0 = clock()
        p = build_driving_map(model.rig, expr, model.space.binding)
        t1 = clock()
        delta = decode_delta(f_id, p, model.unet, model.space)
        maps = fuse_dynamic(raw, delta, model.space.dyn_mask, model.space)
        t2 = clock()
        cloud = gather_cloud(maps, model.space.binding, model.rig, expr, model.space.texel_weights)
        if primitive_repeat > 1:
            cloud = cloud.take(np.tile(np.arange(len(cloud)), primitive_repeat))
        t3 = clock()
        proj = project(cloud, camera)
        ranges = pixel_ranges(proj.means.data, proj.cov.data, camera.width, camera.height)
        order = depth_order(proj.depth)
        conics = _conics(proj.cov)
        keep = proj.kept
        t4 = clock()
        rgb, _ = _composite(proj.means, conics, cloud, keep, order, ranges, background, camera)
        t5 = clock()
    t["driving_map"] = t1 - t0
    t["unet"] = t2 - t1
    t["lbs"] = t3 - t2
    t["sort"] = t4 - t3
    t["composite"] = t5 - t4
    return t, rgb


def _conics(cov: Tensor) -> Tensor:
    a, b, c = cov.data[:, 0], cov.data[:, 1], cov.data[:, 2]
    det = a * c - b * b
    return Tensor(np.stack([c / det, -b / det, a / det], axis=-1))


def _composite(means, conics, cloud, keep, order, ranges, background, camera):
    opacity = Tensor(np.asarray(cloud.opacity.data if isinstance(cloud.opacity, Tensor) else cloud.opacity)[keep])
    color = Tensor(np.asarray(cloud.color.data if isinstance(cloud.color, Tensor) else cloud.color)[keep])
    out = rasterize(means, conics, opacity, color, order, ranges, np.asarray(background, dtype=np.float64),
                    camera.width, camera.height)
    return out.data[..., :3], out.data[..., 3]


def summarize(samples: list[float]) -> dict:
    a = np.asarray(samples, dtype=np.float64) * 1e3
    return {"mean_ms": float(a.mean()), "median_ms": float(np.median(a)), "p95_ms": float(np.percentile(a, 95))}


def benchmark(model: AvatarModel, asset: AvatarAsset, n_frames: int = 20, camera: Camera | None = None,
              seed: int = 0, primitive_repeat: int = 1) -> dict:
    """Per-stage drive-path timings over ``n_frames`` random expressions."""
    from .data import random_expression

    if n_frames < 1:
        raise ValueError("n_frames must be >= 1")
    rng = np.random.default_rng(seed)
    if camera is None:
        size = 128
        camera = Camera.orbit(0.0, 0.0, 0.55, 2.2 * size, size, size, target=model.rig.center)
    f_id, raw = asset_tensors(asset)
    rows = []
    for n in range(n_frames):
        e = random_expression(rng, model.rig)
        t, _ = drive_stages(model, f_id, raw, e, camera, primitive_repeat=primitive_repeat)
        t["total"] = sum(t.values())
        t["frame"] = n
        rows.append(t)
    report = {"n_frames": n_frames, "rows": rows, "stages": {}}
    for s in STAGES + ("total",):
        report["stages"][s] = summarize([r[s] for r in rows])
    report["fps"] = 1e3 / report["stages"]["total"]["mean_ms"]
    report["reference"] = dict(REFERENCE_FIGURES)
    return report


def benchmark_lines(report: dict) -> list[str]:
    lines = []
    for s, st in report["stages"].items():
        lines.append(kv_line(event="benchmark", stage=s, **st))
    lines.append(kv_line(event="benchmark", stage="summary", n_frames=report["n_frames"], fps=report["fps"]))
    ref = report["reference"]
    lines.append(kv_line(event="reference", note="context_only", **ref))
    return lines


def write_benchmark_csv(report: dict, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("frame",) + STAGES + ("total",))
        for r in report["rows"]:
            w.writerow([r["frame"]] + [f"{r[s] * 1e3:.4f}" for s in STAGES + ("total",)])
