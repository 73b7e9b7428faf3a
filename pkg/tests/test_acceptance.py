"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

The overfit and refinement criteria share one 2000-step training run
(about 20 minutes on a single core), so a full run of this file is slow.
"""

import subprocess
import sys
import time

import numpy as np
import pytest

from splatavatar.autodiff import Tensor, no_grad
from splatavatar.data import (anchor_neighborhood_mass, build_adjusted_sampler, build_uniform_sampler,
                              generate_dataset, planted_cluster_table, random_expression, retrieve_similar,
                              select_anchors)
from splatavatar.dynamic import UNet
from splatavatar.losses import COMPONENTS, LossWeights, total
from splatavatar.model import AvatarModel, ModelConfig
from splatavatar.pipeline import (REFERENCE_FIGURES, STAGES, TrainConfig, benchmark, benchmark_lines,
                                  evaluate_pairs, reconstruct_asset, refine, train)
from splatavatar.recon import ReconNet
from splatavatar.render import GaussianCloud, available_backends, gather_cloud, render, render_backward, use_backend
from splatavatar.rig import (ExpressionParams, bind_texels, build_rig, deform, interpolate_vertex_attr, lbs,
                             quat_normalize, quat_to_matrix)

from conftest import ACCEPTANCE_KEY
from test_data import brute_force_top_k
from test_render import _DET_SCRIPT, _fd_grad, front_camera, small_scene
from test_render import test_single_splat_matches_closed_form as single_splat_oracle
from test_render import test_two_splats_composite_front_to_back as two_splat_oracle

# overfit run: 1 identity x 8 expressions x 8 views, 64x64 UV, 128 px
OVERFIT_STEPS = 2000
OVERFIT_LR = 1e-3
OVERFIT_SUPERVISION_VIEWS = 2
HOLDOUT = (7, 3)  # (expression frame, view) never seen in training
EVAL_INPUTS = [(0, 0), (0, 2)]
PSNR_TARGET = 28.0
TIME_BUDGET_S = 30 * 60

REFINE_ITERS = 20
REFINE_LR = 1e-4  # the refine default
REFINE_VIEWS = (0, 2)


@pytest.fixture(scope="module")
def report(request):
    tr = request.config.pluginmanager.getplugin("terminalreporter")
    lines = request.config.stash.setdefault(ACCEPTANCE_KEY, [])

    def emit(n, title, ok, detail):
        line = f"ACCEPTANCE {n:>2} {'PASS' if ok else 'FAIL'} {title}: {detail}"
        lines.append(line)
        if tr is not None:
            tr.write_line("")
            tr.write_line(line)
        return ok

    return emit


# -- 1 ----------------------------------------------------------------------------------

def test_c01_gradcheck_catalog(report):
    from splatavatar import losses  # noqa: F401  registers the loss entries
    from splatavatar.autodiff import CATALOG, grad_check

    t0 = time.perf_counter()
    worst = {name: max(grad_check(name, seed=s) for s in range(10)) for name in sorted(CATALOG)}
    dt = time.perf_counter() - t0
    bad = {k: v for k, v in worst.items() if not v < 1e-4}
    ok = not bad and dt < 120
    top = max(worst, key=worst.get)
    assert report(1, "gradcheck", ok, f"{len(worst)} entries x 10 seeds, worst {top}={worst[top]:.2e} (< 1e-4), "
                  f"{dt:.1f}s (< 120s)" + (f", failing {sorted(bad)}" if bad else ""))


# -- 2 ----------------------------------------------------------------------------------

def test_c02_renderer_oracles(report):
    single_splat_oracle()  # closed form, 1e-3
    two_splat_oracle()  # front-to-back compositing, 1e-6
    worst = 0.0
    cam = front_camera(24, 24)
    for backend in available_backends():
        with use_backend(backend):
            for seed in range(3):
                cloud = small_scene(seed, n=5)
                g = np.random.default_rng(seed + 10).standard_normal((24, 24, 3))
                an = render_backward(cloud, cam, g)
                for field in GaussianCloud.fields():
                    num = _fd_grad(cloud, cam, g, field)
                    a = an[field].reshape(num.shape)
                    scale = max(np.abs(num).max(), 1e-8)
                    err = np.abs(a - num) / np.maximum(np.maximum(np.abs(a), np.abs(num)), 1e-4 * scale)
                    worst = max(worst, float(err.max()))
    runs = {subprocess.run([sys.executable, "-c", _DET_SCRIPT], capture_output=True, text=True, check=True).stdout
            for _ in range(2)}
    ok = worst < 1e-3 and len(runs) == 1
    assert report(2, "renderer", ok, f"single splat <= 1e-3 and two-splat <= 1e-6 ok; finite-diff worst rel "
                  f"{worst:.2e} (< 1e-3) over {available_backends()}; cross-process bit-exact={len(runs) == 1}")


# -- 3 ----------------------------------------------------------------------------------

def test_c03_variable_inputs(report):
    net = ReconNet(ModelConfig().recon, seed=0)
    size = net.cfg.image_size
    imgs = np.random.default_rng(0).uniform(0, 1, (4, size, size, 3)).astype(np.float32)
    shapes = set()
    with no_grad():
        for n in (1, 2, 3, 4):
            f_id, raw = net(imgs[:n])
            shapes.add((f_id.shape, raw.shape))
        worst = 0.0
        base = net(imgs)[1].data
        for perm in ([3, 2, 1, 0], [1, 3, 0, 2], [2, 0, 3, 1]):
            worst = max(worst, float(np.abs(net(imgs[perm])[1].data - base).max()))
        base3 = net(imgs[:3])[1].data
        worst = max(worst, float(np.abs(net(imgs[[2, 0, 1]])[1].data - base3).max()))
    ok = len(shapes) == 1 and worst <= 1e-5 and base.dtype == np.float32
    assert report(3, "1-4 inputs", ok, f"shapes {shapes.pop()} for N=1..4, permutation max diff {worst:.1e} "
                  f"(<= 1e-5, {base.dtype})")


# -- 4 ----------------------------------------------------------------------------------

def test_c04_dynamic_mask_contract(report):
    model = AvatarModel()
    space = model.space
    r = np.random.default_rng(0)
    h, w = space.resolution
    raw = Tensor(r.normal(0, 0.5, (h, w, 14)).astype(np.float32))
    f_id = Tensor(r.standard_normal((h, w, model.cfg.unet.id_dim)).astype(np.float32))
    exprs = [random_expression(r, model.rig) for _ in range(3)]
    out = ~space.dyn_mask
    with no_grad():
        static = model.static_maps(raw).as_array()
        zero_ok = True
        for e in exprs:
            cloud = gather_cloud(model.static_maps(raw), space.binding, model.rig, e, space.texel_weights)
            a = render(cloud, model_camera(model)).rgb.data
            b = model.drive(f_id, raw, e, model_camera(model)).rgb.data
            zero_ok &= bool(np.array_equal(a, b))
        # a UNet with a live output layer: outside the mask still bit-exact
        live = UNet(model.cfg.unet, seed=5)
        live.outc.weight.data = r.normal(0, 0.05, live.outc.weight.data.shape).astype(np.float32)
        model.unet = live
        outside_ok, inside_moved = True, False
        for e in exprs:
            dyn = model.dynamic_maps(f_id, raw, e).as_array()
            outside_ok &= bool(np.array_equal(dyn[out], static[out]))
            inside_moved |= bool(np.any(dyn[space.dyn_mask] != static[space.dyn_mask]))
    ok = zero_ok and outside_ok and inside_moved
    assert report(4, "dynamic mask", ok, f"outside-mask maps bit-exact={outside_ok} (inside changed={inside_moved}), "
                  f"zero-init UNet render == static render bit-exact={zero_ok}")


def model_camera(model, size=128):
    from splatavatar.render import Camera

    return Camera.orbit(20.0, 5.0, 0.55, 2.2 * size, size, size, target=model.rig.center)


# -- 5 ----------------------------------------------------------------------------------

def test_c05_rig_invariants(report):
    rig = build_rig(0)
    r = np.random.default_rng(0)
    lin = 0.0
    for _ in range(20):
        a, b = ExpressionParams.neutral(rig.n_expr), ExpressionParams.neutral(rig.n_expr)
        a.psi, b.psi = r.uniform(-2, 2, rig.n_expr), r.uniform(-2, 2, rig.n_expr)
        t = r.uniform(-3, 3)
        c = ExpressionParams.neutral(rig.n_expr)
        c.psi = a.psi + t * b.psi
        v0 = rig.vertices
        lin = max(lin, float(np.abs((deform(rig, c) - v0) - (deform(rig, a) - v0) - t * (deform(rig, b) - v0)).max()))
    pts = r.standard_normal((100, 3)) * 0.1
    wts = r.dirichlet(np.ones(rig.n_joints), 100)
    ident = float(np.abs(lbs(rig, ExpressionParams.neutral(rig.n_expr), pts, wts) - pts).max())
    equi = 0.0
    for _ in range(10):
        e = ExpressionParams.neutral(rig.n_expr)
        e.psi = r.uniform(-1, 1, rig.n_expr)
        e.joint_rots = quat_normalize(np.array([1.0, 0, 0, 0]) + r.standard_normal((rig.n_joints, 4)) * 0.4)
        base = lbs(rig, e, pts, wts)
        q = quat_normalize(r.standard_normal(4))
        t = r.standard_normal(3)
        moved = lbs(rig, ExpressionParams(e.psi, e.joint_rots, q, t), pts, wts)
        equi = max(equi, float(np.abs(moved - (base @ quat_to_matrix(q).T + t)).max()))
    binding = bind_texels(rig, 64)
    A, c = r.standard_normal((3, 3)), r.standard_normal(3)
    interp = interpolate_vertex_attr(rig, rig.vertices @ A.T + c, binding)
    pos = interpolate_vertex_attr(rig, rig.vertices, binding)
    bary = float(np.abs(interp[binding.valid] - (pos[binding.valid] @ A.T + c)).max())
    ok = lin <= 1e-6 and ident <= 1e-6 and equi <= 1e-6 and bary <= 1e-9
    assert report(5, "rig", ok, f"deform linearity {lin:.1e}, lbs identity {ident:.1e}, rigid equivariance "
                  f"{equi:.1e} (all <= 1e-6), barycentric {bary:.1e} (<= 1e-9)")


# -- 6, 7, 10 share one trained model ------------------------------------------------------------

@pytest.fixture(scope="module")
def overfit(tmp_path_factory):
    root = tmp_path_factory.mktemp("overfit")
    manifest = generate_dataset(root / "data", 1, 8, 8, seed=0, image_size=128, uv_res=64)
    cfg = TrainConfig(steps=OVERFIT_STEPS, lr=OVERFIT_LR, supervision_views=OVERFIT_SUPERVISION_VIEWS,
                      holdout=(f"0:{HOLDOUT[0]}:{HOLDOUT[1]}",), checkpoint_every=500, log_every=100)
    model = AvatarModel(rig=manifest.rig)
    t0 = time.perf_counter()
    model, rows = train(manifest, cfg, root / "run", model=model, log=None)
    seconds = time.perf_counter() - t0
    return manifest, model, rows, seconds, root


def test_c06_overfit_single_identity(report, overfit):
    manifest, model, rows, seconds, _ = overfit
    (score,) = evaluate_pairs(model, manifest, 0, EVAL_INPUTS, [HOLDOUT])
    ok = score >= PSNR_TARGET and seconds < TIME_BUDGET_S
    assert report(6, "overfit", ok, f"held-out (expr {HOLDOUT[0]}, view {HOLDOUT[1]}) PSNR {score:.2f} dB "
                  f"(>= {PSNR_TARGET}) after {len(rows)} steps in {seconds / 60:.1f} min (< 30 min); "
                  f"final loss {rows[-1]['total']:.4f}")


def test_c07_refinement_on_unseen_identity(report, overfit, tmp_path):
    _, model, _, _, root = overfit
    other = generate_dataset(root / "unseen", 1, 1, 8, seed=1000, image_size=128, uv_res=64)
    imgs = np.stack([other.load_frame(0, 0, v)[0] for v in REFINE_VIEWS])
    cams = [other.cameras[v] for v in REFINE_VIEWS]
    asset = reconstruct_asset(model, imgs, log=None)
    unet_before = {k: v.tobytes() for k, v in model.unet.state_dict().items()}
    t0 = time.perf_counter()
    _, rep = refine(model, asset, imgs, cams, iters=REFINE_ITERS, lr=REFINE_LR, log=None)
    dt = time.perf_counter() - t0
    unet_same = {k: v.tobytes() for k, v in model.unet.state_dict().items()} == unet_before
    drop = 1.0 - rep.l1_after / rep.l1_before
    ok = drop >= 0.2 and unet_same
    assert report(7, "refinement", ok, f"L1 {rep.l1_before:.4f} -> {rep.l1_after:.4f} ({drop:.0%} drop, >= 20%) "
                  f"in {REFINE_ITERS} iters / {dt:.1f}s on {len(REFINE_VIEWS)} views; UNet byte-identical={unet_same}")


# -- 8 ----------------------------------------------------------------------------------

def test_c08_sampler_on_planted_clusters(report):
    table, centers, _ = planted_cluster_table()
    r = np.random.default_rng(0)
    probes = list(centers) + list(r.standard_normal((20, table.psi.shape[1])))
    mismatches = sum(retrieve_similar(table, a, k) != brute_force_top_k(table, a, k) for a in probes for k in (1, 10, 50))
    adj = build_adjusted_sampler(table, 20, 6, seed=0)
    uni = build_uniform_sampler(table, 26, seed=0)
    anchors = select_anchors(table, 20)
    m_adj = anchor_neighborhood_mass(table, adj.pairs(), anchors)
    m_uni = anchor_neighborhood_mass(table, uni.pairs(), anchors)
    ok = mismatches == 0 and m_adj >= 2 * m_uni
    assert report(8, "sampler", ok, f"retrieval vs brute force mismatches {mismatches}/{len(probes) * 3}; anchor mass "
                  f"adjusted {m_adj:.3f} vs uniform {m_uni:.3f} (ratio {m_adj / max(m_uni, 1e-12):.1f}, >= 2)")


# -- 9 ----------------------------------------------------------------------------------

def test_c09_loss_weights(report):
    t1 = float(total(dict(zip(COMPONENTS, [1.0, 0, 0, 0, 0, 0]))).data)
    t2 = float(total({"mouth": 0.1}, LossWeights()).data)
    ok = t1 == 1.0 and t2 == 1.0 and LossWeights().mouth == 10.0
    assert report(9, "loss weights", ok, f"total([1,0,0,0,0,0]) = {t1!r}, mouth 0.1 x weight 10 = {t2!r}")


# -- 10 ---------------------------------------------------------------------------------

def test_c10_benchmark_report(report, overfit):
    manifest, model, _, _, _ = overfit
    img = manifest.load_frame(0, 0, 0)[0]
    t0 = time.perf_counter()
    asset = reconstruct_asset(model, img[None], log=None)
    encode_s = time.perf_counter() - t0
    rep = benchmark(model, asset, n_frames=20, camera=manifest.cameras[1])
    lines = benchmark_lines(rep)
    has_stages = all(any(f"stage={s}" in ln for ln in lines) for s in STAGES)
    ref_ok = rep["reference"] == REFERENCE_FIGURES and "note=context_only" in lines[-1]
    ok = has_stages and ref_ok
    st = rep["stages"]
    per = ", ".join(f"{s} {st[s]['mean_ms']:.1f}" for s in STAGES)
    assert report(10, "benchmark", ok, f"ms/frame: {per}; total {st['total']['mean_ms']:.1f} ms = {rep['fps']:.1f} fps, "
                  f"encode {encode_s:.2f}s (reference only: {REFERENCE_FIGURES['drive_ms']:.0f} ms, "
                  f"{REFERENCE_FIGURES['fps']:.0f} fps, {REFERENCE_FIGURES['encode_s']} s, "
                  f"{REFERENCE_FIGURES['refine_s']:.0f} s)")
