import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from splatavatar.autodiff import Tensor, grad, no_grad, ops
from splatavatar.dynamic import (UNet, UNetConfig, build_driving_map, decode_delta, driving_input, fuse_dynamic,
                                 fuse_raw)
from splatavatar.rig import ExpressionParams, deform
from splatavatar.uvmaps import activate


@pytest.fixture(scope="module")
def unet():
    return UNet(UNetConfig(id_dim=8, base=8, depth=2), seed=0)


def test_unet_output_shape_and_zero_init(unet):
    x = Tensor(np.random.default_rng(0).standard_normal((32, 32, 11)).astype(np.float32))
    with no_grad():
        out = unet(x).data
    assert out.shape == (32, 32, 14)
    assert not out.any()


def test_unet_rejects_bad_size(unet):
    with pytest.raises(ValueError):
        unet(Tensor(np.zeros((30, 30, 11), np.float32)))


def test_default_widths():
    assert UNetConfig().widths() == [32, 64, 128, 128]


def test_driving_map_neutral_equals_anchors(space32):
    p = build_driving_map(space32.rig, ExpressionParams.neutral(space32.rig.n_expr), space32.binding)
    np.testing.assert_array_equal(p, space32.anchors)
    assert not driving_input(p, space32).any()


def test_driving_map_follows_blendshapes(space32):
    e = ExpressionParams.neutral(space32.rig.n_expr)
    e.psi[0] = 1.0
    p = build_driving_map(space32.rig, e, space32.binding)
    moved = np.linalg.norm(p - space32.anchors, axis=-1)
    assert moved[space32.binding.valid].max() > 1e-3
    x = driving_input(p, space32)
    assert not x[~space32.binding.valid].any()


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_fusion_is_exact_outside_mask(seed):
    from splatavatar.rig import build_rig
    from splatavatar.uvmaps import TexelSpace

    space = _space()
    r = np.random.default_rng(seed)
    h, w = space.resolution
    raw = Tensor(r.standard_normal((h, w, 14)).astype(np.float32))
    delta = Tensor((r.standard_normal((h, w, 14)) * 10).astype(np.float32))
    fused = fuse_raw(raw, delta, space.dyn_mask).data
    out = ~space.dyn_mask
    assert np.array_equal(fused[out], raw.data[out])
    g_dyn = fuse_dynamic(raw, delta, space.dyn_mask, space).as_array()
    g_st = activate(raw, space.anchors, space).as_array()
    assert np.array_equal(g_dyn[out], g_st[out])


_S = {}


def _space():
    if "s" not in _S:
        from splatavatar.rig import build_rig
        from splatavatar.uvmaps import TexelSpace
        _S["s"] = TexelSpace.build(build_rig(0), 32)
    return _S["s"]


def test_zero_mask_gives_zero_delta_gradient(space32):
    h, w = space32.resolution
    raw = Tensor(np.zeros((h, w, 14)), requires_grad=True)
    delta = Tensor(np.random.default_rng(0).standard_normal((h, w, 14)), requires_grad=True)
    maps = fuse_dynamic(raw, delta, np.zeros((h, w), bool), space32)
    loss = ops.sum(maps.position * maps.position) + ops.sum(maps.color)
    g_raw, g_delta = grad(loss, [raw, delta])
    assert not g_delta.any()
    assert g_raw.any()


def test_zero_unet_reproduces_static_maps(space32, unet):
    h, w = space32.resolution
    r = np.random.default_rng(1)
    raw = Tensor(r.standard_normal((h, w, 14)).astype(np.float32))
    f_id = Tensor(r.standard_normal((h, w, 8)).astype(np.float32))
    e = ExpressionParams.neutral(space32.rig.n_expr)
    e.psi[:3] = [1.0, -0.5, 0.7]
    with no_grad():
        delta = decode_delta(f_id, build_driving_map(space32.rig, e, space32.binding), unet, space32)
        dyn = fuse_dynamic(raw, delta, space32.dyn_mask, space32).as_array()
    st_ = activate(raw, space32.anchors, space32).as_array()
    assert np.array_equal(dyn, st_)


def test_decode_delta_checks_shapes(space32, unet):
    p = build_driving_map(space32.rig, ExpressionParams.neutral(space32.rig.n_expr), space32.binding)
    with pytest.raises(ValueError):
        decode_delta(Tensor(np.zeros((32, 32, 5), np.float32)), p, unet, space32)
    with pytest.raises(ValueError):
        decode_delta(Tensor(np.zeros((16, 16, 8), np.float32)), p, unet, space32)
    with pytest.raises(ValueError):
        fuse_dynamic(Tensor(np.zeros((32, 32, 14))), Tensor(np.zeros((16, 16, 14))), space32.dyn_mask, space32)


def test_unet_gradient_reaches_identity_features(space32):
    u = UNet(UNetConfig(id_dim=8, base=8, depth=2), seed=3)
    u.outc.weight.data = np.full_like(u.outc.weight.data, 0.01)  # leave the zero init
    h, w = space32.resolution
    f_id = Tensor(np.random.default_rng(2).standard_normal((h, w, 8)).astype(np.float32), requires_grad=True)
    e = ExpressionParams.neutral(space32.rig.n_expr)
    delta = decode_delta(f_id, build_driving_map(space32.rig, e, space32.binding), u, space32)
    (g,) = grad(ops.sum(delta), [f_id])
    assert np.abs(g).max() > 0
