import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from splatavatar.autodiff import Tensor, grad
from splatavatar.autodiff.gradcheck import CATALOG, grad_check
from splatavatar.losses import (COMPONENTS, LossWeights, RegularizerAnchors, gradient_pyramid, l1, mouth_perceptual,
                                perceptual, register_metric, regularizers, ssim_loss, ssim_map, total)

img = arrays(np.float64, (16, 16, 3), elements=st.floats(0, 1, allow_nan=False))


@settings(max_examples=25, deadline=None)
@given(img)
def test_identical_images_give_zero_losses(x):
    assert float(l1(x, x).data) == 0.0
    assert abs(float(ssim_loss(x, x).data)) < 1e-12
    assert float(perceptual(x, x).data) == 0.0


@settings(max_examples=25, deadline=None)
@given(img, img)
def test_losses_are_symmetric_and_nonnegative(a, b):
    for fn in (l1, ssim_loss, perceptual):
        ab, ba = float(fn(a, b).data), float(fn(b, a).data)
        assert ab >= -1e-12
        assert abs(ab - ba) < 1e-12


def test_ssim_matches_skimage(rng):
    metrics = pytest.importorskip("skimage.metrics")
    for _ in range(3):
        a = rng.uniform(0, 1, (32, 40, 3))
        b = np.clip(a + rng.normal(0, 0.1, a.shape), 0, 1)
        ref = metrics.structural_similarity(a, b, gaussian_weights=True, sigma=1.5, use_sample_covariance=False,
                                            data_range=1.0, channel_axis=-1)
        ours = float(np.mean(ssim_map(a, b).data))
        assert abs(ours - ref) < 1e-9


def test_ssim_rejects_tiny_images():
    with pytest.raises(ValueError):
        ssim_loss(np.zeros((8, 8, 3)), np.zeros((8, 8, 3)))


def test_shape_mismatch_raises():
    with pytest.raises(ValueError):
        l1(np.zeros((4, 4, 3)), np.zeros((4, 5, 3)))
    with pytest.raises(ValueError):
        perceptual(np.zeros((16, 16, 3)), np.zeros((16, 16, 1)))


def test_l1_value():
    a = np.zeros((2, 2, 3))
    b = np.full((2, 2, 3), 0.25)
    assert float(l1(a, b).data) == 0.25


def test_gradient_pyramid_sees_edges_not_flat_shifts():
    flat = np.full((24, 24, 3), 0.3)
    brighter = np.full((24, 24, 3), 0.7)
    edge = flat.copy()
    edge[:, 12:] = 0.7
    assert float(perceptual(flat, brighter).data) < 1e-12
    assert float(perceptual(flat, edge).data) > 1e-3
    assert len(gradient_pyramid(flat)) == 3


def test_custom_metric_and_unknown_metric():
    register_metric("zero", lambda p, g: Tensor(np.zeros(())))
    a = np.random.default_rng(0).uniform(0, 1, (16, 16, 3))
    assert float(perceptual(a, 1 - a, "zero").data) == 0.0
    with pytest.raises(KeyError):
        perceptual(a, a, "vgg")


def test_mouth_term_only_sees_the_mask():
    r = np.random.default_rng(1)
    a = r.uniform(0, 1, (16, 16, 3))
    b = a.copy()
    m = np.zeros((16, 16))
    m[4:12, 4:12] = 1
    b[m == 0] = r.uniform(0, 1, (int((m == 0).sum()), 3))
    assert float(mouth_perceptual(a, b, m).data) == 0.0
    b[6, 6] += 0.3
    assert float(mouth_perceptual(a, b, m).data) > 0.0


def test_mouth_term_with_empty_mask_warns_and_is_zero():
    a = np.random.default_rng(2).uniform(0, 1, (16, 16, 3))
    with pytest.warns(RuntimeWarning, match="empty mouth mask"):
        out = mouth_perceptual(a, 1 - a, np.zeros((16, 16)))
    assert float(out.data) == 0.0


def test_mouth_gradient_vanishes_outside_mask():
    r = np.random.default_rng(3)
    p = Tensor(r.uniform(0, 1, (16, 16, 3)), requires_grad=True)
    m = np.zeros((16, 16))
    m[5:11, 5:11] = 1
    (g,) = grad(mouth_perceptual(p, r.uniform(0, 1, (16, 16, 3)), m), [p])
    assert not g[m == 0].any()
    assert g[m == 1].any()


def test_regularizers_values():
    pos = np.zeros((2, 2, 3))
    anchors = RegularizerAnchors(np.zeros((2, 2, 3)), np.full((2, 2, 3), 0.5), np.array([[True, True], [True, False]]))
    pos[0, 0] = [3.0, 4.0, 0.0]
    pos[1, 1] = [100.0, 0, 0]  # invalid texel, ignored
    lx, ls = regularizers(pos, np.full((2, 2, 3), 0.5), anchors)
    assert float(lx.data) == pytest.approx(25.0 / 3)
    assert float(ls.data) == 0.0


def test_total_unit_weights():
    comps = dict(zip(COMPONENTS, [1.0, 0.0, 0.0, 0.0, 0.0, 0.0]))
    assert float(total(comps, LossWeights(1, 1, 1, 1, 1, 1)).data) == 1.0


def test_total_default_weights_mouth():
    assert float(total({"mouth": 0.1}).data) == 1.0
    w = LossWeights()
    assert (w.l1, w.ssim, w.lpips, w.mouth, w.xyz, w.scale) == (1.0, 0.1, 0.2, 10.0, 0.01, 1.0)


def test_total_rejects_bad_input():
    with pytest.raises(KeyError):
        total({"vgg": 1.0})
    with pytest.raises(ValueError):
        total({"l1": float("nan")})
    with pytest.raises(ValueError):
        LossWeights(l1=-1.0)
    assert float(total({}).data) == 0.0


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(0, 10, allow_nan=False), min_size=6, max_size=6),
       st.lists(st.floats(0, 10, allow_nan=False), min_size=6, max_size=6))
def test_total_is_linear_in_weights(vals, ws):
    comps = dict(zip(COMPONENTS, vals))
    got = float(total(comps, LossWeights(*ws)).data)
    assert got == pytest.approx(sum(v * w for v, w in zip(vals, ws)), rel=1e-12, abs=1e-12)


@pytest.mark.parametrize("name", ["l1", "ssim", "perceptual", "mouth_perceptual", "l_xyz", "l_scale"])
def test_loss_gradients(name):
    assert name in CATALOG
    assert grad_check(name, seed=0) < 1e-4


def test_l1_subgradient_at_zero_is_zero():
    p = Tensor(np.zeros((2, 2, 1)), requires_grad=True)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        (g,) = grad(l1(p, np.zeros((2, 2, 1))), [p])
    assert not g.any()
