import numpy as np
import pytest

from splatavatar.autodiff import Tensor, grad, no_grad, ops
from splatavatar.recon import ReconConfig, ReconNet, reconstruct

from conftest import tiny_model_config


@pytest.fixture(scope="module")
def net():
    return ReconNet(tiny_model_config().recon, seed=0)


def images(n, size=64, seed=0):
    return np.random.default_rng(seed).uniform(0, 1, (n, size, size, 3)).astype(np.float32)


@pytest.mark.parametrize("n", [1, 2, 3, 4])
def test_fixed_output_shapes(net, n):
    with no_grad():
        f_id, raw = net(images(n))
    assert f_id.shape == (32, 32, 8)
    assert raw.shape == (32, 32, 14)


def test_rejects_zero_and_too_many_images(net):
    with pytest.raises(ValueError):
        net(np.zeros((0, 64, 64, 3), np.float32))
    with pytest.raises(ValueError):
        net(images(5))
    with pytest.raises(ValueError):
        net(images(1, size=48))


def test_permutation_invariance(net):
    x = images(4, seed=1)
    with no_grad():
        a = net(x)[1].data
        b = net(x[[2, 0, 3, 1]])[1].data
    assert np.abs(a - b).max() <= 1e-5


def test_default_config_shapes():
    cfg = ReconConfig()
    assert cfg.tokens_per_image == 64 and cfg.query_count == 256 and cfg.upsample == 4
    with pytest.raises(ValueError):
        ReconConfig(patch=8).validate()
    with pytest.raises(ValueError):
        ReconConfig(uv_res=48, query_h=16, query_w=16).validate()


def test_query_attention_size_is_independent_of_token_count(net):
    d = net.cfg.token_dim
    for t in (1, 7, 50):
        tokens = Tensor(np.random.default_rng(t).standard_normal((t, d)).astype(np.float32))
        with no_grad():
            assert net.head_query_attend(tokens).shape == (net.cfg.query_count, d)
    with pytest.raises(ValueError):
        net.head_query_attend(Tensor(np.zeros((0, d), np.float32)))


def test_fuse_accepts_list_or_batch(net):
    r = np.random.default_rng(0)
    sets = [Tensor(r.standard_normal((16, net.cfg.token_dim)).astype(np.float32)) for _ in range(2)]
    with no_grad():
        a = net.fuse(sets).data
        b = net.fuse(Tensor(np.stack([s.data for s in sets]))).data
    np.testing.assert_array_equal(a, b)
    with pytest.raises(ValueError):
        net.fuse([])


def test_features_path_matches_image_path(net):
    x = images(2, seed=3)
    with no_grad():
        feats = net.encoder(Tensor(x))
        a = net(x)[1].data
        b = net(None, features=feats)[1].data
    np.testing.assert_array_equal(a, b)


def test_masks_zero_out_background(net):
    x = images(1, seed=4)
    m = np.zeros((1, 64, 64), np.float32)
    with no_grad():
        a = net(x, masks=m)[1].data
        b = net(np.zeros_like(x))[1].data
    np.testing.assert_array_equal(a, b)


def test_every_parameter_receives_gradient(net):
    f_id, raw = net(images(2, seed=5))
    loss = ops.sum(raw * raw) + ops.sum(f_id * f_id)
    params = net.named_parameters()
    grads = grad(loss, list(params.values()))
    dead = [k for k, g in zip(params, grads) if not np.any(g)]
    assert not dead


def test_reconstruct_activates(space32, net):
    with no_grad():
        c = reconstruct(net, images(1), space32)
    assert c.maps.position.shape == (32, 32, 3)
    assert np.all((c.maps.opacity.data > 0) & (c.maps.opacity.data < 1))


def test_deterministic_init():
    a = ReconNet(tiny_model_config().recon, seed=5).state_dict()
    b = ReconNet(tiny_model_config().recon, seed=5).state_dict()
    assert all(np.array_equal(a[k], b[k]) for k in a)
