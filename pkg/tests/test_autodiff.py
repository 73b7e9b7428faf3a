import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from splatavatar.autodiff import (CATALOG, Adam, NonFiniteError, Record, Tensor, grad, grad_check, no_grad,
                                  ops)
from splatavatar.autodiff import checkpoint
from splatavatar.autodiff.checkpoint import CheckpointError
from splatavatar.autodiff.nn import Conv2d, Linear, MultiHeadAttention, attention

finite = st.floats(-10, 10, allow_nan=False, width=64)


def test_catalog_covers_substrate_ops():
    for name in ("add", "mul", "div", "matmul", "softmax", "layer_norm", "conv2d", "upsample_nearest", "gather",
                 "concat", "max", "sigmoid", "softplus"):
        assert name in CATALOG


@pytest.mark.parametrize("name", sorted(n for n in CATALOG if n not in ("ssim", "perceptual", "mouth_perceptual")))
def test_grad_check_two_seeds(name):
    for seed in (0, 1):
        assert grad_check(name, seed=seed) < 1e-4


def test_grad_check_detects_a_wrong_backward():
    from splatavatar.autodiff import register
    from splatavatar.autodiff.tensor import make_result

    def bad_square(x):
        return make_result(x.data**2, (x,), lambda g: (g * x.data,), "bad_square")  # missing factor 2

    register("_bad_square", bad_square, lambda r: [r.uniform(0.5, 1.5, 5)])
    try:
        assert grad_check("_bad_square") > 0.4
    finally:
        CATALOG.pop("_bad_square")


def test_grad_check_rejects_nonpositive_epsilon():
    with pytest.raises(ValueError):
        grad_check("add", epsilon=0.0)


def test_unreached_input_gets_exact_zero():
    a = Tensor(np.ones(3), requires_grad=True)
    b = Tensor(np.ones(3), requires_grad=True)
    ga, gb = grad(ops.sum(a * 2.0), [a, b])
    assert np.array_equal(ga, np.full(3, 2.0))
    assert np.array_equal(gb, np.zeros(3))


def test_shared_subexpression_accumulates():
    x = Tensor(np.array([3.0]), requires_grad=True)
    y = x * x + x  # dy/dx = 2x + 1
    (g,) = grad(ops.sum(y), [x])
    assert g[0] == 7.0


def test_deep_chain_does_not_recurse():
    x = Tensor(np.array([1.0]), requires_grad=True)
    y = x
    for _ in range(5000):
        y = y + 0.0
    (g,) = grad(ops.sum(y), [x])
    assert g[0] == 1.0


def test_nonfinite_error_names_op():
    x = Tensor(np.array([-1.0, 1.0]), requires_grad=True)
    with pytest.raises(NonFiniteError) as e:
        ops.log(x)
    assert e.value.op == "log"


def test_no_grad_builds_no_graph():
    x = Tensor(np.ones(2), requires_grad=True)
    with no_grad():
        y = x * 3.0
    assert not y.requires_grad


def test_masked_mul_blocks_gradient_exactly():
    x = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
    m = np.array([[1.0, 0.0, 1.0], [0.0, 1.0, 0.0]])
    (g,) = grad(ops.sum(ops.masked_mul(x, m) * 5.0), [x])
    assert np.array_equal(g, 5.0 * m)


def test_conv2d_matches_direct_loop(rng):
    x = rng.standard_normal((1, 5, 6, 2))
    w = rng.standard_normal((3, 3, 2, 4))
    b = rng.standard_normal(4)
    out = ops.conv2d(Tensor(x), Tensor(w), Tensor(b), stride=1, padding=1).data
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    ref = np.zeros((1, 5, 6, 4))
    for i in range(5):
        for j in range(6):
            ref[0, i, j] = np.tensordot(xp[0, i : i + 3, j : j + 3], w, axes=3) + b
    np.testing.assert_allclose(out, ref, atol=1e-12)


def test_softmax_rows_sum_to_one(rng):
    s = ops.softmax(Tensor(rng.standard_normal((4, 7)) * 30)).data
    np.testing.assert_allclose(s.sum(-1), 1.0, atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, (3, 4), elements=finite), arrays(np.float64, (3, 4), elements=finite))
def test_add_mul_match_numpy(a, b):
    assert np.array_equal((Tensor(a) + Tensor(b)).data, a + b)
    assert np.array_equal((Tensor(a) * Tensor(b)).data, a * b)


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, (2, 3, 4), elements=finite))
def test_sum_gradient_is_ones(x):
    t = Tensor(x, requires_grad=True)
    (g,) = grad(ops.sum(t), [t])
    assert np.array_equal(g, np.ones_like(x))


def test_attention_is_permutation_invariant_over_keys(rng):
    q = Tensor(rng.standard_normal((1, 3, 8)))
    k = rng.standard_normal((1, 5, 8))
    v = rng.standard_normal((1, 5, 8))
    perm = rng.permutation(5)
    a = attention(q, Tensor(k), Tensor(v)).data
    b = attention(q, Tensor(k[:, perm]), Tensor(v[:, perm])).data
    np.testing.assert_allclose(a, b, atol=1e-12)


def test_multihead_attention_shapes(rng):
    mha = MultiHeadAttention(16, 4, rng, dtype=np.float64)
    out = mha(Tensor(rng.standard_normal((2, 3, 16))), Tensor(rng.standard_normal((2, 7, 16))))
    assert out.shape == (2, 3, 16)


def test_adam_first_step_matches_hand_computation():
    p = Tensor(np.array([1.0, -2.0]), requires_grad=True)
    opt = Adam({"p": p}, lr=0.1)
    g = np.array([0.5, -4.0])
    opt.step({"p": g})
    # first bias-corrected step is lr * g / (|g| + eps)
    np.testing.assert_allclose(p.data, np.array([1.0, -2.0]) - 0.1 * g / (np.abs(g) + 1e-8), rtol=1e-12)


def test_adam_defaults():
    opt = Adam({})
    assert opt.lr == 3e-5 and (opt.beta1, opt.beta2) == (0.9, 0.999) and opt.eps == 1e-8


def test_adam_skips_params_without_grad():
    p = Tensor(np.ones(2), requires_grad=True)
    before = p.data
    Adam({"p": p}, lr=1.0).step()
    assert p.data is before


def test_adam_quadratic_converges():
    p = Tensor(np.array([3.0, -1.0]), requires_grad=True)
    opt = Adam({"p": p}, lr=0.05)
    for _ in range(500):
        opt.zero_grad()
        ops.sum(p * p).backward()
        opt.step()
    assert np.abs(p.data).max() < 1e-2


def test_checkpoint_roundtrip(tmp_path, rng):
    state = {"a": rng.standard_normal((3, 4)).astype(np.float32), "b": np.arange(5, dtype=np.int64),
             "c": rng.standard_normal(2)}
    checkpoint.save(tmp_path / "x.ckpt", state)
    back = checkpoint.load(tmp_path / "x.ckpt")
    assert set(back) == set(state)
    for k in state:
        assert back[k].dtype == state[k].dtype and np.array_equal(back[k], state[k])


def test_checkpoint_rejects_garbage():
    with pytest.raises(CheckpointError):
        checkpoint.loads(b"not a checkpoint at all")
    blob = checkpoint.dumps({"a": np.ones(10)})
    with pytest.raises(CheckpointError):
        checkpoint.loads(blob[:-5])


def test_record_forward_backward(rng):
    lin = Linear(3, 2, rng, dtype=np.float64)
    rec = Record(lambda p, x: {"y": lin(x["x"])}, params=lin.named_parameters(), shapes={"x": (4, 3)})
    x = rng.standard_normal((4, 3))
    out = rec.forward({"x": x})
    np.testing.assert_allclose(out["y"], x @ lin.weight.data + lin.bias.data)
    g = rec.backward({"y": np.ones((4, 2))})
    np.testing.assert_allclose(g["x"], np.ones((4, 2)) @ lin.weight.data.T)
    assert "matmul" in rec.operations
    with pytest.raises(ValueError):
        rec.forward({"x": np.ones((2, 3))})


def test_module_state_dict_roundtrip(rng):
    a = Conv2d(2, 3, 3, rng)
    b = Conv2d(2, 3, 3, np.random.default_rng(99))
    b.load_state_dict(a.state_dict())
    x = Tensor(rng.standard_normal((1, 4, 4, 2)).astype(np.float32))
    assert np.array_equal(a(x).data, b(x).data)
