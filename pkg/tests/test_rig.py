import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from splatavatar.rig import (ExpressionParams, RigError, axis_angle_quat, bind_texels, build_rig, deform,
                             interpolate_vertex_attr, joint_transforms, lbs, load_rig, matrix_to_quat, quat_mul,
                             quat_normalize, quat_to_matrix, region_mask, rig_from_bytes, save_rig)

coeff = st.floats(-2, 2, allow_nan=False)


def random_pose(rng, rig, scale=0.4):
    e = ExpressionParams.neutral(rig.n_expr, rig.n_joints)
    e.psi = rng.uniform(-1, 1, rig.n_expr)
    e.joint_rots = quat_normalize(np.array([1.0, 0, 0, 0]) + rng.standard_normal((rig.n_joints, 4)) * scale)
    e.global_rot = quat_normalize(np.array([1.0, 0, 0, 0]) + rng.standard_normal(4) * scale)
    e.transl = rng.standard_normal(3) * 0.05
    return e


def test_rig_is_valid_and_deterministic(rig):
    rig.validate()
    assert build_rig(0).digest() == rig.digest()
    assert build_rig(1).digest() != rig.digest()
    assert rig.n_expr == 10 and rig.n_joints == 3
    assert {"face", "mouth", "eyes", "hair", "teeth"} <= set(rig.regions)


def test_head_sized(rig):
    assert 0.15 < rig.extent < 0.3


@settings(max_examples=25, deadline=None)
@given(st.lists(coeff, min_size=10, max_size=10), st.lists(coeff, min_size=10, max_size=10),
       st.floats(-3, 3, allow_nan=False))
def test_deform_is_affine_in_psi(a, b, t):
    rig = build_rig(0)
    ea, eb = ExpressionParams.neutral(10), ExpressionParams.neutral(10)
    ea.psi, eb.psi = np.array(a), np.array(b)
    ec = ExpressionParams.neutral(10)
    ec.psi = ea.psi + t * eb.psi
    v0 = rig.vertices
    lhs = deform(rig, ec) - v0
    rhs = (deform(rig, ea) - v0) + t * (deform(rig, eb) - v0)
    np.testing.assert_allclose(lhs, rhs, atol=1e-14)


def test_deform_rejects_wrong_length(rig):
    e = ExpressionParams.neutral(3)
    with pytest.raises(RigError):
        deform(rig, e)


def test_lbs_identity_pose(rig, rng):
    pts = rng.standard_normal((50, 3)) * 0.1
    w = rng.dirichlet(np.ones(rig.n_joints), 50)
    out = lbs(rig, ExpressionParams.neutral(rig.n_expr), pts, w)
    np.testing.assert_allclose(out, pts, atol=1e-12)


def test_lbs_rigid_equivariance(rig, rng):
    """A global rigid motion commutes with skinning."""
    pts = rng.standard_normal((40, 3)) * 0.1
    w = rng.dirichlet(np.ones(rig.n_joints), 40)
    e = random_pose(rng, rig)
    e.global_rot = np.array([1.0, 0, 0, 0])
    e.transl = np.zeros(3)
    base = lbs(rig, e, pts, w)
    q = quat_normalize(rng.standard_normal(4))
    t = rng.standard_normal(3)
    e2 = ExpressionParams(e.psi, e.joint_rots, q, t)
    moved = lbs(rig, e2, pts, w)
    np.testing.assert_allclose(moved, base @ quat_to_matrix(q).T + t, atol=1e-6)


def test_lbs_single_joint_is_rigid(rig, rng):
    pts = rng.standard_normal((30, 3)) * 0.1
    w = np.zeros((30, rig.n_joints))
    w[:, 2] = 1.0
    e = random_pose(rng, rig)
    posed = lbs(rig, e, pts, w)
    d0 = np.linalg.norm(pts[:, None] - pts[None], axis=-1)
    d1 = np.linalg.norm(posed[:, None] - posed[None], axis=-1)
    np.testing.assert_allclose(d0, d1, atol=1e-12)


def test_lbs_rejects_nonconvex_weights(rig):
    with pytest.raises(RigError):
        lbs(rig, ExpressionParams.neutral(rig.n_expr), np.zeros((1, 3)), np.array([[0.5, 0.6, -0.1]]))


def test_joint_transforms_rest_is_identity(rig):
    T = joint_transforms(rig, ExpressionParams.neutral(rig.n_expr))
    np.testing.assert_allclose(T, np.tile(np.eye(4), (rig.n_joints, 1, 1)), atol=1e-15)


def test_quaternion_helpers(rng):
    q = quat_normalize(rng.standard_normal((20, 4)))
    R = quat_to_matrix(q)
    np.testing.assert_allclose(R @ np.swapaxes(R, -1, -2), np.tile(np.eye(3), (20, 1, 1)), atol=1e-12)
    back = matrix_to_quat(R)
    np.testing.assert_allclose(np.abs(np.sum(back * q, axis=-1)), 1.0, atol=1e-12)
    a, b = q[0], q[1]
    np.testing.assert_allclose(quat_to_matrix(quat_mul(a, b)), quat_to_matrix(a) @ quat_to_matrix(b), atol=1e-12)
    half = axis_angle_quat((0, 0, 1), np.pi / 2)
    np.testing.assert_allclose(quat_to_matrix(half) @ [1, 0, 0], [0, 1, 0], atol=1e-12)


def test_barycentric_interpolation_is_exact_for_affine_fields(rig, rng):
    binding = bind_texels(rig, 64)
    A = rng.standard_normal((3, 3))
    c = rng.standard_normal(3)
    attr = rig.vertices @ A.T + c
    interp = interpolate_vertex_attr(rig, attr, binding)
    pos = interpolate_vertex_attr(rig, rig.vertices, binding)
    v = binding.valid
    np.testing.assert_allclose(interp[v], pos[v] @ A.T + c, atol=1e-9)
    assert np.all(interp[~v] == 0)


def test_binding_is_a_convex_partition(rig):
    b = bind_texels(rig, 64)
    v = b.valid
    assert v.sum() > 2000
    np.testing.assert_allclose(b.bary[v].sum(-1), 1.0, atol=1e-12)
    assert (b.bary[v] >= 0).all()
    assert (b.face_index[~v] == -1).all()


def test_binding_rejects_tiny_resolution(rig):
    with pytest.raises(RigError):
        bind_texels(rig, 4)


def test_region_masks_are_disjoint_enough(rig):
    b = bind_texels(rig, 64)
    mouth = region_mask(rig, "mouth", b)
    hair = region_mask(rig, "hair", b)
    assert mouth.any() and hair.any()
    assert not (mouth & hair).any()
    with pytest.raises(RigError):
        region_mask(rig, "tail", b)


def test_rig_file_roundtrip(tmp_path, rig):
    save_rig(rig, tmp_path / "r.bin")
    back = load_rig(tmp_path / "r.bin")
    assert back.digest() == rig.digest()
    assert rig_from_bytes(rig.to_bytes()).digest() == rig.digest()
    with pytest.raises(RigError):
        rig_from_bytes(b"garbage")


def test_expression_vector_roundtrip(rng, rig):
    e = random_pose(rng, rig)
    back = ExpressionParams.from_vector(e.to_vector(), rig.n_expr, rig.n_joints)
    assert np.array_equal(back.to_vector(), e.to_vector())


def test_validate_catches_bad_weights(rig):
    bad = build_rig(0)
    bad.skin_weights = bad.skin_weights * 1.5
    with pytest.raises(RigError):
        bad.validate()
