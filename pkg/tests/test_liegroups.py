import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from demr import liegroups as lg
from demr.errors import (
    BadFraction,
    DegenerateInput,
    DispersedSamples,
    NotSkew,
    RankDeficient,
    TagMismatch,
    UnknownTag,
)
from demr.rng import make_rng

RZ90 = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])


def rz(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def random_rotations(rng, k):
    q = rng.standard_normal((k, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    w, x, y, z = q.T
    # standard unit-quaternion formula, written out independently of the package
    return np.stack(
        [
            np.stack([1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)], -1),
            np.stack([2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)], -1),
            np.stack([2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)], -1),
        ],
        -2,
    )


def assert_rotation(r):
    r = np.asarray(r)
    assert np.abs(np.swapaxes(r, -1, -2) @ r - np.eye(3)).max() <= 1e-9
    assert np.abs(np.linalg.det(r) - 1).max() <= 1e-9


# --- hat / vee / exp / log -------------------------------------------------------------


def test_hat_examples():
    np.testing.assert_array_equal(lg.hat([0.0, 0.0, 0.0]), np.zeros((3, 3)))
    np.testing.assert_array_equal(lg.hat([1.0, 2.0, 3.0]), [[0, -3, 2], [3, 0, -1], [-2, 1, 0]])


def test_hat_is_cross_product():
    rng = np.random.default_rng(0)
    a, b = rng.standard_normal((2, 3))
    np.testing.assert_allclose(lg.hat(a) @ b, np.cross(a, b), atol=1e-15)


def test_vee_hat_roundtrip():
    theta = np.random.default_rng(1).standard_normal((1000, 3))
    np.testing.assert_array_equal(lg.vee(lg.hat(theta)), theta)


def test_vee_rejects_non_skew():
    with pytest.raises(NotSkew):
        lg.vee(np.eye(3))


def test_exp_examples():
    np.testing.assert_array_equal(lg.exp_so3([0.0, 0.0, 0.0]), np.eye(3))
    np.testing.assert_allclose(lg.exp_so3([0.0, 0.0, np.pi / 2]), RZ90, atol=1e-15)


def test_log_pi_branch():
    w = lg.log_so3(np.diag([1.0, -1.0, -1.0]))
    assert abs(np.linalg.norm(w) - np.pi) < 1e-12
    np.testing.assert_allclose(np.abs(w) / np.pi, [1, 0, 0], atol=1e-12)


def test_log_near_pi_roundtrip():
    rng = np.random.default_rng(2)
    axis = rng.standard_normal((200, 3))
    axis /= np.linalg.norm(axis, axis=1, keepdims=True)
    for angle in (np.pi - 1e-9, np.pi - 1e-5, np.pi):
        r = lg.exp_so3(axis * angle)
        back = lg.exp_so3(lg.log_so3(r))
        assert np.abs(back - r).max() < 1e-8


def test_log_small_angle_accuracy():
    w = np.array([3e-9, -1e-9, 2e-9])
    np.testing.assert_allclose(lg.log_so3(lg.exp_so3(w)), w, rtol=1e-7)


def test_exp_log_roundtrip_random():
    rng = np.random.default_rng(3)
    axis = rng.standard_normal((10_000, 3))
    axis /= np.linalg.norm(axis, axis=1, keepdims=True)
    w = axis * rng.uniform(0, np.pi - 1e-3, (10_000, 1))
    r = lg.exp_so3(w)
    assert_rotation(r)
    assert np.abs(lg.log_so3(r) - w).max() <= 1e-8


def test_exp_matches_rodrigues_oracle():
    rng = np.random.default_rng(4)
    w = rng.standard_normal(3)
    a = np.linalg.norm(w)
    k = lg.hat(w / a)
    oracle = np.eye(3) + np.sin(a) * k + (1 - np.cos(a)) * k @ k
    np.testing.assert_allclose(lg.exp_so3(w), oracle, atol=1e-14)


def test_se3_examples():
    t = lg.exp_se3(np.zeros(6))
    np.testing.assert_array_equal(t.rot, np.eye(3))
    np.testing.assert_array_equal(t.trans, np.zeros(3))
    t = lg.exp_se3([0, 0, 0, 1.0, 2.0, 3.0])
    np.testing.assert_array_equal(t.rot, np.eye(3))
    np.testing.assert_allclose(t.trans, [1, 2, 3], atol=1e-15)


def test_se3_roundtrip_random():
    rng = np.random.default_rng(5)
    w = rng.standard_normal((1000, 3))
    w *= (rng.uniform(0, 3, 1000) / np.linalg.norm(w, axis=1))[:, None]
    xi = np.concatenate([w, rng.standard_normal((1000, 3))], 1)
    assert np.abs(lg.log_se3(lg.exp_se3(xi)) - xi).max() <= 1e-8


def test_rigid_transform_compose_inverse():
    rng = np.random.default_rng(6)
    t = lg.RigidTransform(random_rotations(rng, 4), rng.standard_normal((4, 3)))
    ident = t.compose(t.inverse())
    np.testing.assert_allclose(ident.rot, np.broadcast_to(np.eye(3), (4, 3, 3)), atol=1e-14)
    np.testing.assert_allclose(ident.trans, 0.0, atol=1e-14)
    pts = rng.standard_normal((4, 7, 3))
    np.testing.assert_allclose(t.inverse().apply(t.apply(pts)), pts, atol=1e-13)


# --- projection and representations ------------------------------------------------


@pytest.mark.parametrize("m", [np.eye(3), np.diag([2.0, 1.0, 1.0]), np.diag([1.0, 1.0, -1.0])])
def test_project_examples(m):
    np.testing.assert_allclose(lg.project_so3_svd(m), np.eye(3), atol=1e-15)


def test_project_rank_deficient():
    m = np.diag([1.0, 0.0, 0.0])
    with pytest.raises(RankDeficient) as info:
        lg.project_so3_svd(m)
    assert_rotation(info.value.result)
    assert_rotation(lg.project_so3_svd(m, strict=False))


def test_project_idempotent_and_equivariant():
    rng = np.random.default_rng(7)
    r = random_rotations(rng, 500)
    np.testing.assert_allclose(lg.project_so3_svd(r), r, atol=1e-9)
    g = random_rotations(rng, 500)
    m = rng.standard_normal((500, 3, 3))
    np.testing.assert_allclose(lg.project_so3_svd(g @ m), g @ lg.project_so3_svd(m), atol=1e-9)


def test_project_is_nearest_against_brute_force():
    rng = np.random.default_rng(8)
    cand = random_rotations(rng, 20_000)
    for m in rng.standard_normal((20, 3, 3)):
        r = lg.project_so3_svd(m)
        assert_rotation(r)
        best = np.linalg.norm((cand - m).reshape(-1, 9), axis=1).min()
        assert np.linalg.norm(m - r) <= best + 1e-9


def test_embed_equivariance():
    rng = np.random.default_rng(9)
    g, r = random_rotations(rng, 2)
    lhs = lg.embed(g @ r).data
    rhs = (g @ lg.embed(r).data.reshape(3, 3)).reshape(9)
    np.testing.assert_array_equal(lhs, rhs)


def test_rot_from_6d_examples():
    np.testing.assert_array_equal(lg.rot_from_6d([1.0, 0, 0, 0, 1.0, 0]), np.eye(3))
    np.testing.assert_allclose(lg.rot_from_6d([2.0, 0, 0, 0, 3.0, 0]), np.eye(3), atol=1e-15)
    r = 1 / np.sqrt(2)
    expect = np.array([[r, -r, 0], [r, r, 0], [0, 0, 1]])
    np.testing.assert_allclose(lg.rot_from_6d([1.0, 1, 0, 0, 1, 0]), expect, atol=1e-15)


def test_rot_from_6d_degenerate():
    with pytest.raises(DegenerateInput):
        lg.rot_from_6d([1.0, 0, 0, 2.0, 0, 0])


def test_baseline_examples():
    np.testing.assert_array_equal(lg.baseline_to_rotation(lg.EmbeddedVector("euler3", [0.0, 0, 0])), np.eye(3))
    np.testing.assert_allclose(lg.baseline_to_rotation(lg.EmbeddedVector("axis3", [0, 0, np.pi / 2])), RZ90, atol=1e-15)
    np.testing.assert_array_equal(lg.baseline_to_rotation(lg.EmbeddedVector("quat4", [1.0, 0, 0, 0])), np.eye(3))
    with pytest.raises(DegenerateInput):
        lg.baseline_to_rotation(lg.EmbeddedVector("quat4", [0.0, 0, 0, 0]))


def test_euler_is_intrinsic_zyx():
    yaw, pitch, roll = 0.3, -0.4, 1.1
    ry = lg.exp_so3([0, pitch, 0])
    rx = lg.exp_so3([roll, 0, 0])
    np.testing.assert_allclose(lg.euler_to_rotation([yaw, pitch, roll]), rz(yaw) @ ry @ rx, atol=1e-15)


@pytest.mark.parametrize("tag", ["euler3", "axis3", "quat4", "sixd6", "nine9"])
def test_represent_roundtrip(tag):
    rng = np.random.default_rng(10)
    r = random_rotations(rng, 1000)
    e = lg.represent(r, tag)
    assert e.data.shape == (1000, lg.TAG_LENGTHS[tag])
    back = lg.inverse_embed(e)
    assert_rotation(back)
    np.testing.assert_allclose(back, r, atol=1e-9)


def test_quaternion_sign_convention():
    q = lg.represent(random_rotations(np.random.default_rng(11), 100), "quat4").data
    assert np.all(q[:, 0] >= 0)


def test_embed_examples():
    np.testing.assert_array_equal(lg.embed(np.eye(3)).data, [1, 0, 0, 0, 1, 0, 0, 0, 1])
    e = lg.embed(lg.RigidTransform(np.eye(3), np.array([1.0, 2.0, 3.0])))
    assert e.tag == "se12"
    np.testing.assert_array_equal(e.data, [1, 0, 0, 0, 1, 0, 0, 0, 1, 1, 2, 3])


def test_inverse_embed_se12_composes_parts():
    rng = np.random.default_rng(12)
    r = random_rotations(rng, 1)[0]
    m = r + 0.01 * rng.standard_normal((3, 3))
    t = np.array([1.0, -2.0, 0.5])
    back = lg.inverse_embed(lg.EmbeddedVector("se12", np.concatenate([m.ravel(), t])))
    np.testing.assert_array_equal(back.rot, lg.project_so3_svd(m))
    np.testing.assert_array_equal(back.trans, t)


def test_inverse_embed_sixd_identity():
    np.testing.assert_array_equal(lg.inverse_embed(lg.EmbeddedVector("sixd6", [1.0, 0, 0, 0, 1, 0])), np.eye(3))


def test_embedded_vector_validation():
    with pytest.raises(UnknownTag):
        lg.EmbeddedVector("bogus", [1.0])
    with pytest.raises(ValueError):
        lg.EmbeddedVector("nine9", np.zeros(8))


# --- distances -----------------------------------------------------------------------


def test_geodesic_examples():
    assert lg.dist_geodesic(RZ90, RZ90) == 0.0
    assert abs(lg.dist_geodesic(np.eye(3), RZ90) - np.pi / 2) < 1e-15
    assert abs(lg.dist_angular(np.eye(3), RZ90) - np.pi / 2) < 1e-15


def test_geodesic_triangle_inequality():
    rng = np.random.default_rng(13)
    a, b, c = (random_rotations(rng, 1000) for _ in range(3))
    assert np.all(lg.dist_geodesic(a, c) <= lg.dist_geodesic(a, b) + lg.dist_geodesic(b, c) + 1e-9)


def test_angular_agrees_with_geodesic():
    rng = np.random.default_rng(14)
    a, b = random_rotations(rng, 10_000), random_rotations(rng, 10_000)
    assert np.abs(lg.dist_angular(a, b) - lg.dist_geodesic(a, b)).max() <= 1e-9


def test_extrinsic_examples():
    e = lg.embed(RZ90)
    assert lg.dist_extrinsic(e, e) == 0.0
    d = lg.dist_extrinsic(lg.embed(np.eye(3)), lg.embed(rz(np.pi)))
    assert abs(d - 8 / 9) < 1e-15
    with pytest.raises(TagMismatch):
        lg.dist_extrinsic(e, lg.represent(RZ90, "sixd6"))


def test_extrinsic_chordal_identity():
    rng = np.random.default_rng(15)
    a, b = random_rotations(rng, 1000), random_rotations(rng, 1000)
    lhs = 9 * lg.dist_extrinsic(lg.embed(a), lg.embed(b))
    np.testing.assert_allclose(lhs, 8 * np.sin(lg.dist_geodesic(a, b) / 2) ** 2, atol=1e-12)


def test_se3_geodesic_pure_translation():
    a = lg.RigidTransform(np.eye(3), np.zeros(3))
    b = lg.RigidTransform(np.eye(3), np.array([3.0, 4.0, 0.0]))
    assert abs(lg.dist_geodesic(a, b) - 5.0) < 1e-14


# --- statistics ----------------------------------------------------------------------


def test_concentrated_degenerate_noise():
    mu = random_rotations(np.random.default_rng(16), 1)[0]
    g = lg.ConcentratedGaussian(mu, 1e-24 * np.eye(3))
    x = lg.sample_concentrated(g, make_rng(0), 10)
    assert np.abs(x - mu).max() <= 1e-9


def test_concentrated_mean_tangent_is_zero():
    sigma = 0.05
    g = lg.ConcentratedGaussian(np.eye(3), sigma**2 * np.eye(3))
    x = lg.sample_concentrated(g, make_rng(1), 100_000)
    assert np.all(np.abs(lg.log_so3(x).mean(axis=0)) <= 3 * sigma / np.sqrt(1e5))


def test_concentrated_deterministic():
    g = lg.ConcentratedGaussian(np.eye(3), 0.01 * np.eye(3))
    a = lg.sample_concentrated(g, make_rng(7, "x"), 50)
    b = lg.sample_concentrated(g, make_rng(7, "x"), 50)
    assert np.array_equal(a, b)


def test_concentrated_se3():
    mean = lg.RigidTransform(np.eye(3), np.array([1.0, 0, 0]))
    g = lg.ConcentratedGaussian(mean, 1e-4 * np.eye(6))
    x = lg.sample_concentrated(g, make_rng(2), 5)
    assert_rotation(x.rot)
    assert np.abs(x.trans - [1, 0, 0]).max() < 0.1


def test_concentrated_validation():
    with pytest.raises(ValueError):
        lg.ConcentratedGaussian(np.eye(3), -np.eye(3))
    with pytest.raises(ValueError):
        lg.ConcentratedGaussian(np.eye(3), np.eye(6))


def test_frechet_examples():
    r = RZ90
    np.testing.assert_allclose(lg.frechet_mean(np.stack([r, r, r])), r, atol=1e-12)
    np.testing.assert_allclose(lg.frechet_mean(np.stack([rz(0.3), rz(-0.3)])), np.eye(3), atol=1e-12)


def test_frechet_statistical_bound_and_stationarity():
    sigma = 0.05
    mu = random_rotations(np.random.default_rng(17), 1)[0]
    g = lg.ConcentratedGaussian(mu, sigma**2 * np.eye(3))
    x = lg.sample_concentrated(g, make_rng(3), 10_000)
    m = lg.frechet_mean(x)
    assert lg.dist_geodesic(m, mu) <= 3 * sigma / 100 * np.sqrt(3)
    assert np.linalg.norm(lg.log_so3(m.T @ x).mean(axis=0)) <= 1e-9


def test_frechet_dispersed():
    with pytest.raises(DispersedSamples):
        lg.frechet_mean(np.stack([np.eye(3), rz(2.0)]))


def test_chordal_mean_examples():
    np.testing.assert_allclose(lg.chordal_mean_project(np.stack([rz(0.4), rz(-0.4)])), np.eye(3), atol=1e-15)
    with pytest.raises(RankDeficient):
        lg.chordal_mean_project(np.stack([np.eye(3), rz(np.pi)]))


def test_sample_transform_uniform_ranges():
    t = lg.sample_transform_uniform("euler", 0.2, make_rng(0), size=2000)
    ang = lg.rotation_to_euler(t.rot)
    assert np.all(np.abs(ang) <= 0.2 * np.pi + 1e-12)
    t = lg.sample_transform_uniform("euler", 1.0, make_rng(0), size=2000)
    assert np.all(np.abs(lg.rotation_to_euler(t.rot)) <= np.pi + 1e-12)
    t = lg.sample_transform_uniform("so3", 1e-9, make_rng(0), size=10)
    assert np.abs(t.rot - np.eye(3)).max() < 1e-8


def test_sample_transform_uniform_errors_and_determinism():
    with pytest.raises(BadFraction):
        lg.sample_transform_uniform("so3", 0.0, make_rng(0))
    with pytest.raises(BadFraction):
        lg.sample_transform_uniform("so3", 1.5, make_rng(0))
    a = lg.sample_transform_uniform("axis", 0.5, make_rng(4), size=5)
    b = lg.sample_transform_uniform("axis", 0.5, make_rng(4), size=5)
    assert np.array_equal(a.rot, b.rot) and np.array_equal(a.trans, b.trans)


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, 3, elements=st.floats(-10, 10)))
def test_exp_always_rotation(w):
    assert_rotation(lg.exp_so3(w))
    back = lg.log_so3(lg.exp_so3(w))
    assert np.linalg.norm(back) <= np.pi + 1e-9
    np.testing.assert_allclose(lg.exp_so3(back), lg.exp_so3(w), atol=1e-9)


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, (3, 3), elements=st.floats(-5, 5)))
def test_projection_always_rotation(m):
    r = lg.project_so3_svd(m, strict=False)
    assert_rotation(r)
