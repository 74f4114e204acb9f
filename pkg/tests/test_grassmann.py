import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from demr import grassmann as gr
from demr import matlin
from demr.errors import DimMismatch, LengthMismatch, MartinUndefined, SpectralTie
from demr.rng import make_rng


def frame(cols):
    return gr.GrassmannPoint(matlin.gram_schmidt(np.asarray(cols, dtype=float)))


def random_orthogonal(rng, m):
    return matlin.gram_schmidt(rng.standard_normal((m, m)))


def test_point_validation():
    with pytest.raises(DimMismatch):
        gr.GrassmannPoint(np.eye(3))
    with pytest.raises(ValueError):
        gr.GrassmannPoint(np.array([[1.0, 1.0], [0.0, 1.0], [0.0, 0.0]]))
    p = gr.GrassmannPoint(np.eye(4)[:, :2])
    assert (p.n, p.m) == (4, 2)


def test_projector_of_coordinate_frame():
    p = gr.embed_projector(gr.GrassmannPoint(np.eye(5)[:, :2]))
    np.testing.assert_array_equal(p, np.diag([1.0, 1, 0, 0, 0]))


def test_projector_quotient_invariance_and_rank():
    rng = np.random.default_rng(0)
    g = gr.sample_subspace_uniform(8, 3, rng)
    q = random_orthogonal(rng, 3)
    p1 = gr.embed_projector(g)
    p2 = gr.embed_projector(gr.GrassmannPoint(g.u @ q))
    assert np.abs(p1 - p2).max() <= 1e-12
    assert np.sum(matlin.sym_eig(p1).lam > 0.5) == 3


def test_inverse_embed_examples():
    g = gr.inverse_embed_grassmann(np.diag([1.0, 1.0, 0.0, 0.0]), 2)
    np.testing.assert_allclose(gr.embed_projector(g), np.diag([1.0, 1, 0, 0]), atol=1e-15)
    with pytest.raises(SpectralTie):
        gr.inverse_embed_grassmann(np.eye(4), 2)


def test_inverse_embed_perturbed():
    rng = np.random.default_rng(1)
    g = gr.sample_subspace_uniform(20, 5, rng)
    noise = rng.standard_normal((20, 20))
    m = gr.embed_projector(g) + 1e-6 * (noise + noise.T) / 2
    assert gr.principal_angles(gr.inverse_embed_grassmann(m, 5), g).max() <= 1e-4


def test_inverse_embed_stack_and_tie_index():
    rng = np.random.default_rng(2)
    frames = [gr.sample_subspace_uniform(6, 2, rng) for _ in range(3)]
    stack = np.stack([gr.embed_projector(f) for f in frames])
    out = gr.inverse_embed_grassmann(stack, 2)
    for a, b in zip(out, frames):
        assert gr.principal_angles(a, b).max() <= 1e-9
    stack[1] = np.eye(6)
    with pytest.raises(SpectralTie) as info:
        gr.inverse_embed_grassmann(stack, 2)
    assert info.value.index == 1


def test_symvec_examples():
    np.testing.assert_array_equal(gr.sym_vec(np.eye(2)), [1, 1, 0])
    v = gr.sym_vec(np.array([[0.0, 1.0], [1.0, 0.0]]))
    np.testing.assert_allclose(v, [0, 0, np.sqrt(2)], rtol=1e-15)
    assert abs(v @ v - 2.0) < 1e-15


def test_symvec_order_three():
    a = np.array([[1.0, 2.0, 3.0], [2.0, 4.0, 5.0], [3.0, 5.0, 6.0]])
    s = np.sqrt(2)
    np.testing.assert_allclose(gr.sym_vec(a), [1, 4, 6, 2 * s, 3 * s, 5 * s], rtol=1e-15)


def test_symvec_roundtrip_and_isometry():
    rng = np.random.default_rng(3)
    g = rng.standard_normal((100, 7, 7))
    a = g + np.swapaxes(g, 1, 2)
    # off-diagonals pass through a sqrt(2) scaling and back: exact up to one ulp
    np.testing.assert_array_max_ulp(gr.sym_unvec(gr.sym_vec(a)), a, maxulp=1)
    b = np.swapaxes(a, 1, 2)[::-1]
    lhs = np.einsum("kij,kij->k", a, b)
    rhs = np.einsum("ki,ki->k", gr.sym_vec(a), gr.sym_vec(b))
    np.testing.assert_allclose(lhs, rhs, atol=1e-12 * np.abs(lhs).max())


def test_symvec_lengths():
    assert gr.symvec_length(64) == 2080
    assert gr.symvec_dim(2080) == 64
    with pytest.raises(LengthMismatch):
        gr.symvec_dim(7)
    with pytest.raises(LengthMismatch):
        gr.sym_unvec(np.zeros(6), 4)
    with pytest.raises(ValueError):
        gr.sym_vec(np.array([[0.0, 1.0], [0.0, 0.0]]))


def test_principal_angle_examples():
    rng = np.random.default_rng(4)
    g = gr.sample_subspace_uniform(6, 3, rng)
    np.testing.assert_allclose(gr.principal_angles(g, g), 0.0, atol=1e-12)
    e1, e2 = frame([[1.0], [0], [0]]), frame([[0.0], [1], [0]])
    np.testing.assert_allclose(gr.principal_angles(e1, e2), [np.pi / 2], atol=1e-15)
    a = frame([[np.cos(0.3)], [np.sin(0.3)], [0.0]])
    np.testing.assert_allclose(gr.principal_angles(e1, a), [0.3], atol=1e-14)


def test_principal_angles_tiny_angle_accuracy():
    a = frame([[1.0], [0], [0]])
    b = frame([[np.cos(1e-9)], [np.sin(1e-9)], [0.0]])
    np.testing.assert_allclose(gr.principal_angles(a, b), [1e-9], rtol=1e-6)


def test_principal_angles_dim_mismatch():
    with pytest.raises(DimMismatch):
        gr.principal_angles(gr.GrassmannPoint(np.eye(3)[:, :1]), gr.GrassmannPoint(np.eye(3)[:, :2]))


def test_distance_examples():
    e1 = frame([[1.0], [0], [0]])
    for kind in ("geodesic", "bc", "martin"):
        assert gr.dist_grassmann(e1, e1, kind) == pytest.approx(0.0, abs=1e-15)
    e2 = frame([[0.0], [1], [0]])
    assert gr.dist_grassmann(e1, e2, "bc") == pytest.approx(1.0, abs=1e-15)
    with pytest.raises(MartinUndefined):
        gr.dist_grassmann(e1, e2, "martin")


def test_distance_values_at_angle_point_three():
    a = frame([[1.0], [0], [0]])
    b = frame([[np.cos(0.3)], [np.sin(0.3)], [0.0]])
    assert gr.dist_grassmann(a, b, "geodesic") == pytest.approx(0.3, abs=1e-14)
    assert gr.dist_grassmann(a, b, "bc") == pytest.approx(1 - np.cos(0.3) ** 2, abs=1e-14)
    assert gr.dist_grassmann(a, b, "bc") == pytest.approx(0.0873322, abs=1e-7)
    # -2 log cos(0.3) evaluates to 0.0913833 (not the 0.0918 sometimes quoted)
    assert gr.dist_grassmann(a, b, "martin") == pytest.approx(-2 * np.log(np.cos(0.3)), abs=1e-14)
    assert gr.dist_grassmann(a, b, "martin") == pytest.approx(0.0913833, abs=1e-7)


def test_distances_quotient_invariant():
    rng = np.random.default_rng(5)
    a, b = gr.sample_subspace_uniform(10, 4, rng), gr.sample_subspace_uniform(10, 4, rng)
    a2 = gr.GrassmannPoint(a.u @ random_orthogonal(rng, 4))
    b2 = gr.GrassmannPoint(b.u @ random_orthogonal(rng, 4))
    for kind in ("geodesic", "bc", "martin"):
        assert abs(gr.dist_grassmann(a, b, kind) - gr.dist_grassmann(a2, b2, kind)) <= 1e-9


def test_geodesic_triangle_inequality():
    rng = np.random.default_rng(6)
    for _ in range(100):
        a, b, c = (gr.sample_subspace_uniform(6, 2, rng) for _ in range(3))
        assert gr.dist_grassmann(a, c) <= gr.dist_grassmann(a, b) + gr.dist_grassmann(b, c) + 1e-9


def test_sampler_invariants_and_determinism():
    rng = np.random.default_rng(7)
    for _ in range(1000):
        g = gr.sample_subspace_uniform(5, 2, rng)
        assert np.abs(g.u.T @ g.u - np.eye(2)).max() <= 1e-12
    a = gr.sample_subspace_uniform(9, 3, make_rng(1))
    b = gr.sample_subspace_uniform(9, 3, make_rng(1))
    assert np.array_equal(a.u, b.u)


def test_sampler_lines_uniform_in_angle():
    rng = make_rng(2)
    angles = np.empty(10_000)
    for i in range(angles.size):
        u = gr.sample_subspace_uniform(2, 1, rng).u[:, 0]
        angles[i] = np.arctan2(u[1], u[0]) % np.pi
    # Kolmogorov-Smirnov against U[0, pi); 1.628 / sqrt(n) is the 1% critical value
    x = np.sort(angles) / np.pi
    n = x.size
    d = max(np.max(np.arange(1, n + 1) / n - x), np.max(x - np.arange(n) / n))
    assert d < 1.628 / np.sqrt(n)


def test_projector_gaussian():
    rng = np.random.default_rng(8)
    g = gr.sample_subspace_uniform(6, 2, rng)
    np.testing.assert_array_equal(gr.projector_gaussian_sample(g, 0.0, rng), gr.embed_projector(g))
    a = gr.projector_gaussian_sample(g, 0.1, make_rng(3), 4)
    b = gr.projector_gaussian_sample(g, 0.1, make_rng(3), 4)
    assert np.array_equal(a, b)
    assert np.array_equal(a, np.swapaxes(a, 1, 2))


def test_projector_gaussian_mle():
    rng = make_rng(4)
    g = gr.sample_subspace_uniform(20, 5, rng)
    mean = gr.projector_gaussian_sample(g, 0.01, rng, 10_000).mean(axis=0)
    assert gr.dist_grassmann(gr.inverse_embed_grassmann(mean, 5), g) <= 0.01


def test_noise_response_monotone():
    rng = make_rng(5)
    means = []
    for sigma in (1e-4, 1e-3, 1e-2, 1e-1):
        d = []
        for _ in range(100):
            g = gr.sample_subspace_uniform(8, 2, rng)
            d.append(gr.dist_grassmann(gr.inverse_embed_grassmann(gr.projector_gaussian_sample(g, sigma, rng), 2), g))
        means.append(np.mean(d))
    assert all(x <= y for x, y in zip(means, means[1:]))


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (6, 2), elements=st.floats(-10, 10)))
def test_roundtrip_property(raw):
    try:
        u = matlin.gram_schmidt(raw)
    except ValueError:
        return
    g = gr.GrassmannPoint(u)
    back = gr.inverse_embed_grassmann(gr.embed_projector(g), 2)
    assert gr.principal_angles(back, g).max() <= 1e-9
