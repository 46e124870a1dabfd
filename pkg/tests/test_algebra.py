import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from odecofield import algebra as al

angles = st.floats(-np.pi, np.pi, allow_nan=False)
theta_st = st.tuples(angles, angles, angles)
pos = st.floats(0.05, 20.0, allow_nan=False)
lam_st = st.tuples(pos, pos, pos)


def _sphere_grid(n=40):
    pts, _ = al.sphere_quadrature(n, 2 * n)
    return pts


def _block_mask():
    mask = np.zeros((al.NCOEFF, al.NCOEFF), dtype=bool)
    for sl in al.BAND_SLICES:
        mask[sl, sl] = True
    return mask


def test_real_sh_orthonormal():
    pts, w = al.sphere_quadrature()
    Y = al.real_sh(pts)
    np.testing.assert_allclose(Y.T @ (w[:, None] * Y), np.eye(al.NCOEFF), atol=1e-12)


def test_generators_antisymmetric_block_diagonal():
    ops = al.angular_ops()
    off = ~_block_mask()
    for L in (ops.Lx, ops.Ly, ops.Lz):
        assert np.abs(L + L.T).max() < 1e-12
        assert np.all(L[off] == 0)
        assert np.all(L[0] == 0) and np.all(L[:, 0] == 0)


def test_commutator_sign():
    ops = al.angular_ops()
    c = ops.commutator_sign
    assert c == 1
    com = lambda a, b: a @ b - b @ a  # noqa: E731
    assert np.abs(com(ops.Lx, ops.Ly) - c * ops.Lz).max() < 1e-10
    assert np.abs(com(ops.Ly, ops.Lz) - c * ops.Lx).max() < 1e-10
    assert np.abs(com(ops.Lz, ops.Lx) - c * ops.Ly).max() < 1e-10


def test_lz_matches_finite_difference_z_rotation():
    # independent oracle: rotate the argument of every basis function about z
    # and fit the coefficient map, then differentiate numerically
    h = 1e-6
    Dp = al.fit_band_rotation(al.rot_z(h))
    Dm = al.fit_band_rotation(al.rot_z(-h))
    Lfd = (Dp - Dm) / (2 * h)
    Lz = al.angular_ops().Lz
    assert np.abs(Lfd - Lz).max() < 1e-6
    # couples only (m, -m) with magnitude |m|
    for i, j in zip(*np.nonzero(Lz)):
        assert al.ORDERS[i] == -al.ORDERS[j]
        assert abs(Lz[i, j]) == abs(al.ORDERS[i])


def test_lx_ly_match_fitted_rotations():
    h = 1e-6
    ops = al.angular_ops()
    for R, L in ((al.rot_x, ops.Lx), (al.rot_y, ops.Ly)):
        Lfd = (al.fit_band_rotation(R(h)) - al.fit_band_rotation(R(-h))) / (2 * h)
        assert np.abs(Lfd - L).max() < 1e-6


def test_rotation_identity():
    assert np.array_equal(al.rotation_operator((0, 0, 0)), np.eye(al.NCOEFF))


def test_rotation_orthogonal_1000_random(rng):
    off = ~_block_mask()
    worst = 0.0
    for th in rng.uniform(-np.pi, np.pi, (1000, 3)):
        D = al.rotation_operator(th)
        worst = max(worst, np.abs(D.T @ D - np.eye(al.NCOEFF)).max())
        assert np.all(D[off] == 0)
    assert worst < 1e-9


@given(theta_st)
def test_rotation_matches_fitted_operator(theta):
    D = al.rotation_operator(theta)
    D_fit = al.fit_band_rotation(al.euler_to_matrix(theta))
    assert np.abs(D - D_fit).max() < 1e-9


def test_quarter_turn_swaps_x_and_y():
    D = al.rotation_operator((0, 0, np.pi / 2))
    np.testing.assert_allclose(D @ al.canonical_tensor((2, 1, 1)), al.canonical_tensor((1, 2, 1)), atol=1e-9)


def test_canonical_pointwise_reconstruction(rng):
    d = rng.standard_normal((500, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    for lam in ([1, 0, 0], [0, 1, 0], [0, 0, 1], [2.5, 0.3, 7.0]):
        want = (np.asarray(lam) * d**4).sum(axis=1)
        got = al.evaluate_polynomial(al.canonical_tensor(lam), d)
        assert np.abs(got - want).max() < 1e-10


def test_canonical_examples():
    assert np.array_equal(al.canonical_tensor((0, 0, 0)), np.zeros(al.NCOEFF))
    f = al.canonical_tensor((1, 1, 1))
    assert np.abs(f[al.BAND_SLICES[1]]).max() < 1e-12
    e = al.canonical_tensor((1, 0, 0))
    assert abs(al.evaluate_polynomial(e, [1, 0, 0]) - 1) < 1e-10
    assert abs(al.evaluate_polynomial(e, [0, 0, 1])) < 1e-10


def test_stretch_basis_column_symmetry():
    B = al.stretch_basis()
    Dz = al.rotation_operator((0, 0, np.pi / 2))
    Dx = al.rotation_operator((np.pi / 2, 0, 0))
    Dy = al.rotation_operator((0, np.pi / 2, 0))
    np.testing.assert_allclose(Dz @ B[:, 0], B[:, 1], atol=1e-12)
    np.testing.assert_allclose(Dx @ B[:, 1], B[:, 2], atol=1e-12)
    np.testing.assert_allclose(Dy @ B[:, 2], B[:, 0], atol=1e-12)


@given(lam_st)
def test_nonnegative_on_sphere(lam):
    vals = al.evaluate_polynomial(al.canonical_tensor(lam), _sphere_grid(16))
    assert vals.min() >= -1e-12


def test_equivariance_100_cases(rng):
    worst = 0.0
    for _ in range(100):
        th = rng.uniform(-np.pi, np.pi, 3)
        lam = rng.uniform(0.1, 5, 3)
        d = rng.standard_normal(3)
        d /= np.linalg.norm(d)
        f = al.canonical_tensor(lam)
        lhs = al.evaluate_polynomial(al.rotation_operator(th) @ f, d)
        rhs = al.evaluate_polynomial(f, al.euler_to_matrix(th).T @ d)
        worst = max(worst, abs(lhs - rhs))
    assert worst < 1e-8


def _octahedral_group():
    mats = []
    for perm in itertools.permutations(range(3)):
        for signs in itertools.product((1, -1), repeat=3):
            P = np.zeros((3, 3))
            P[range(3), perm] = signs
            if np.linalg.det(P) > 0:
                mats.append(P)
    return mats


def test_octahedral_invariance():
    group = _octahedral_group()
    assert len(group) == 24
    for c in (1.0, 3.7):
        f = al.canonical_tensor((c, c, c))
        for P in group:
            assert np.abs(al.rotation_operator_from_matrix(P) @ f - f).max() < 1e-9


@given(lam_st)
def test_stretch_permutation_symmetry(lam):
    lam = np.array(lam)
    for P in _octahedral_group():
        # polynomial after rotation is sum lam_k (P^T d)_k^4 = sum lam_k d_{perm(k)}^4
        perm = np.abs(P).argmax(axis=0)
        lam_p = np.zeros(3)
        lam_p[perm] = lam
        got = al.rotation_operator_from_matrix(P) @ al.canonical_tensor(lam)
        assert np.abs(got - al.canonical_tensor(lam_p)).max() < 1e-9 * max(1.0, lam.max())


@given(theta_st, lam_st)
def test_norm_preserved(theta, lam):
    f = al.canonical_tensor(lam)
    assert abs(np.linalg.norm(al.rotation_operator(theta) @ f) - np.linalg.norm(f)) < 1e-9 * np.linalg.norm(f)


def test_euler_roundtrip(rng):
    for th in rng.uniform(-1.5, 1.5, (50, 3)):
        np.testing.assert_allclose(al.matrix_to_euler(al.euler_to_matrix(th)), th, atol=1e-10)


def test_normal_rotation_examples():
    assert np.abs(al.normal_rotation([0, 0, 1]) - np.eye(al.NCOEFF)).max() < 1e-12
    f = al.normal_rotation([1, 0, 0]) @ al.canonical_tensor((1, 1, 2))
    d = _sphere_grid(12)
    want = 2 * d[:, 0] ** 4 + d[:, 1] ** 4 + d[:, 2] ** 4
    assert np.abs(al.evaluate_polynomial(f, d) - want).max() < 1e-9
    D = al.normal_rotation([0, 0, -1])
    np.testing.assert_allclose(al.axis_alignment_matrix([0, 0, -1]), al.rot_x(np.pi))
    g = al.canonical_tensor((3, 1, 2)) + 0.1
    assert np.abs(D @ (D @ g) - g).max() < 1e-9
    np.testing.assert_array_equal(al.normal_rotation([0, 0, -1]), D)


def test_normal_rotation_rejects_non_unit():
    with pytest.raises(ValueError):
        al.normal_rotation([1.0, 1.0, 0.0])


@given(st.tuples(st.floats(-1, 1), st.floats(-1, 1), st.floats(-1, 1)), angles)
def test_boundary_tensor_lobe_along_normal(n, tz):
    n = np.array(n)
    if np.linalg.norm(n) < 1e-3:
        n = np.array([0.0, 0.0, 1.0])
    n /= np.linalg.norm(n)
    f = al.boundary_tensor(n, tz, (1, 1, 5))
    d = _sphere_grid(30)
    best = d[np.argmax(al.evaluate_polynomial(f, d))]
    assert abs(abs(best @ n) - 1) < 5e-3


def test_boundary_tensor_examples(rng):
    lam = (2, 1, 1)
    assert np.abs(al.boundary_tensor([0, 0, 1], 0.0, lam) - al.canonical_tensor(lam)).max() < 1e-12
    np.testing.assert_allclose(al.boundary_tensor([0, 0, 1], np.pi / 2, lam), al.canonical_tensor((1, 2, 1)),
                               atol=1e-9)


def test_boundary_tensor_equal_tangent_ratios(rng):
    # x^4 + y^4 keeps a cos(4 t) component, so with equal tangential ratios
    # the tensor is fixed by quarter turns and its band-0/2 part by any turn
    n = rng.standard_normal(3)
    n /= np.linalg.norm(n)
    ref = al.boundary_tensor(n, 0.0, (1, 1, 3))
    low = slice(0, al.BAND_OFFSETS[2])
    band4_spread = 0.0
    for tz in np.linspace(-np.pi, np.pi, 13):
        f = al.boundary_tensor(n, tz, (1, 1, 3))
        assert np.abs(f[low] - ref[low]).max() < 1e-9
        band4_spread = max(band4_spread, np.abs(f - ref).max())
    assert band4_spread > 0.1
    for k in range(-4, 5):
        assert np.abs(al.boundary_tensor(n, k * np.pi / 2, (1, 1, 3)) - ref).max() < 1e-9


def test_from_symmetric_matrix_examples():
    th, lam = al.from_symmetric_matrix(np.eye(3))
    assert np.array_equal(lam, [1, 1, 1]) and np.abs(th).max() < 1e-12
    th, lam = al.from_symmetric_matrix(np.diag([2.0, 1.0, 1.0]))
    np.testing.assert_allclose(lam, [2, 1, 1])
    f = al.interior_tensor(th, lam)
    d = _sphere_grid(30)
    best = d[np.argmax(al.evaluate_polynomial(f, d))]
    assert abs(abs(best[0]) - 1) < 5e-3
    np.testing.assert_allclose(al.glyph_frame(th, lam)[:, 0], [2, 0, 0], atol=1e-8)


def test_from_symmetric_matrix_rejects_asymmetric():
    with pytest.raises(ValueError):
        al.from_symmetric_matrix([[1, 0.5, 0], [0, 1, 0], [0, 0, 1]])


@given(st.lists(st.floats(-5, 5), min_size=6, max_size=6))
def test_from_symmetric_matrix_roundtrip(a):
    S = np.array([[a[0], a[1], a[2]], [a[1], a[3], a[4]], [a[2], a[4], a[5]]])
    th, lam = al.from_symmetric_matrix(S)
    assert np.all(np.diff(lam) <= 1e-12)
    R = al.euler_to_matrix(th)
    assert np.abs(R @ np.diag(lam) @ R.T - S).max() < 1e-8


def test_from_symmetric_matrix_degenerate_prefers_reference():
    ref = al.rot_z(0.3)
    S = ref @ np.diag([3.0, 1.0, 1.0]) @ ref.T
    th, lam = al.from_symmetric_matrix(S, reference=ref)
    np.testing.assert_allclose(al.euler_to_matrix(th), ref, atol=1e-9)


def test_evaluate_linear(rng):
    f, g = rng.standard_normal((2, al.NCOEFF))
    d = _sphere_grid(8)
    np.testing.assert_allclose(al.evaluate_polynomial(2 * f - 3 * g, d),
                               2 * al.evaluate_polynomial(f, d) - 3 * al.evaluate_polynomial(g, d), atol=1e-12)


@given(theta_st)
def test_glyph_axes_orthogonal(theta):
    G = al.glyph_frame(theta, (3, 2, 1))
    np.testing.assert_allclose(G.T @ G, np.diag([9.0, 4.0, 1.0]), atol=1e-10)


def test_glyph_major_axis_is_polynomial_argmax(rng):
    d = _sphere_grid(60)
    for _ in range(5):
        th = rng.uniform(-np.pi, np.pi, 3)
        lam = (4.0, 1.5, 1.0)
        major = al.glyph_frame(th, lam)[:, 0] / lam[0]
        best = d[np.argmax(al.evaluate_polynomial(al.interior_tensor(th, lam), d))]
        assert abs(best @ major) > np.cos(np.radians(4))


def test_glyph_frame_simple():
    np.testing.assert_allclose(al.glyph_frame((0, 0, 0), (2, 1, 1)), np.diag([2.0, 1.0, 1.0]))


def test_operator_cache_reproducible(tmp_path, monkeypatch):
    t = al._tables()
    fresh = al._build_tables()
    for a, b in zip((t.B, t.Lx, t.Ly, t.Lz), (fresh.B, fresh.Lx, fresh.Ly, fresh.Lz)):
        assert np.abs(a - b).max() < 1e-12
    path = tmp_path / "ops.bin"
    al._write_tables(path, fresh)
    back = al._read_tables(path)
    assert np.array_equal(back.B, fresh.B)
