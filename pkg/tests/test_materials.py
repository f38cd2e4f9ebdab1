import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import integrate, optimize

from homcompare import grid, materials as m


def spec(geom, d=2, rho=10.0):
    return m.MaterialSpec(d, geom, rho)


def quad(f, a, b, points=()):
    val, err = integrate.quad(f, a, b, points=points or None, limit=200, epsabs=1e-14, epsrel=1e-14)
    return val


def square_axis_oracle(k, h=0.3):
    # real part only; the square is even so the imaginary part vanishes
    return quad(lambda x: np.cos(2 * np.pi * k * x), -h, h)


def hat_axis_oracle(k):
    return quad(lambda x: (1 - 2 * abs(x)) * np.cos(2 * np.pi * k * x), -0.5, 0.5, points=(0.0,))


def test_base_matrices():
    assert np.allclose(np.linalg.eigvalsh(m.M2), [1, 2])
    assert np.allclose(np.linalg.eigvalsh(m.M3), [1, 2, 3])
    assert np.allclose(m.M2, m.M2.T) and np.allclose(m.M3, m.M3.T)


def test_spec_validation():
    with pytest.raises(ValueError):
        m.MaterialSpec(2, m.Square(), -1.0)
    with pytest.raises(ValueError):
        m.MaterialSpec(4, m.Square())
    with pytest.raises(ValueError):
        m.Circle(0.6)
    img = m.synthetic_voxel_image((5, 5), seed=0)
    with pytest.raises(ValueError):
        m.MaterialSpec(3, m.Voxel(img))
    with pytest.raises(ValueError):
        m.VoxelImage(np.zeros((3, 3), dtype=np.uint8), {0: -1.0})


def test_square_coefficients_against_quadrature():
    s = spec(m.Square())
    assert np.isclose(m.shape_fourier_coeff(s, np.zeros((2, 1), int))[0], 0.36, atol=1e-15)
    for k in [(1, 0), (2, 3), (-4, 7), (0, 5)]:
        ref = square_axis_oracle(k[0]) * square_axis_oracle(k[1])
        got = m.shape_fourier_coeff(s, np.array(k)[:, None])[0]
        assert abs(got - ref) < 1e-12


def test_pyramid_coefficients_against_quadrature():
    s = spec(m.Pyramid())
    # tensor Gauss rule with 64 points on each linear piece
    t, w = np.polynomial.legendre.leggauss(64)
    xs = np.concatenate([(t - 1) / 4, (t + 1) / 4])
    ws = np.concatenate([w, w]) / 4
    f = np.outer(1 - 2 * abs(xs), 1 - 2 * abs(xs))
    assert abs(np.sum(np.outer(ws, ws) * f) - 0.25) < 1e-14
    assert abs(m.shape_fourier_coeff(s, np.zeros((2, 1), int))[0] - 0.25) < 1e-15
    for k in [(1, 0), (1, 3), (2, 1), (-3, 5)]:
        ref = hat_axis_oracle(k[0]) * hat_axis_oracle(k[1])
        got = m.shape_fourier_coeff(s, np.array(k)[:, None])[0]
        assert abs(got - ref) < 1e-12
    k3 = np.array([[1], [0], [3]])
    ref = hat_axis_oracle(1) * hat_axis_oracle(0) * hat_axis_oracle(3)
    assert abs(m.shape_fourier_coeff(spec(m.Pyramid(), 3), k3)[0] - ref) < 1e-13


def test_circle_coefficients_against_quadrature():
    r = 0.25
    s = spec(m.Circle(r))
    for k in [(1, 0), (0, 2), (3, 0)]:
        kk = k[0] + k[1]
        # integrate cos(2 pi kk x) over the disk, slicing perpendicular to k
        ref = quad(lambda x: np.cos(2 * np.pi * kk * x) * 2 * np.sqrt(r * r - x * x), -r, r)
        got = m.shape_fourier_coeff(s, np.array(k)[:, None])[0]
        assert abs(got - ref) < 1e-10
    # off-axis frequency by a genuine 2D adaptive rule
    k = (1, 1)
    ref, _ = integrate.dblquad(lambda y, x: np.cos(2 * np.pi * (x + y)), -r, r,
                               lambda x: -np.sqrt(r * r - x * x), lambda x: np.sqrt(r * r - x * x),
                               epsabs=1e-13, epsrel=1e-13)
    assert abs(m.shape_fourier_coeff(s, np.array(k)[:, None])[0] - ref) < 1e-10
    s3 = spec(m.Circle(r), 3)
    ref = quad(lambda x: np.cos(2 * np.pi * 2 * x) * np.pi * (r * r - x * x), -r, r)
    assert abs(m.shape_fourier_coeff(s3, np.array([[0], [2], [0]]))[0] - ref) < 1e-10


def test_voxel_coefficients_exact_piecewise_constant(rng):
    img = m.VoxelImage(rng.integers(0, 2, (3, 5)).astype(np.uint8), {0: 0.5, 1: 2.0})
    s = m.MaterialSpec(2, m.Voxel(img))
    vals = img.values

    def axis_int(k, a, b):
        if k == 0:
            return b - a
        return (np.exp(-2j * np.pi * k * b) - np.exp(-2j * np.pi * k * a)) / (-2j * np.pi * k)

    for k in [(0, 0), (1, 0), (1, 2), (-2, 7), (4, -3)]:
        ref = 0
        for i in range(3):
            for j in range(5):
                ref += vals[i, j] * axis_int(k[0], -0.5 + i / 3, -0.5 + (i + 1) / 3) \
                    * axis_int(k[1], -0.5 + j / 5, -0.5 + (j + 1) / 5)
        got = m.shape_fourier_coeff(s, np.array(k)[:, None])[0]
        assert abs(got - ref) < 1e-14


def test_volume_fractions():
    assert np.isclose(m.volume_fraction(spec(m.Square())), 0.36, atol=1e-12)
    assert np.isclose(m.volume_fraction(spec(m.Square(), 3)), 0.216, atol=1e-12)
    assert np.isclose(m.volume_fraction(spec(m.Pyramid(), 3)), 0.125, atol=1e-12)
    assert np.isclose(m.volume_fraction(spec(m.Circle(0.2))), np.pi * 0.04, atol=1e-12)
    assert np.isclose(m.volume_fraction(spec(m.Circle(0.2), 3)), 4 / 3 * np.pi * 0.008, atol=1e-12)


@pytest.mark.parametrize("geom,integral", [(m.Square(), 0.36), (m.Pyramid(), 1 / 9),
                                           (m.Circle(0.25), np.pi / 16)])
def test_parseval_partial_sums_increase_to_l2_norm(geom, integral):
    s = spec(geom)
    sums = []
    for N in (3, 5, 9, 17):
        k = np.array(grid.freq_mesh(grid.double_grid((N, N)), sparse=False))
        sums.append(np.sum(np.abs(m.shape_fourier_coeff(s, k)) ** 2))
    assert all(a <= b + 1e-15 for a, b in zip(sums, sums[1:]))
    assert sums[-1] <= integral + 1e-12


def test_sample_on_grid_examples():
    s = spec(m.Square())
    A = m.sample_on_grid(s, (5, 5))
    assert np.allclose(A[:, :, 0, 0], m.M2 + 10 * np.eye(2))    # x = 0 is inside
    assert np.allclose(A[:, :, 2, 2], m.M2)                      # x = (0.4, 0.4) is outside
    A0 = m.sample_on_grid(spec(m.Pyramid(), rho=0.0), (5, 5))
    assert np.allclose(A0, m.M2[:, :, None, None])
    P = m.sample_on_grid(spec(m.Pyramid(), rho=7.0), (5, 5))
    assert np.allclose(P[:, :, 0, 0], m.M2 + 7 * np.eye(2))


def test_boundary_points_take_inclusion_value():
    s = spec(m.Square())
    assert m.shape_values(s, [np.array([0.3]), np.array([-0.3])])[0] == 1.0
    assert m.shape_values(s, [np.array([0.3 + 1e-9]), np.array([0.0])])[0] == 0.0
    c = spec(m.Circle(0.25))
    assert m.shape_values(c, [np.array([0.25]), np.array([0.0])])[0] == 1.0


def test_voxel_sampling_requires_matching_resolution():
    img = m.synthetic_voxel_image((5, 5), seed=1)
    s = m.MaterialSpec(2, m.Voxel(img))
    with pytest.raises(ValueError):
        m.sample_on_grid(s, (7, 7))
    A = m.sample_on_grid(s, (5, 5))
    # grid point 0 is the centre voxel (2, 2)
    assert np.isclose(A[0, 0, 0, 0], img.values[2, 2])
    assert np.allclose(A[0, 1], 0)


@given(st.sampled_from([m.Square(), m.Pyramid(), m.Circle(0.3)]), st.sampled_from([2, 3]),
       st.floats(0, 200), st.sampled_from([3, 5, 7]))
def test_sampled_material_is_elliptic(geom, d, rho, N):
    s = m.MaterialSpec(d, geom, rho)
    A = m.sample_on_grid(s, (N,) * d)
    lam = np.linalg.eigvalsh(np.moveaxis(A.reshape(d, d, -1), -1, 0))
    assert lam.min() >= 1 - 1e-12 and lam.max() <= rho + d + 1e-12 * (1 + rho)


def test_double_grid_field_constant_for_zero_contrast():
    A = m.exact_double_grid_field(spec(m.Square(), rho=0.0), (5, 5))
    assert A.shape == (2, 2, 9, 9)
    assert np.allclose(A, m.M2[:, :, None, None], atol=1e-14)


def test_double_grid_field_is_exact_integral():
    s = spec(m.Square(), rho=10.0)
    A = m.exact_double_grid_field(s, (5, 5))
    coeffs = grid.dft_forward(A[0:1, 0])[0]
    pts = (-0.3, 0.3)
    for k in [(0, 0), (1, 0), (2, -3), (4, 4), (-4, 1)]:
        axis = [quad(lambda x, kk=kk: np.cos(2 * np.pi * kk * x)
                     * (1.0 if abs(x) < 0.3 else 0.0), -0.5, 0.5, points=pts) for kk in k]
        ref = 10 * axis[0] * axis[1] + (m.M2[0, 0] if k == (0, 0) else 0.0)
        assert abs(coeffs[k] - ref) < 1e-10
    assert np.isclose(A[0, 0].mean(), m.M2[0, 0] + 10 * 0.36)


def test_double_grid_field_unsupported_geometry():
    class Blob:
        name = "blob"
    with pytest.raises(m.UnsupportedGeometryError):
        m.exact_double_grid_field(m.MaterialSpec(2, Blob(), 1.0), (5, 5))


# ------------------------------------------------------------ elements ---

def tri(*pts):
    return np.array(pts, dtype=float)[None]


def test_square_element_assignment_and_crossing():
    s = spec(m.Square())
    inside = m.element_material(s, [(0, 0), (0.1, 0), (0, 0.1)])
    assert np.allclose(inside, m.M2 + 10 * np.eye(2))
    outside = m.element_material(s, [(0.3, 0.3), (0.4, 0.3), (0.3, 0.4)])
    assert np.allclose(outside, m.M2)
    with pytest.raises(m.NonConformingMeshError):
        m.element_material(s, [(0.25, 0), (0.35, 0), (0.25, 0.1)])


def test_pyramid_element_polynomial():
    s = spec(m.Pyramid(), rho=3.0)
    mat = m.element_material(s, [(0.1, 0.1), (0.2, 0.1), (0.1, 0.2)])
    x = np.array([[[0.15, 0.12]]])
    assert np.isclose(mat.shape_at(x)[0, 0], (1 - 0.3) * (1 - 0.24))
    mat = m.element_material(s, [(-0.2, 0.1), (-0.1, 0.1), (-0.2, 0.2)])
    assert np.isclose(mat.shape_at(np.array([[[-0.15, 0.12]]]))[0, 0], (1 - 0.3) * (1 - 0.24))
    with pytest.raises(m.NonConformingMeshError):
        m.element_material(s, [(-0.1, 0.1), (0.1, 0.1), (0, 0.2)])


def qp_distance(verts, c):
    """Distance to a simplex by constrained minimisation over barycentric coordinates."""
    n = len(verts)
    obj = lambda lam: np.sum((lam @ verts - c) ** 2)
    res = optimize.minimize(obj, np.full(n, 1 / n), method="SLSQP",
                            bounds=[(0, 1)] * n,
                            constraints=[{"type": "eq", "fun": lambda lam: lam.sum() - 1}],
                            options={"ftol": 1e-15, "maxiter": 500})
    return np.sqrt(res.fun)


def test_point_simplex_distance_against_qp(rng):
    for d in (2, 3):
        for _ in range(20):
            verts = rng.uniform(-0.5, 0.5, (d + 1, d))
            c = rng.uniform(-0.6, 0.6, d)
            got = m.point_simplex_distance(verts[None], c)[0]
            assert abs(got - qp_distance(verts, c)) < 1e-6


def test_circle_outer_approximation():
    s = spec(m.Circle(0.25))
    far = m.element_material(s, [(0.4, 0.4), (0.5, 0.4), (0.4, 0.5)])
    assert np.allclose(far, m.M2)
    centre = m.element_material(s, [(-0.1, -0.1), (0.1, -0.1), (0, 0.1)])
    assert np.allclose(centre, m.M2 + 10 * np.eye(2))
    # all vertices outside the disk, but the bottom edge passes at distance 0.2
    verts = [(-0.5, 0.2), (0.5, 0.2), (0.0, 0.45)]
    assert all(np.hypot(*v) > 0.25 for v in verts)
    assert qp_distance(np.array(verts), np.zeros(2)) <= 0.25
    assert np.allclose(m.element_material(s, verts), m.M2 + 10 * np.eye(2))


def test_voxel_element_crossing():
    img = m.synthetic_voxel_image((4, 4), seed=2)
    s = m.MaterialSpec(2, m.Voxel(img))
    ok = m.element_material(s, [(-0.5, -0.5), (-0.25, -0.5), (-0.5, -0.25)])
    assert np.allclose(ok, img.values[0, 0] * np.eye(2))
    with pytest.raises(m.NonConformingMeshError):
        m.element_material(s, [(-0.5, -0.5), (0.0, -0.5), (-0.5, -0.25)])


# -------------------------------------------------------------- voxels ---

def test_synthetic_image_is_deterministic():
    a = m.synthetic_voxel_image((9, 9, 9), seed=5, void_fraction=0.3)
    b = m.synthetic_voxel_image((9, 9, 9), seed=5, void_fraction=0.3)
    c = m.synthetic_voxel_image((9, 9, 9), seed=6, void_fraction=0.3)
    assert np.array_equal(a.phases, b.phases)
    assert not np.array_equal(a.phases, c.phases)
    assert abs(a.phases.mean() - 0.3) < 0.01
    assert set(np.unique(a.values)) == {m.FLY_ASH, m.VOID}


def test_voxel_roundtrip_and_byte_order(tmp_path):
    phases = np.zeros((3, 4, 5), dtype=np.uint8)
    phases[1, 0, 0] = 1
    img = m.VoxelImage(phases, {0: 0.49, 1: 0.026})
    path = m.write_voxel(tmp_path / "img.json", img)
    raw = (tmp_path / "img.raw").read_bytes()
    assert len(raw) == 60 and raw[1] == 1 and sum(raw) == 1      # x varies fastest
    back = m.read_voxel(path)
    assert np.array_equal(back.phases, phases)
    assert back.conductivity == {0: 0.49, 1: 0.026}


def test_voxel_read_errors(tmp_path):
    img = m.synthetic_voxel_image((3, 3), seed=0)
    path = m.write_voxel(tmp_path / "a.json", img)
    (tmp_path / "a.raw").write_bytes(b"\x00" * 5)
    with pytest.raises(ValueError):
        m.read_voxel(path)
