import itertools
import math

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, strategies as st

from homcompare import fem, materials as m


# ------------------------------------------------------------- oracle ---

def duffy_rule(d, n=8):
    """Collapsed tensor Gauss-Legendre rule on the reference simplex."""
    t, w = np.polynomial.legendre.leggauss(n)
    u, w = (t + 1) / 2, w / 2
    pts, wts = [], []
    for idx in itertools.product(range(n), repeat=d):
        x = np.empty(d)
        rest, jac = 1.0, 1.0
        for i, j in enumerate(idx):
            x[i] = rest * u[j]
            jac *= rest
            rest *= 1 - u[j]
        pts.append(x)
        wts.append(jac * np.prod(w[list(idx)]))
    return np.array(pts), np.array(wts)


def monomials(d, p):
    return [a for a in itertools.product(range(p + 1), repeat=d) if sum(a) <= p]


def lagrange_gradients(nodes, x, p):
    """Gradients (q, n_local, d) of the Lagrange basis on ``nodes`` at points x."""
    d = nodes.shape[1]
    mons = monomials(d, p)
    V = np.array([[np.prod(z ** np.array(a)) for a in mons] for z in nodes])
    C = np.linalg.inv(V)                                  # column j: coefficients of basis j
    D = np.zeros((len(x), len(mons), d))
    for k, a in enumerate(mons):
        for i in range(d):
            if a[i]:
                b = list(a)
                b[i] -= 1
                D[:, k, i] = a[i] * np.prod(x ** np.array(b), axis=1)
    return np.einsum("qki,kj->qji", D, C)


def oracle_system(spec, N, p):
    """Dense element-by-element assembly in physical coordinates."""
    d = spec.d
    h = 1.0 / N
    ng = N * p
    ref_pts, ref_w = duffy_rule(d)
    A = np.zeros((ng ** d, ng ** d))
    b = np.zeros(ng ** d)
    E = np.eye(d)[0]
    for cube in itertools.product(range(N), repeat=d):
        for perm in itertools.permutations(range(d)):
            iv = [np.array(cube)]
            for ax in perm:
                nxt = iv[-1].copy()
                nxt[ax] += 1
                iv.append(nxt)
            iv = np.array(iv)                           # integer vertices
            loc = [2 * v for v in iv]
            if p == 2:
                loc += [iv[a] + iv[c] for a, c in itertools.combinations(range(d + 1), 2)]
            loc = np.array(loc)                         # in units of h / 2
            X = iv * h - 0.5
            nodes = loc * h / 2 - 0.5
            T = (X[1:] - X[0]).T
            x = ref_pts @ T.T + X[0]
            w = ref_w * abs(np.linalg.det(T))
            G = lagrange_gradients(nodes, x, p)
            if isinstance(spec.geometry, m.Pyramid):
                f = np.prod(np.clip(1 - 2 * np.abs(x), 0, None), axis=1)
            else:
                c = X.mean(axis=0)
                f = np.full(len(x), float(np.all(np.abs(c) <= 0.3)))
            Aq = spec.base[None] + spec.rho * f[:, None, None] * np.eye(d)
            K = np.einsum("q,qai,qij,qbj->ab", w, G, Aq, G)
            bl = -np.einsum("q,qi,qai->a", w, Aq @ E, G)
            gidx = (loc * p // 2) % ng
            gidx = np.ravel_multi_index(tuple(gidx.T), (ng,) * d)
            A[np.ix_(gidx, gidx)] += K
            np.add.at(b, gidx, bl)
    return A, b


@pytest.mark.parametrize("d,p", [(2, 1), (2, 2), (3, 1), (3, 2)])
def test_assembly_matches_dense_oracle_pyramid(d, p):
    spec = m.MaterialSpec(d, m.Pyramid(), 10.0)
    space = fem.FemSpace(fem.build_mesh(d, 2), p)
    A, b = fem.assemble(space, spec, reduced=False)
    Ao, bo = oracle_system(spec, 2, p)
    assert np.allclose(A.toarray(), Ao, atol=1e-12 * np.abs(Ao).max())
    assert np.allclose(b, bo, atol=1e-12)


def test_assembly_matches_dense_oracle_square():
    spec = m.MaterialSpec(2, m.Square(), 100.0)
    space = fem.FemSpace(fem.build_mesh(2, 10), 1)
    A, b = fem.assemble(space, spec, reduced=False)
    Ao, bo = oracle_system(spec, 10, 1)
    assert np.allclose(A.toarray(), Ao, atol=1e-10)
    assert np.allclose(b, bo, atol=1e-12)
    Ar, br = fem.assemble(space, spec)
    assert np.allclose(Ar.toarray(), Ao[1:, 1:], atol=1e-10)
    assert np.allclose(br, bo[1:])


# --------------------------------------------------------------- mesh ---

def test_mesh_counts():
    mesh = fem.build_mesh(2, 10)
    assert mesh.n_elements == 200 and mesh.n_vertices == 100
    assert len(mesh.simplices()) == 200
    mesh3 = fem.build_mesh(3, 2)
    assert mesh3.n_elements == 48 and mesh3.n_types == 6
    assert fem.FemSpace(mesh, 1).n == 99
    assert fem.FemSpace(mesh, 2).n == 399
    with pytest.raises(ValueError):
        fem.build_mesh(4, 3)
    with pytest.raises(ValueError):
        fem.FemSpace(mesh, 3)


@pytest.mark.parametrize("d,N", [(2, 3), (2, 10), (3, 2), (3, 4)])
def test_simplices_tile_the_cell(d, N):
    mesh = fem.build_mesh(d, N)
    X = mesh.element_coordinates()
    vol = np.abs(np.linalg.det(X[:, 1:] - X[:, :1])) / math.factorial(d)
    assert np.allclose(vol, mesh.element_volume)
    assert np.isclose(vol.sum(), 1.0)
    assert X.min() == -0.5 and X.max() == 0.5
    # every vertex index is used
    assert np.array_equal(np.unique(mesh.simplices()), np.arange(mesh.n_vertices))


@pytest.mark.parametrize("d", [2, 3])
@pytest.mark.parametrize("degree", [0, 1, 2, 3, 4, 5])
def test_simplex_quadrature_exactness(d, degree):
    bary, w = fem.simplex_quadrature(d, degree)
    assert np.isclose(w.sum(), 1.0)
    assert np.allclose(bary.sum(axis=1), 1.0) and np.all(bary >= 0)
    for alpha in itertools.product(range(degree + 1), repeat=d + 1):
        if sum(alpha) > degree:
            continue
        exact = math.factorial(d) * np.prod([math.factorial(a) for a in alpha]) \
            / math.factorial(sum(alpha) + d)
        got = np.sum(w * np.prod(bary ** np.array(alpha), axis=1))
        assert abs(got - exact) < 1e-14


def test_node_coordinates_and_dump(tmp_path):
    space = fem.FemSpace(fem.build_mesh(2, 2), 2)
    X = space.node_coordinates()
    assert X.shape == (16, 2)
    assert np.allclose(X[0], [-0.5, -0.5]) and np.allclose(X[1], [-0.5, -0.25])
    u = np.arange(1.0, 16.0)
    path = fem.write_dump(tmp_path / "mesh.txt", space, u)
    lines = path.read_text().splitlines()
    assert lines[1] == "vertices 4"
    i = lines.index("cells 8")
    assert len(lines[i + 1].split()) == 3
    j = lines.index("values 16")
    assert float(lines[j + 1]) == 0.0 and float(lines[j + 2]) == 1.0
    with pytest.raises(OSError):
        fem.write_dump(tmp_path / "missing" / "x.txt", space, u)


# ---------------------------------------------------------- properties ---

@pytest.mark.parametrize("p", [1, 2])
def test_patch_test_constant_material(p):
    spec = m.MaterialSpec(2, m.Pyramid(), 0.0)
    space = fem.FemSpace(fem.build_mesh(2, 4), p)
    u, tr, A, b = fem.solve_fem(space, spec)
    assert np.allclose(b, 0, atol=1e-14)
    assert np.allclose(u, 0)
    assert abs(fem.homogenized_value_fem(space, spec, u) - m.M2[0, 0]) < 1e-13


@pytest.mark.parametrize("d,p", [(2, 1), (2, 2), (3, 1)])
def test_load_sums_to_zero_and_matrix_annihilates_constants(d, p):
    spec = m.MaterialSpec(d, m.Pyramid(), 30.0)
    space = fem.FemSpace(fem.build_mesh(d, 4), p)
    A, b = fem.assemble(space, spec, reduced=False)
    assert abs(b.sum()) < 1e-12
    assert np.allclose(A @ np.ones(space.n_nodes), 0, atol=1e-11)
    assert abs(A - A.T).max() < 1e-12


def test_energy_identity_and_galerkin_orthogonality():
    spec = m.MaterialSpec(2, m.Square(), 100.0)
    space = fem.FemSpace(fem.build_mesh(2, 10), 2)
    u, tr, A, b = fem.solve_fem(space, spec, rtol=1e-13)
    value = fem.homogenized_value_fem(space, spec, u)
    a0 = fem.mean_energy(space, spec)
    assert np.isclose(a0, m.M2[0, 0] + 100 * 0.36)
    assert abs(value - (a0 - b @ u)) < 1e-9
    assert abs(value - tr.values[-1]) < 1e-9
    assert np.linalg.norm(A @ u - b) <= 1e-12 * np.linalg.norm(b) * 10


def test_values_decrease_under_refinement():
    spec = m.MaterialSpec(2, m.Pyramid(), 100.0)
    vals = {}
    for N, p in [(10, 1), (20, 1), (10, 2), (20, 2)]:
        space = fem.FemSpace(fem.build_mesh(2, N), p)
        u, tr, _, _ = fem.solve_fem(space, spec)
        vals[N, p] = fem.homogenized_value_fem(space, spec, u)
    assert vals[10, 1] >= vals[20, 1] >= vals[20, 2] >= 14.482810295
    assert vals[10, 1] >= vals[10, 2] >= vals[20, 2]


def test_three_dimensional_upper_bound():
    spec = m.MaterialSpec(3, m.Square(), 10.0)
    space = fem.FemSpace(fem.build_mesh(3, 10), 1)
    u, tr, _, _ = fem.solve_fem(space, spec, precond="ic0")
    value = fem.homogenized_value_fem(space, spec, u)
    assert 2.9072530862 <= value <= m.M3[0, 0] + 10 * 0.216


def test_laminate_is_exact_with_p1():
    phases = np.zeros((10, 10), dtype=np.uint8)
    phases[1:4] = 1
    phases[6] = 2
    img = m.VoxelImage(phases, {0: 1.0, 1: 20.0, 2: 0.1})
    spec = m.MaterialSpec(2, m.Voxel(img))
    space = fem.FemSpace(fem.build_mesh(2, 10), 1)
    u, tr, _, _ = fem.solve_fem(space, spec, rtol=1e-13)
    harm = 1 / np.mean(1 / img.values)
    assert abs(fem.homogenized_value_fem(space, spec, u) - harm) < 1e-10


@given(st.floats(0, 200), st.sampled_from([1, 2]))
def test_stiffness_is_positive_definite(rho, p):
    spec = m.MaterialSpec(2, m.Pyramid(), rho)
    space = fem.FemSpace(fem.build_mesh(2, 4), p)
    A, _ = fem.assemble(space, spec)
    assert np.linalg.eigvalsh(A.toarray()).min() > 0


def test_nonconforming_square_raises():
    spec = m.MaterialSpec(2, m.Square(), 10.0)
    with pytest.raises(m.NonConformingMeshError):
        fem.assemble(fem.FemSpace(fem.build_mesh(2, 4), 1), spec)
    with pytest.raises(ValueError):
        fem.assemble(fem.FemSpace(fem.build_mesh(3, 4), 1), spec)


def test_solve_fem_preconditioner_options():
    spec = m.MaterialSpec(2, m.Pyramid(), 100.0)
    space = fem.FemSpace(fem.build_mesh(2, 10), 1)
    u0, t0, A, b = fem.solve_fem(space, spec)
    u1, t1, _, _ = fem.solve_fem(space, spec, precond="ic0", system=(A, b))
    assert np.allclose(u0, u1, atol=1e-7)
    assert t1.iterations < t0.iterations
    with pytest.raises(ValueError):
        fem.solve_fem(space, spec, precond="jacobi", system=(A, b))
    with pytest.raises(ValueError):
        fem.homogenized_value_fem(space, spec, u0[:-1])


def test_memory_count():
    A = sp.diags([1.0, 2.0, 3.0], format="csr")
    assert fem.memory_fem(A) == 15
    assert fem.memory_fem(A, np.array([0.0, 1.0, 0.0]), np.zeros(3)) == 0 + 1 + 6 + 3
    spec = m.MaterialSpec(2, m.Pyramid(), 1.0)
    A1, _ = fem.assemble(fem.FemSpace(fem.build_mesh(2, 10), 1), spec)
    A2, _ = fem.assemble(fem.FemSpace(fem.build_mesh(2, 10), 2), spec)
    assert A2.nnz > A1.nnz
    # P1 on the Kuhn mesh couples every node to 6 neighbours
    assert fem.symmetric_nnz(A1) == (A1.nnz + A1.shape[0]) // 2
