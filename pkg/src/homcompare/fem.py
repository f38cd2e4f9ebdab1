"""
Conforming periodic finite elements on a regular simplicial mesh.

The cell (-1/2, 1/2)^d is split into N^d cubes and every cube into d!
simplices by the Kuhn triangulation (2 triangles in 2D, 6 tetrahedra in 3D).
Periodicity is imposed by identifying nodes, and the corner node is removed
to fix the constant, leaving n = (Np)^d - 1 unknowns.
"""

import itertools
import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp
from scipy import special

from . import materials
from .linalg import cg, ic0_factor


# ------------------------------------------------------------ quadrature ---

def simplex_quadrature(d, degree):
    """
    Collapsed Gauss-Jacobi rule on the unit simplex, exact for ``degree``.

    Returns barycentric points (q, d+1) and weights (q,) summing to one.
    """
    n = max(1, math.ceil((degree + 1) / 2))
    rules = []
    for i in range(d):
        a = d - 1 - i
        t, w = special.roots_jacobi(n, a, 0)
        rules.append(((1 + t) / 2, w / 2 ** (a + 1)))
    pts, wts = [], []
    for combo in itertools.product(range(n), repeat=d):
        u = [rules[i][0][c] for i, c in enumerate(combo)]
        w = np.prod([rules[i][1][c] for i, c in enumerate(combo)])
        xi = np.empty(d)
        rest = 1.0
        for i in range(d):
            xi[i] = rest * u[i]
            rest *= 1 - u[i]
        pts.append(np.concatenate([[1 - xi.sum()], xi]))
        wts.append(w)
    wts = np.array(wts) * math.factorial(d)
    return np.array(pts), wts


# ------------------------------------------------------------------ mesh ---

@dataclass(frozen=True)
class PeriodicMesh:
    """Kuhn triangulation of N^d cubes with periodic vertex identification."""
    d: int
    N: int

    def __post_init__(self):
        if self.d not in (2, 3):
            raise ValueError("d must be 2 or 3")
        if self.N < 2:
            raise ValueError("need at least 2 elements per axis")

    @property
    def h(self):
        return 1.0 / self.N

    @cached_property
    def kuhn_offsets(self):
        """(d!, d+1, d) integer vertex offsets of the simplices in a cube."""
        out = []
        for perm in itertools.permutations(range(self.d)):
            o = np.zeros((self.d + 1, self.d), dtype=int)
            for j, axis in enumerate(perm):
                o[j + 1] = o[j]
                o[j + 1, axis] += 1
            out.append(o)
        return np.array(out)

    @property
    def n_types(self):
        return len(self.kuhn_offsets)

    @property
    def n_elements(self):
        return self.n_types * self.N ** self.d

    @property
    def n_vertices(self):
        return self.N ** self.d

    @property
    def element_volume(self):
        return self.h ** self.d / math.factorial(self.d)

    @cached_property
    def cubes(self):
        """(N^d, d) integer corners of all cubes, C order."""
        idx = np.indices((self.N,) * self.d).reshape(self.d, -1).T
        return idx

    def type_vertices(self, t):
        """Integer (unwrapped) vertex positions (N^d, d+1, d) of type-t simplices."""
        return self.cubes[:, None, :] + self.kuhn_offsets[t][None]

    def element_coordinates(self, t=None):
        """Vertex coordinates in [-1/2, 1/2]^d, (n, d+1, d)."""
        types = range(self.n_types) if t is None else [t]
        return np.concatenate([self.type_vertices(s) * self.h - 0.5 for s in types])

    def simplices(self):
        """(n_elements, d+1) indices of the identified vertices, type-major order."""
        out = []
        for t in range(self.n_types):
            v = self.type_vertices(t) % self.N
            out.append(np.ravel_multi_index(tuple(np.moveaxis(v, -1, 0)), (self.N,) * self.d))
        return np.concatenate(out)

    def vertex_coordinates(self):
        return self.cubes * self.h - 0.5

    def reference_gradients(self, t):
        """Gradients of the barycentric coordinates on a type-t simplex, (d+1, d)."""
        X = self.kuhn_offsets[t] * self.h
        T = (X[1:] - X[0]).T
        Tinv = np.linalg.inv(T)
        grads = np.empty((self.d + 1, self.d))
        grads[1:] = Tinv
        grads[0] = -Tinv.sum(axis=0)
        return grads


def build_mesh(d, N):
    return PeriodicMesh(d, N)


# ----------------------------------------------------------------- space ---

@dataclass(frozen=True)
class FemSpace:
    """Continuous P1 or P2 Lagrange elements on a periodic mesh."""
    mesh: PeriodicMesh
    p: int = 1

    def __post_init__(self):
        if self.p not in (1, 2):
            raise ValueError("only p = 1 and p = 2 are supported")

    @property
    def d(self):
        return self.mesh.d

    @property
    def node_grid(self):
        return (self.mesh.N * self.p,) * self.d

    @property
    def n_nodes(self):
        return (self.mesh.N * self.p) ** self.d

    @property
    def n(self):
        """Number of unknowns, (Np)^d - 1."""
        return self.n_nodes - 1

    @cached_property
    def local_nodes(self):
        """Local node list: vertex j as (j, j), edge midpoints as (a, b)."""
        nodes = [(j, j) for j in range(self.d + 1)]
        if self.p == 2:
            nodes += list(itertools.combinations(range(self.d + 1), 2))
        return nodes

    @property
    def n_local(self):
        return len(self.local_nodes)

    def element_dofs(self, t):
        """Global node indices (N^d, n_local) of the type-t simplices."""
        v = self.mesh.type_vertices(t)
        pos = np.stack([v[:, a] + v[:, b] for a, b in self.local_nodes], axis=1)
        if self.p == 1:
            pos = pos // 2
        pos %= self.mesh.N * self.p
        return np.ravel_multi_index(tuple(np.moveaxis(pos, -1, 0)), self.node_grid)

    def basis_gradients(self, t, bary):
        """Gradients of the local basis at barycentric points, (q, n_local, d)."""
        G = self.mesh.reference_gradients(t)
        q = bary.shape[0]
        out = np.empty((q, self.n_local, self.d))
        for i, (a, b) in enumerate(self.local_nodes):
            if self.p == 1:
                out[:, i] = G[a]
            elif a == b:
                out[:, i] = (4 * bary[:, a, None] - 1) * G[a]
            else:
                out[:, i] = 4 * (bary[:, a, None] * G[b] + bary[:, b, None] * G[a])
        return out

    def node_coordinates(self):
        idx = np.indices(self.node_grid).reshape(self.d, -1).T
        return idx / (self.mesh.N * self.p) - 0.5


def quadrature_degree(space, spec):
    """Degree making the element integrals exact for this material."""
    deg = 2 * (space.p - 1)
    if isinstance(spec.geometry, materials.Pyramid):
        deg += space.d
    return deg


def _type_data(space, spec, t, E):
    """Material, quadrature and basis gradients for all type-t elements."""
    mesh = space.mesh
    verts = mesh.type_vertices(t) * mesh.h - 0.5
    mat = materials.element_materials(spec, verts)
    bary, w = simplex_quadrature(space.d, quadrature_degree(space, spec))
    w = w * mesh.element_volume
    grads = space.basis_gradients(t, bary)
    fq = None
    if mat.signs is not None:
        xq = np.einsum("qj,ejd->eqd", bary, verts)
        fq = mat.shape_at(xq)
    return mat, w, grads, fq


def _local_matrices(mat, w, grads, fq):
    S = np.einsum("q,qai,qbj->ijab", w, grads, grads)
    K = np.einsum("eij,ijab->eab", mat.matrices, S)
    if fq is not None:
        H = np.einsum("q,qai,qbi->qab", w, grads, grads)
        K += mat.rho * np.einsum("eq,qab->eab", fq, H)
    return K


def _local_loads(mat, w, grads, fq, E):
    # b_a = -int (A E) . grad psi_a
    Gbar = np.einsum("q,qai->ai", w, grads)
    AE = np.einsum("eij,j->ei", mat.matrices, E)
    bl = -np.einsum("ei,ai->ea", AE, Gbar)
    if fq is not None:
        bl -= mat.rho * np.einsum("eq,q,qa->ea", fq, w, grads @ E)
    return bl


def _unit_load(d, E):
    if E is None:
        E = np.zeros(d)
        E[0] = 1.0
    return np.asarray(E, dtype=float)


def assemble(space, spec, E=None, reduced=True):
    """
    Stiffness matrix A_ij = a(grad psi_j, grad psi_i) and load b_i = -a(E, grad psi_i).

    All element integrals are exact. With ``reduced`` the corner node is
    eliminated and (A, b) have n = (Np)^d - 1 rows.
    """
    if spec.d != space.d:
        raise ValueError("material and mesh dimensions differ")
    E = _unit_load(space.d, E)
    n = space.n_nodes
    A = sp.csr_matrix((n, n))
    b = np.zeros(n)
    for t in range(space.mesh.n_types):
        mat, w, grads, fq = _type_data(space, spec, t, E)
        K = _local_matrices(mat, w, grads, fq)
        dofs = space.element_dofs(t)
        rows = np.repeat(dofs, space.n_local, axis=1).ravel()
        cols = np.tile(dofs, (1, space.n_local)).ravel()
        A = A + sp.csr_matrix((K.ravel(), (rows, cols)), shape=(n, n))
        b += np.bincount(dofs.ravel(), _local_loads(mat, w, grads, fq, E).ravel(), minlength=n)
    A = sp.csr_matrix(A)
    A.sum_duplicates()
    A.sort_indices()
    if reduced:
        return A[1:, 1:].tocsr(), b[1:].copy()
    return A, b


def mean_energy(space, spec, E=None):
    """a(E, E) with the element-wise material (exact)."""
    E = _unit_load(space.d, E)
    total = 0.0
    for t in range(space.mesh.n_types):
        mat, w, grads, fq = _type_data(space, spec, t, E)
        total += w.sum() * np.einsum("i,eij,j->", E, mat.matrices, E)
        if fq is not None:
            total += mat.rho * (E @ E) * np.einsum("eq,q->", fq, w)
    return float(total)


def full_vector(u):
    """Insert the eliminated corner value 0."""
    return np.concatenate([[0.0], np.asarray(u, dtype=float)])


def homogenized_value_fem(space, spec, u, E=None):
    """
    a(E + grad u, E + grad u) by exact element quadrature.

    ``u`` is the reduced coefficient vector (length n).
    """
    E = _unit_load(space.d, E)
    uf = full_vector(u)
    if uf.size != space.n_nodes:
        raise ValueError(f"expected {space.n} coefficients, got {np.size(u)}")
    total = 0.0
    for t in range(space.mesh.n_types):
        mat, w, grads, fq = _type_data(space, spec, t, E)
        ue = uf[space.element_dofs(t)]                      # (e, a)
        g = E + np.einsum("ea,qai->eqi", ue, grads)          # (e, q, d)
        Ag = np.einsum("eij,eqj->eqi", mat.matrices, g)
        if fq is not None:
            Ag += mat.rho * fq[..., None] * g
        total += np.einsum("eqi,eqi,q->", Ag, g, w)
    return float(total)


def solve_fem(space, spec, precond=None, rtol=1e-10, maxit=None, E=None,
              system=None, callback=None):
    """
    Assemble and solve the FEM system by (IC(0)-preconditioned) CG.

    ``precond`` is None, "ic0" or a ready preconditioner. Returns (u, trace, A, b); ``trace.values``
    are the homogenised values of the iterates.
    """
    A, b = assemble(space, spec, E) if system is None else system
    offset = mean_energy(space, spec, E)
    M = precond
    if isinstance(precond, str):
        if precond != "ic0":
            raise ValueError(f"unknown preconditioner {precond!r}")
        M = ic0_factor(A)
    u, trace = cg(A, b, precond=M, rtol=rtol, maxit=maxit, offset=offset, callback=callback)
    return u, trace, A, b


def symmetric_nnz(A):
    """Stored entries of the upper triangle including the diagonal."""
    return int(sp.triu(A).nnz)


def memory_fem(A, b=None, u=None):
    """nnz u + nnz b + 2 nnz A + rank A, with A stored symmetrically in CSR."""
    n = A.shape[0]
    nnz_u = n if u is None else int(np.count_nonzero(u))
    nnz_b = n if b is None else int(np.count_nonzero(b))
    return nnz_u + nnz_b + 2 * symmetric_nnz(A) + n


def dof_counts(space):
    return {"nodes": space.n_nodes, "unknowns": space.n,
            "elements": space.mesh.n_elements}


def write_dump(path, space, u=None):
    """
    Plain-text dump: vertex list, cell list and per-node values.

    Sections start with a keyword line ``vertices n``, ``cells n`` and
    ``values n``; cells reference vertex rows, values follow the node order
    of the space (P2 includes edge midpoints).
    """
    mesh = space.mesh
    X = mesh.vertex_coordinates()
    cells = mesh.simplices()
    lines = [f"# periodic simplicial mesh d={mesh.d} N={mesh.N} p={space.p}",
             f"vertices {len(X)}"]
    lines += [" ".join(f"{c:.17g}" for c in x) for x in X]
    lines.append(f"cells {len(cells)}")
    lines += [" ".join(map(str, c)) for c in cells]
    if u is not None:
        uf = full_vector(u)
        lines.append(f"values {uf.size}")
        lines += [f"{v:.17g}" for v in uf]
    try:
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write mesh dump {path}: {exc}") from exc
    return path
