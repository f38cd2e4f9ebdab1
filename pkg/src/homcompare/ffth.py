"""
Fourier-Galerkin homogenisation with exact (Ga) and numerical (GaNi) integration.

Both schemes solve G A e = -G A E for the fluctuation field e, a zero-mean
curl-free trigonometric polynomial. Ga works on the double grid 2N-1 with the
exactly integrated material, GaNi on grid N with point samples of A.
"""

import numpy as np

from . import grid, materials
from .linalg import Operator, cg, lanczos_extremes

GA = "Ga"
GANI = "GaNi"


class Projection:
    """
    Discrete projection onto zero-mean gradient fields.

    In Fourier space every frequency k of the active set Z^d_N except 0 is
    mapped by k (x) k / (k . k); all other frequencies are annihilated. The
    projection acts on fields sampled on ``shape``, which is N itself or the
    double grid 2N-1 with ``active`` = N.
    """

    def __init__(self, shape, active=None):
        self.shape = grid.check_shape(shape)
        self.active = tuple(self.shape if active is None else grid.check_shape(active))
        self.d = len(self.shape)
        if any(a > s for a, s in zip(self.active, self.shape)):
            raise ValueError("active set exceeds the grid")
        # frequencies of the real-to-complex layout (last axis halved)
        freqs = [grid.freq_indices(n) for n in self.shape[:-1]]
        freqs.append(np.arange(self.shape[-1] // 2 + 1))
        k = np.meshgrid(*freqs, indexing="ij")
        keep = grid.in_index_set(np.array(k), self.active)
        knorm = np.sqrt(sum(ki.astype(float) ** 2 for ki in k))
        keep &= knorm > 0
        with np.errstate(invalid="ignore", divide="ignore"):
            self.khat = np.where(keep, np.array(k) / knorm, 0.0)
        self.axes = tuple(range(1, self.d + 1))

    def __call__(self, v):
        v = np.asarray(v)
        if v.shape != (self.d,) + self.shape:
            raise ValueError(f"field shape {v.shape} does not match grid {self.shape}")
        vh = np.fft.rfftn(v, axes=self.axes)
        vh = self.khat * np.sum(self.khat * vh, axis=0)
        return np.fft.irfftn(vh, s=self.shape, axes=self.axes)

    def dense(self):
        """Blocks Ghat(k) for every k on the full grid, shape (d, d, *shape)."""
        k = np.array(grid.freq_mesh(self.shape, sparse=False))
        keep = grid.in_index_set(k, self.active) & np.any(k != 0, axis=0)
        kk = np.einsum("i...,j...->ij...", k, k).astype(float)
        k2 = np.sum(k.astype(float) ** 2, axis=0)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(keep, kk / k2, 0.0)


def project(P, v):
    return P(v)


class FfthOperator:
    """
    The operator e -> G(A e) of one Fourier-Galerkin scheme.

    ``material`` is the block-diagonal matrix field on the working grid
    (2N-1 for Ga, N for GaNi). ``matvecs`` and ``ffts`` count applications
    (one tensor product and one forward/inverse transform pair per matvec).
    """

    def __init__(self, variant, material, N):
        if variant not in (GA, GANI):
            raise ValueError(f"unknown variant {variant!r}")
        self.variant = variant
        self.N = grid.check_shape(N, odd=True)
        self.d = len(self.N)
        self.grid = grid.double_grid(self.N) if variant == GA else self.N
        self.material = np.asarray(material, dtype=float)
        if self.material.shape != (self.d, self.d) + self.grid:
            raise ValueError(f"material shape {self.material.shape} does not fit "
                             f"the {variant} grid {self.grid}")
        self.projection = Projection(self.grid, self.N)
        self.matvecs = 0
        self.ffts = 0

    @classmethod
    def from_spec(cls, spec, N, variant=GA):
        N = grid.as_shape(N, spec.d, odd=True)
        if variant == GA:
            material = materials.exact_double_grid_field(spec, N)
        else:
            material = materials.sample_on_grid(spec, N)
        return cls(variant, material, N)

    @property
    def field_shape(self):
        return (self.d,) + self.grid

    @property
    def dim(self):
        return int(np.prod(self.field_shape))

    def __call__(self, e):
        e = np.asarray(e)
        if e.shape != self.field_shape:
            raise ValueError(f"field of shape {e.shape} is not on the {self.variant} "
                             f"grid {self.field_shape}")
        self.matvecs += 1
        self.ffts += 2
        return self.projection(grid.tensor_apply(self.material, e))

    def inner(self, a, b):
        return float(np.dot(a, b)) / grid.grid_size(self.grid)

    def as_operator(self):
        return Operator(lambda x: self(x.reshape(self.field_shape)).ravel(),
                        self.dim, self.inner)

    def macro_field(self, E):
        return grid.constant_field(E, self.grid)

    def energy(self, e, E):
        """Discrete a(E + e, E + e) with this operator's material."""
        v = self.macro_field(E) + e
        return grid.grid_inner(grid.tensor_apply(self.material, v), v)


def apply_ga(op, e):
    if op.variant != GA:
        raise ValueError("operator is not a Ga operator")
    return op(e)


def apply_gani(op, e):
    if op.variant != GANI:
        raise ValueError("operator is not a GaNi operator")
    return op(e)


def unit_load(d):
    E = np.zeros(d)
    E[0] = 1.0
    return E


def solve(op, E=None, rtol=1e-10, maxit=None, callback=None):
    """
    Solve G A e = -G A E by CG from a zero initial guess.

    Returns (e, trace); ``trace.values`` holds the homogenised value of every
    iterate under the operator's own quadrature.
    """
    E = unit_load(op.d) if E is None else np.asarray(E, dtype=float)
    AE = grid.tensor_apply(op.material, op.macro_field(E))
    b = -op.projection(AE).ravel()
    offset = op.energy(np.zeros(op.field_shape), E)
    maxit = 10 * op.dim if maxit is None else maxit
    cb = None
    if callback is not None:
        cb = lambda k, x: callback(k, x.reshape(op.field_shape))
    x, trace = cg(op.as_operator(), b, rtol=rtol, maxit=maxit, offset=offset, callback=cb)
    return x.reshape(op.field_shape), trace


def solve_ffth(spec, N, variant=GA, E=None, rtol=1e-10, maxit=None, callback=None):
    """Build the operator for ``spec`` on grid ``N`` and solve; returns (e, trace)."""
    op = FfthOperator.from_spec(spec, N, variant)
    return solve(op, E, rtol, maxit, callback)


def _double_grid_material(spec, N, material):
    if material is None:
        return materials.exact_double_grid_field(spec, N)
    return material


def homogenized_value_ga(spec, e, E=None, material=None):
    """
    Exact a(E + e, E + e) for a field ``e`` sampled on the double grid.

    Exact because (E + e).(E + e) is a polynomial of the double grid and the
    material values there are the exactly integrated coefficients.
    """
    M = e.shape[1:]
    N = tuple((m + 1) // 2 for m in M)
    A = _double_grid_material(spec, N, material)
    E = unit_load(spec.d) if E is None else np.asarray(E, dtype=float)
    v = grid.constant_field(E, M) + e
    return grid.grid_inner(grid.tensor_apply(A, v), v)


def to_double_grid(e):
    """Re-sample a trigonometric polynomial given on grid N on the grid 2N-1."""
    N = e.shape[1:]
    F = grid.dft_forward(e)
    return grid.dft_inverse(grid.zero_pad_fourier(F, grid.double_grid(N)))


def gani_posteriori_bound(spec, e_tilde, E=None, material=None):
    """
    Upper bound from the GaNi minimiser evaluated with exact integration.

    ``e_tilde`` lives on grid N; it is re-expanded to the double grid by
    zero-padding its Fourier coefficients.
    """
    return homogenized_value_ga(spec, to_double_grid(e_tilde), E, material)


def system_size(N, d, variant=GA):
    """Reduced system size d N^d, as reported for both variants."""
    if variant not in (GA, GANI):
        raise ValueError(f"unknown variant {variant!r}")
    return d * N ** d


def double_grid_size(N, d):
    """d (2N-1)^d, the size of the Ga system as solved here."""
    return d * (2 * N - 1) ** d


def compatible_dim(N, d):
    """N^d - 1 independent degrees of freedom of the gradient polynomials."""
    return N ** d - 1


def condition_estimate(op, iters=150, seed=0):
    """
    Lanczos extremes of ``op`` restricted to the compatible subspace.

    Every basis vector is projected back onto the compatible fields, and the
    number of steps is capped at the subspace dimension.
    """
    rng = np.random.default_rng(seed)
    P, shape = op.projection, op.field_shape
    project = lambda x: P(x.reshape(shape)).ravel()
    v0 = rng.standard_normal(op.dim)
    iters = min(iters, int(np.prod(op.N)) - 1)
    return lanczos_extremes(op.as_operator(), iters=iters, v0=v0, project=project)
