"""
Material coefficients A(x) = M_(d) + rho * I * f(x) on the unit cell.

Four inclusion geometries are supported: a centered square (cube), a
pyramid-like hat function, a circle (sphere) and voxel images. For every
geometry the exact Fourier coefficients of f are available, which is what
the exactly integrated Fourier-Galerkin scheme needs. Voxel images are
isotropic, A(x) = a(voxel) * I, without the anisotropic offset.
"""

import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import special

from . import grid

SQRT3 = np.sqrt(3.0)

M2 = np.array([[7 / 4, SQRT3 / 4],
               [SQRT3 / 4, 5 / 4]])

M3 = np.array([[31 / 16, 5 * SQRT3 / 16, 3 / 8],
               [5 * SQRT3 / 16, 21 / 16, SQRT3 / 8],
               [3 / 8, SQRT3 / 8, 11 / 4]])

# conductivities used for the two-phase voxel experiments [W m^-1 K^-1]
FLY_ASH = 0.49
VOID = 0.026


def base_matrix(d):
    """The anisotropic matrix M_(d) with eigenvalues {1, ..., d}."""
    M = {2: M2, 3: M3}[d].copy()
    assert np.allclose(np.linalg.eigvalsh(M), np.arange(1, d + 1), atol=1e-13)
    return M


class NonConformingMeshError(ValueError):
    """An element straddles a discontinuity of the coefficients."""


class UnsupportedGeometryError(ValueError):
    pass


@dataclass(frozen=True)
class Square:
    """Indicator of the centered cube |x_i| < half_width."""
    half_width: float = 0.3
    name = "square"


@dataclass(frozen=True)
class Pyramid:
    """Hat function prod_i (1 - 2|x_i|), equal to 1 at the center."""
    name = "pyramid"


@dataclass(frozen=True)
class Circle:
    """Indicator of the centered disk (ball in 3D) |x| <= radius."""
    radius: float = 0.25
    name = "circle"

    def __post_init__(self):
        if not 0 < self.radius < 0.5:
            raise ValueError("radius must lie in (0, 1/2)")


@dataclass(frozen=True, eq=False)
class VoxelImage:
    """
    Phase image with a conductivity per phase.

    ``phases[i_1, ..., i_d]`` is the voxel occupying
    [-1/2 + i/N, -1/2 + (i+1)/N] along every axis.
    """
    phases: np.ndarray
    conductivity: dict = field(default_factory=lambda: {0: FLY_ASH, 1: VOID})

    def __post_init__(self):
        phases = np.asarray(self.phases)
        if phases.ndim not in (2, 3):
            raise ValueError("voxel images must be 2D or 3D")
        missing = set(np.unique(phases).tolist()) - set(self.conductivity)
        if missing:
            raise ValueError(f"no conductivity for phases {sorted(missing)}")
        if any(v <= 0 for v in self.conductivity.values()):
            raise ValueError("conductivities must be positive")
        object.__setattr__(self, "phases", phases)

    @property
    def resolution(self):
        return self.phases.shape

    @property
    def values(self):
        """Conductivity per voxel."""
        lut = np.zeros(max(self.conductivity) + 1)
        for ph, val in self.conductivity.items():
            lut[ph] = val
        return lut[self.phases]


@dataclass(frozen=True)
class Voxel:
    image: VoxelImage
    name = "voxel"


@dataclass(frozen=True, eq=False)
class MaterialSpec:
    d: int
    geometry: object
    rho: float = 0.0
    base: np.ndarray = None

    def __post_init__(self):
        if self.d not in (2, 3):
            raise ValueError("d must be 2 or 3")
        if self.rho < 0:
            raise ValueError("contrast must be nonnegative")
        if isinstance(self.geometry, Voxel) and self.geometry.image.phases.ndim != self.d:
            raise ValueError("voxel image dimension does not match d")
        if self.base is None:
            object.__setattr__(self, "base", base_matrix(self.d))
        base = np.asarray(self.base, dtype=float)
        if base.shape != (self.d, self.d) or not np.allclose(base, base.T):
            raise ValueError("base matrix must be symmetric d x d")
        object.__setattr__(self, "base", base)

    @property
    def is_voxel(self):
        return isinstance(self.geometry, Voxel)

    def bounds(self):
        """Ellipticity and continuity constants (c_A, C_A)."""
        if self.is_voxel:
            vals = self.geometry.image.conductivity.values()
            return min(vals), max(vals)
        lam = np.linalg.eigvalsh(self.base)
        return lam[0], lam[-1] + self.rho

    def matrix(self, f):
        """A for scalar shape value(s) f, layout (d, d, ...)."""
        f = np.asarray(f, dtype=float)
        eye = np.eye(self.d).reshape((self.d, self.d) + (1,) * f.ndim)
        if self.is_voxel:
            return eye * f
        base = self.base.reshape((self.d, self.d) + (1,) * f.ndim)
        return base + self.rho * eye * f

    def describe(self):
        g = self.geometry
        if isinstance(g, Circle):
            return f"circle(r={g.radius:g})"
        if isinstance(g, Voxel):
            return "voxel(" + "x".join(map(str, g.image.resolution)) + ")"
        return g.name


# ---------------------------------------------------------------- shapes ---

def shape_values(spec, x):
    """
    f at points given as a sequence of d coordinate arrays (broadcastable).

    Points on an inclusion boundary take the inclusion value. For voxel specs
    this returns the conductivity.
    """
    g = spec.geometry
    x = [np.asarray(xi, dtype=float) for xi in x]
    # map into the periodic cell
    x = [xi - np.round(xi) for xi in x]
    if isinstance(g, Square):
        inside = np.ones(np.broadcast(*x).shape, dtype=bool)
        for xi in x:
            inside = inside & (np.abs(xi) <= g.half_width + 1e-14)
        return inside.astype(float)
    if isinstance(g, Pyramid):
        out = 1.0
        for xi in x:
            out = out * np.clip(1 - 2 * np.abs(xi), 0.0, 1.0)
        return np.broadcast_to(out, np.broadcast(*x).shape).astype(float)
    if isinstance(g, Circle):
        r2 = sum(xi ** 2 for xi in x)
        return (r2 <= g.radius ** 2 * (1 + 1e-14)).astype(float)
    if isinstance(g, Voxel):
        vals = g.image.values
        idx = []
        for xi, n in zip(x, vals.shape):
            i = np.floor((xi + 0.5) * n + 1e-12).astype(int)
            idx.append(np.clip(i, 0, n - 1))
        return vals[tuple(np.broadcast_arrays(*idx))]
    raise UnsupportedGeometryError(type(g).__name__)


def _square_axis_coeff(k, h):
    k = np.asarray(k, dtype=float)
    out = np.empty_like(k)
    nz = k != 0
    out[nz] = np.sin(2 * np.pi * k[nz] * h) / (np.pi * k[nz])
    out[~nz] = 2 * h
    return out


def _hat_axis_coeff(k):
    k = np.asarray(k, dtype=float)
    out = np.zeros_like(k)
    odd = (np.abs(k) % 2) == 1
    out[odd] = 2.0 / (np.pi ** 2 * k[odd] ** 2)
    out[k == 0] = 0.5
    return out


def _voxel_coeff(image_values, k):
    N = image_values.shape
    if any(n % 2 == 0 for n in N):
        raise ValueError("voxel Fourier coefficients need an odd resolution")
    dft = np.fft.fftn(np.fft.ifftshift(image_values)) / grid.grid_size(N)
    idx = tuple(np.asarray(ki) % n for ki, n in zip(k, N))
    out = dft[idx]
    for ki, n in zip(k, N):
        out = out * np.sinc(np.asarray(ki) / n)
    return out


def shape_fourier_coeff(spec, k):
    """
    Exact Fourier coefficients int_Y f(x) exp(-2 pi i k.x) dx.

    ``k`` has shape (d, ...) of integers. Real for the (even) analytic
    shapes; complex for voxel images, whose values are the conductivity.
    """
    g = spec.geometry
    k = [np.asarray(ki) for ki in k]
    if len(k) != spec.d:
        raise ValueError("frequency dimension does not match the material")
    if isinstance(g, Square):
        out = 1.0
        for ki in k:
            out = out * _square_axis_coeff(ki, g.half_width)
        return np.broadcast_to(out, np.broadcast(*k).shape).astype(float)
    if isinstance(g, Pyramid):
        out = 1.0
        for ki in k:
            out = out * _hat_axis_coeff(ki)
        return np.broadcast_to(out, np.broadcast(*k).shape).astype(float)
    if isinstance(g, Circle):
        r = g.radius
        kn = np.sqrt(sum(ki.astype(float) ** 2 for ki in k))
        out = np.empty(kn.shape)
        nz = kn > 0
        q = 2 * np.pi * r * kn[nz]
        if spec.d == 2:
            out[nz] = r * special.j1(q) / kn[nz]
            out[~nz] = np.pi * r ** 2
        else:
            out[nz] = (np.sin(q) - q * np.cos(q)) / (2 * np.pi ** 2 * kn[nz] ** 3)
            out[~nz] = 4 / 3 * np.pi * r ** 3
        return out
    if isinstance(g, Voxel):
        return _voxel_coeff(g.image.values, k)
    raise UnsupportedGeometryError(type(g).__name__)


def volume_fraction(spec):
    """Mean of f over the cell."""
    zero = np.zeros((spec.d, 1), dtype=int)
    return float(np.real(shape_fourier_coeff(spec, zero))[0])


# ------------------------------------------------------------ grid fields ---

def sample_on_grid(spec, N):
    """Point values A(x^k) on grid N, layout (d, d, *N)."""
    N = grid.check_shape(N)
    if len(N) != spec.d:
        raise ValueError("grid dimension does not match the material")
    if spec.is_voxel and N != spec.geometry.image.resolution:
        raise ValueError(f"grid {N} does not match voxel resolution "
                         f"{spec.geometry.image.resolution}")
    if spec.is_voxel:
        if any(n % 2 == 0 for n in N):
            raise ValueError("voxel sampling needs an odd resolution")
        vals = np.fft.ifftshift(spec.geometry.image.values)
        return spec.matrix(vals)
    f = shape_values(spec, grid.grid_points(N))
    return spec.matrix(f)


def exact_double_grid_field(spec, N):
    """
    Block diagonal of the exactly integrated material on the grid 2N-1.

    The Fourier series of A truncated to Z^d_{2N-1} is evaluated at the
    double-grid points. With these values, the grid inner product of A e and
    v equals int_Y A e.v dx for all trigonometric polynomials e, v on grid N.
    """
    N = grid.check_shape(N, odd=True)
    if len(N) != spec.d:
        raise ValueError("grid dimension does not match the material")
    if not isinstance(spec.geometry, (Square, Pyramid, Circle, Voxel)):
        raise UnsupportedGeometryError(type(spec.geometry).__name__)
    M = grid.double_grid(N)
    k = grid.freq_mesh(M)
    fhat = np.asarray(shape_fourier_coeff(spec, k), dtype=complex)
    fhat = np.broadcast_to(fhat, M)
    f = grid.dft_inverse(fhat[np.newaxis].copy())[0]
    return spec.matrix(f)


# ------------------------------------------------------------- elements ----

@dataclass
class ElementMaterial:
    """
    Coefficients on a batch of simplices.

    ``matrices`` (n, d, d) is the constant part. For the pyramid, ``signs``
    (n, d) gives f = prod_i (1 - 2 s_i x_i) on each element, and A = matrices
    + rho * f * I. Otherwise ``signs`` is None and A is constant per element.
    """
    matrices: np.ndarray
    rho: float = 0.0
    signs: np.ndarray = None

    def shape_at(self, x):
        """f at points x (n, q, d) on each element."""
        out = np.ones(x.shape[:2])
        for i in range(x.shape[2]):
            out *= 1 - 2 * self.signs[:, None, i] * x[:, :, i]
        return out


def point_simplex_distance(verts, c):
    """
    Euclidean distance from point ``c`` to each closed simplex.

    ``verts`` has shape (n, m, d) with m <= d+1 affinely independent vertices.
    Exact: every face is tried and the best feasible projection is kept.
    """
    verts = np.asarray(verts, dtype=float)
    c = np.asarray(c, dtype=float)
    n, m, d = verts.shape
    best = np.full(n, np.inf)
    for size in range(1, m + 1):
        for S in itertools.combinations(range(m), size):
            V0 = verts[:, S[0], :]
            if size == 1:
                best = np.minimum(best, np.linalg.norm(V0 - c, axis=1))
                continue
            D = verts[:, S[1:], :] - V0[:, None, :]          # (n, size-1, d)
            G = np.einsum("nid,njd->nij", D, D)
            rhs = np.einsum("nid,nd->ni", D, c - V0)
            t = np.linalg.solve(G, rhs[..., None])[..., 0]
            ok = np.all(t >= -1e-14, axis=1) & (t.sum(axis=1) <= 1 + 1e-14)
            proj = V0 + np.einsum("ni,nid->nd", t, D)
            dist = np.linalg.norm(proj - c, axis=1)
            best = np.where(ok, np.minimum(best, dist), best)
    return best


def element_materials(spec, verts, tol=1e-12):
    """
    Material of every simplex in ``verts`` (n, d+1, d).

    Square and voxel elements must lie inside one phase, pyramid elements
    inside one orthant; otherwise NonConformingMeshError. Circle elements
    touching the closed disk get the inclusion value (outer approximation).
    """
    verts = np.asarray(verts, dtype=float)
    n, _, d = verts.shape
    lo = verts.min(axis=1)
    hi = verts.max(axis=1)
    centroid = verts.mean(axis=1)
    g = spec.geometry

    if isinstance(g, Square):
        h = g.half_width
        for edge in (-h, h):
            if np.any((lo < edge - tol) & (hi > edge + tol)):
                raise NonConformingMeshError(f"element crosses the plane x_i = {edge:g}")
        f = np.all(np.abs(centroid) < h, axis=1).astype(float)
        return ElementMaterial(np.moveaxis(spec.matrix(f), -1, 0), spec.rho)
    if isinstance(g, Pyramid):
        if np.any((lo < -tol) & (hi > tol)):
            raise NonConformingMeshError("element crosses a plane x_i = 0")
        base = np.broadcast_to(spec.base, (n, d, d)).copy()
        return ElementMaterial(base, spec.rho, np.sign(centroid))
    if isinstance(g, Circle):
        dist = point_simplex_distance(verts, np.zeros(d))
        f = (dist <= g.radius).astype(float)
        return ElementMaterial(np.moveaxis(spec.matrix(f), -1, 0), spec.rho)
    if isinstance(g, Voxel):
        res = np.asarray(g.image.resolution)
        idx = np.floor((centroid + 0.5) * res).astype(int)
        vlo = idx / res - 0.5
        vhi = (idx + 1) / res - 0.5
        if np.any(lo < vlo - tol) or np.any(hi > vhi + tol):
            raise NonConformingMeshError("element crosses a voxel boundary")
        idx = np.clip(idx, 0, res - 1)
        vals = g.image.values[tuple(idx.T)]
        return ElementMaterial(np.moveaxis(spec.matrix(vals), -1, 0), spec.rho)
    raise UnsupportedGeometryError(type(g).__name__)


def element_material(spec, vertices):
    """Single-element form of :func:`element_materials`."""
    vertices = np.asarray(vertices, dtype=float)[None]
    mat = element_materials(spec, vertices)
    if mat.signs is None:
        return mat.matrices[0]
    return ElementMaterial(mat.matrices, mat.rho, mat.signs)


# ---------------------------------------------------------------- voxels ---

def synthetic_voxel_image(resolution, seed=0, void_fraction=0.5,
                          correlation=0.08, conductivity=None):
    """
    Periodic two-phase microstructure from a thresholded Gaussian random field.

    Phase 1 (voids) occupies the ``void_fraction`` quantile of the field.
    """
    rng = np.random.default_rng(seed)
    res = tuple(int(r) for r in resolution)
    noise = rng.standard_normal(res)
    k2 = sum(ki.astype(float) ** 2 for ki in grid.freq_mesh(res))
    kernel = np.exp(-2 * (np.pi * correlation) ** 2 * k2)
    smooth = np.fft.ifftn(np.fft.fftn(noise) * kernel).real
    threshold = np.quantile(smooth, void_fraction)
    phases = (smooth <= threshold).astype(np.uint8)
    conductivity = conductivity or {0: FLY_ASH, 1: VOID}
    return VoxelImage(phases, dict(conductivity))


def write_voxel(header_path, image):
    """Write a JSON header and a raw little-endian u8 payload (x fastest)."""
    header_path = Path(header_path)
    raw_path = header_path.with_suffix(".raw")
    header = {
        "dims": list(image.resolution),
        "dtype": "u8",
        "byte_order": "little",
        "order": "x-fastest",
        "payload": raw_path.name,
        "conductivity": {str(k): v for k, v in sorted(image.conductivity.items())},
    }
    try:
        header_path.write_text(json.dumps(header, indent=2, sort_keys=True) + "\n")
        raw_path.write_bytes(np.asarray(image.phases, dtype="<u1").ravel(order="F").tobytes())
    except OSError as exc:
        raise OSError(f"cannot write voxel image to {header_path}: {exc}") from exc
    return header_path


def read_voxel(header_path):
    """Read an image written by :func:`write_voxel`."""
    header_path = Path(header_path)
    header = json.loads(header_path.read_text())
    if header.get("dtype") != "u8":
        raise ValueError(f"unsupported voxel dtype {header.get('dtype')!r}")
    if header.get("byte_order", "little") != "little":
        raise ValueError("voxel payload must be little-endian")
    dims = tuple(int(n) for n in header["dims"])
    raw = (header_path.parent / header.get("payload", header_path.with_suffix(".raw").name)).read_bytes()
    if len(raw) != int(np.prod(dims)):
        raise ValueError(f"payload has {len(raw)} bytes, expected {int(np.prod(dims))}")
    phases = np.frombuffer(raw, dtype="<u1").reshape(dims, order="F").copy()
    conductivity = {int(k): float(v) for k, v in header["conductivity"].items()}
    return VoxelImage(phases, conductivity)
