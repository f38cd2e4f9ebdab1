"""
Regular periodic grids on the unit cell Y = (-1/2, 1/2)^d.

Fields are plain numpy arrays. A vector field has layout ``(d, N_1, ..., N_d)``
and a matrix field ``(d, d, N_1, ..., N_d)``. Grid values are stored in
natural FFT order: array index ``j`` along an axis of size ``N`` corresponds to
the frequency/point index ``k = j`` for ``j <= (N-1)/2`` and ``k = j - N``
otherwise, and to the grid point ``x = k / N``. For odd ``N`` the reduced
frequency set ``{k : |k| < N/2}`` is exactly the FFT output, so no Nyquist
handling is needed anywhere.
"""

import numpy as np


class SymmetryError(ValueError):
    """Fourier coefficients that do not represent a real field."""


def check_shape(N, odd=False):
    """Validate a grid shape and return it as a tuple of ints."""
    N = tuple(int(n) for n in np.atleast_1d(N))
    if len(N) not in (2, 3):
        raise ValueError(f"grid must be 2- or 3-dimensional, got {N}")
    if any(n <= 0 for n in N):
        raise ValueError(f"grid sizes must be positive, got {N}")
    if odd and any(n % 2 == 0 for n in N):
        raise ValueError(f"grid sizes must be odd, got {N}")
    return N


def as_shape(N, d, odd=False):
    """Expand a scalar N to the isotropic grid (N,)*d and validate it."""
    if np.ndim(N) == 0:
        N = (int(N),) * d
    N = check_shape(N, odd)
    if len(N) != d:
        raise ValueError(f"grid {N} is not {d}-dimensional")
    return N


def grid_size(N):
    """|N|_Pi, the number of grid points."""
    return int(np.prod(N))


def double_grid(N):
    """The 2N-1 grid on which products of two N-grid polynomials are exact."""
    return tuple(2 * n - 1 for n in N)


def freq_indices(n):
    """Integer frequencies of one axis in natural FFT order."""
    return np.fft.fftfreq(n, 1.0 / n).round().astype(int)


def freq_mesh(N, sparse=True):
    """Frequency vectors k of the whole grid as a list of d broadcastable arrays."""
    return np.meshgrid(*[freq_indices(n) for n in N], indexing="ij", sparse=sparse)


def grid_points(N, sparse=True):
    """Coordinates x^k = k/N of the grid points, one array per axis."""
    return np.meshgrid(*[np.fft.fftfreq(n) for n in N], indexing="ij", sparse=sparse)


def in_index_set(k, N):
    """Membership of frequency vector(s) ``k`` in Z^d_N, i.e. |k_a| < N_a/2."""
    k = np.asarray(k)
    N = np.asarray(N).reshape((-1,) + (1,) * (k.ndim - 1))
    return np.all(2 * np.abs(k) < N, axis=0)


def _spatial_axes(f, d):
    return tuple(range(f.ndim - d, f.ndim))


def _check_field(f):
    # leading axis holds components (d for vector fields, 1 for scalars)
    f = np.asarray(f)
    d = f.ndim - 1
    if d not in (2, 3):
        raise ValueError(f"expected a (c, N_1, ..., N_d) field, got shape {f.shape}")
    return f, d


def dft_forward(f):
    """
    Fourier coefficients of a real vector field sampled on the grid.

    coeffs(k) = 1/|N| sum_m f(x^m) exp(-2 pi i k.m/N), so the coefficient of a
    single harmonic cos(2 pi x_1) is 1/2 at k = (+-1, 0).
    """
    f, d = _check_field(f)
    axes = _spatial_axes(f, d)
    return np.fft.fftn(f, axes=axes) / grid_size(f.shape[1:])


def hermitian_defect(F, d):
    """max |F(k) - conj(F(-k))| over the grid."""
    axes = _spatial_axes(F, d)
    Fm = np.roll(np.flip(F, axis=axes), 1, axis=axes)
    return float(np.max(np.abs(F - np.conj(Fm)), initial=0.0))


def dft_inverse(F, rtol=1e-12):
    """
    Grid values of the trigonometric polynomial with coefficients ``F``.

    Raises SymmetryError when ``F`` is not Hermitian, i.e. when the result
    would not be real.
    """
    F, d = _check_field(F)
    scale = float(np.max(np.abs(F), initial=0.0))
    if hermitian_defect(F, d) > rtol * scale + 1e-300:
        raise SymmetryError("coefficients are not Hermitian symmetric")
    axes = _spatial_axes(F, d)
    return np.fft.ifftn(F, axes=axes).real * grid_size(F.shape[1:])


def grid_inner(a, b):
    """a.b = sum_k a^k_alpha b^k_alpha / |N|, the L2 product of the polynomials."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    return float(np.vdot(a, b).real) / grid_size(a.shape[1:])


def tensor_apply(A, v):
    """Pointwise product of a matrix field (d, d, *N) with a vector field (d, *N)."""
    A = np.asarray(A)
    v = np.asarray(v)
    if A.shape[0] != A.shape[1] or A.shape[1:] != v.shape:
        raise ValueError(f"shape mismatch {A.shape} vs {v.shape}")
    return np.einsum("ij...,j...->i...", A, v)


def constant_field(E, N):
    """The constant vector ``E`` broadcast to a field on grid ``N``."""
    E = np.asarray(E, dtype=float)
    return np.broadcast_to(E.reshape((-1,) + (1,) * len(N)), (len(E),) + tuple(N)).copy()


def zero_pad_fourier(F, M):
    """
    Embed coefficients on grid N into the (larger, odd) grid M.

    Frequencies keep their integer index, so this re-samples the same
    trigonometric polynomial on a finer grid.
    """
    N = F.shape[1:]
    out = np.zeros((F.shape[0],) + tuple(M), dtype=complex)
    idx_src = [freq_indices(n) for n in N]
    idx_dst = [k % m for k, m in zip(idx_src, M)]
    out[(slice(None),) + np.ix_(*idx_dst)] = F
    return out


def truncate_fourier(F, N):
    """Restrict coefficients on a larger grid to the frequencies of grid N."""
    M = F.shape[1:]
    idx = [freq_indices(n) % m for n, m in zip(N, M)]
    return F[(slice(None),) + np.ix_(*idx)]
