"""
Error measures, cost accounting, reference extrapolation and report files.
"""

import csv
import hashlib
import json
import math
import platform
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

GA = "FFTH-Ga"
GANI = "FFTH-GaNi"
GANI_BOUND = "FFTH-GaNi-bound"
FEM_P1 = "FEM-p1"
FEM_P2 = "FEM-p2"
METHODS = (GA, GANI, GANI_BOUND, FEM_P1, FEM_P2)
BOUND_METHODS = (GA, GANI_BOUND, FEM_P1, FEM_P2)

# extrapolated homogenised values, keyed by (d, geometry, rho)
REFERENCE_VALUES = {
    (2, "square", 10.0): 3.0416470728,
    (2, "pyramid", 10.0): 3.6685617065,
    (3, "square", 10.0): 2.9072530862,
    (3, "pyramid", 10.0): 2.9870480854,
    (2, "square", 100.0): 3.6931324468,
    (2, "pyramid", 100.0): 14.482810295,
    (3, "square", 100.0): 3.6418887304,
    (3, "pyramid", 100.0): 9.1891217513,
}

CLAMP_TOL = 1e-9

CSV_COLUMNS = ("method", "d", "N", "p", "precond", "rho", "geometry", "value", "ref",
               "sq_error", "size", "memory", "ops", "kappa", "iters")


class FitWarning(UserWarning):
    """The extrapolation is unreliable (non-monotone data, exactly determined fit, ...)."""


def fem_method(p):
    return {1: FEM_P1, 2: FEM_P2}[p]


def is_fem(method):
    return method in (FEM_P1, FEM_P2)


def _check_method(method):
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")


def reference_value(d, geometry, rho):
    """Tabulated reference for the case, or None."""
    return REFERENCE_VALUES.get((int(d), str(geometry), float(rho)))


# ----------------------------------------------------------------- errors ---

def energetic_error(value, reference):
    """Squared energetic error, value - reference."""
    return float(value) - float(reference)


def clamp_error(err, tol=CLAMP_TOL):
    """
    Clamp tiny negative errors to zero.

    Returns (error, flagged); ``flagged`` is True if the value was clamped.
    Errors below -tol are returned unchanged (and flagged) since they
    indicate a violated bound or a poor reference.
    """
    if err >= 0:
        return err, False
    if err >= -tol:
        return 0.0, True
    return err, True


@dataclass
class ErrorReport:
    """One solved discretisation of one method."""
    method: str
    d: int
    N: int
    rho: float
    geometry: str
    value: float
    p: int = 0
    precond: str = "none"
    ref: float = float("nan")
    ref_source: str = ""
    sq_error: float = float("nan")
    clamped: bool = False
    size: int = 0
    memory: int = 0
    ops: float = 0.0
    kappa: float = float("nan")
    iters: int = 0

    def __post_init__(self):
        _check_method(self.method)

    def with_reference(self, ref, source):
        self.ref = float(ref)
        self.ref_source = source
        err = energetic_error(self.value, ref)
        if self.method in BOUND_METHODS:
            err, self.clamped = clamp_error(err)
        self.sq_error = err
        return self

    def row(self):
        return {c: getattr(self, c) for c in CSV_COLUMNS}


# ------------------------------------------------------------- accounting ---

def memory_count(method, d, N, A=None, b=None, u=None):
    """
    Stored numbers of one linear system.

    FFTH counts follow the closed forms in (d, N); FEM needs the assembled
    matrix ``A`` (stored symmetrically) and optionally the vectors.
    """
    _check_method(method)
    d, N = int(d), int(N)
    if method == GA:
        return 2 * d * N ** d + d * d * N ** d + d * d * (2 * N - 1) ** d
    if method in (GANI, GANI_BOUND):
        return (2 * d + 2 * d * d) * N ** d
    if A is None:
        raise ValueError("FEM memory needs the assembled matrix")
    from .fem import memory_fem
    return memory_fem(A, b, u)


def matvec_ops(method, d, N, A=None, L=None):
    """
    Operations of one (preconditioned) matrix-vector product.

    FEM: 2 nnz(A), plus 2 nnz(L) for the two triangular solves when the
    incomplete factor ``L`` is given. The FFTH counts contain a log2 term
    and are returned as floats.
    """
    _check_method(method)
    d, N = int(d), int(N)
    if method == GA:
        M = (2 * N - 1) ** d
        return float(d * d * M + d * d * N ** d + 5 * d * M * math.log2(M))
    if method in (GANI, GANI_BOUND):
        n = N ** d
        return float(2 * d * d * n + 5 * d * n * math.log2(n))
    if A is None:
        raise ValueError("FEM operation count needs the assembled matrix")
    ops = 2 * int(A.nnz)
    if L is not None:
        ops += 2 * int(getattr(L, "nnz", 0))
    return ops


# ---------------------------------------------------------- extrapolation ---

@dataclass
class FitResult:
    """Parameters of value(N) = C N^(-2s) + A_ref."""
    reference: float
    s: float
    C: float
    residual: float
    grids: tuple
    iterations: int = 0
    converged: bool = True
    warnings: list = field(default_factory=list)

    def model(self, N):
        return self.C * np.asarray(N, dtype=float) ** (-2 * self.s) + self.reference


def _model_residual(theta, N, y):
    a, s, c = theta
    pw = N ** (-2 * s)
    r = c * pw + a - y
    J = np.column_stack([np.ones_like(N), -2 * c * np.log(N) * pw, pw])
    return r, J


def _initial_guess(N, y):
    # rate from the log-log slope of successive differences
    dy = -np.diff(y)
    Nm = N[:-1]
    good = dy > 0
    if good.sum() >= 2:
        slope, _ = np.polyfit(np.log(Nm[good]), np.log(dy[good]), 1)
        s = max(-slope / 2, 1e-3)
    else:
        s = 0.5
    pw = N ** (-2 * s)
    # linear least squares in (A, C) for this rate
    X = np.column_stack([np.ones_like(N), pw])
    (a, c), *_ = np.linalg.lstsq(X, y, rcond=None)
    return np.array([a, s, c])


def fit_reference(points, gtol=1e-12, maxit=200, theta0=None):
    """
    Extrapolate the limit of a convergent sequence of homogenised values.

    Fits value(N) = C N^(-2s) + A_ref by Levenberg-Marquardt least squares.

    Parameters
    ----------
    points : sequence of (N, value)
        At least three points; four or more are recommended.
    gtol : float
        Stop when the gradient norm of the half squared residual is below this.

    Returns
    -------
    FitResult
        Warnings (non-monotone data, exactly determined system, iteration
        limit) are attached to the result and issued as FitWarning.
    """
    pts = sorted((float(n), float(v)) for n, v in points)
    if len(pts) < 3:
        raise ValueError("need at least three grids to fit three parameters")
    N = np.array([p[0] for p in pts])
    y = np.array([p[1] for p in pts])
    notes = []
    if np.any(np.diff(y) >= 0):
        notes.append("values are not strictly decreasing; fit unreliable")
    if len(pts) < 4:
        notes.append("only three grids; the fit interpolates")

    # scale values to O(1) for the damping
    shift = y[-1]
    scale = max(np.ptp(y), abs(shift) * 1e-12, 1e-300)
    ys = (y - shift) / scale
    theta = _initial_guess(N, ys) if theta0 is None else np.array(
        [(theta0[0] - shift) / scale, theta0[1], theta0[2] / scale])

    lam = 1e-3
    r, J = _model_residual(theta, N, ys)
    cost = r @ r
    converged = False
    it = 0
    for it in range(1, maxit + 1):
        g = J.T @ r
        if np.linalg.norm(g) * scale <= gtol:
            converged = True
            break
        H = J.T @ J
        improved = small = False
        for _ in range(60):
            try:
                step = np.linalg.solve(H + lam * np.diag(np.diag(H) + 1e-300), -g)
            except np.linalg.LinAlgError:
                lam *= 10
                continue
            cand = theta + step
            r2, J2 = _model_residual(cand, N, ys)
            c2 = r2 @ r2
            if np.isfinite(c2) and c2 <= cost:
                small = np.linalg.norm(step) <= 1e-15 * (1 + np.linalg.norm(theta))
                theta, r, J, cost = cand, r2, J2, c2
                lam = max(lam / 10, 1e-15)
                improved = True
                break
            lam *= 10
        if not improved or small:
            # no further decrease possible in floating point
            converged = True
            break
    else:
        notes.append(f"no convergence in {maxit} iterations")
    if not converged and f"no convergence in {maxit} iterations" not in notes:
        notes.append("fit did not converge")
    if theta[1] <= 0:
        notes.append("nonpositive rate; fit unreliable")
    for n in notes:
        warnings.warn(n, FitWarning, stacklevel=2)
    a, s, c = theta
    return FitResult(reference=float(a * scale + shift), s=float(s), C=float(c * scale),
                     residual=float(np.sqrt(cost)) * scale,
                     grids=tuple(int(n) for n in N), iterations=it,
                     converged=converged, warnings=notes)


def algebraic_error_trace(trace, converged_value=None):
    """
    Energy-norm algebraic error of every CG iterate.

    ``trace`` is an IterationTrace or a sequence of energy values; the last
    value is used as the converged one unless given.
    """
    values = np.asarray(getattr(trace, "values", trace), dtype=float)
    if converged_value is None:
        converged_value = values[-1]
    return values - converged_value


# ---------------------------------------------------------------- reports ---

FIGURE_FILES = {
    # file name: (x column, y column)
    "error_vs_size.csv": ("size", "sq_error"),
    "error_vs_memory.csv": ("memory", "sq_error"),
    "kappa_vs_dof.csv": ("size", "kappa"),
    "error_vs_ops.csv": ("ops", "sq_error"),
}


def _fmt(v):
    if isinstance(v, float):
        return repr(v) if np.isfinite(v) else "nan"
    return str(v)


def _write_csv(path, header, rows):
    try:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in rows:
                w.writerow([_fmt(v) for v in row])
    except OSError as exc:
        raise OSError(f"cannot write report file {path}: {exc}") from exc


def config_hash(config):
    blob = json.dumps(config, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()


def emit_report(reports, out_dir, config=None, traces=None, fits=None, extra=None):
    """
    Write runs.csv, the per-figure CSVs, cg_trace.csv and summary.json.

    ``traces`` maps a run label to an IterationTrace and its converged
    value; rows keep the given order so identical inputs give identical
    files. Returns the list of written paths.
    """
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc}") from exc
    reports = list(reports)
    written = []

    path = out / "runs.csv"
    _write_csv(path, CSV_COLUMNS, [[getattr(r, c) for c in CSV_COLUMNS] for r in reports])
    written.append(path)

    for name, (x, y) in FIGURE_FILES.items():
        path = out / name
        cols = ("method", "d", "N", "p", "precond", "rho", "geometry", x, y)
        _write_csv(path, cols, [[getattr(r, c) for c in cols] for r in reports])
        written.append(path)

    path = out / "cg_trace.csv"
    rows = []
    for label, (trace, final) in (traces or {}).items():
        alg = algebraic_error_trace(trace, final)
        for k, (res, val, mv, e) in enumerate(zip(trace.residuals, trace.values,
                                                   trace.matvecs, alg)):
            rows.append([label, k, res, val, e, mv])
    _write_csv(path, ("run", "iteration", "residual", "value", "algebraic_error", "matvecs"), rows)
    written.append(path)

    summary = {
        "config_hash": config_hash(config or {}),
        "config": config or {},
        "environment": {"python": platform.python_version(), "numpy": np.__version__},
        "columns": list(CSV_COLUMNS),
        "runs": [dict(asdict(r)) for r in reports],
        "fits": {k: asdict(v) for k, v in (fits or {}).items()},
    }
    summary.update(extra or {})
    path = out / "summary.json"
    try:
        with open(path, "w") as fh:
            json.dump(summary, fh, indent=2, sort_keys=True,
                      default=lambda o: None if o is None else str(o),
                      allow_nan=True)
            fh.write("\n")
    except OSError as exc:
        raise OSError(f"cannot write report file {path}: {exc}") from exc
    written.append(path)
    return written
