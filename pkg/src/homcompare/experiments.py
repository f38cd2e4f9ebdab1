"""
Single-discretisation runs and the experiment matrix behind the CLI.
"""

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import analysis, fem, ffth, materials
from .analysis import FEM_P1, FEM_P2, GA, GANI, GANI_BOUND, ErrorReport
from .linalg import ConvergenceError, FactorizationBreakdown, ic0_factor, sparse_extremes

FFTH_METHODS = (GA, GANI, GANI_BOUND)
FEM_METHODS = (FEM_P1, FEM_P2)


@dataclass(frozen=True)
class Task:
    """One linear solve; GaNi tasks serve both the plain and the bound row."""
    solver: str            # "Ga", "GaNi" or "FEM"
    N: int
    p: int = 0
    methods: tuple = ()


@dataclass
class TaskResult:
    task: Task
    reports: list
    trace: object = None
    final_value: float = float("nan")
    error: str = ""


@dataclass
class RunOptions:
    rtol: float = 1e-10
    maxit: int = None
    precondition: bool = False
    kappa: bool = False
    lanczos_iters: int = 100
    seed: int = 0


def plan_tasks(methods, ffth_grids, fem_grids):
    """Expand (method x grid) into solver tasks, in a fixed order."""
    tasks = []
    if GA in methods:
        tasks += [Task("Ga", int(N), 0, (GA,)) for N in ffth_grids]
    gani = tuple(m for m in (GANI, GANI_BOUND) if m in methods)
    if gani:
        tasks += [Task("GaNi", int(N), 0, gani) for N in ffth_grids]
    for m in FEM_METHODS:
        if m in methods:
            p = 1 if m == FEM_P1 else 2
            tasks += [Task("FEM", int(N), p, (m,)) for N in fem_grids]
    return tasks


def _report(method, spec, N, value, p=0, **kw):
    return ErrorReport(method=method, d=spec.d, N=int(N), p=int(p), rho=float(spec.rho),
                       geometry=spec.describe(), value=float(value), **kw)


def run_ffth(spec, task, opts):
    op = ffth.FfthOperator.from_spec(spec, task.N, task.solver)
    e, trace = ffth.solve(op, rtol=opts.rtol, maxit=opts.maxit)
    kappa = float("nan")
    if opts.kappa:
        kappa = ffth.condition_estimate(op, iters=opts.lanczos_iters, seed=opts.seed).kappa
    d, N = spec.d, task.N
    size = ffth.system_size(N, d)
    reports = []
    if task.solver == "Ga":
        value = ffth.homogenized_value_ga(spec, e)
        reports.append(_report(GA, spec, N, value, size=size,
                               memory=analysis.memory_count(GA, d, N),
                               ops=analysis.matvec_ops(GA, d, N),
                               kappa=kappa, iters=trace.iterations))
        final = trace.values[-1]
    else:
        final = trace.values[-1]
        common = dict(size=size, memory=analysis.memory_count(GANI, d, N),
                      ops=analysis.matvec_ops(GANI, d, N), kappa=kappa,
                      iters=trace.iterations)
        if GANI in task.methods:
            reports.append(_report(GANI, spec, N, op.energy(e, ffth.unit_load(d)), **common))
        if GANI_BOUND in task.methods:
            reports.append(_report(GANI_BOUND, spec, N,
                                   ffth.gani_posteriori_bound(spec, e), **common))
    return reports, trace, final


def run_fem(spec, task, opts):
    space = fem.FemSpace(fem.build_mesh(spec.d, task.N), task.p)
    A, b = fem.assemble(space, spec)
    ic = ic0_factor(A) if opts.precondition else None
    u, trace, _, _ = fem.solve_fem(space, spec, precond=ic, rtol=opts.rtol,
                                   maxit=opts.maxit, system=(A, b))
    value = fem.homogenized_value_fem(space, spec, u)
    kappa = float("nan")
    if opts.kappa:
        kappa = sparse_extremes(A, ic, seed=opts.seed).kappa
    L = ic.L if ic is not None else None
    method = task.methods[0]
    rep = _report(method, spec, task.N, value, p=task.p, size=space.n,
                  memory=analysis.memory_count(method, spec.d, task.N, A=A),
                  ops=analysis.matvec_ops(method, spec.d, task.N, A=A, L=L),
                  kappa=kappa, iters=trace.iterations,
                  precond="ic0" if ic is not None else "none")
    return [rep], trace, trace.values[-1]


SOLVER_ERRORS = (ConvergenceError, FactorizationBreakdown, materials.NonConformingMeshError,
                 ArithmeticError)


def run_task(spec, task, opts, catch=False):
    """
    Solve one task. With ``catch``, solver failures are returned in
    ``TaskResult.error`` instead of raised.
    """
    runner = run_fem if task.solver == "FEM" else run_ffth
    try:
        reports, trace, final = runner(spec, task, opts)
    except SOLVER_ERRORS as exc:
        if not catch:
            raise
        return TaskResult(task, [], getattr(exc, "trace", None), error=f"{type(exc).__name__}: {exc}")
    return TaskResult(task, reports, trace, final)


def run_tasks(spec, tasks, opts, threads=1, catch=False):
    """Run tasks on a bounded pool; results come back in task order."""
    if threads <= 1:
        return [run_task(spec, t, opts, catch) for t in tasks]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda t: run_task(spec, t, opts, catch), tasks))


def fit_all(reports, min_points=3):
    """Extrapolated limit of every method series with enough grids."""
    fits = {}
    for m in analysis.METHODS:
        pts = [(r.N, r.value) for r in reports if r.method == m]
        if len(pts) >= min_points:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", analysis.FitWarning)
                fits[m] = analysis.fit_reference(pts)
    return fits


def attach_references(spec, reports, fits=None, fit_order=(FEM_P2, FEM_P1, GA)):
    """
    Fill ``ref`` and ``sq_error`` of every report; returns the source label.

    The exact value is used for rho = 0, the tabulated value when the case
    has one, and otherwise the fitted limit of the first series in
    ``fit_order``. Without any of these the errors stay NaN.
    """
    fits = fit_all(reports) if fits is None else fits
    ref, source = None, "none"
    if spec.rho == 0 and not spec.is_voxel:
        ref, source = float(spec.base[0, 0]), "exact"
    elif _is_tabulated(spec):
        ref, source = analysis.reference_value(spec.d, spec.geometry.name, spec.rho), "table"
    else:
        for m in fit_order:
            if m in fits:
                ref, source = fits[m].reference, f"fit:{m}"
                break
    if ref is not None:
        for r in reports:
            r.with_reference(ref, source)
    return source


def _is_tabulated(spec):
    g = spec.geometry
    if not isinstance(g, (materials.Square, materials.Pyramid)):
        return False
    if g != type(g)() or not np.allclose(spec.base, materials.base_matrix(spec.d)):
        return False
    return analysis.reference_value(spec.d, g.name, spec.rho) is not None
