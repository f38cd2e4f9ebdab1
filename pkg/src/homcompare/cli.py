"""
Command line entry point: ``homcompare run CONFIG`` or ``homcompare preset NAME``.

Config files are TOML. Top-level keys give defaults for every case; an
optional array of ``[[case]]`` tables overrides them per case. Unknown keys
are errors. Exit codes: 0 success, 2 config error, 3 solver failure,
4 infeasible schedule (memory pre-flight).
"""

import argparse
import logging
import os
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import analysis, experiments, ffth, materials
from .experiments import RunOptions, plan_tasks
from .presets import preset_text, presets

log = logging.getLogger("homcompare")

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_INFEASIBLE = 0, 2, 3, 4

GEOMETRIES = ("square", "pyramid", "circle", "voxel")
CASE_KEYS = {"name", "d", "geometry", "rho", "radius", "methods", "ffth_grids",
             "fem_grids", "precondition", "kappa", "voxel"}
TOP_KEYS = CASE_KEYS | {"case", "rtol", "maxit", "lanczos_iters", "seed", "out",
                        "memory_limit_mb", "trace"}
VOXEL_KEYS = {"path", "resolution", "void_fraction", "correlation", "conductivity"}

# peak words (8 bytes) per grid point or node, measured with tracemalloc
_WORDS_FFTH = {2: 30, 3: 42}
_WORDS_FEM = {2: 95, 3: 195}


class ConfigError(ValueError):
    pass


@dataclass
class CaseConfig:
    name: str
    d: int = 2
    geometry: str = "square"
    rho: float = 10.0
    radius: float = 0.25
    methods: tuple = analysis.METHODS
    ffth_grids: tuple = (5, 15, 45, 135)
    fem_grids: tuple = (10, 20, 40, 80)
    precondition: bool = False
    kappa: bool = False
    voxel: dict = field(default_factory=dict)


@dataclass
class ExperimentConfig:
    name: str
    cases: list
    rtol: float = 1e-10
    maxit: int = None
    lanczos_iters: int = 100
    seed: int = 0
    out: str = None
    memory_limit_mb: float = None
    trace: bool = False

    def as_dict(self):
        d = asdict(self)
        d["cases"] = [asdict(c) for c in self.cases]
        return d


# ---------------------------------------------------------------- config ---

def parse_config(text, source="<config>"):
    """Parse and validate config text; raises ConfigError."""
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{source}: {exc}") from exc
    unknown = set(raw) - TOP_KEYS
    if unknown:
        raise ConfigError(f"{source}: unknown keys {sorted(unknown)}")
    base = {k: raw[k] for k in CASE_KEYS if k in raw}
    tables = raw.get("case", [{}])
    if not isinstance(tables, list) or not tables:
        raise ConfigError(f"{source}: 'case' must be a non-empty array of tables")
    cases = []
    for i, table in enumerate(tables):
        unknown = set(table) - CASE_KEYS
        if unknown:
            raise ConfigError(f"{source}: case {i}: unknown keys {sorted(unknown)}")
        merged = {**base, **table}
        merged.setdefault("name", raw.get("name", "case") if len(tables) == 1 else f"case{i}")
        cases.append(_make_case(merged, f"{source}: case {merged['name']!r}"))
    names = [c.name for c in cases]
    if len(set(names)) != len(names):
        raise ConfigError(f"{source}: case names must be unique")
    cfg = ExperimentConfig(name=str(raw.get("name", Path(source).stem)), cases=cases)
    for key in ("rtol", "maxit", "lanczos_iters", "seed", "out", "memory_limit_mb", "trace"):
        if key in raw:
            setattr(cfg, key, raw[key])
    _check_top(cfg, source)
    return cfg


def load_config(path):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text, str(path))


def _make_case(values, where):
    try:
        case = CaseConfig(**values)
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from exc
    case.methods = tuple(case.methods)
    case.ffth_grids = tuple(int(n) for n in case.ffth_grids)
    case.fem_grids = tuple(int(n) for n in case.fem_grids)
    case.rho = float(case.rho)
    case.voxel = dict(case.voxel)
    _check_case(case, where)
    return case


def _check_case(c, where):
    def bad(msg):
        raise ConfigError(f"{where}: {msg}")
    if c.d not in (2, 3):
        bad(f"d must be 2 or 3, got {c.d}")
    if c.geometry not in GEOMETRIES:
        bad(f"geometry must be one of {GEOMETRIES}, got {c.geometry!r}")
    unknown = set(c.methods) - set(analysis.METHODS)
    if unknown or not c.methods:
        bad(f"methods must be a non-empty subset of {analysis.METHODS}")
    if c.rho < 0:
        bad("rho must be nonnegative")
    if not 0 < c.radius < 0.5:
        bad("radius must lie in (0, 1/2)")
    uses_ffth = any(m in experiments.FFTH_METHODS for m in c.methods)
    uses_fem = any(m in experiments.FEM_METHODS for m in c.methods)
    if uses_ffth:
        if not c.ffth_grids:
            bad("ffth_grids is empty")
        even = [n for n in c.ffth_grids if n < 3 or n % 2 == 0]
        if even:
            bad(f"FFTH grids must be odd and >= 3, got {even}")
    if uses_fem:
        if not c.fem_grids:
            bad("fem_grids is empty")
        if any(n < 2 for n in c.fem_grids):
            bad("FEM grids need at least 2 elements per axis")
        if c.geometry in ("square", "pyramid"):
            off = [n for n in c.fem_grids if n % 10]
            if off:
                bad(f"FEM grids must be multiples of 10 to resolve the inclusion, got {off}")
    unknown = set(c.voxel) - VOXEL_KEYS
    if unknown:
        bad(f"unknown voxel keys {sorted(unknown)}")
    if c.geometry == "voxel":
        if "path" not in c.voxel and "resolution" not in c.voxel:
            bad("voxel geometry needs voxel.path or voxel.resolution")
        res = c.voxel.get("resolution")
        if res is not None:
            grids = set(c.ffth_grids if uses_ffth else ()) | set(c.fem_grids if uses_fem else ())
            if grids != {int(res)}:
                bad(f"voxel grids must equal the resolution {res}, got {sorted(grids)}")
    elif c.voxel:
        bad("voxel settings given for a non-voxel geometry")


def _check_top(cfg, where):
    if not cfg.rtol > 0:
        raise ConfigError(f"{where}: rtol must be positive")
    if cfg.maxit is not None and cfg.maxit < 1:
        raise ConfigError(f"{where}: maxit must be positive")
    if cfg.lanczos_iters < 2:
        raise ConfigError(f"{where}: lanczos_iters must be at least 2")
    if not 0 <= int(cfg.seed) < 2 ** 64:
        raise ConfigError(f"{where}: seed must be an unsigned 64-bit integer")


def build_spec(case, seed=0):
    """MaterialSpec of a case; voxel images are read or generated from the seed."""
    if case.geometry == "square":
        geom = materials.Square()
    elif case.geometry == "pyramid":
        geom = materials.Pyramid()
    elif case.geometry == "circle":
        geom = materials.Circle(case.radius)
    else:
        v = case.voxel
        if "path" in v:
            try:
                image = materials.read_voxel(v["path"])
            except (OSError, ValueError, KeyError) as exc:
                raise ConfigError(f"cannot load voxel image {v['path']}: {exc}") from exc
        else:
            cond = v.get("conductivity")
            cond = {int(k): float(x) for k, x in cond.items()} if cond else None
            image = materials.synthetic_voxel_image(
                (int(v["resolution"]),) * case.d, seed=seed,
                void_fraction=float(v.get("void_fraction", 0.5)),
                correlation=float(v.get("correlation", 0.08)), conductivity=cond)
        if image.phases.ndim != case.d:
            raise ConfigError(f"voxel image is {image.phases.ndim}D but d = {case.d}")
        geom = materials.Voxel(image)
        bad = [n for n in case.ffth_grids + case.fem_grids if n != image.resolution[0]]
        if bad or len(set(image.resolution)) != 1:
            raise ConfigError("voxel grids must equal the (cubic) image resolution")
    return materials.MaterialSpec(case.d, geom, case.rho)


# -------------------------------------------------------------- pre-flight ---

def estimate_bytes(task, d):
    """Rough peak memory of one task, within a factor 2 of the measured peak."""
    if task.solver == "FEM":
        return 8 * _WORDS_FEM[d] * (task.N * task.p) ** d
    words = _WORDS_FFTH[d]
    if task.solver == "Ga" or analysis.GANI_BOUND in task.methods:
        return 8 * words * (2 * task.N - 1) ** d
    return 8 * words * task.N ** d


def available_memory():
    try:
        with open("/proc/meminfo") as fh:
            for line in fh:
                if line.startswith("MemAvailable:"):
                    return int(line.split()[1]) * 1024
    except OSError:
        pass
    try:
        return os.sysconf("SC_AVPHYS_PAGES") * os.sysconf("SC_PAGE_SIZE")
    except (ValueError, OSError, AttributeError):
        return None


def task_size(task, d):
    if task.solver == "FEM":
        return (task.N * task.p) ** d - 1
    return ffth.system_size(task.N, d)


def preflight(cfg, threads=1):
    """
    Plan every case and flag tasks that would not fit into memory.

    Returns (rows, offending); a row is (case, task, size, estimate).
    """
    limit = cfg.memory_limit_mb * 2 ** 20 if cfg.memory_limit_mb else available_memory()
    rows = []
    for case in cfg.cases:
        for task in plan_tasks(case.methods, case.ffth_grids, case.fem_grids):
            rows.append((case, task, task_size(task, case.d), estimate_bytes(task, case.d)))
    offending = []
    if limit:
        concurrent = sorted((r[3] for r in rows), reverse=True)[:max(threads, 1)]
        others = sum(concurrent[1:])
        offending = [r for r in rows if r[3] + others > 0.8 * limit]
    return rows, offending


def _describe(task):
    if task.solver == "FEM":
        return task.methods[0]
    return "+".join(task.methods)


def print_plan(rows, stream=None):
    stream = stream or sys.stdout
    print(f"{'case':<18}{'method':<30}{'N':>6}{'size':>12}{'est. MB':>10}", file=stream)
    for case, task, size, est in rows:
        print(f"{case.name:<18}{_describe(task):<30}{task.N:>6}{size:>12}"
              f"{est / 2 ** 20:>10.1f}", file=stream)


# --------------------------------------------------------------------- run ---

def run_config(cfg, out=None, threads=1, dry_run=False):
    """Execute a validated config; returns an exit code."""
    rows, offending = preflight(cfg, threads)
    if dry_run:
        print_plan(rows)
    if offending:
        for case, task, _, est in offending:
            log.error("infeasible: case %s, %s N=%d needs about %.0f MB",
                      case.name, _describe(task), task.N, est / 2 ** 20)
        return EXIT_INFEASIBLE
    if dry_run:
        return EXIT_OK

    out = Path(out or cfg.out or Path("results") / cfg.name)
    reports, traces, fits, sources = [], {}, {}, {}
    failed = False
    for case in cfg.cases:
        try:
            spec = build_spec(case, cfg.seed)
        except ConfigError as exc:
            log.error("%s", exc)
            return EXIT_CONFIG
        opts = RunOptions(rtol=cfg.rtol, maxit=cfg.maxit, precondition=case.precondition,
                          kappa=case.kappa, lanczos_iters=cfg.lanczos_iters, seed=cfg.seed)
        tasks = plan_tasks(case.methods, case.ffth_grids, case.fem_grids)
        results = experiments.run_tasks(spec, tasks, opts, threads, catch=True)
        case_reports = []
        for res in results:
            if res.error:
                failed = True
                log.error("case %s, %s N=%d failed: %s", case.name, _describe(res.task),
                          res.task.N, res.error)
                continue
            case_reports += res.reports
            if cfg.trace:
                label = f"{case.name}/{res.task.methods[0]}/N={res.task.N}"
                traces[label] = (res.trace, res.final_value)
        case_fits = experiments.fit_all(case_reports)
        sources[case.name] = experiments.attach_references(spec, case_reports, case_fits)
        fits.update({f"{case.name}:{m}": f for m, f in case_fits.items()})
        reports += case_reports
        log.info("case %s: %d runs, reference from %s", case.name, len(case_reports),
                 sources[case.name])
    config = cfg.as_dict()
    config.pop("out", None)
    paths = analysis.emit_report(reports, out, config=config, traces=traces, fits=fits,
                                 extra={"reference_sources": sources})
    for p in paths:
        log.info("wrote %s", p)
    return EXIT_SOLVER if failed else EXIT_OK


def _global_options(suppress):
    # shared by the main parser and the subcommands, so options may go on
    # either side of the subcommand
    kw = {"default": argparse.SUPPRESS} if suppress else {}
    g = argparse.ArgumentParser(add_help=False)
    g.add_argument("--out", help="output directory (default results/<name>)",
                   **(kw or {"default": None}))
    g.add_argument("--threads", type=int, help="worker threads", **(kw or {"default": 1}))
    g.add_argument("--seed", type=int, help="override the config seed",
                   **(kw or {"default": None}))
    g.add_argument("--dry-run", action="store_true", help="print sizes and memory estimates only",
                   **kw)
    g.add_argument("-v", "--verbose", action="store_true", help="log progress", **kw)
    return g


def _parser():
    ap = argparse.ArgumentParser(prog="homcompare", description=__doc__.splitlines()[1],
                                 parents=[_global_options(False)])
    common = _global_options(True)
    sub = ap.add_subparsers(dest="command", required=True)
    p = sub.add_parser("run", help="run a TOML config file", parents=[common])
    p.add_argument("config")
    p = sub.add_parser("preset", help="run a built-in config", parents=[common])
    p.add_argument("name")
    p = sub.add_parser("presets", help="list built-in configs", parents=[common])
    p.add_argument("--show", metavar="NAME", help="print the config text of a preset")
    return ap


def main(argv=None):
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    if args.command == "presets":
        if args.show:
            try:
                print(preset_text(args.show), end="")
            except KeyError as exc:
                print(exc.args[0], file=sys.stderr)
                return EXIT_CONFIG
            return EXIT_OK
        for name in presets():
            print(name)
        return EXIT_OK
    if args.threads < 1:
        print("--threads must be positive", file=sys.stderr)
        return EXIT_CONFIG
    try:
        if args.command == "run":
            cfg = load_config(args.config)
        else:
            try:
                cfg = parse_config(preset_text(args.name), args.name)
            except KeyError as exc:
                raise ConfigError(exc.args[0]) from None
        if args.seed is not None:
            cfg.seed = args.seed
            _check_top(cfg, "--seed")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return run_config(cfg, args.out, args.threads, args.dry_run)


if __name__ == "__main__":
    sys.exit(main())
