"""
Built-in experiment configurations.

Each preset is the text of a config file, so ``homcompare preset NAME`` and
``homcompare run FILE`` with the same text behave identically.
"""

ALL_METHODS = '["FFTH-Ga", "FFTH-GaNi", "FFTH-GaNi-bound", "FEM-p1", "FEM-p2"]'

PRESETS = {
    "fig3-2d": f"""
# error against system size, memory and ops in 2D (rho = 100)
name = "fig3-2d"
d = 2
rho = 100.0
methods = {ALL_METHODS}
ffth_grids = [5, 15, 45, 135]
fem_grids = [10, 20, 40, 80]

[[case]]
name = "square"
geometry = "square"

[[case]]
name = "pyramid"
geometry = "pyramid"
""",
    "fig3-3d": f"""
# the same comparison in 3D on short schedules
name = "fig3-3d"
d = 3
rho = 100.0
methods = {ALL_METHODS}
ffth_grids = [5, 15, 45]
fem_grids = [10, 20]

[[case]]
name = "square"
geometry = "square"

[[case]]
name = "pyramid"
geometry = "pyramid"
""",
    "fig45-cond": """
# Lanczos condition-number estimates against the number of unknowns (2D)
name = "fig45-cond"
d = 2
kappa = true
lanczos_iters = 150
ffth_grids = [15, 45, 135]
fem_grids = [10, 20, 40, 80]
methods = ["FFTH-Ga", "FFTH-GaNi", "FEM-p1", "FEM-p2"]

[[case]]
name = "square-10"
geometry = "square"
rho = 10.0

[[case]]
name = "pyramid-10"
geometry = "pyramid"
rho = 10.0

[[case]]
name = "square-100"
geometry = "square"
rho = 100.0

[[case]]
name = "pyramid-100"
geometry = "pyramid"
rho = 100.0

[[case]]
name = "square-100-ic0"
geometry = "square"
rho = 100.0
methods = ["FEM-p1", "FEM-p2"]
precondition = true

[[case]]
name = "pyramid-100-ic0"
geometry = "pyramid"
rho = 100.0
methods = ["FEM-p1", "FEM-p2"]
precondition = true
""",
    "fig6-cg": """
# algebraic error along the CG iterations, pyramid, rho = 100
name = "fig6-cg"
geometry = "pyramid"
rho = 100.0
rtol = 1e-10
trace = true

[[case]]
name = "2d"
d = 2
methods = ["FFTH-Ga", "FFTH-GaNi", "FEM-p1"]
ffth_grids = [405]
fem_grids = [160]

[[case]]
name = "2d-ic0"
d = 2
methods = ["FEM-p1"]
fem_grids = [160]
precondition = true

[[case]]
name = "3d"
d = 3
methods = ["FFTH-Ga", "FFTH-GaNi", "FEM-p1"]
ffth_grids = [45]
fem_grids = [20]

[[case]]
name = "3d-ic0"
d = 3
methods = ["FEM-p1"]
fem_grids = [20]
precondition = true
""",
    "fig7-ops": """
# operations per (preconditioned) matrix-vector product, 2D, rho = 100
name = "fig7-ops"
d = 2
rho = 100.0
methods = ["FFTH-Ga", "FFTH-GaNi-bound", "FEM-p1", "FEM-p2"]
ffth_grids = [5, 15, 45, 135]
fem_grids = [10, 20, 40, 80]
precondition = true

[[case]]
name = "square"
geometry = "square"

[[case]]
name = "pyramid"
geometry = "pyramid"
""",
    "circle": """
# circular inclusion; FEM uses the outer approximation of the disk
name = "circle"
d = 2
geometry = "circle"
radius = 0.25
rho = 100.0
methods = ["FFTH-Ga", "FFTH-GaNi-bound", "FEM-p1", "FEM-p2"]
ffth_grids = [5, 15, 45, 135]
fem_grids = [10, 20, 40, 80]
""",
    "voxel-synthetic": """
# two-phase random voxel image generated from the seed
name = "voxel-synthetic"
d = 3
geometry = "voxel"
methods = ["FFTH-Ga", "FFTH-GaNi", "FFTH-GaNi-bound", "FEM-p1"]
ffth_grids = [45]
fem_grids = [45]

[voxel]
resolution = 45
void_fraction = 0.5
correlation = 0.08
""",
    "table-aeff": """
# extrapolated homogenised values for the tabulated cases (rho = 10)
name = "table-aeff"
rho = 10.0

[[case]]
name = "2d-square"
d = 2
geometry = "square"
methods = ["FFTH-Ga", "FEM-p2"]
ffth_grids = [5, 15, 45, 135]
fem_grids = [10, 20, 40, 80]

[[case]]
name = "2d-pyramid"
d = 2
geometry = "pyramid"
methods = ["FFTH-Ga", "FEM-p2"]
ffth_grids = [5, 15, 45, 135]
fem_grids = [10, 20, 40, 80]

[[case]]
name = "2d-square-100"
d = 2
geometry = "square"
rho = 100.0
methods = ["FFTH-Ga", "FEM-p2"]
ffth_grids = [5, 15, 45, 135]
fem_grids = [10, 20, 40, 80]

[[case]]
name = "3d-square"
d = 3
geometry = "square"
methods = ["FFTH-Ga"]
ffth_grids = [5, 15, 45]

[[case]]
name = "3d-pyramid"
d = 3
geometry = "pyramid"
methods = ["FFTH-Ga"]
ffth_grids = [5, 15, 45]
""",
}


def presets():
    """Names of the built-in configurations, in a stable order."""
    return sorted(PRESETS)


def preset_text(name):
    try:
        return PRESETS[name].lstrip()
    except KeyError:
        raise KeyError(f"unknown preset {name!r}; available: {', '.join(presets())}") from None
