"""Benchmark problem registry: simple column and double hook."""
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .density import MaterialModel, RadiusSchedule, SymmetryMap
from .errors import ParameterError
from .fem import BoundaryConditions, FEModel, Mesh
from .stochastic import LoadModel, LoadPoint, NormalComponents, UniformAngle


@dataclass(frozen=True)
class ProblemDef:
    name: str
    mesh: Mesh
    fixed_dofs: tuple
    load_points: tuple
    Vf: float
    schedule: RadiusSchedule
    symmetric: bool = True
    material: MaterialModel = field(default_factory=MaterialModel)
    nu: float = 0.3
    # per-kappa step scaling as a multiple of n, plus overrides of the driver defaults
    theta_per_n: tuple = ((1.0, 600.0),)
    defaults: tuple = ()

    @cached_property
    def bc(self):
        return BoundaryConditions(np.array(self.fixed_dofs), self.loads.load_dofs)

    @cached_property
    def fem(self):
        self.bc.validate(self.mesh)
        return FEModel(self.mesh, self.bc, self.nu)

    @cached_property
    def loads(self):
        return LoadModel(self.load_points, self.mesh.ndof)

    @cached_property
    def symmetry(self):
        return SymmetryMap.vertical_axis(self.mesh) if self.symmetric else None

    def default_theta(self, kappa):
        table = dict(self.theta_per_n)
        if kappa in table:
            return table[kappa] * self.mesh.n
        # nearest tabulated kappa
        key = min(table, key=lambda kk: abs(kk - kappa))
        return table[key] * self.mesh.n

    def deterministic(self):
        pts = tuple(LoadPoint(p.node, p.dist.degenerate()) for p in self.load_points)
        return _replace(self, name=self.name + "-deterministic", load_points=pts)


def _replace(problem, **changes):
    kw = {f: getattr(problem, f) for f in problem.__dataclass_fields__}
    kw.update(changes)
    return ProblemDef(**kw)


def with_options(problem, Vf=None, schedule=None, symmetric=None):
    changes = {}
    if Vf is not None:
        changes["Vf"] = float(Vf)
    if schedule is not None:
        changes["schedule"] = schedule
    if symmetric is not None:
        changes["symmetric"] = bool(symmetric)
    return _replace(problem, **changes) if changes else problem


def simple_column(nx=100, ny=100, Vf=0.3, mc=False):
    mesh = Mesh(nx, ny, 1.0)
    bottom = [mesh.node_id(ny, c) for c in range(nx + 1)]
    fixed = tuple(d for nd in bottom for d in (2 * nd, 2 * nd + 1))
    load = LoadPoint(mesh.node_id(0, nx // 2), UniformAngle(11 * math.pi / 24, 13 * math.pi / 24, 1.0))
    start = 60 if mc else 300
    return ProblemDef(
        name="simple-column", mesh=mesh, fixed_dofs=fixed, load_points=(load,), Vf=Vf,
        schedule=RadiusSchedule(3.0, 1.2, start, 30 if not mc else 6),
        theta_per_n=((1.0, 600.0), (0.618, 600.0)),
        defaults=(("N_rst", 100), ("N_damp", 400), ("eps_damp", 0.05), ("N_max", 500), ("N_min", 400)))


HOOK_PRESETS = {12_672: 48, 50_688: 96, 114_048: 144}


def double_hook_mask(res):
    """Inverted T: a 4 x 1 bar along the bottom and a centered 1 x 1.5 stem."""
    nx, ny = 4 * res, int(round(2.5 * res))
    rows = np.arange(ny)[:, None]
    cols = np.arange(nx)[None, :]
    bar = rows >= ny - res
    stem = (cols >= int(round(1.5 * res))) & (cols < int(round(2.5 * res)))
    return nx, ny, bar | stem


def double_hook(n_elements=12_672, Vf=0.3, res=None, mc=False):
    if res is None:
        if n_elements not in HOOK_PRESETS:
            raise ParameterError(f"no double-hook preset with {n_elements} elements; "
                                 f"choose from {sorted(HOOK_PRESETS)}")
        res = HOOK_PRESETS[n_elements]
    nx, ny, mask = double_hook_mask(res)
    h = 1.0 / res
    mesh = Mesh(nx, ny, h, active=mask)
    c0, c1 = int(round(1.5 * res)), int(round(2.5 * res))
    top = [mesh.node_id(0, c) for c in range(c0, c1 + 1)]
    fixed = tuple(d for nd in top for d in (2 * nd, 2 * nd + 1))
    dist = NormalComponents((0.0, -1.0), (0.1, 0.0))
    loads = (LoadPoint(mesh.node_id(ny, 0), dist), LoadPoint(mesh.node_id(ny, nx), dist))
    start = 60 if mc else 300
    return ProblemDef(
        name="double-hook", mesh=mesh, fixed_dofs=fixed, load_points=loads, Vf=Vf,
        schedule=RadiusSchedule(0.0625, 0.025, start, 30 if not mc else 6),
        theta_per_n=((1.0, 1.0), (0.618, 1.0)),
        defaults=(("N_rst", 100), ("N_damp", 450), ("eps_damp", 0.075), ("N_max", 600), ("N_min", 450)))


REGISTRY = {
    "simple-column": simple_column,
    "double-hook": double_hook,
}


def get_problem(name, **kwargs):
    try:
        factory = REGISTRY[name]
    except KeyError:
        raise ParameterError(f"unknown problem {name!r}; known: {', '.join(sorted(REGISTRY))}") from None
    return factory(**kwargs)
