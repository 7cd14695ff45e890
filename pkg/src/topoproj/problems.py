"""Benchmark problem factory: compressed column, cantilever, MBB beam.

Each constructor returns a fully validated :class:`ProblemSpec`.  The column
and cantilever come in desk-scale variants so the whole pipeline can run in
minutes; the full meshes are available behind the same constructors.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .mesh import GridMesh, LoadSet, PassiveSet, SupportSet
from .threefield import Material


@dataclass(frozen=True)
class ProblemSpec:
    """Everything needed to run one optimization problem."""

    name: str
    mesh: GridMesh
    supports: SupportSet
    loads: LoadSet
    passive: PassiveSet
    material: Material
    rmin: float
    objective: str                      # "compliance" | "buckling-ks" | "volume"
    optimizer: str                      # "oc" | "mma"
    volfrac: float | None = None        # volume constraint (or None)
    lambda_min: float | None = None     # buckling load factor lower bound
    compliance_factor: float | None = None  # bound = factor * solid compliance
    n_modes: int = 0
    ks_rho: float = 0.0
    x_init: float | None = None         # uniform starting design (default: volfrac)

    def validate(self) -> None:
        mesh = self.mesh
        self.loads.validate(mesh, self.supports)
        self.passive.validate(mesh)
        f = self.loads.as_vector(mesh)
        if not np.any(f):
            raise ValueError("problem has no applied loads")
        fixed = self.supports.as_array()
        if fixed.size < 3:
            raise ValueError("fewer than 3 fixed DOFs cannot restrain rigid-body modes")
        if not (np.any(fixed % 2 == 0) and np.any(fixed % 2 == 1)):
            raise ValueError("supports must restrain both coordinate directions")
        if self.objective not in ("compliance", "buckling-ks", "volume"):
            raise ValueError(f"unknown objective {self.objective!r}")
        if self.optimizer not in ("oc", "mma"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.rmin <= 0.0:
            raise ValueError("filter radius must be positive")
        if self.volfrac is not None and not (0.0 < self.volfrac < 1.0):
            raise ValueError(f"volume fraction must be in (0,1), got {self.volfrac}")
        if self.lambda_min is not None and self.lambda_min <= 0.0:
            raise ValueError("buckling load factor bound must be positive")
        if self.compliance_factor is not None and self.compliance_factor <= 0.0:
            raise ValueError("compliance bound factor must be positive")

    @property
    def initial_design(self) -> np.ndarray:
        if self.x_init is not None:
            val = self.x_init
        elif self.volfrac is not None:
            val = self.volfrac
        else:
            val = 1.0
        return np.full(self.mesh.n_elements, float(val))


def _top_edge_load(mesh: GridMesh, total: float, n_span: int) -> LoadSet:
    """Downward load of the given total, spread over n_span centered top elements.

    Consistent nodal loads for a uniform edge traction: interior nodes carry a
    full share, the two end nodes half shares.
    """
    ix0 = mesh.nelx // 2 - n_span // 2
    share = total / n_span
    forces: dict[int, float] = {}
    for k in range(n_span + 1):
        w = share if 0 < k < n_span else share / 2.0
        dof = 2 * mesh.node_id(ix0 + k, 0) + 1
        forces[dof] = forces.get(dof, 0.0) - w
    return LoadSet(forces=forces)


def compressed_column(scale: int = 4, rmin_in_h: float = 4.0,
                      variant: str = "max-buckling") -> ProblemSpec:
    """Axially compressed column, clamped base, centered top load.

    scale divides the native 120x240 mesh (allowed: 1, 2, 4).  The load and
    the passive solid patch under it shrink proportionally in element counts
    so their physical extent is preserved.
    """
    if scale not in (1, 2, 4):
        raise ValueError(f"scale must be 1, 2 or 4, got {scale}")
    if variant not in ("max-buckling", "min-volume"):
        raise ValueError(f"unknown variant {variant!r}")
    nelx, nely = 120 // scale, 240 // scale
    h = float(scale)
    mesh = GridMesh(nelx=nelx, nely=nely, h=h, thickness=1.0)

    fixed = []
    for ix in range(nelx + 1):
        n = mesh.node_id(ix, nely)          # bottom edge clamped
        fixed += [2 * n, 2 * n + 1]
    supports = SupportSet.from_iterable(fixed, mesh)

    n_span = max(8 // scale, 1)
    loads = _top_edge_load(mesh, total=1e-3, n_span=n_span)

    patch_w, patch_h = max(8 // scale, 1), max(4 // scale, 1)
    ex0 = nelx // 2 - patch_w // 2
    solid = frozenset(mesh.element_id(ex, ey)
                      for ex in range(ex0, ex0 + patch_w)
                      for ey in range(patch_h))
    passive = PassiveSet(solid=solid)

    material = Material(E0=1.0, Emin=1e-6, nu=0.3, p=3.0)
    common = dict(mesh=mesh, supports=supports, loads=loads, passive=passive,
                  material=material, rmin=rmin_in_h * h)
    if variant == "max-buckling":
        spec = ProblemSpec(name=f"column-{nelx}x{nely}-maxbuckling",
                           objective="buckling-ks", optimizer="oc",
                           volfrac=0.35, n_modes=30, ks_rho=160.0, **common)
    else:
        spec = ProblemSpec(name=f"column-{nelx}x{nely}-minvolume",
                           objective="volume", optimizer="mma",
                           lambda_min=15.0, compliance_factor=2.0,
                           n_modes=20, ks_rho=160.0, x_init=1.0, **common)
    spec.validate()
    return spec


_CANTILEVER_MESHES = {"80x20": 3.0, "160x40": 3.0, "320x80": 6.0, "640x160": 12.0}


def cantilever_linear(mesh_name: str = "80x20", stability: bool = False,
                      load: float = 2e5) -> ProblemSpec:
    """Aspect-ratio-4 cantilever, left edge clamped, mid-right tip load.

    Linear compliance objective with a 40% volume constraint; optionally a
    stability constraint (aggregated buckling load factor >= 2 at unit load
    factor).  The filter radius is 0.075 in physical units on the native
    meshes (domain 4 x 1) and scales proportionally on the desk mesh.
    """
    if mesh_name not in _CANTILEVER_MESHES:
        raise ValueError(f"mesh must be one of {sorted(_CANTILEVER_MESHES)}, got {mesh_name!r}")
    nelx, nely = (int(s) for s in mesh_name.split("x"))
    h = 4.0 / nelx
    mesh = GridMesh(nelx=nelx, nely=nely, h=h, thickness=0.1)
    rmin = _CANTILEVER_MESHES[mesh_name] * h

    fixed = []
    for iy in range(nely + 1):
        n = mesh.node_id(0, iy)
        fixed += [2 * n, 2 * n + 1]
    supports = SupportSet.from_iterable(fixed, mesh)

    # point load spread over 4 nodes around the right-edge midpoint
    rows = [nely // 2 - 1, nely // 2, nely // 2 + 1, nely // 2 + 2]
    forces = {2 * mesh.node_id(nelx, iy) + 1: -load / 4.0 for iy in rows}
    loads = LoadSet(forces=forces)

    material = Material(E0=3e9, Emin=3.0, nu=0.4, p=3.0)
    spec = ProblemSpec(name=f"cantilever-{mesh_name}" + ("-stab" if stability else ""),
                       mesh=mesh, supports=supports, loads=loads,
                       passive=PassiveSet(), material=material, rmin=rmin,
                       objective="compliance", optimizer="mma", volfrac=0.4,
                       lambda_min=2.0 if stability else None,
                       n_modes=6 if stability else 0,
                       ks_rho=50.0 if stability else 0.0)
    spec.validate()
    return spec


def mbb(nelx: int = 60, nely: int = 20, volfrac: float = 0.5,
        rmin_in_h: float = 2.4) -> ProblemSpec:
    """Half-MBB beam: symmetry on the left edge, roller bottom-right,
    unit downward load at the top-left corner."""
    mesh = GridMesh(nelx=nelx, nely=nely, h=1.0, thickness=1.0)
    fixed = [2 * mesh.node_id(0, iy) for iy in range(nely + 1)]
    fixed.append(2 * mesh.node_id(nelx, nely) + 1)
    supports = SupportSet.from_iterable(fixed, mesh)
    loads = LoadSet(forces={2 * mesh.node_id(0, 0) + 1: -1.0})
    material = Material(E0=1.0, Emin=1e-6, nu=0.3, p=3.0)
    spec = ProblemSpec(name=f"mbb-{nelx}x{nely}", mesh=mesh, supports=supports,
                       loads=loads, passive=PassiveSet(), material=material,
                       rmin=rmin_in_h * mesh.h, objective="compliance",
                       optimizer="oc", volfrac=volfrac)
    spec.validate()
    return spec
