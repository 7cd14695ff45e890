"""Structured rectangular grid of four-node plane-stress elements.

Node numbering is column-major with the vertical index varying fastest,
starting at the top-left corner (the convention of the classic educational
Matlab topology optimization codes).  Node ``(ix, iy)`` has id
``ix * (nely + 1) + iy`` where ``iy = 0`` is the top row.  Each node
carries two DOFs ``(2n, 2n + 1)`` for horizontal / vertical displacement.
Elements are numbered the same way: ``e = ex * nely + ey``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class GridMesh:
    """Regular nelx-by-nely grid of square Q4 elements."""

    nelx: int
    nely: int
    h: float = 1.0
    thickness: float = 1.0

    def __post_init__(self):
        if self.nelx < 1 or self.nely < 1:
            raise ValueError(f"mesh must have at least one element per side, got {self.nelx}x{self.nely}")
        if self.h <= 0.0:
            raise ValueError(f"element edge length must be positive, got {self.h}")
        if self.thickness <= 0.0:
            raise ValueError(f"thickness must be positive, got {self.thickness}")

    @property
    def n_elements(self) -> int:
        return self.nelx * self.nely

    @property
    def n_nodes(self) -> int:
        return (self.nelx + 1) * (self.nely + 1)

    @property
    def n_dofs(self) -> int:
        return 2 * self.n_nodes

    def node_id(self, ix: int, iy: int) -> int:
        """Node id for grid position (ix, iy); iy = 0 is the top row."""
        if not (0 <= ix <= self.nelx and 0 <= iy <= self.nely):
            raise IndexError(f"node ({ix}, {iy}) outside {self.nelx}x{self.nely} grid")
        return ix * (self.nely + 1) + iy

    def element_id(self, ex: int, ey: int) -> int:
        if not (0 <= ex < self.nelx and 0 <= ey < self.nely):
            raise IndexError(f"element ({ex}, {ey}) outside {self.nelx}x{self.nely} grid")
        return ex * self.nely + ey

    def element_grid_pos(self, e: int) -> tuple[int, int]:
        if not (0 <= e < self.n_elements):
            raise IndexError(f"element {e} out of range [0, {self.n_elements})")
        return e // self.nely, e % self.nely

    def element_dofs(self, e: int) -> np.ndarray:
        """Global DOF indices of element e, nodes counter-clockwise from bottom-left."""
        ex, ey = self.element_grid_pos(e)
        c = self.nely + 1
        nodes = np.array([
            ex * c + ey + 1,          # bottom-left
            (ex + 1) * c + ey + 1,    # bottom-right
            (ex + 1) * c + ey,        # top-right
            ex * c + ey,              # top-left
        ])
        return np.repeat(2 * nodes, 2) + np.tile([0, 1], 4)

    def all_element_dofs(self) -> np.ndarray:
        """(N, 8) array of element DOF maps, one row per element."""
        ex, ey = np.divmod(np.arange(self.n_elements), self.nely)
        c = self.nely + 1
        nodes = np.column_stack([
            ex * c + ey + 1,
            (ex + 1) * c + ey + 1,
            (ex + 1) * c + ey,
            ex * c + ey,
        ])
        return (np.repeat(2 * nodes, 2, axis=1) + np.tile([0, 1], 4)).astype(np.int64)

    def element_centers(self) -> np.ndarray:
        """(N, 2) element center coordinates; only relative distances matter."""
        ex, ey = np.divmod(np.arange(self.n_elements), self.nely)
        return np.column_stack([(ex + 0.5) * self.h, (ey + 0.5) * self.h])


def element_dof_map(mesh: GridMesh, e: int) -> np.ndarray:
    """8 global DOF indices of element e (counter-clockwise from bottom-left)."""
    return mesh.element_dofs(e)


def neighbor_elements(mesh: GridMesh, e: int, rmin: float) -> list[tuple[int, float]]:
    """All elements whose center lies strictly within rmin of element e's center.

    Includes e itself (distance 0).  Distances are Euclidean between element
    centers.
    """
    if rmin <= 0.0:
        raise ValueError(f"filter radius must be positive, got {rmin}")
    ex, ey = mesh.element_grid_pos(e)
    reach = int(math.ceil(rmin / mesh.h))
    out = []
    for dx in range(-reach, reach + 1):
        ix = ex + dx
        if not (0 <= ix < mesh.nelx):
            continue
        for dy in range(-reach, reach + 1):
            iy = ey + dy
            if not (0 <= iy < mesh.nely):
                continue
            d = math.hypot(dx, dy) * mesh.h
            if d < rmin:
                out.append((mesh.element_id(ix, iy), d))
    return out


@dataclass(frozen=True)
class SupportSet:
    """Fixed (zero-displacement) DOF indices."""

    fixed_dofs: frozenset[int]

    @classmethod
    def from_iterable(cls, dofs, mesh: GridMesh) -> "SupportSet":
        dofs = list(int(d) for d in dofs)
        if len(dofs) != len(set(dofs)):
            raise ValueError("duplicate fixed DOF indices")
        for d in dofs:
            if not (0 <= d < mesh.n_dofs):
                raise ValueError(f"fixed DOF {d} out of range [0, {mesh.n_dofs})")
        return cls(frozenset(dofs))

    def as_array(self) -> np.ndarray:
        return np.array(sorted(self.fixed_dofs), dtype=np.int64)


@dataclass(frozen=True)
class LoadSet:
    """Sparse map of DOF index to applied force."""

    forces: dict[int, float] = field(default_factory=dict)

    def validate(self, mesh: GridMesh, supports: SupportSet | None = None) -> None:
        for d in self.forces:
            if not (0 <= d < mesh.n_dofs):
                raise ValueError(f"load DOF {d} out of range [0, {mesh.n_dofs})")
            if supports is not None and d in supports.fixed_dofs:
                raise ValueError(f"load applied to fixed DOF {d}")

    def as_vector(self, mesh: GridMesh) -> np.ndarray:
        f = np.zeros(mesh.n_dofs)
        for d, v in self.forces.items():
            f[d] += v
        return f


@dataclass(frozen=True)
class PassiveSet:
    """Element indices pinned solid (physical density 1) or void (0)."""

    solid: frozenset[int] = frozenset()
    void: frozenset[int] = frozenset()

    def __post_init__(self):
        if self.solid & self.void:
            raise ValueError("passive solid and void sets overlap")

    def validate(self, mesh: GridMesh) -> None:
        for e in self.solid | self.void:
            if not (0 <= e < mesh.n_elements):
                raise ValueError(f"passive element {e} out of range [0, {mesh.n_elements})")

    @property
    def empty(self) -> bool:
        return not self.solid and not self.void

    def mask(self, n_elements: int) -> np.ndarray:
        """Boolean mask of all passive (solid or void) elements."""
        m = np.zeros(n_elements, dtype=bool)
        m[list(self.solid)] = True
        m[list(self.void)] = True
        return m

    def apply(self, xbar: np.ndarray) -> np.ndarray:
        """Pin passive entries of a physical density field (returns a copy)."""
        out = xbar.copy()
        out[list(self.solid)] = 1.0
        out[list(self.void)] = 0.0
        return out
