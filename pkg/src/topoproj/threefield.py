"""Three-field density pipeline: filter, threshold projection, SIMP, gray level.

Design variables x are smoothed by a radial density filter into x_tilde,
then pushed towards 0/1 by a smoothed-Heaviside threshold projection with
sharpness beta, giving the physical field x_bar from which all element
properties are computed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .mesh import GridMesh, PassiveSet

# Below this, the projection is numerically 0/0; the analytic limit is identity.
_BETA_IDENTITY = 1e-9


@dataclass(frozen=True)
class Material:
    """Isotropic material constants and SIMP penalization."""

    E0: float
    Emin: float
    nu: float
    p: float = 3.0

    def __post_init__(self):
        if not (self.E0 > self.Emin > 0.0):
            raise ValueError(f"need E0 > Emin > 0, got E0={self.E0}, Emin={self.Emin}")
        if not (0.0 <= self.nu < 0.5):
            raise ValueError(f"Poisson ratio must be in [0, 0.5), got {self.nu}")
        if self.p < 1.0:
            raise ValueError(f"penalization must be >= 1, got {self.p}")


@dataclass(frozen=True)
class FilterOperator:
    """Row-normalized radial filter weights (sparse, row-stochastic)."""

    weights: sp.csr_matrix
    rmin: float

    @property
    def n(self) -> int:
        return self.weights.shape[0]


def build_filter(mesh: GridMesh, rmin: float) -> FilterOperator:
    """Conic weight filter: W[e,i] = max(0, rmin - d(e,i)) normalized per row."""
    if rmin <= 0.0:
        raise ValueError(f"filter radius must be positive, got {rmin}")
    nelx, nely, h = mesh.nelx, mesh.nely, mesh.h
    reach = int(math.ceil(rmin / h))
    ex, ey = np.divmod(np.arange(mesh.n_elements), nely)

    rows, cols, vals = [], [], []
    for dx in range(-reach, reach + 1):
        for dy in range(-reach, reach + 1):
            d = math.hypot(dx, dy) * h
            if d >= rmin:
                continue
            ok = (ex + dx >= 0) & (ex + dx < nelx) & (ey + dy >= 0) & (ey + dy < nely)
            rows.append(np.nonzero(ok)[0])
            cols.append((ex[ok] + dx) * nely + (ey[ok] + dy))
            vals.append(np.full(ok.sum(), rmin - d))
    W = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(mesh.n_elements, mesh.n_elements),
    ).tocsr()
    rowsum = np.asarray(W.sum(axis=1)).ravel()
    W = sp.diags(1.0 / rowsum) @ W
    return FilterOperator(weights=W.tocsr(), rmin=rmin)


def apply_filter(op: FilterOperator, x: np.ndarray) -> np.ndarray:
    if x.shape[0] != op.n:
        raise ValueError(f"field length {x.shape[0]} does not match filter size {op.n}")
    return op.weights @ x


def apply_filter_transpose(op: FilterOperator, g: np.ndarray) -> np.ndarray:
    if g.shape[0] != op.n:
        raise ValueError(f"field length {g.shape[0]} does not match filter size {op.n}")
    return op.weights.T @ g


def project(x_tilde, beta: float, eta: float = 0.5):
    """Smoothed-Heaviside threshold projection of the filtered field."""
    if beta < 0.0:
        raise ValueError(f"projection sharpness must be >= 0, got {beta}")
    if not (0.0 < eta < 1.0):
        raise ValueError(f"threshold must be in (0, 1), got {eta}")
    if beta < _BETA_IDENTITY:
        return np.asarray(x_tilde, dtype=float).copy() if isinstance(x_tilde, np.ndarray) else float(x_tilde)
    num = np.tanh(beta * eta) + np.tanh(beta * (np.asarray(x_tilde) - eta))
    return num / (math.tanh(beta * eta) + math.tanh(beta * (1.0 - eta)))


def project_derivative(x_tilde, beta: float, eta: float = 0.5):
    """d x_bar / d x_tilde of the threshold projection."""
    if beta < 0.0:
        raise ValueError(f"projection sharpness must be >= 0, got {beta}")
    if not (0.0 < eta < 1.0):
        raise ValueError(f"threshold must be in (0, 1), got {eta}")
    x_tilde = np.asarray(x_tilde, dtype=float)
    if beta < _BETA_IDENTITY:
        return np.ones_like(x_tilde)
    sech2 = 1.0 / np.cosh(beta * (x_tilde - eta)) ** 2
    return beta * sech2 / (math.tanh(beta * eta) + math.tanh(beta * (1.0 - eta)))


def simp_young(x_bar, material: Material):
    """Modified SIMP Young's modulus: Emin + x_bar^p (E0 - Emin)."""
    return material.Emin + np.asarray(x_bar) ** material.p * (material.E0 - material.Emin)


def simp_young_derivative(x_bar, material: Material):
    return material.p * np.asarray(x_bar) ** (material.p - 1.0) * (material.E0 - material.Emin)


def gray_level(x_bar: np.ndarray) -> float:
    """Normalized non-discreteness: 0 for a binary field, 1 for all-0.5."""
    x_bar = np.asarray(x_bar)
    return float(4.0 * np.mean(x_bar * (1.0 - x_bar)))


def chain_to_design(
    df_dxbar: np.ndarray,
    op: FilterOperator,
    dproj: np.ndarray,
    passive: PassiveSet | None = None,
) -> np.ndarray:
    """Pull a physical-field sensitivity back to the design variables.

    Passive elements have pinned physical densities, so their rows do not
    propagate; their design-variable entries are zeroed as well.
    """
    g = df_dxbar * dproj
    if passive is not None and not passive.empty:
        g = g.copy()
        g[list(passive.solid | passive.void)] = 0.0
    out = apply_filter_transpose(op, g)
    if passive is not None and not passive.empty:
        out[list(passive.solid | passive.void)] = 0.0
    return out


@dataclass(frozen=True)
class DesignField:
    """The three element-wise fields: design, filtered, physical."""

    x: np.ndarray
    x_tilde: np.ndarray
    x_bar: np.ndarray


class ThreeFieldMap:
    """Bundles filter, projection threshold and passive set for one problem."""

    def __init__(self, mesh: GridMesh, rmin: float, eta: float = 0.5,
                 passive: PassiveSet | None = None):
        self.mesh = mesh
        self.op = build_filter(mesh, rmin)
        self.eta = eta
        self.passive = passive if passive is not None else PassiveSet()
        self.passive.validate(mesh)

    def fields(self, x: np.ndarray, beta: float) -> DesignField:
        x_tilde = apply_filter(self.op, x)
        x_bar = project(x_tilde, beta, self.eta)
        if not self.passive.empty:
            x_bar = self.passive.apply(x_bar)
        return DesignField(x=x, x_tilde=x_tilde, x_bar=x_bar)

    def chain(self, df_dxbar: np.ndarray, fields: DesignField, beta: float) -> np.ndarray:
        dproj = project_derivative(fields.x_tilde, beta, self.eta)
        return chain_to_design(df_dxbar, self.op, dproj, self.passive)

    def volume_fraction(self, x_bar: np.ndarray) -> float:
        return float(np.mean(x_bar))

    def gray(self, x_bar: np.ndarray) -> float:
        return gray_level(x_bar)
