"""Plane-stress Q4 finite elements: statics, linear buckling, sensitivities.

Everything is assembled on the structured grid from :mod:`topoproj.mesh`.
Fixed DOFs are eliminated by reduction so the reduced stiffness stays well
conditioned for the eigensolves.  The buckling eigensolver runs Lanczos
iteration on the inverted pencil, reusing the sparse factorization of the
reduced stiffness matrix for the inner solves.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .mesh import GridMesh, LoadSet, SupportSet
from .threefield import Material, simp_young, simp_young_derivative

_GAUSS = 1.0 / np.sqrt(3.0)
_GPTS = [(-_GAUSS, -_GAUSS), (_GAUSS, -_GAUSS), (_GAUSS, _GAUSS), (-_GAUSS, _GAUSS)]


class SingularSystemError(RuntimeError):
    """The constrained stiffness matrix could not be factorized."""


class EigenConvergenceError(RuntimeError):
    """The buckling eigensolver hit its iteration cap before converging."""


def _shape_function_gradients(xi: float, eta: float) -> np.ndarray:
    """(2, 4) derivatives of the bilinear shape functions w.r.t. (xi, eta).

    Node order counter-clockwise from bottom-left: (-1,-1), (1,-1), (1,1), (-1,1).
    """
    return 0.25 * np.array([
        [-(1 - eta), (1 - eta), (1 + eta), -(1 + eta)],
        [-(1 - xi), -(1 + xi), (1 + xi), (1 - xi)],
    ])


def _b_matrix(xi: float, eta: float, h: float) -> np.ndarray:
    """(3, 8) strain-displacement matrix at a quadrature point."""
    dN = _shape_function_gradients(xi, eta) * (2.0 / h)  # d/dx, d/dy
    B = np.zeros((3, 8))
    B[0, 0::2] = dN[0]
    B[1, 1::2] = dN[1]
    B[2, 0::2] = dN[1]
    B[2, 1::2] = dN[0]
    return B


def _g_matrix(xi: float, eta: float, h: float) -> np.ndarray:
    """(4, 8) displacement-gradient matrix: rows du/dx, du/dy, dv/dx, dv/dy."""
    dN = _shape_function_gradients(xi, eta) * (2.0 / h)
    G = np.zeros((4, 8))
    G[0, 0::2] = dN[0]
    G[1, 0::2] = dN[1]
    G[2, 1::2] = dN[0]
    G[3, 1::2] = dN[1]
    return G


def constitutive_matrix(nu: float) -> np.ndarray:
    """Unit-modulus plane-stress constitutive matrix."""
    if not (0.0 <= nu < 0.5):
        raise ValueError(f"Poisson ratio must be in [0, 0.5), got {nu}")
    return np.array([
        [1.0, nu, 0.0],
        [nu, 1.0, 0.0],
        [0.0, 0.0, (1.0 - nu) / 2.0],
    ]) / (1.0 - nu * nu)


def element_stiffness(nu: float, h: float, thickness: float) -> np.ndarray:
    """Unit-modulus 8x8 Q4 plane-stress stiffness (2x2 Gauss quadrature)."""
    D = constitutive_matrix(nu)
    det_j = (h / 2.0) ** 2
    k = np.zeros((8, 8))
    for xi, eta in _GPTS:
        B = _b_matrix(xi, eta, h)
        k += B.T @ D @ B * det_j * thickness
    return 0.5 * (k + k.T)


def rigid_body_modes(h: float) -> np.ndarray:
    """(3, 8) nodal rigid-body displacement vectors of one element."""
    coords = np.array([[0.0, 0.0], [h, 0.0], [h, h], [0.0, h]])
    tx = np.tile([1.0, 0.0], 4)
    ty = np.tile([0.0, 1.0], 4)
    rot = np.empty(8)
    rot[0::2] = -coords[:, 1]
    rot[1::2] = coords[:, 0]
    return np.vstack([tx, ty, rot])


def assemble_stiffness(mesh: GridMesh, young: np.ndarray, k0: np.ndarray | None = None) -> sp.csr_matrix:
    """Global stiffness from per-element Young's moduli."""
    young = np.asarray(young, dtype=float)
    if young.shape[0] != mesh.n_elements:
        raise ValueError(f"modulus field length {young.shape[0]} != {mesh.n_elements}")
    if k0 is None:
        k0 = element_stiffness(0.3, mesh.h, mesh.thickness)
    edofs = mesh.all_element_dofs()
    rows = np.repeat(edofs, 8, axis=1).ravel()
    cols = np.tile(edofs, (1, 8)).ravel()
    data = (young[:, None, None] * k0[None, :, :]).ravel()
    K = sp.coo_matrix((data, (rows, cols)), shape=(mesh.n_dofs, mesh.n_dofs)).tocsr()
    return K


@dataclass
class StaticSystem:
    """Reduced linear system with a reusable sparse factorization."""

    mesh: GridMesh
    free: np.ndarray          # free DOF indices
    K_ff: sp.csr_matrix
    _lu: spla.SuperLU | None = None

    @classmethod
    def build(cls, mesh: GridMesh, young: np.ndarray, supports: SupportSet,
              k0: np.ndarray | None = None) -> "StaticSystem":
        K = assemble_stiffness(mesh, young, k0)
        fixed = supports.as_array()
        free = np.setdiff1d(np.arange(mesh.n_dofs), fixed)
        K_ff = K[np.ix_(free, free)].tocsc()
        return cls(mesh=mesh, free=free, K_ff=K_ff.tocsr())

    def factorize(self) -> spla.SuperLU:
        if self._lu is None:
            try:
                self._lu = spla.splu(self.K_ff.tocsc())
            except RuntimeError as exc:
                raise SingularSystemError(
                    f"stiffness factorization failed ({exc}); check supports and moduli"
                ) from exc
        return self._lu

    def solve(self, f: np.ndarray) -> np.ndarray:
        """Solve K u = f; input and output are full-length DOF vectors."""
        lu = self.factorize()
        u = np.zeros(self.mesh.n_dofs)
        f_free = f[self.free]
        sol = lu.solve(f_free)
        if not np.all(np.isfinite(sol)):
            raise SingularSystemError("linear solve produced non-finite values; system is singular")
        # an under-restrained system factors with tiny pivots and returns
        # garbage; a residual check catches it
        fnorm = np.linalg.norm(f_free)
        if fnorm > 0.0 and np.linalg.norm(self.K_ff @ sol - f_free) > 1e-6 * fnorm:
            raise SingularSystemError(
                "linear solve residual is large; check that the supports restrain all rigid-body motion")
        u[self.free] = sol
        return u

    def solve_reduced(self, rhs_free: np.ndarray) -> np.ndarray:
        """Solve on the free DOFs only (vector or matrix right-hand side)."""
        return self.factorize().solve(rhs_free)

    def reduce(self, M: sp.spmatrix) -> sp.csr_matrix:
        return M[np.ix_(self.free, self.free)].tocsr()

    def expand(self, v_free: np.ndarray) -> np.ndarray:
        u = np.zeros(self.mesh.n_dofs)
        u[self.free] = v_free
        return u


def assemble_and_solve(mesh: GridMesh, young: np.ndarray, loads: LoadSet,
                       supports: SupportSet, k0: np.ndarray | None = None) -> np.ndarray:
    """One-shot static solve: returns the full displacement vector."""
    loads.validate(mesh, supports)
    system = StaticSystem.build(mesh, young, supports, k0)
    return system.solve(loads.as_vector(mesh))


def compliance_and_sensitivity(u: np.ndarray, mesh: GridMesh, x_bar: np.ndarray,
                               material: Material, k0: np.ndarray,
                               f: np.ndarray) -> tuple[float, np.ndarray]:
    """Compliance f.u and its derivative w.r.t. the physical densities."""
    C = float(f @ u)
    Ue = u[mesh.all_element_dofs()]
    strain_energy = np.einsum("ni,ij,nj->n", Ue, k0, Ue)
    dC = -simp_young_derivative(x_bar, material) * strain_energy
    return C, dC


def _geometric_templates(h: float):
    """Per-Gauss-point constant matrices for the geometric stiffness.

    At each point the integrand is sxx*A + syy*B + sxy*C where A, B, C are
    8x8 outer-product combinations of the displacement-gradient rows.
    """
    As, Bs, Cs, Bmats = [], [], [], []
    for xi, eta in _GPTS:
        G = _g_matrix(xi, eta, h)
        gux, guy, gvx, gvy = G
        As.append(np.outer(gux, gux) + np.outer(gvx, gvx))
        Bs.append(np.outer(guy, guy) + np.outer(gvy, gvy))
        Cs.append(np.outer(gux, guy) + np.outer(guy, gux)
                  + np.outer(gvx, gvy) + np.outer(gvy, gvx))
        Bmats.append(_b_matrix(xi, eta, h))
    return np.array(As), np.array(Bs), np.array(Cs), np.array(Bmats)


def element_gauss_stresses(mesh: GridMesh, u: np.ndarray, x_bar: np.ndarray,
                           material: Material) -> np.ndarray:
    """(N, 4, 3) stresses (sxx, syy, sxy) at the Gauss points of every element."""
    _, _, _, Bmats = _geometric_templates(mesh.h)
    D = constitutive_matrix(material.nu)
    Ue = u[mesh.all_element_dofs()]
    E = simp_young(x_bar, material)
    # sig[n, g, :] = E_n * D @ B_g @ Ue_n
    DB = np.einsum("ij,gjk->gik", D, Bmats)
    return E[:, None, None] * np.einsum("gik,nk->ngi", DB, Ue)


def element_geometric_stiffness(mesh: GridMesh, u: np.ndarray, x_bar: np.ndarray,
                                material: Material) -> np.ndarray:
    """(N, 8, 8) element stress-stiffness matrices."""
    As, Bs, Cs, _ = _geometric_templates(mesh.h)
    sig = element_gauss_stresses(mesh, u, x_bar, material)
    w = (mesh.h / 2.0) ** 2 * mesh.thickness  # quadrature weight * detJ * t
    ks = (np.einsum("ng,gij->nij", sig[:, :, 0], As)
          + np.einsum("ng,gij->nij", sig[:, :, 1], Bs)
          + np.einsum("ng,gij->nij", sig[:, :, 2], Cs)) * w
    return ks


def stress_stiffness(mesh: GridMesh, u: np.ndarray, x_bar: np.ndarray,
                     material: Material) -> sp.csr_matrix:
    """Global geometric (stress) stiffness for the pre-stress state u."""
    ks = element_geometric_stiffness(mesh, u, x_bar, material)
    edofs = mesh.all_element_dofs()
    rows = np.repeat(edofs, 8, axis=1).ravel()
    cols = np.tile(edofs, (1, 8)).ravel()
    K = sp.coo_matrix((ks.ravel(), (rows, cols)), shape=(mesh.n_dofs, mesh.n_dofs)).tocsr()
    return K


@dataclass
class BucklingResult:
    """Load factors and K-orthonormal mode shapes of (K + lam*Ksig) phi = 0."""

    load_factors: np.ndarray      # ascending, positive
    modes: np.ndarray             # (n_free, m), K-orthonormal
    incomplete: bool = False      # fewer positive eigenvalues than requested
    iterations: int = 0

    @property
    def n_modes(self) -> int:
        return self.load_factors.shape[0]


def buckling_eigs(K_ff: sp.spmatrix, Ksig_ff: sp.spmatrix, m: int, *,
                  lu: spla.SuperLU | None = None, tol: float = 1e-8,
                  max_iter: int = 300, v0: np.ndarray | None = None) -> BucklingResult:
    """Smallest positive load factors of (K + lam*Ksig) phi = 0.

    Solved as the generalized problem (-Ksig) phi = (1/lam) K phi for the
    algebraically largest 1/lam by Lanczos iteration, reusing the sparse
    factorization of K for the inner solves.  Modes are returned
    K-orthonormal, load factors ascending.
    """
    if m < 1:
        raise ValueError(f"mode count must be >= 1, got {m}")
    n = K_ff.shape[0]
    if lu is None:
        try:
            lu = spla.splu(sp.csc_matrix(K_ff))
        except RuntimeError as exc:
            raise SingularSystemError(f"stiffness factorization failed ({exc})") from exc
    A = (-Ksig_ff).tocsc()
    K = sp.csc_matrix(K_ff)
    Minv = spla.LinearOperator((n, n), matvec=lu.solve, dtype=float)
    start = v0[:, 0] if v0 is not None and v0.size else np.ones(n)

    def solve(k: int) -> tuple[np.ndarray, np.ndarray]:
        try:
            return spla.eigsh(A, k=k, M=K, Minv=Minv, which="LA", v0=start,
                              maxiter=max_iter * max(k, 10), tol=0)
        except spla.ArpackNoConvergence as exc:
            raise EigenConvergenceError(
                f"buckling eigensolver did not converge for {k} modes: {exc}") from exc

    k = min(m, n - 1)
    nu, V = solve(k)
    pos = nu > 1e-12 * max(abs(nu.max()), 1.0)
    if pos.sum() < m and k < n - 1:
        # some requested modes were non-positive; ask for a few spares once
        k = min(m + (m - int(pos.sum())) + 4, n - 1)
        nu, V = solve(k)
        pos = nu > 1e-12 * max(abs(nu.max()), 1.0)

    nu_pos, V_pos = nu[pos], V[:, pos]
    order = np.argsort(nu_pos)[::-1][:m]      # descending 1/lam = ascending lam
    lam = 1.0 / nu_pos[order]
    Phi = V_pos[:, order]
    if lam.size == 0:
        raise EigenConvergenceError("no positive buckling load factors found")

    # enforce K-orthonormality exactly (eigsh returns M-orthonormal vectors;
    # tighten against round-off)
    gram = Phi.T @ (K @ Phi)
    L = np.linalg.cholesky(0.5 * (gram + gram.T))
    Phi = scipy.linalg.solve_triangular(L, Phi.T, lower=True).T

    KP = K @ Phi
    res = KP + (Ksig_ff @ Phi) * lam[None, :]
    if np.any(np.linalg.norm(res, axis=0) > tol * np.linalg.norm(KP, axis=0)):
        raise EigenConvergenceError(
            f"buckling eigenpairs exceed residual tolerance {tol}")
    return BucklingResult(load_factors=lam, modes=Phi,
                          incomplete=lam.size < m, iterations=0)


def buckling_sensitivity(mesh: GridMesh, material: Material, x_bar: np.ndarray,
                         u: np.ndarray, result: BucklingResult,
                         system: StaticSystem, *,
                         include_state_term: bool = True) -> tuple[np.ndarray, bool]:
    """Per-mode, per-element derivatives of the buckling load factors.

    Includes the direct stiffness and geometric-stiffness terms plus the
    adjoint term from the dependence of the pre-stress state on the design.
    Returns ``(dlam, repeated_flag)`` where dlam has shape (n_modes, N).
    The repeated flag marks eigenvalues closer than 1e-6 relative, where
    the derivative is not unique.
    """
    edofs = mesh.all_element_dofs()
    k0 = element_stiffness(material.nu, mesh.h, mesh.thickness)
    dE = simp_young_derivative(x_bar, material)
    E = simp_young(x_bar, material)
    ks = element_geometric_stiffness(mesh, u, x_bar, material)
    As, Bs, Cs, Bmats = _geometric_templates(mesh.h)
    D = constitutive_matrix(material.nu)
    DB = np.einsum("ij,gjk->gik", D, Bmats)          # (4, 3, 8)
    w = (mesh.h / 2.0) ** 2 * mesh.thickness
    Ue = u[edofs]

    lam = result.load_factors
    repeated = bool(np.any(np.abs(np.diff(lam)) <= 1e-6 * np.abs(lam[:-1])))

    dlam = np.zeros((result.n_modes, mesh.n_elements))
    for i in range(result.n_modes):
        phi = system.expand(result.modes[:, i])
        Pe = phi[edofs]
        # direct stiffness term: phi^T dK/dxbar_e phi
        t_k = dE * np.einsum("ni,ij,nj->n", Pe, k0, Pe)
        # explicit geometric term: stresses scale with E(xbar_e)
        phiks = np.einsum("ni,nij,nj->n", Pe, ks, Pe)
        t_g = (dE / E) * phiks
        denom = -float(phiks.sum())  # -phi^T Ksig phi, positive for buckling modes
        total = t_k + lam[i] * t_g
        if include_state_term:
            # m-products of phi at each Gauss point give d(phi^T Ksig phi)/d sigma
            ma = np.einsum("ni,gij,nj->ng", Pe, As, Pe)
            mb = np.einsum("ni,gij,nj->ng", Pe, Bs, Pe)
            mc = np.einsum("ni,gij,nj->ng", Pe, Cs, Pe)
            mvec = np.stack([ma, mb, mc], axis=-1)            # (N, 4, 3)
            # q_e = sum_g w * E_e * B_g^T D^T m_g  (phi^T Ksig phi is linear in u)
            qe = w * E[:, None] * np.einsum("gsk,ngs->nk", DB, mvec)
            q = np.zeros(mesh.n_dofs)
            np.add.at(q, edofs.ravel(), qe.ravel())
            wadj = system.expand(system.solve_reduced(q[system.free]))
            t_adj = -dE * np.einsum("ni,ij,nj->n", wadj[edofs], k0, Ue)
            total = total + lam[i] * t_adj
        dlam[i] = total / denom
    return dlam, repeated


def ks_aggregate(values: np.ndarray, rho: float) -> tuple[float, np.ndarray]:
    """Kreisselmeier-Steinhauser smooth maximum and its weights."""
    if rho <= 0.0:
        raise ValueError(f"aggregation parameter must be positive, got {rho}")
    values = np.asarray(values, dtype=float)
    if values.size < 1:
        raise ValueError("need at least one value to aggregate")
    vmax = values.max()
    e = np.exp(rho * (values - vmax))
    s = e.sum()
    ks = float(vmax + np.log(s) / rho)
    return ks, e / s
