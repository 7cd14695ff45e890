"""Design updates (optimality criteria and MMA) and the optimization loop."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import fea
from .continuation import ContinuationState, SchemeConfig, relative_change, should_stop
from .problems import ProblemSpec
from .threefield import DesignField, ThreeFieldMap, simp_young


class BisectionError(RuntimeError):
    """OC multiplier bisection could not meet the volume target."""


class SubproblemError(RuntimeError):
    """The MMA subproblem solver failed to converge."""


@dataclass(frozen=True)
class OCParams:
    move: float = 0.2
    damping: float = 0.5
    volume_tol: float = 1e-6
    multiplier_hi: float = 1e9
    max_bisections: int = 200

    def __post_init__(self):
        if not (0.0 < self.move <= 1.0):
            raise ValueError(f"move limit must be in (0,1], got {self.move}")
        if not (0.0 < self.damping <= 1.0):
            raise ValueError(f"damping must be in (0,1], got {self.damping}")


def oc_update(x: np.ndarray, dfdx: np.ndarray, dvdx: np.ndarray, volfrac: float,
              physical_volume: Callable[[np.ndarray], float],
              params: OCParams = OCParams()) -> np.ndarray:
    """Classical OC fixed point with the multiplier bisected on the
    physical (filtered + projected) volume."""
    lo_b = np.maximum(x - params.move, 0.0)
    hi_b = np.minimum(x + params.move, 1.0)
    num = np.maximum(-dfdx, 1e-30)
    den = np.maximum(dvdx, 1e-30)

    def candidate(mult: float) -> np.ndarray:
        ratio = (num / (mult * den)) ** params.damping
        return np.clip(x * ratio, lo_b, hi_b)

    lo, hi = 0.0, params.multiplier_hi
    if physical_volume(candidate(hi)) > volfrac:
        raise BisectionError(
            f"volume {physical_volume(candidate(hi)):.6f} above target {volfrac} at multiplier {hi}")
    xn = x
    for _ in range(params.max_bisections):
        mid = 0.5 * (lo + hi)
        xn = candidate(mid)
        v = physical_volume(xn)
        if abs(v - volfrac) <= params.volume_tol:
            return xn
        if v > volfrac:
            lo = mid
        else:
            hi = mid
    raise BisectionError(
        f"bisection exhausted: |V - {volfrac}| = {abs(physical_volume(xn) - volfrac):.3e} "
        f"after {params.max_bisections} halvings")


@dataclass(frozen=True)
class MMAParams:
    move: float = 0.05
    asy_init: float = 0.5
    asy_incr: float = 1.2
    asy_decr: float = 0.7
    albefa: float = 0.1
    raa0: float = 1e-5
    epsimin: float = 1e-7
    c_coef: float = 1000.0

    def __post_init__(self):
        if not (0.0 < self.move <= 1.0):
            raise ValueError(f"move limit must be in (0,1], got {self.move}")


class MMA:
    """Stateful method-of-moving-asymptotes update on [0, 1] box variables."""

    def __init__(self, n: int, m: int, params: MMAParams = MMAParams()):
        self.n = n
        self.m = m
        self.params = params
        self.iter = 0
        self.xold1: np.ndarray | None = None
        self.xold2: np.ndarray | None = None
        self.low = np.zeros(n)
        self.upp = np.ones(n)

    def update(self, x: np.ndarray, df0dx: np.ndarray,
               fval: np.ndarray, dfdx: np.ndarray) -> np.ndarray:
        """One MMA iteration: returns the new design within move limits."""
        p = self.params
        self.iter += 1
        xmin, xmax = np.zeros(self.n), np.ones(self.n)
        xrange = xmax - xmin

        if self.iter <= 2:
            low = x - p.asy_init * xrange
            upp = x + p.asy_init * xrange
        else:
            zzz = (x - self.xold1) * (self.xold1 - self.xold2)
            factor = np.ones(self.n)
            factor[zzz > 0] = p.asy_incr
            factor[zzz < 0] = p.asy_decr
            low = x - factor * (self.xold1 - self.low)
            upp = x + factor * (self.upp - self.xold1)
            low = np.clip(low, x - 10.0 * xrange, x - 0.01 * xrange)
            upp = np.clip(upp, x + 0.01 * xrange, x + 10.0 * xrange)
        self.low, self.upp = low, upp

        alfa = np.maximum.reduce([low + p.albefa * (x - low), x - p.move * xrange, xmin])
        beta = np.minimum.reduce([upp - p.albefa * (upp - x), x + p.move * xrange, xmax])

        xmami = np.maximum(xrange, 1e-5)
        ux1, xl1 = upp - x, x - low
        ux2, xl2 = ux1 * ux1, xl1 * xl1

        p0 = np.maximum(df0dx, 0.0)
        q0 = np.maximum(-df0dx, 0.0)
        pq0 = 0.001 * (p0 + q0) + p.raa0 / xmami
        p0 = (p0 + pq0) * ux2
        q0 = (q0 + pq0) * xl2

        P = np.maximum(dfdx, 0.0)
        Q = np.maximum(-dfdx, 0.0)
        PQ = 0.001 * (P + Q) + p.raa0 / xmami[None, :]
        P = (P + PQ) * ux2[None, :]
        Q = (Q + PQ) * xl2[None, :]
        b = P @ (1.0 / ux1) + Q @ (1.0 / xl1) - fval

        xnew = _subsolve(self.m, self.n, p.epsimin, low, upp, alfa, beta,
                         p0, q0, P, Q, b, c_coef=p.c_coef)
        self.xold2 = self.xold1
        self.xold1 = x.copy()
        return xnew


def _subsolve(m, n, epsimin, low, upp, alfa, beta, p0, q0, P, Q, b,
              *, a0=1.0, c_coef=1000.0) -> np.ndarray:
    """Primal-dual Newton interior-point solve of the MMA subproblem."""
    a = np.zeros(m)
    c = np.full(m, c_coef)
    d = np.ones(m)

    x = 0.5 * (alfa + beta)
    y = np.ones(m)
    z = 1.0
    lam = np.ones(m)
    xsi = np.maximum(1.0 / (x - alfa), 1.0)
    eta = np.maximum(1.0 / (beta - x), 1.0)
    mu = np.maximum(np.ones(m), 0.5 * c)
    zet = 1.0
    s = np.ones(m)
    epsi = 1.0

    def residual(x, y, z, lam, xsi, eta, mu, zet, s, epsi):
        ux1, xl1 = upp - x, x - low
        plam = p0 + P.T @ lam
        qlam = q0 + Q.T @ lam
        gvec = P @ (1.0 / ux1) + Q @ (1.0 / xl1)
        dpsidx = plam / ux1**2 - qlam / xl1**2
        rex = dpsidx - xsi + eta
        rey = c + d * y - mu - lam
        rez = a0 - zet - a @ lam
        relam = gvec - a * z - y + s - b
        rexsi = xsi * (x - alfa) - epsi
        reeta = eta * (beta - x) - epsi
        remu = mu * y - epsi
        rezet = zet * z - epsi
        res = lam * s - epsi
        r = np.concatenate([rex, rey, [rez], relam, rexsi, reeta, remu, [rezet], res])
        return r, np.sqrt(r @ r), np.max(np.abs(r))

    while epsi > epsimin:
        _, residunorm, residumax = residual(x, y, z, lam, xsi, eta, mu, zet, s, epsi)
        ittt = 0
        while residumax > 0.9 * epsi and ittt < 200:
            ittt += 1
            ux1, xl1 = upp - x, x - low
            ux2, xl2 = ux1 * ux1, xl1 * xl1
            ux3, xl3 = ux1 * ux2, xl1 * xl2
            plam = p0 + P.T @ lam
            qlam = q0 + Q.T @ lam
            gvec = P @ (1.0 / ux1) + Q @ (1.0 / xl1)
            GG = P / ux2[None, :] - Q / xl2[None, :]

            dpsidx = plam / ux2 - qlam / xl2
            delx = dpsidx - epsi / (x - alfa) + epsi / (beta - x)
            dely = c + d * y - lam - epsi / y
            delz = a0 - a @ lam - epsi / z
            dellam = gvec - a * z - y - b + epsi / lam

            diagx = 2.0 * (plam / ux3 + qlam / xl3) + xsi / (x - alfa) + eta / (beta - x)
            diagy = d + mu / y
            diaglamyi = s / lam + 1.0 / diagy

            blam = dellam + dely / diagy - GG @ (delx / diagx)
            Alam = np.diag(diaglamyi) + (GG / diagx[None, :]) @ GG.T
            AA = np.block([[Alam, a[:, None]], [a[None, :], np.array([[-zet / z]])]])
            bb = np.concatenate([blam, [delz]])
            try:
                solut = np.linalg.solve(AA, bb)
            except np.linalg.LinAlgError as exc:
                raise SubproblemError(f"Newton system singular: {exc}") from exc
            dlam = solut[:m]
            dz = solut[m]
            dx = -delx / diagx - (GG.T @ dlam) / diagx
            dy = -dely / diagy + dlam / diagy
            dxsi = -xsi + epsi / (x - alfa) - (xsi * dx) / (x - alfa)
            deta = -eta + epsi / (beta - x) + (eta * dx) / (beta - x)
            dmu = -mu + epsi / y - (mu * dy) / y
            dzet = -zet + epsi / z - zet * dz / z
            ds = -s + epsi / lam - (s * dlam) / lam

            xx = np.concatenate([y, [z], lam, xsi, eta, mu, [zet], s])
            dxx = np.concatenate([dy, [dz], dlam, dxsi, deta, dmu, [dzet], ds])
            stmxx = np.max(-1.01 * dxx / xx)
            stmalfa = np.max(-1.01 * dx / (x - alfa))
            stmbeta = np.max(1.01 * dx / (beta - x))
            steg = 1.0 / max(stmxx, stmalfa, stmbeta, 1.0)

            old = (x, y, z, lam, xsi, eta, mu, zet, s)
            resinew = 2.0 * residunorm
            for _ in range(50):
                x = old[0] + steg * dx
                y = old[1] + steg * dy
                z = old[2] + steg * dz
                lam = old[3] + steg * dlam
                xsi = old[4] + steg * dxsi
                eta = old[5] + steg * deta
                mu = old[6] + steg * dmu
                zet = old[7] + steg * dzet
                s = old[8] + steg * ds
                _, resinew, residumax = residual(x, y, z, lam, xsi, eta, mu, zet, s, epsi)
                if resinew <= residunorm:
                    break
                steg *= 0.5
            residunorm = resinew
        # a stalled inner loop near an interior optimum leaves a slightly
        # loose residual; accept the point rather than aborting
        epsi *= 0.1
    return x


@dataclass(frozen=True)
class IterationRecord:
    """One history row of an optimization run."""

    iteration: int
    objective: float
    constraints: tuple[float, ...]
    volume: float
    gray: float
    beta: float
    change: float
    dbeta: float


@dataclass
class OptimizationResult:
    design: DesignField
    history: list[IterationRecord]
    termination: str                 # "converged" | "cap"
    diagnostics: dict = field(default_factory=dict)

    @property
    def iterations(self) -> int:
        return len(self.history)

    @property
    def final(self) -> IterationRecord:
        return self.history[-1]


class _Analyzer:
    """Per-problem analysis closure: objective, constraints and their
    physical-field sensitivities at a given design."""

    def __init__(self, spec: ProblemSpec):
        self.spec = spec
        self.mesh = spec.mesh
        self.k0 = fea.element_stiffness(spec.material.nu, spec.mesh.h, spec.mesh.thickness)
        self.f = spec.loads.as_vector(spec.mesh)
        self._modes_warm: np.ndarray | None = None
        self.compliance_bound: float | None = None
        if spec.compliance_factor is not None:
            solid = np.ones(spec.mesh.n_elements)
            young = simp_young(solid, spec.material)
            system = fea.StaticSystem.build(spec.mesh, young, spec.supports, self.k0)
            u = system.solve(self.f)
            self.compliance_bound = spec.compliance_factor * float(self.f @ u)

    def _buckling(self, system: fea.StaticSystem, u: np.ndarray, x_bar: np.ndarray):
        spec = self.spec
        Ksig = fea.stress_stiffness(self.mesh, u, x_bar, spec.material)
        Ksig_ff = system.reduce(Ksig)
        result = fea.buckling_eigs(system.K_ff, Ksig_ff, spec.n_modes,
                                   lu=system.factorize(), v0=self._modes_warm)
        self._modes_warm = result.modes.copy()
        dlam, _ = fea.buckling_sensitivity(self.mesh, spec.material, x_bar, u,
                                           result, system)
        mu = 1.0 / result.load_factors
        ks, wts = fea.ks_aggregate(mu, spec.ks_rho)
        dmu = -dlam / (result.load_factors**2)[:, None]
        dks = wts @ dmu
        return result, ks, dks

    def __call__(self, x_bar: np.ndarray) -> dict:
        spec = self.spec
        young = simp_young(x_bar, spec.material)
        system = fea.StaticSystem.build(self.mesh, young, spec.supports, self.k0)
        u = system.solve(self.f)
        out: dict = {"constraints": [], "dconstraints": []}

        C, dC = fea.compliance_and_sensitivity(u, self.mesh, x_bar, spec.material,
                                               self.k0, self.f)
        out["compliance"] = C
        V = float(np.mean(x_bar))
        out["volume"] = V
        N = self.mesh.n_elements

        if spec.objective == "compliance":
            out["objective"] = C
            out["dobjective"] = dC
        elif spec.objective == "volume":
            out["objective"] = V
            out["dobjective"] = np.full(N, 1.0 / N)

        if spec.objective == "buckling-ks" or spec.lambda_min is not None:
            result, ks, dks = self._buckling(system, u, x_bar)
            out["lambda_1"] = float(result.load_factors[0])
            out["lambda_ks"] = 1.0 / ks
            out["modes_incomplete"] = result.incomplete
            if spec.objective == "buckling-ks":
                out["objective"] = ks
                out["dobjective"] = dks
            if spec.lambda_min is not None:
                out["constraints"].append(spec.lambda_min * ks - 1.0)
                out["dconstraints"].append(spec.lambda_min * dks)

        if spec.optimizer == "mma" and spec.volfrac is not None:
            out["constraints"].append(V / spec.volfrac - 1.0)
            out["dconstraints"].append(np.full(N, 1.0 / (N * spec.volfrac)))

        if self.compliance_bound is not None:
            out["constraints"].append(C / self.compliance_bound - 1.0)
            out["dconstraints"].append(dC / self.compliance_bound)
        return out


def run_optimization(spec: ProblemSpec, scheme: SchemeConfig, *,
                     max_iters: int = 2000, eta: float = 0.5,
                     oc_params: OCParams = OCParams(),
                     mma_params: MMAParams = MMAParams(),
                     gray_tol: float = 0.01, change_tol: float = 1e-5,
                     constraint_tol: float = 1e-4,
                     log: Callable[[IterationRecord], None] | None = None
                     ) -> OptimizationResult:
    """Run one optimization to convergence or the iteration cap.

    Loop per iteration: analyze the current physical field, record, advance
    the projection schedule (the new sharpness applies from the next
    iteration), test the composite stop, then update the design.
    """
    spec.validate()
    three = ThreeFieldMap(spec.mesh, spec.rmin, eta=eta, passive=spec.passive)
    analyze = _Analyzer(spec)
    state = ContinuationState(scheme)
    mma: MMA | None = None

    x = spec.initial_design
    history: list[IterationRecord] = []
    change = 0.0
    f_prev: float | None = None
    obj_scale: float | None = None
    termination = "cap"
    fields = three.fields(x, state.beta)

    for it in range(1, max_iters + 1):
        beta_k = state.beta
        fields = three.fields(x, beta_k)
        ev = analyze(fields.x_bar)
        f_k = ev["objective"]
        gray = three.gray(fields.x_bar)
        volume = ev["volume"]
        cons = tuple(ev["constraints"])

        rel = relative_change(f_k, f_prev)
        dbeta = state.advance(f_k, gray)
        rec = IterationRecord(iteration=it, objective=f_k, constraints=cons,
                              volume=volume, gray=gray, beta=beta_k,
                              change=change, dbeta=dbeta)
        history.append(rec)
        if log is not None:
            log(rec)
        f_prev = f_k

        if spec.optimizer == "oc":
            feasible = abs(volume - spec.volfrac) <= constraint_tol
        else:
            feasible = all(g <= constraint_tol for g in cons)
        if should_stop(gray, rel, feasible, gray_tol=gray_tol, change_tol=change_tol):
            termination = "converged"
            break
        if it == max_iters:
            break

        dfdx = three.chain(ev["dobjective"], fields, beta_k)
        if spec.optimizer == "oc":
            dvdxbar = np.full(spec.mesh.n_elements, 1.0 / spec.mesh.n_elements)
            dvdx = three.chain(dvdxbar, fields, beta_k)

            def physical_volume(xn, _beta=state.beta):
                return three.volume_fraction(three.fields(xn, _beta).x_bar)

            x_new = oc_update(x, dfdx, dvdx, spec.volfrac, physical_volume, oc_params)
        else:
            if obj_scale is None:
                obj_scale = 1.0 / max(abs(f_k), 1e-12)
            if mma is None:
                mma = MMA(spec.mesh.n_elements, len(cons), mma_params)
            dg = np.stack([three.chain(d, fields, beta_k) for d in ev["dconstraints"]])
            x_new = mma.update(x, dfdx * obj_scale, np.asarray(cons), dg)
        change = float(np.max(np.abs(x_new - x)))
        x = x_new

    diagnostics = {"final_beta": state.beta}
    for k in ("lambda_1", "lambda_ks", "compliance"):
        if k in ev:
            diagnostics[k] = ev[k]
    return OptimizationResult(design=fields, history=history,
                              termination=termination, diagnostics=diagnostics)
