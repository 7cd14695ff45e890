"""End-to-end acceptance checks for the whole toolkit.

Each criterion prints a PASS line when its assertions hold so a verbose run
reads as a checklist.  The expensive optimization runs are module-scoped
fixtures shared between criteria.
"""

import time

import numpy as np
import pytest

from topoproj import fea
from topoproj.cli import main
from topoproj.continuation import AutomaticScheme, SteppedScheme, delta_beta
from topoproj.mesh import GridMesh, LoadSet, SupportSet
from topoproj.optimize import OCParams, run_optimization
from topoproj.problems import compressed_column, mbb
from topoproj.runner import parse_config, run
from topoproj.threefield import (Material, ThreeFieldMap, gray_level, project,
                                 simp_young)

DESK_MBB_CFG = ("problem.name = mbb\n"
                "problem.nelx = 60\n"
                "problem.nely = 20\n"
                "problem.volfrac = 0.5\n"
                "problem.rmin_in_h = 4.0\n"
                "scheme.type = automatic\n"
                "optimizer.move = 0.05\n"
                "run.max_iters = 2000\n")


def _report(criterion, detail=""):
    print(f"criterion {criterion}: PASS {detail}".rstrip())


@pytest.fixture(scope="module")
def mbb_runs():
    """Criterion 4 runs: automatic scheme to convergence, default stepped
    scheme capped at 800 iterations, same desk-scale MBB problem."""
    spec = mbb(nelx=60, nely=20, volfrac=0.5, rmin_in_h=4.0)
    params = OCParams(move=0.05)
    t0 = time.monotonic()
    auto = run_optimization(spec, AutomaticScheme(), max_iters=2000,
                            oc_params=params)
    stepped = run_optimization(spec, SteppedScheme.default(), max_iters=800,
                               oc_params=params)
    return auto, stepped, time.monotonic() - t0


@pytest.fixture(scope="module")
def column_run():
    """Criterion 5 run: desk-scale column, stability-maximization variant."""
    spec = compressed_column(scale=4, rmin_in_h=4.0, variant="max-buckling")
    t0 = time.monotonic()
    result = run_optimization(spec, AutomaticScheme(), max_iters=2000,
                              oc_params=OCParams(move=0.05))
    return spec, result, time.monotonic() - t0


class TestCriterion1Formulas:
    def test_projection_identities(self):
        for beta in (0.0, 1.0, 8.0, 64.0):
            for eta in (0.3, 0.5, 0.7):
                assert abs(project(np.array([0.0]), beta, eta)[0]) <= 1e-12
                assert abs(project(np.array([1.0]), beta, eta)[0] - 1.0) <= 1e-12
            assert abs(project(np.array([0.5]), beta, 0.5)[0] - 0.5) <= 1e-12

    def test_gray_level_values(self):
        for value, expected in ((0.0, 0.0), (0.5, 1.0), (0.25, 0.75)):
            assert gray_level(np.full(64, value)) == pytest.approx(expected, abs=1e-12)

    def test_sharpness_increase_cases(self):
        assert delta_beta(0.99, 1.0, 1e-4) == pytest.approx(9.95e-3, rel=1e-12)
        assert delta_beta(1.01, 1.0, 1e-4) == 0.0
        assert delta_beta(5.0, 4.0, 1e-4) == 0.0
        _report(1, "(formula unit suite)")


class TestCriterion2Gradients:
    def full_chain(self, spec, beta):
        """Objective and gradient maps through filter, projection, material
        interpolation and the linear solve."""
        three = ThreeFieldMap(spec.mesh, spec.rmin, passive=spec.passive)
        k0 = fea.element_stiffness(spec.material.nu, spec.mesh.h,
                                   spec.mesh.thickness)
        f = spec.loads.as_vector(spec.mesh)

        def compliance(x):
            x_bar = three.fields(x, beta).x_bar
            u = fea.assemble_and_solve(spec.mesh, simp_young(x_bar, spec.material),
                                       spec.loads, spec.supports, k0)
            return float(f @ u)

        def compliance_grad(x):
            fields = three.fields(x, beta)
            system = fea.StaticSystem.build(spec.mesh,
                                            simp_young(fields.x_bar, spec.material),
                                            spec.supports, k0)
            u = system.solve(f)
            _, dC = fea.compliance_and_sensitivity(u, spec.mesh, fields.x_bar,
                                                   spec.material, k0, f)
            return three.chain(dC, fields, beta)

        def volume(x):
            return float(np.mean(three.fields(x, beta).x_bar))

        def volume_grad(x):
            fields = three.fields(x, beta)
            n = spec.mesh.n_elements
            return three.chain(np.full(n, 1.0 / n), fields, beta)

        return compliance, compliance_grad, volume, volume_grad

    def test_compliance_and_volume_full_chain(self):
        t0 = time.monotonic()
        spec = mbb(nelx=8, nely=4, volfrac=0.5, rmin_in_h=1.5)
        rng = np.random.default_rng(21)
        x = np.clip(0.5 + 0.25 * rng.standard_normal(spec.mesh.n_elements),
                    0.05, 0.95)
        step = 1e-6
        for beta in (1.0, 2.0, 8.0):
            fc, gc, fv, gv = self.full_chain(spec, beta)
            for func, grad in ((fc, gc), (fv, gv)):
                g = grad(x)
                scale = np.abs(g).max()
                for e in range(spec.mesh.n_elements):
                    xp, xm = x.copy(), x.copy()
                    xp[e] += step
                    xm[e] -= step
                    fd = (func(xp) - func(xm)) / (2 * step)
                    assert abs(g[e] - fd) <= 1e-4 * max(abs(fd), 1e-3 * scale), \
                        f"beta={beta} element {e}: analytic {g[e]} vs fd {fd}"
        elapsed = time.monotonic() - t0
        assert elapsed < 30.0
        _report(2, f"(compliance/volume chain, {elapsed:.1f}s)")

    def test_buckling_factor_sensitivity(self):
        t0 = time.monotonic()
        mesh = GridMesh(6, 18, h=1.0)
        material = Material(E0=1.0, Emin=1e-6, nu=0.3)
        fixed = []
        for ix in range(mesh.nelx + 1):
            n = mesh.node_id(ix, mesh.nely)
            fixed += [2 * n, 2 * n + 1]
        supports = SupportSet.from_iterable(fixed, mesh)
        forces = {}
        for ix in range(mesh.nelx + 1):
            w = 0.5 if ix in (0, mesh.nelx) else 1.0
            dof = 2 * mesh.node_id(ix, 0) + 1
            forces[dof] = forces.get(dof, 0.0) - 1e-3 * w / mesh.nelx
        loads = LoadSet(forces=forces)
        rng = np.random.default_rng(22)
        x = np.clip(0.6 + 0.25 * rng.standard_normal(mesh.n_elements), 0.2, 1.0)

        def lam1(xb):
            system = fea.StaticSystem.build(mesh, simp_young(xb, material), supports)
            u = system.solve(loads.as_vector(mesh))
            Ksig_ff = system.reduce(fea.stress_stiffness(mesh, u, xb, material))
            result = fea.buckling_eigs(system.K_ff, Ksig_ff, 3, lu=system.factorize())
            return result, u, system

        result, u, system = lam1(x)
        dlam, _ = fea.buckling_sensitivity(mesh, material, x, u, result, system)
        step = 1e-6
        for e in (0, 13, 31, 59, 88, 107):
            xp, xm = x.copy(), x.copy()
            xp[e] += step
            xm[e] -= step
            fd = (lam1(xp)[0].load_factors[0] - lam1(xm)[0].load_factors[0]) / (2 * step)
            assert abs(dlam[0, e] - fd) <= 1e-3 * max(abs(fd), 1e-8), \
                f"element {e}: analytic {dlam[0, e]} vs fd {fd}"
        elapsed = time.monotonic() - t0
        assert elapsed < 30.0
        _report(2, f"(buckling sensitivity, {elapsed:.1f}s)")


class TestCriterion3EulerColumn:
    def test_critical_load_within_5_percent(self):
        t0 = time.monotonic()
        nelx, nely = 6, 60
        mesh = GridMesh(nelx, nely, h=1.0)
        material = Material(E0=1.0, Emin=1e-6, nu=0.3)
        fixed = []
        for ix in range(nelx + 1):
            n = mesh.node_id(ix, nely)
            fixed += [2 * n, 2 * n + 1]
        supports = SupportSet.from_iterable(fixed, mesh)
        P = 1e-3
        forces = {}
        for ix in range(nelx + 1):
            w = 0.5 if ix in (0, nelx) else 1.0
            dof = 2 * mesh.node_id(ix, 0) + 1
            forces[dof] = forces.get(dof, 0.0) - P * w / nelx
        loads = LoadSet(forces=forces)

        x = np.ones(mesh.n_elements)
        system = fea.StaticSystem.build(mesh, simp_young(x, material), supports)
        u = system.solve(loads.as_vector(mesh))
        Ksig_ff = system.reduce(fea.stress_stiffness(mesh, u, x, material))
        result = fea.buckling_eigs(system.K_ff, Ksig_ff, 1, lu=system.factorize())

        # closed-form oracle: fixed-free Euler load with rectangular section
        E, L = material.E0, nely * mesh.h
        I = (nelx * mesh.h) ** 3 * mesh.thickness / 12.0
        euler = np.pi**2 * E * I / (2.0 * L) ** 2
        computed = result.load_factors[0] * P
        rel = abs(computed - euler) / euler
        assert rel <= 0.05, f"critical load {computed} vs Euler {euler} ({rel:.2%})"
        elapsed = time.monotonic() - t0
        assert elapsed < 10.0
        _report(3, f"(Euler deviation {rel:.2%}, {elapsed:.1f}s)")


class TestCriterion4ContinuationBehavior:
    def test_automatic_reaches_binary(self, mbb_runs):
        auto, stepped, _ = mbb_runs
        assert auto.termination == "converged"
        assert auto.final.gray <= 0.01
        assert auto.final.beta > 25.0 or auto.iterations < stepped.iterations
        _report(4, f"(a: automatic converged, {auto.iterations} iterations, "
                   f"beta {auto.final.beta:.1f}, gray {auto.final.gray:.2e})")

    def test_capped_stepped_scheme_stays_gray(self, mbb_runs):
        _, stepped, _ = mbb_runs
        assert stepped.iterations == 800
        assert stepped.termination == "cap"
        assert stepped.final.gray > 0.01
        assert max(r.beta for r in stepped.history) <= 25.0
        _report(4, f"(b: capped stepped scheme gray {stepped.final.gray:.2e})")

    def test_sharpness_never_decreases(self, mbb_runs):
        auto, stepped, _ = mbb_runs
        for res in (auto, stepped):
            betas = [r.beta for r in res.history]
            assert all(b2 >= b1 for b1, b2 in zip(betas, betas[1:]))
        _report(4, "(c: beta non-decreasing)")

    def test_no_increase_on_objective_rise(self, mbb_runs):
        auto, _, _ = mbb_runs
        for prev, cur in zip(auto.history, auto.history[1:]):
            if cur.objective > prev.objective:
                assert cur.dbeta == 0.0
        _report(4, "(d: no sharpness increase on objective rises)")

    def test_runtime_budget(self, mbb_runs):
        _, _, elapsed = mbb_runs
        assert elapsed < 300.0
        _report(4, f"(runtime {elapsed:.0f}s)")


class TestCriterion5ColumnBuckling:
    def test_converges_within_budget(self, column_run):
        spec, result, elapsed = column_run
        assert result.termination == "converged"
        assert result.iterations <= 2000
        assert result.final.gray <= 0.01
        assert abs(result.final.volume - spec.volfrac) <= 1e-4
        assert elapsed < 900.0
        _report(5, f"(converged in {result.iterations} iterations, "
                   f"{elapsed:.0f}s, gray {result.final.gray:.2e})")

    def test_aggregate_consistent_with_fundamental_factor(self, column_run):
        _, result, _ = column_run
        lam1 = result.diagnostics["lambda_1"]
        lam_ks = result.diagnostics["lambda_ks"]
        assert lam_ks <= lam1 + 1e-9          # smooth bound from below
        assert lam_ks >= 0.95 * lam1
        _report(5, f"(lambda_ks {lam_ks:.3f} vs lambda_1 {lam1:.3f})")


class TestCriterion6Determinism:
    def test_artifacts_byte_identical(self, tmp_path):
        cfg = parse_config(DESK_MBB_CFG)
        run(cfg, tmp_path / "a")
        run(cfg, tmp_path / "b")
        for name in ("history.csv", "density_final.pgm"):
            ba = (tmp_path / "a" / name).read_bytes()
            bb = (tmp_path / "b" / name).read_bytes()
            assert ba == bb, f"{name} differs between identical runs"
        _report(6, "(byte-identical artifacts)")


class TestCriterion7Headless:
    def test_cli_writes_only_inside_out_dir(self, tmp_path, monkeypatch):
        monkeypatch.chdir(tmp_path)
        cfg = tmp_path / "run.cfg"
        cfg.write_text("problem.name = mbb\nproblem.nelx = 24\n"
                       "problem.nely = 8\nproblem.rmin_in_h = 1.5\n"
                       "run.max_iters = 3\n")
        out = tmp_path / "artifacts"
        code = main(["run", "--config", str(cfg), "--out", str(out)])
        assert code == 2
        created = {p.name for p in tmp_path.iterdir()}
        assert created == {"run.cfg", "artifacts"}

    def test_exit_codes(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("problem.name = mbb\nproblem.nelx = 24\n"
                       "problem.nely = 8\nproblem.rmin_in_h = 1.5\n"
                       "optimizer.move = 0.05\nrun.max_iters = 1500\n")
        assert main(["run", "--config", str(cfg),
                     "--out", str(tmp_path / "ok")]) == 0
        assert main(["run", "--config", str(cfg), "--max-iters", "2",
                     "--out", str(tmp_path / "capped")]) == 2
        bad = tmp_path / "bad.cfg"
        bad.write_text("continuation.gamma = -1\n")
        assert main(["run", "--config", str(bad),
                     "--out", str(tmp_path / "err")]) == 1
        _report(7, "(exit codes 0/2/1)")
