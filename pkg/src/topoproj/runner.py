"""Run configuration parsing and on-disk artifacts.

The config is a flat text document of dotted ``key = value`` lines.  Output
artifacts (history CSV, final-density PGM, summary) are byte-exact: plain
LF line endings, locale-independent float formatting.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .continuation import AutomaticScheme, ConstantScheme, SchemeConfig, SteppedScheme
from .optimize import MMAParams, OCParams, OptimizationResult, run_optimization
from .problems import ProblemSpec, cantilever_linear, compressed_column, mbb


class ConfigError(ValueError):
    """Invalid run configuration; the message names the offending key."""


def _parse_bool(key: str, raw: str) -> bool:
    if raw.lower() in ("true", "yes", "on", "1"):
        return True
    if raw.lower() in ("false", "no", "off", "0"):
        return False
    raise ConfigError(f"{key}: expected a boolean, got {raw!r}")


def _parse_float(key: str, raw: str) -> float:
    try:
        v = float(raw)
    except ValueError as exc:
        raise ConfigError(f"{key}: expected a number, got {raw!r}") from exc
    if not math.isfinite(v):
        raise ConfigError(f"{key}: value must be finite")
    return v


def _parse_int(key: str, raw: str) -> int:
    try:
        return int(raw)
    except ValueError as exc:
        raise ConfigError(f"{key}: expected an integer, got {raw!r}") from exc


_SCHEME_NAMES = ("automatic", "stepped-default", "stepped-modified", "constant",
                 "default", "modified")

_KNOWN_KEYS = {
    "problem.name", "problem.nelx", "problem.nely", "problem.volfrac",
    "problem.rmin_in_h", "problem.scale", "problem.variant", "problem.mesh",
    "problem.stability", "problem.load",
    "scheme.type", "scheme.beta", "schemes",
    "continuation.gamma", "continuation.cap_fraction", "continuation.epsilon",
    "continuation.beta_max",
    "projection.eta",
    "optimizer.move",
    "run.max_iters",
    "output.pgm", "output.csv", "output.summary",
}


@dataclass
class RunConfig:
    """Validated run settings with the standard defaults pre-filled."""

    problem_name: str = "mbb"
    problem_opts: dict = field(default_factory=dict)
    scheme_type: str = "automatic"
    scheme_beta: float = 1.0
    comparison_schemes: list[str] = field(default_factory=list)
    gamma: float = 1e-4
    cap_fraction: float = 0.2
    epsilon: float = 0.01
    beta_max: float = 512.0
    eta: float = 0.5
    optimizer_move: float | None = None
    max_iters: int = 2000
    emit_pgm: bool = True
    emit_csv: bool = True
    emit_summary: bool = True

    def build_problem(self) -> ProblemSpec:
        o = self.problem_opts
        if self.problem_name == "mbb":
            return mbb(nelx=o.get("nelx", 60), nely=o.get("nely", 20),
                       volfrac=o.get("volfrac", 0.5),
                       rmin_in_h=o.get("rmin_in_h", 2.4))
        if self.problem_name == "compressed-column":
            return compressed_column(scale=o.get("scale", 4),
                                     rmin_in_h=o.get("rmin_in_h", 4.0),
                                     variant=o.get("variant", "max-buckling"))
        if self.problem_name == "cantilever":
            return cantilever_linear(mesh_name=o.get("mesh", "80x20"),
                                     stability=o.get("stability", False),
                                     load=o.get("load", 2e5))
        raise ConfigError(f"problem.name: unknown problem {self.problem_name!r}")

    def build_scheme(self, name: str | None = None) -> SchemeConfig:
        name = name or self.scheme_type
        if name == "automatic":
            return AutomaticScheme(gamma=self.gamma, cap_fraction=self.cap_fraction,
                                   epsilon=self.epsilon, beta_max=self.beta_max)
        if name in ("stepped-default", "default"):
            return SteppedScheme.default()
        if name in ("stepped-modified", "modified"):
            return SteppedScheme.modified()
        if name == "constant":
            return ConstantScheme(beta=self.scheme_beta)
        raise ConfigError(f"scheme.type: unknown scheme {name!r}")


def parse_config(text: str) -> RunConfig:
    """Parse and validate a flat dotted-key config document."""
    cfg = RunConfig()
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in _KNOWN_KEYS:
            raise ConfigError(f"unknown key {key!r}")

        if key == "problem.name":
            if raw not in ("mbb", "compressed-column", "cantilever"):
                raise ConfigError(f"problem.name: unknown problem {raw!r}")
            cfg.problem_name = raw
        elif key in ("problem.nelx", "problem.nely", "problem.scale"):
            v = _parse_int(key, raw)
            if v < 1:
                raise ConfigError(f"{key}: must be >= 1")
            cfg.problem_opts[key.split(".")[1]] = v
        elif key == "problem.volfrac":
            v = _parse_float(key, raw)
            if not (0.0 < v < 1.0):
                raise ConfigError(f"{key}: must be in (0, 1)")
            cfg.problem_opts["volfrac"] = v
        elif key in ("problem.rmin_in_h", "problem.load"):
            v = _parse_float(key, raw)
            if v <= 0.0:
                raise ConfigError(f"{key}: must be positive")
            cfg.problem_opts[key.split(".")[1]] = v
        elif key == "problem.variant":
            cfg.problem_opts["variant"] = raw
        elif key == "problem.mesh":
            cfg.problem_opts["mesh"] = raw
        elif key == "problem.stability":
            cfg.problem_opts["stability"] = _parse_bool(key, raw)
        elif key == "scheme.type":
            if raw not in _SCHEME_NAMES:
                raise ConfigError(f"scheme.type: unknown scheme {raw!r}")
            cfg.scheme_type = raw
        elif key == "scheme.beta":
            v = _parse_float(key, raw)
            if v < 0.0:
                raise ConfigError(f"{key}: must be >= 0")
            cfg.scheme_beta = v
        elif key == "schemes":
            raw = raw.strip()
            if not (raw.startswith("[") and raw.endswith("]")):
                raise ConfigError("schemes: expected a bracketed list")
            names = [s.strip() for s in raw[1:-1].split(",") if s.strip()]
            if len(names) < 2:
                raise ConfigError("schemes: need at least two schemes to compare")
            for n in names:
                if n not in _SCHEME_NAMES:
                    raise ConfigError(f"schemes: unknown scheme {n!r}")
            cfg.comparison_schemes = names
        elif key in ("continuation.gamma", "continuation.cap_fraction",
                     "continuation.epsilon", "continuation.beta_max"):
            v = _parse_float(key, raw)
            if v <= 0.0:
                raise ConfigError(f"{key}: must be positive")
            setattr(cfg, key.split(".")[1], v)
        elif key == "projection.eta":
            v = _parse_float(key, raw)
            if not (0.0 < v < 1.0):
                raise ConfigError(f"{key}: must be in (0, 1)")
            cfg.eta = v
        elif key == "optimizer.move":
            v = _parse_float(key, raw)
            if not (0.0 < v <= 1.0):
                raise ConfigError(f"{key}: must be in (0, 1]")
            cfg.optimizer_move = v
        elif key == "run.max_iters":
            v = _parse_int(key, raw)
            if v < 1:
                raise ConfigError(f"{key}: must be >= 1")
            cfg.max_iters = v
        elif key.startswith("output."):
            setattr(cfg, "emit_" + key.split(".")[1], _parse_bool(key, raw))
    return cfg


def _fmt(v: float) -> str:
    return repr(float(v))


def write_history_csv(path: Path, result: OptimizationResult) -> None:
    n_cons = len(result.history[0].constraints) if result.history else 0
    header = "iter,objective,volume,gray,beta,change" + "".join(
        f",constraint_{j + 1}" for j in range(n_cons))
    lines = [header]
    for r in result.history:
        row = [str(r.iteration), _fmt(r.objective), _fmt(r.volume), _fmt(r.gray),
               _fmt(r.beta), _fmt(r.change)] + [_fmt(g) for g in r.constraints]
        lines.append(",".join(row))
    path.write_text("\n".join(lines) + "\n", newline="\n")


def write_density_pgm(path: Path, x_bar: np.ndarray, nelx: int, nely: int) -> None:
    """Plain-text PGM, solid (x_bar = 1) printed black, rows top to bottom."""
    grid = np.asarray(x_bar).reshape(nelx, nely).T
    pix = np.rint(255.0 * (1.0 - grid)).astype(int)
    lines = [f"P2", f"{nelx} {nely}", "255"]
    for row in pix:
        lines.append(" ".join(str(int(v)) for v in row))
    path.write_text("\n".join(lines) + "\n", newline="\n")


def _sci3(v: float) -> str:
    return f"{v:.2e}"


def summary_lines(problem: ProblemSpec, scheme_name: str,
                  result: OptimizationResult) -> list[str]:
    final = result.final
    lines = [
        f"problem = {problem.name}",
        f"scheme = {scheme_name}",
        f"termination = {result.termination}",
        f"iterations = {result.iterations}",
        f"objective = {_fmt(final.objective)}",
        f"final_beta = {_fmt(final.beta)}",
        f"final_gray = {_sci3(final.gray)}",
        f"volume = {_fmt(final.volume)}",
    ]
    for k in ("lambda_1", "lambda_ks", "compliance"):
        if k in result.diagnostics:
            lines.append(f"{k} = {_fmt(result.diagnostics[k])}")
    return lines


@dataclass
class RunSummary:
    problem_name: str
    scheme_name: str
    result: OptimizationResult


def run(config: RunConfig, out_dir: Path, scheme_name: str | None = None) -> RunSummary:
    """Execute one configured run and write its artifacts."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    problem = config.build_problem()
    scheme = config.build_scheme(scheme_name)
    kwargs = {}
    if config.optimizer_move is not None:
        if problem.optimizer == "oc":
            kwargs["oc_params"] = OCParams(move=config.optimizer_move)
        else:
            kwargs["mma_params"] = MMAParams(move=config.optimizer_move)
    result = run_optimization(problem, scheme, max_iters=config.max_iters,
                              eta=config.eta, **kwargs)
    label = scheme_name or config.scheme_type
    if config.emit_csv:
        write_history_csv(out_dir / "history.csv", result)
    if config.emit_pgm:
        write_density_pgm(out_dir / "density_final.pgm", result.design.x_bar,
                          problem.mesh.nelx, problem.mesh.nely)
    if config.emit_summary:
        (out_dir / "summary.txt").write_text(
            "\n".join(summary_lines(problem, label, result)) + "\n", newline="\n")
    return RunSummary(problem_name=problem.name, scheme_name=label, result=result)


def compare_report(summaries: list[RunSummary]) -> str:
    """Aligned comparison table of multiple runs of the same problem."""
    if len(summaries) < 2:
        raise ValueError("need at least two runs to compare")
    names = {s.problem_name for s in summaries}
    if len(names) != 1:
        raise ValueError(f"cannot compare different problems: {sorted(names)}")
    rows = [("scheme", "objective", "iterations", "beta", "gray value")]
    for s in summaries:
        final = s.result.final
        rows.append((s.scheme_name, _fmt(final.objective), str(s.result.iterations),
                     _fmt(final.beta), _sci3(final.gray)))
    widths = [max(len(r[i]) for r in rows) for i in range(5)]
    lines = ["  ".join(cell.ljust(w) for cell, w in zip(r, widths)).rstrip()
             for r in rows]
    return "\n".join(lines) + "\n"
