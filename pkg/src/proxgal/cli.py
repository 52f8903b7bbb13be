"""Command line front-end: configuration, studies, verification and artifacts.

Subcommands
-----------
``solve``             one solve on the finest configured level
``study``             error/EOC table over the configured levels
``verify-operators``  entropy calculus and operator checks (alias ``verify``)
``mesh-info``         mesh statistics and admissibility checks

Exit codes: 0 success, 2 configuration error, 3 solver failure,
4 verification failure.

Configuration is a TOML file with the sections ``[problem]``,
``[discretization]``, ``[solver]`` (``[solver.newton]``), ``[study]``,
``[verify]`` and ``[outputs]``; unknown keys are rejected.  Data functions
are numbers, preset names, or tables ``{poly = [[c, i, j], ...]}`` (sum of
``c x^i y^j``) and ``{trig = [[c, k, l], ...]}`` (sum of
``c sin(k pi x) sin(l pi y)``).
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import io
import json
import logging
import math
import os
import sys
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .entropy import FermiDirac, Hellinger, Shannon, SignoriniLog
from .mesh import (
    check_local_symmetry,
    check_signorini_facets,
    retag,
    shape_regularity,
    unit_interval_mesh,
    unit_square_mesh,
    write_mesh,
)
from .operators import OperatorToolbox, fortin_residual
from .pg import NewtonConfig, NewtonError, PGConfig, energy, pg_solve
from .problems import (
    StudyReport,
    analytic_obstacle_1d,
    build_obstacle,
    build_signorini,
    dual_norm_error,
    eoc,
    error_norms,
    fine_error,
    observable_error,
    plane_strain_lame,
    radial_obstacle_2d,
)
from .quadrature import composite_points, volume_points
from .spaces import FeFunction, build_space, write_function

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

log = logging.getLogger("proxgal")

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_VERIFY = 0, 2, 3, 4
BENCHMARKS = ("none", "analytic_1d", "radial_2d")
SIDES = {
    "bottom": lambda x: x[1] < 1e-12,
    "top": lambda x: x[1] > 1 - 1e-12,
    "left": lambda x: x[0] < 1e-12,
    "right": lambda x: x[0] > 1 - 1e-12,
}


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending key."""


# -- configuration ---------------------------------------------------------------


@dataclass
class ProblemConfig:
    kind: str = "obstacle"  # obstacle | signorini
    benchmark: str = "none"  # none | analytic_1d | radial_2d
    dim: int = 2
    load: object = 0.0
    obstacle: object = -1.0
    gap: object = 0.05
    young: float = 1.0
    poisson: float = 0.3
    contact_side: str = "bottom"
    params: dict = field(default_factory=dict)  # benchmark parameter overrides


@dataclass
class DiscretizationConfig:
    pair: str = "bubble_p0"  # bubble_p0 | p1_p1 (obstacle)
    mesh: str = "crisscross"  # crisscross | diagonal (2D)
    levels: list = field(default_factory=lambda: [8])  # cells per direction
    quadrature_degree: int | None = None


@dataclass
class StudyConfig:
    decay_iterations: int = 0  # 0 disables the constant-alpha decay series
    decay_alpha: float = 1.0
    surrogate_extra: int = 200
    reference_levels_up: int = 2  # self-convergence reference (no analytic solution)


@dataclass
class VerifyConfig:
    samples: int = 100
    levels: list = field(default_factory=lambda: [4, 8, 16, 32])
    fd_tol: float = 1e-6


@dataclass
class OutputConfig:
    directory: str = "proxgal-out"
    formats: list = field(default_factory=lambda: ["csv", "json"])


@dataclass
class RunConfig:
    problem: ProblemConfig = field(default_factory=ProblemConfig)
    discretization: DiscretizationConfig = field(default_factory=DiscretizationConfig)
    solver: PGConfig = field(default_factory=PGConfig)
    study: StudyConfig = field(default_factory=StudyConfig)
    verify: VerifyConfig = field(default_factory=VerifyConfig)
    outputs: OutputConfig = field(default_factory=OutputConfig)
    seed: int = 0


def _build(cls, data: dict, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where or 'config'}: expected a table")
    names = {f.name: f for f in dataclasses.fields(cls)}
    kw = {}
    for key, val in data.items():
        path = f"{where}.{key}" if where else key
        if key not in names:
            raise ConfigError(f"unknown key {path!r}")
        if cls is PGConfig and key == "newton":
            kw[key] = _build(NewtonConfig, val, path)
        else:
            kw[key] = val
    try:
        return cls(**kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where or 'config'}: {exc}") from exc


SECTIONS = {
    "problem": ProblemConfig,
    "discretization": DiscretizationConfig,
    "solver": PGConfig,
    "study": StudyConfig,
    "verify": VerifyConfig,
    "outputs": OutputConfig,
}


def parse_config(data: dict) -> RunConfig:
    """Validate a parsed TOML table into a :class:`RunConfig`."""
    kw = {}
    for key, val in data.items():
        if key == "seed":
            kw["seed"] = int(val)
        elif key in SECTIONS:
            kw[key] = _build(SECTIONS[key], val, key)
        else:
            raise ConfigError(f"unknown key {key!r}")
    cfg = RunConfig(**kw)
    _validate(cfg)
    return cfg


def _validate(cfg: RunConfig):
    p, d = cfg.problem, cfg.discretization
    if p.kind not in ("obstacle", "signorini"):
        raise ConfigError(f"problem.kind: unknown kind {p.kind!r}")
    if p.benchmark not in BENCHMARKS:
        raise ConfigError(f"problem.benchmark: unknown benchmark {p.benchmark!r}")
    if p.dim not in (1, 2):
        raise ConfigError("problem.dim: must be 1 or 2")
    if p.benchmark == "analytic_1d" and p.dim != 1:
        raise ConfigError("problem.dim: the analytic_1d benchmark is one-dimensional")
    if p.benchmark == "radial_2d" and p.dim != 2:
        raise ConfigError("problem.dim: the radial_2d benchmark is two-dimensional")
    if p.kind == "signorini" and (p.dim != 2 or p.benchmark != "none"):
        raise ConfigError("problem.kind: signorini runs are 2D without analytic benchmark")
    if p.contact_side not in SIDES:
        raise ConfigError(f"problem.contact_side: unknown side {p.contact_side!r}")
    if d.pair not in ("bubble_p0", "p1_p1"):
        raise ConfigError(f"discretization.pair: unknown pair {d.pair!r}")
    if d.mesh not in ("crisscross", "diagonal"):
        raise ConfigError(f"discretization.mesh: unknown pattern {d.mesh!r}")
    if not d.levels or any(int(n) != n or n < 1 for n in d.levels):
        raise ConfigError("discretization.levels: need positive integers")
    for key in ("load", "obstacle", "gap"):
        try:
            make_data(getattr(p, key), p.dim, p.params)
        except ConfigError as exc:
            raise ConfigError(f"problem.{key}: {exc}") from exc


def load_config(path) -> RunConfig:
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    return parse_config(data)


def config_dict(cfg: RunConfig) -> dict:
    return dataclasses.asdict(cfg)


def parse_levels(text: str) -> list:
    """``a..b`` -> ``[2**a, ..., 2**b]``; a comma list is taken literally."""
    if ".." in text:
        a, b = (int(t) for t in text.split(".."))
        if b < a:
            raise ConfigError("--levels: empty range")
        return [2**k for k in range(a, b + 1)]
    return [int(t) for t in text.split(",")]


# -- data functions -----------------------------------------------------------------


def _poly(terms, dim):
    terms = [tuple(t) for t in terms]
    if any(len(t) != dim + 1 for t in terms):
        raise ConfigError(f"poly terms need {dim + 1} entries [c, exponents...]")

    def f(x):
        out = np.zeros(len(x))
        for c, *e in terms:
            out += c * np.prod([x[:, i] ** e[i] for i in range(dim)], axis=0)
        return out

    return f


def _trig(terms, dim):
    terms = [tuple(t) for t in terms]
    if any(len(t) != dim + 1 for t in terms):
        raise ConfigError(f"trig terms need {dim + 1} entries [c, wavenumbers...]")

    def f(x):
        out = np.zeros(len(x))
        for c, *k in terms:
            out += c * np.prod([np.sin(k[i] * math.pi * x[:, i]) for i in range(dim)], axis=0)
        return out

    return f


def make_data(spec, dim: int, params: dict | None = None):
    """Turn a data spec into a float, a callable, or a tuple of those (vectors)."""
    params = params or {}
    if isinstance(spec, bool):
        raise ConfigError("booleans are not data")
    if isinstance(spec, (int, float)):
        return float(spec)
    if isinstance(spec, list):
        return tuple(make_data(s, dim, params) for s in spec)
    if isinstance(spec, str):
        spec = {"preset": spec}
    if not isinstance(spec, dict) or len(spec) != 1:
        raise ConfigError("data must be a number, a preset name, or one of {preset, poly, trig}")
    (kind, val), = spec.items()
    if kind == "preset":
        if val == "zero":
            return 0.0
        if val == "radial_load":
            return radial_obstacle_2d(**params).params["load"]
        raise ConfigError(f"unknown preset {val!r}")
    if kind == "poly":
        return _poly(val, dim)
    if kind == "trig":
        return _trig(val, dim)
    raise ConfigError(f"unknown data kind {kind!r}")


def _vector(data):
    """Combine a tuple of scalar data into one vector datum."""
    if not isinstance(data, tuple):
        return data
    if not any(callable(d) for d in data):
        return np.asarray(data, dtype=float)
    return lambda x: np.column_stack([d(x) if callable(d) else np.full(len(x), d) for d in data])


# -- level runs --------------------------------------------------------------------------


def reference_for(cfg: RunConfig):
    b = cfg.problem.benchmark
    if b == "analytic_1d":
        return analytic_obstacle_1d(**cfg.problem.params)
    if b == "radial_2d":
        return radial_obstacle_2d(**cfg.problem.params)
    return None


def make_mesh(cfg: RunConfig, n: int):
    p = cfg.problem
    if p.dim == 1:
        return unit_interval_mesh(n)
    m = unit_square_mesh(n, cfg.discretization.mesh)
    if p.kind == "signorini":
        m = retag(m, {"contact": lambda x: SIDES[p.contact_side](x)})
    return m


def build_problem(cfg: RunConfig, n: int, ref=None):
    """Problem on level ``n`` (and the analytic reference, if any)."""
    p, d = cfg.problem, cfg.discretization
    mesh = make_mesh(cfg, n)
    degree = d.quadrature_degree or cfg.solver.quadrature_degree
    if p.kind == "signorini":
        f = _vector(make_data(p.load, 2))
        g = make_data(p.gap, 2)
        return build_signorini(mesh, plane_strain_lame(p.young, p.poisson), f, g, degree=degree)
    if ref is not None:
        f, phi = ref.params.get("load", ref.params.get("f0")), ref.params["phi0"]
        lp = composite_points(mesh, 8, ref.cells_cut(mesh))
        return build_obstacle(mesh, f, phi, d.pair, degree=degree, load_points=lp)
    f, phi = make_data(p.load, p.dim, p.params), make_data(p.obstacle, p.dim, p.params)
    return build_obstacle(mesh, f, phi, d.pair, degree=degree)


def h1_norm(problem, u: FeFunction) -> float:
    c = u.coefficients
    return math.sqrt(max(c @ (problem.H1 @ c) + c @ (problem.M_V @ c), 0.0))


def solve_level(cfg: RunConfig, n: int, ref=None, config: PGConfig | None = None):
    """Solve on level ``n``; return ``(problem, trajectory, row)``.

    The row holds iteration counts, feasibility data, solution norms and,
    with an analytic reference, the error norms.
    """
    ref = reference_for(cfg) if ref is None else ref
    problem = build_problem(cfg, n, ref)
    tr = pg_solve(problem, config or cfg.solver)
    s = tr.final
    row = {
        "n": int(n),
        "h": 1.0 / n,
        "n_dofs": int(problem.V.n_dofs + problem.W.n_dofs),
        "iterations": int(tr.iterations),
        "newton_total": int(sum(st.newton_iters for st in tr.states[1:])),
        "converged": tr.reason == "converged",
        "violations": tr.dissipation_violations(),
        "min_margin": float(min(st.margin for st in tr.states[1:])),
        "min_margin_positive": bool(all(st.margin > 0 for st in tr.states[1:])),
        "energy": float(s.energy),
        "u_h1_norm": h1_norm(problem, s.u),
        "dual_norm": dual_norm_error(s.dual, None, problem),
    }
    if ref is not None:
        cut = ref.cells_cut(problem.mesh)
        row["l2"], row["h1"] = error_norms(s.u, ref)
        row["dual"] = dual_norm_error(s.dual, ref.lam, problem, cut=cut)
        row["obs_l2"] = observable_error(problem, s.psi, ref)
    return problem, tr, row


def _level_worker(args):
    cfg_dict, n = args
    cfg = parse_config(_strip_none(cfg_dict))
    problem, tr, row = solve_level(cfg, n)
    return row, tr.final.u.coefficients


def _strip_none(d):
    if isinstance(d, dict):
        return {k: _strip_none(v) for k, v in d.items() if v is not None}
    return d


def workers() -> int:
    try:
        return max(1, int(os.environ.get("PROXGAL_THREADS", "1")))
    except ValueError:
        return 1


def run_levels(cfg: RunConfig, levels) -> list:
    """Solve every level (in parallel worker processes when allowed); return rows and coefficients."""
    nw = min(workers(), len(levels))
    if nw <= 1:
        out = []
        for n in levels:
            _, tr, row = solve_level(cfg, n)
            out.append((row, tr.final.u.coefficients))
        return out
    payload = [(_strip_none(config_dict(cfg)), n) for n in levels]
    with ProcessPoolExecutor(max_workers=nw) as ex:
        return list(ex.map(_level_worker, payload))


def decay_series(problem, alpha: float, iterations: int, extra: int = 200):
    """Optimisation-error decay at a fixed mesh with constant step ``alpha``.

    Returns rows ``(l, sum_alpha, ||u_l - u_inf||_H1)`` for ``l = 1..iterations``,
    where ``u_inf`` is the iterate ``extra`` steps later.
    """
    cfg = PGConfig(schedule="constant", alpha0=alpha, max_outer_iters=iterations + extra,
                   outer_tol=1e-300, min_outer_iters=iterations + extra)
    tr = pg_solve(problem, cfg)
    u_inf = tr.final.u.coefficients
    rows = []
    for st in tr.states[1:iterations + 1]:
        d = st.u.coefficients - u_inf
        rows.append((st.k, st.k * alpha, math.sqrt(max(d @ (problem.H1 @ d) + d @ (problem.M_V @ d), 0.0))))
    return rows


def loglog_slope(xs, ys) -> float:
    xs, ys = np.asarray(xs, dtype=float), np.asarray(ys, dtype=float)
    ok = (xs > 0) & (ys > 0)
    if ok.sum() < 2:
        return math.nan
    return float(np.polyfit(np.log(xs[ok]), np.log(ys[ok]), 1)[0])


# -- verification -------------------------------------------------------------------------


def _entropies():
    return {
        "shannon": Shannon(lambda x: -0.2 + 0.1 * x[:, 0]),
        "fermi_dirac": FermiDirac(-1.0, lambda x: 1.0 + x[:, 0]),
        "hellinger": Hellinger(1.5),
        "signorini_log": SignoriniLog(lambda x: 0.05 + x[:, 0]),
    }


def entropy_checks(rng: np.random.Generator, samples: int = 100, tol: float = 1e-6) -> list:
    """Central-difference checks of ``grad R*`` and ``hess R*``.

    Errors are relative to ``max(1, |exact|)``.  Returns one row per entropy
    and quantity with the worst error and the number of failures.
    """
    rows = []
    step = 1e-5
    for name, ent in _entropies().items():
        x = rng.uniform(0, 1, (samples, 2))
        if ent.vector:
            psi = rng.uniform(-3, 3, (samples, 2))
            g, H = ent.grad(x, psi), ent.hess(x, psi)
            fd_g = np.zeros_like(psi)
            fd_h = np.zeros_like(H)
            for i in range(2):
                e = np.zeros(2)
                e[i] = step
                fd_g[:, i] = (ent.rstar(x, psi + e) - ent.rstar(x, psi - e)) / (2 * step)
                fd_h[:, :, i] = (ent.grad(x, psi + e) - ent.grad(x, psi - e)) / (2 * step)
            eg = np.abs(fd_g - g).max(axis=1) / np.maximum(1, np.abs(g).max(axis=1))
            eh = np.abs(fd_h - H).max(axis=(1, 2)) / np.maximum(1, np.abs(H).max(axis=(1, 2)))
        else:
            psi = rng.uniform(-3, 3, samples)
            g, H = ent.grad(x, psi), ent.hess(x, psi)
            fd_g = (ent.rstar(x, psi + step) - ent.rstar(x, psi - step)) / (2 * step)
            fd_h = (ent.grad(x, psi + step) - ent.grad(x, psi - step)) / (2 * step)
            eg = np.abs(fd_g - g) / np.maximum(1, np.abs(g))
            eh = np.abs(fd_h - H) / np.maximum(1, np.abs(H))
        for what, err in (("grad", eg), ("hess", eh)):
            rows.append({"entropy": name, "check": what, "samples": samples,
                         "max_rel_err": float(err.max()), "failures": int(np.sum(err > tol))})
    return rows


SMOOTH = (
    lambda x: np.sin(np.pi * x[:, 0]) * np.sin(np.pi * x[:, 1]),
    lambda x: np.column_stack([
        np.pi * np.cos(np.pi * x[:, 0]) * np.sin(np.pi * x[:, 1]),
        np.pi * np.sin(np.pi * x[:, 0]) * np.cos(np.pi * x[:, 1]),
    ]),
)
CUBIC = lambda x: x[:, 0] ** 3 - 2 * x[:, 0] * x[:, 1] ** 2 + x[:, 1]  # noqa: E731
AFFINE = lambda x: 1.0 + 2.0 * x[:, 0] - 3.0 * x[:, 1]  # noqa: E731


def operator_checks(levels, pattern: str = "crisscross") -> list:
    """Rows (operator, level, l2, h1, affine defect, fortin residual, margin) per level."""
    rows = []
    for n in levels:
        mesh = unit_square_mesh(n, pattern)
        tb = OperatorToolbox(mesh)
        X = mesh.vertices
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            ops = {
                "scott_zhang": tb.scott_zhang,
                "clement_weighted": tb.clement_weighted,
                "clement_mass": tb.clement_mass,
            }
            for name, op in ops.items():
                l2, h1 = error_norms(op(SMOOTH[0]), SMOOTH)
                aff = float(np.abs(op(AFFINE).coefficients - AFFINE(X)).max())
                rows.append({"operator": name, "n": n, "h": 1.0 / n, "l2": l2, "h1": h1,
                             "affine_defect": aff, "fortin_residual": math.nan, "margin": math.nan})
            F = tb.fortin_bubble(SMOOTH[0])
            l2, h1 = error_norms(F, SMOOTH)
            rows.append({"operator": "fortin_bubble", "n": n, "h": 1.0 / n, "l2": l2, "h1": h1,
                         "affine_defect": math.nan,
                         "fortin_residual": fortin_residual(tb, CUBIC, tb.fortin_bubble(CUBIC)),
                         "margin": math.nan})
            # phi + nonnegative bump is feasible for both pairs
            phi = -0.1
            E = tb.enrich_obstacle(lambda x: phi + 0.1 * SMOOTH[0](x) ** 2, phi)
            rows.append({"operator": "enrich_obstacle", "n": n, "h": 1.0 / n, "l2": math.nan,
                         "h1": math.nan, "affine_defect": math.nan, "fortin_residual": math.nan,
                         "margin": E.margin - E.floor})
    by_op: dict = {}
    for r in rows:
        by_op.setdefault(r["operator"], []).append(r)
    for op_rows in by_op.values():
        for key in ("l2", "h1"):
            vals = [r[key] for r in op_rows]
            rates = [math.nan] + (eoc(vals) if all(np.isfinite(vals)) else [math.nan] * (len(vals) - 1))
            for r, e in zip(op_rows, rates):
                r[f"eoc_{key}"] = e
    return rows


def verification_failures(entropy_rows, op_rows) -> list:
    out = []
    for r in entropy_rows:
        if r["failures"]:
            out.append(f"{r['entropy']} {r['check']}: {r['failures']} failures")
    for r in op_rows:
        if r["operator"] == "fortin_bubble" and not r["fortin_residual"] <= 1e-12:
            out.append(f"fortin residual {r['fortin_residual']:.2e} at n={r['n']}")
        if np.isfinite(r["affine_defect"]) and r["affine_defect"] > 1e-12:
            out.append(f"{r['operator']} affine defect {r['affine_defect']:.2e} at n={r['n']}")
        if np.isfinite(r["margin"]) and r["margin"] < -1e-12:
            out.append(f"enrichment margin below floor at n={r['n']}")
    for op in ("scott_zhang", "clement_weighted", "clement_mass"):
        last = [r for r in op_rows if r["operator"] == op][-1]
        if not abs(last["eoc_l2"] - 2) <= 0.2:
            out.append(f"{op} L2 EOC {last['eoc_l2']:.3f}")
        if not abs(last["eoc_h1"] - 1) <= 0.2:
            out.append(f"{op} H1 EOC {last['eoc_h1']:.3f}")
    return out


# -- artifacts -----------------------------------------------------------------------------


class Artifacts:
    """Writes files under one directory and keeps a sha256 manifest."""

    def __init__(self, root):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.manifest: dict = {}

    def _record(self, path: Path):
        self.manifest[str(path.relative_to(self.root))] = hashlib.sha256(path.read_bytes()).hexdigest()

    def text(self, name: str, body: str) -> Path:
        path = self.root / name
        path.write_text(body)
        self._record(path)
        return path

    def table(self, name: str, rows: list, header: str | None = None) -> Path:
        buf = io.StringIO()
        if header:
            buf.write("# " + header + "\n")
        if rows:
            cols = list(rows[0].keys())
            w = csv.writer(buf, lineterminator="\n")
            w.writerow(cols)
            for r in rows:
                w.writerow([("%.17g" % r[c]) if isinstance(r[c], float) else r[c] for c in cols])
        return self.text(name, buf.getvalue())

    def function(self, name: str, f: FeFunction, mesh_file: str | None = None):
        for p in write_function(f, self.root / name, mesh_file):
            self._record(Path(p))

    def summary(self, data: dict) -> Path:
        data = dict(data)
        data["manifest"] = dict(sorted(self.manifest.items()))
        data["created"] = time.strftime("%Y-%m-%dT%H:%M:%S")
        data["version"] = __version__
        path = self.root / "summary.json"
        path.write_text(json.dumps(data, indent=2, sort_keys=True, default=_json_default) + "\n")
        return path


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if callable(o):
        return getattr(o, "__name__", "callable")
    return str(o)


def _clean(v):
    return None if isinstance(v, float) and not math.isfinite(v) else v


# -- commands ---------------------------------------------------------------------------------


def cmd_solve(cfg: RunConfig, out: Artifacts) -> int:
    n = max(cfg.discretization.levels)
    ref = reference_for(cfg)
    problem = build_problem(cfg, n, ref)
    states = []
    try:
        tr = pg_solve(problem, cfg.solver, callback=states.append)
    except NewtonError as exc:
        log.error("solver failure at outer iteration %s: %s", exc.outer_iteration, exc)
        out.table("trajectory.csv", [
            {"k": s.k, "alpha": s.alpha, "energy": s.energy, "newton_iters": s.newton_iters} for s in states
        ])
        out.summary({"command": "solve", "status": "solver_failure", "error": str(exc),
                     "outer_iteration": exc.outer_iteration, "config": config_dict(cfg)})
        return EXIT_SOLVER
    s = tr.final
    write_mesh(problem.mesh, out.root / "mesh.txt")
    out._record(out.root / "mesh.txt")
    out.text("trajectory.csv", tr.to_csv())
    out.function("u.csv", s.u, "mesh.txt")
    out.function("psi.csv", s.psi, "mesh.txt")
    out.function("lambda.csv", s.dual, "mesh.txt")
    summary = {
        "command": "solve",
        "status": tr.reason,
        "n": n,
        "iterations": tr.iterations,
        "final_energy": s.energy,
        "min_margin": min(st.margin for st in tr.states[1:]),
        "final_margin": s.margin,
        "dissipation_violations": tr.dissipation_violations(),
        "clamp_events": sum(st.clamp_events for st in tr.states[1:]),
        "config": config_dict(cfg),
    }
    if ref is not None:
        summary["l2_error"], summary["h1_error"] = error_norms(s.u, ref)
    out.summary(summary)
    print(f"{tr.reason}: {tr.iterations} iterations, energy {s.energy:.12g}")
    return EXIT_OK if tr.reason == "converged" else EXIT_SOLVER


def cmd_study(cfg: RunConfig, out: Artifacts) -> int:
    levels = sorted(cfg.discretization.levels)
    if len(levels) < 2:
        raise ConfigError("discretization.levels: a study needs at least two levels")
    t0 = time.perf_counter()
    try:
        results = run_levels(cfg, levels)
    except NewtonError as exc:
        out.summary({"command": "study", "status": "solver_failure", "error": str(exc),
                     "config": config_dict(cfg)})
        return EXIT_SOLVER
    rows = [dict(r) for r, _ in results]
    if reference_for(cfg) is None:
        # self-convergence against a finer solve
        n_ref = levels[-1] * 2 ** cfg.study.reference_levels_up
        pref, tref, _ = solve_level(cfg, n_ref)
        fine = tref.final.u
        m = 2 if cfg.problem.kind == "signorini" else 1
        Vf = build_space(fine.space.mesh, "P1", m, dirichlet=None)
        fine = FeFunction(Vf, fine.coefficients[: Vf.n_dofs])
        for r, (_, coef) in zip(rows, results):
            V1 = build_space(make_mesh(cfg, r["n"]), "P1", m, dirichlet=None)
            r["l2"], r["h1"] = fine_error(FeFunction(V1, coef[: V1.n_dofs]), fine)
    keys = tuple(k for k in ("h1", "l2", "dual", "obs_l2") if k in rows[0])
    meta = {"config": config_dict(cfg), "levels": levels}
    report = StudyReport(rows, meta, keys)
    out.text("study.csv", report.to_csv().split("\n", 1)[1])
    out.table("iterations.csv", [{"n": r["n"], "iterations": r["iterations"],
                                  "newton_total": r["newton_total"]} for r in rows])
    curves = [{"series": f"{k}_vs_h", "x": r["h"], "y": r[k]} for k in keys for r in rows]
    slope = None
    if cfg.study.decay_iterations > 0:
        problem = build_problem(cfg, levels[-1], reference_for(cfg))
        series = decay_series(problem, cfg.study.decay_alpha, cfg.study.decay_iterations,
                              cfg.study.surrogate_extra)
        curves += [{"series": "decay_vs_sum_alpha", "x": sa, "y": e} for _, sa, e in series]
        sel = [(k, e) for k, _, e in series if k >= 4]
        slope = _clean(loglog_slope(*zip(*sel))) if len(sel) >= 2 else None
    out.table("curves.csv", curves)
    its = [r["iterations"] for r in rows]
    summary = {
        "command": "study",
        "levels": levels,
        "eoc": {k: [_clean(v) for v in report.rates(k)] for k in keys},
        "iterations": its,
        "iteration_spread_last3": int(max(its[-3:]) - min(its[-3:])),
        "dissipation_violations": int(sum(r["violations"] for r in rows)),
        "all_margins_positive": all(r["min_margin_positive"] for r in rows),
        "decay_slope": slope,
        "runtime_seconds": time.perf_counter() - t0,
        "config": config_dict(cfg),
    }
    out.summary(summary)
    for k in keys:
        print(f"EOC {k}: " + " ".join(f"{v:.3f}" for v in report.rates(k)))
    ok = all(r["converged"] for r in rows)
    return EXIT_OK if ok else EXIT_SOLVER


def cmd_verify(cfg: RunConfig, out: Artifacts) -> int:
    rng = np.random.default_rng(cfg.seed)
    erows = entropy_checks(rng, cfg.verify.samples, cfg.verify.fd_tol)
    orows = operator_checks(cfg.verify.levels, cfg.discretization.mesh)
    out.table("entropy_checks.csv", erows)
    out.table("operators.csv", orows)
    fails = verification_failures(erows, orows)
    out.summary({"command": "verify", "failures": fails, "seed": cfg.seed,
                 "entropy_points": int(sum(r["samples"] for r in erows if r["check"] == "grad")),
                 "config": config_dict(cfg)})
    for f in fails:
        print("FAIL", f)
    print(f"verification: {len(fails)} failure(s)")
    return EXIT_VERIFY if fails else EXIT_OK


def cmd_mesh_info(cfg: RunConfig, out: Artifacts) -> int:
    rows = []
    for n in sorted(cfg.discretization.levels):
        m = make_mesh(cfg, n)
        row = {
            "n": n, "vertices": m.n_vertices, "cells": m.n_cells, "h": float(m.h),
            "shape_regularity": shape_regularity(m),
            "locally_symmetric": check_local_symmetry(m).passed if m.dim == 2 else True,
        }
        if cfg.problem.kind == "signorini":
            row["contact_admissible"] = check_signorini_facets(m)
        rows.append(row)
    path = out.table("mesh_info.csv", rows)
    out.summary({"command": "mesh-info", "config": config_dict(cfg)})
    print(path.read_text(), end="")
    return EXIT_OK


COMMANDS = {
    "solve": cmd_solve,
    "study": cmd_study,
    "verify-operators": cmd_verify,
    "verify": cmd_verify,
    "mesh-info": cmd_mesh_info,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="proxgal", description=__doc__.split("\n")[0])
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", type=Path, help="TOML configuration file")
    ap.add_argument("--out", type=Path, help="output directory (overrides outputs.directory)")
    ap.add_argument("--levels", help="mesh levels: a..b for 2**a..2**b cells, or n1,n2,...")
    ap.add_argument("--seed", type=int, help="random seed for sampled checks")
    ap.add_argument("--strict", action="store_true", help="abort on a dissipation violation")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * args.verbose, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config) if args.config else parse_config({})
        if args.levels:
            cfg.discretization.levels = parse_levels(args.levels)
            _validate(cfg)
        if args.seed is not None:
            cfg.seed = args.seed
        if args.strict:
            cfg.solver = dataclasses.replace(cfg.solver, strict=True)
        out = Artifacts(args.out or cfg.outputs.directory)
        code = COMMANDS[args.command](cfg, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NewtonError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    return code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
