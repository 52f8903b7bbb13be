"""Acceptance suite: one test per criterion, at the stated tolerances.

Every test records a ``PASS``/``FAIL`` line with the measured numbers; the
lines are printed together at the end of the session (see ``conftest.py``).
Runs are cached per module, so the whole file takes a few minutes.
"""
import math

import numpy as np
import pytest

from proxgal.cli import (
    decay_series,
    entropy_checks,
    loglog_slope,
    parse_config,
    solve_level,
)
from proxgal.entropy import FermiDirac, Hellinger, Shannon, SignoriniLog, bregman_dual
from proxgal.mesh import check_signorini_facets, retag, unit_square_mesh
from proxgal.operators import OperatorToolbox, fortin_residual
from proxgal.pg import NewtonConfig, newton_subproblem
from proxgal.problems import eoc, error_norms, fine_error
from proxgal.quadrature import volume_points
from proxgal.spaces import FeFunction, build_space

RESULTS = {}

LEVELS_1D = (32, 64, 128, 256, 512)
LEVELS_2D = (8, 16, 32, 64)
LEVELS_SIG = (8, 16, 32)
SIG_REF = 128  # two levels above the finest Signorini level


def record(num, title, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'}  criterion {num:2d}  {title}: {detail}"
    RESULTS[num] = line
    print(line)
    assert ok, line


def fmt(values):
    return "[" + ", ".join(f"{v:.3f}" for v in values) + "]"


def within(values, lo, hi):
    return all(lo <= v <= hi for v in values)


# -- cached runs ------------------------------------------------------------------------------


CFG_1D = parse_config({"problem": {"benchmark": "analytic_1d", "dim": 1}})
CFG_2D = parse_config({"problem": {"benchmark": "radial_2d"}})
CFG_2D_P1 = parse_config({"problem": {"benchmark": "radial_2d"}, "discretization": {"pair": "p1_p1"}})
CFG_SIG = parse_config({"problem": {"kind": "signorini", "load": [0.0, -1.0], "gap": 0.02}})


def _runs(cfg, levels):
    return {n: solve_level(cfg, n) for n in levels}


@pytest.fixture(scope="module")
def runs_1d():
    return _runs(CFG_1D, LEVELS_1D)


@pytest.fixture(scope="module")
def runs_2d():
    return _runs(CFG_2D, LEVELS_2D)


@pytest.fixture(scope="module")
def runs_2d_p1():
    return _runs(CFG_2D_P1, LEVELS_2D)


@pytest.fixture(scope="module")
def runs_sig():
    return _runs(CFG_SIG, LEVELS_SIG + (SIG_REF,))


def column(runs, key, levels=None):
    levels = sorted(runs) if levels is None else levels
    return [runs[n][2][key] for n in levels]


def all_benchmarks(*groups):
    for name, runs in groups:
        for n, (problem, tr, row) in sorted(runs.items()):
            yield f"{name}@{n}", problem, tr


# -- criteria -----------------------------------------------------------------------------------


def test_01_energy_dissipation(runs_1d, runs_2d):
    worst, violations = -math.inf, 0
    for _, _, tr in all_benchmarks(("1d", runs_1d), ("2d", runs_2d)):
        tol = 1e-9 * (1 + abs(tr.states[1].energy))
        for s in tr.states[2:]:
            worst = max(worst, s.dissipation_gap)
            violations += s.dissipation_gap > tol
    record(1, "energy dissipation", violations == 0,
           f"{violations} violations, largest gap {worst:.2e}")


def test_02_constraint_preservation(runs_1d, runs_2d, runs_2d_p1, runs_sig):
    bad, smallest, n_states = [], math.inf, 0
    for name, problem, tr in all_benchmarks(("1d", runs_1d), ("2d", runs_2d), ("2d-p1", runs_2d_p1),
                                            ("signorini", runs_sig)):
        for s in tr.states[1:]:
            n_states += 1
            smallest = min(smallest, s.margin)
            if not s.margin > 0:
                bad.append(f"{name} k={s.k}")
    record(2, "constraint preservation", not bad,
           f"{n_states} iterates, min margin {smallest:.3e}" + (f", nonpositive at {bad[:3]}" if bad else ""))


def test_03_h1_rate_case_one(runs_1d, runs_2d):
    r1 = eoc(column(runs_1d, "h1"))
    r2 = eoc(column(runs_2d, "h1"))
    ok1 = within(r1[-3:], 0.85, 1.15)
    ok2 = within(r2, 0.8, 1.2)
    record(3, "H1 rate, Case I", ok1 and ok2,
           f"1D EOC {fmt(r1)} (last three in [0.85, 1.15]: {ok1}), 2D EOC {fmt(r2)} (in [0.8, 1.2]: {ok2})")


def test_04_h1_rate_case_two(runs_2d_p1):
    r = eoc(column(runs_2d_p1, "h1"))
    record(4, "H1 rate, Case II", within(r, 0.8, 1.2), f"2D P1-P1 EOC {fmt(r)}")


def test_05_observable_l2_rate(runs_1d, runs_2d):
    r1 = eoc(column(runs_1d, "obs_l2"))
    r2 = eoc(column(runs_2d, "obs_l2"))
    record(5, "observable L2 rate", within(r1, 0.8, 1.2) and within(r2, 0.8, 1.2),
           f"1D EOC {fmt(r1)}, 2D EOC {fmt(r2)}")


def test_06_dual_rate(runs_1d):
    r = eoc(column(runs_1d, "dual"))
    record(6, "dual variable rate", within(r, 0.75, 1.25), f"1D EOC {fmt(r)}")


def test_07_optimization_decay(runs_1d):
    problem = runs_1d[max(LEVELS_1D)][0]
    series = decay_series(problem, 1.0, 64, extra=200)
    sel = [(k, e) for k, _, e in series if 4 <= k <= 64]
    slope = loglog_slope(*zip(*sel))
    record(7, "optimization error decay", slope <= -0.45,
           f"slope {slope:.3f} over l = 4..64 at n = {max(LEVELS_1D)}")


def test_08_mesh_independence(runs_2d):
    its = column(runs_2d, "iterations")
    spread = max(its[-3:]) - min(its[-3:])
    record(8, "mesh independence", spread <= 2, f"iterations {its}, spread over last three {spread}")


def _sine(x):
    return np.sin(np.pi * x[:, 0]) * np.sin(np.pi * x[:, 1])


def _sine_grad(x):
    s, c = np.sin(np.pi * x), np.cos(np.pi * x)
    return np.pi * np.column_stack([c[:, 0] * s[:, 1], s[:, 0] * c[:, 1]])


def _cubic(x):
    return x[:, 0] ** 3 - 2 * x[:, 0] * x[:, 1] ** 2 + x[:, 1]


def _affine(x):
    return 1.0 + 2.0 * x[:, 0] - 3.0 * x[:, 1]


def test_09_operator_lemmas():
    problems = []
    worst_fortin = worst_affine = worst_contact = 0.0
    errs = {k: ([], []) for k in ("scott_zhang", "clement_weighted", "clement_mass", "fortin_bubble")}
    for n in (4, 8, 16, 32):
        for pattern in ("crisscross", "diagonal"):
            m = unit_square_mesh(n, pattern)
            tb = OperatorToolbox(m)
            worst_fortin = max(worst_fortin, fortin_residual(tb, _cubic, tb.fortin_bubble(_cubic)))
            ops = ["scott_zhang", "clement_weighted"] + (["clement_mass"] if pattern == "crisscross" else [])
            for name in ops:
                c = getattr(tb, name)(_affine).coefficients
                worst_affine = max(worst_affine, float(np.abs(c - _affine(m.vertices)).max()))
            if pattern == "crisscross":
                for name, (l2, h1) in errs.items():
                    a, b = error_norms(getattr(tb, name)(_sine), (_sine, _sine_grad))
                    l2.append(a)
                    h1.append(b)
        mc = retag(unit_square_mesh(n), {"contact": lambda x: x[1] < 1e-12})
        tc = OperatorToolbox(mc, contact_tag="contact")
        inner = list(tc.boundary_weights)
        c = tc.clement_boundary_signorini(_affine).coefficients
        worst_affine = max(worst_affine, float(np.abs(c[inner] - _affine(mc.vertices[inner])).max()))

        def vec(x):
            return np.column_stack([_cubic(x), np.sin(x[:, 0]) * x[:, 1]])

        nrm, _ = tc.contact_frame()
        pn = FeFunction(tc.P1, tc.fortin_signorini(vec).coefficients.reshape(-1, 2) @ nrm)
        worst_contact = max(worst_contact, tc.contact_moment_residual(lambda x: vec(x) @ nrm, pn))
    rates = {k: (eoc(l2), eoc(h1)) for k, (l2, h1) in errs.items()}
    for k, (rl2, rh1) in rates.items():
        if not (within(rl2, 1.8, 2.2) and within(rh1, 0.8, 1.2)):
            problems.append(f"{k} EOC L2 {fmt(rl2)} H1 {fmt(rh1)}")
    if worst_fortin > 1e-12:
        problems.append(f"Fortin residual {worst_fortin:.2e}")
    if worst_contact > 1e-12:
        problems.append(f"contact moment residual {worst_contact:.2e}")
    if worst_affine > 1e-12:
        problems.append(f"affine defect {worst_affine:.2e}")
    summary = ", ".join(f"{k} L2 {fmt(r[0])} H1 {fmt(r[1])}" for k, r in rates.items())
    record(9, "operator lemmas", not problems,
           f"Fortin {worst_fortin:.1e}, contact moments {worst_contact:.1e}, affine {worst_affine:.1e}; "
           + (f"failing: {problems}" if problems else summary))


def test_10_enrichment_feasibility(runs_1d, runs_2d, runs_2d_p1, runs_sig):
    checked, failures, worst = 0, [], math.inf
    groups = [("1d", runs_1d, "bubble_p0"), ("2d", runs_2d, "bubble_p0"), ("2d-p1", runs_2d_p1, "p1_p1")]
    for name, runs, pair in groups:
        for n, (problem, tr, _) in sorted(runs.items()):
            tb = OperatorToolbox(problem.mesh)
            phi = problem.data["phi"]
            for s in tr.states[1:]:
                checked += 1
                try:
                    e = tb.enrich_obstacle(s.u, phi, pair=pair)
                except ValueError as exc:
                    failures.append(f"{name}@{n} k={s.k}: {exc}")
                    continue
                worst = min(worst, e.margin - e.floor)
                if not e.feasible:
                    failures.append(f"{name}@{n} k={s.k}: margin {e.margin:.3e} < floor {e.floor:.3e}")
    for n in LEVELS_SIG:
        problem, tr, _ = runs_sig[n]
        tb = OperatorToolbox(problem.mesh, contact_tag="contact")
        for s in tr.states[1:]:
            checked += 1
            try:
                e = tb.enrich_signorini(s.u, problem.data["g"])
            except ValueError as exc:
                failures.append(f"signorini@{n} k={s.k}: {exc}")
                continue
            worst = min(worst, e.margin - e.floor)
            if not e.feasible:
                failures.append(f"signorini@{n} k={s.k}: margin {e.margin:.3e} < floor {e.floor:.3e}")
    record(10, "enrichment feasibility", not failures,
           f"{checked} iterates, {len(failures)} failures, min(margin - floor) {worst:.2e}"
           + (f", first: {failures[0]}" if failures else ""))


def test_11_entropy_calculus():
    rng = np.random.default_rng(11)
    rows = entropy_checks(rng, 100, 1e-6)
    fd_fail = sum(r["failures"] for r in rows)
    fd_worst = max(r["max_rel_err"] for r in rows)
    # three-point identity on random P1 functions
    mesh = unit_square_mesh(4)
    qp = volume_points(mesh, 6)
    V = build_space(mesh, "P1", dirichlet=None)
    V2 = build_space(mesh, "P1", 2, dirichlet=None)
    tp_worst = 0.0
    ents = [Shannon(lambda x: -0.2 + 0.1 * x[:, 0]), FermiDirac(-1.0, lambda x: 1.0 + x[:, 0]),
            SignoriniLog(lambda x: 0.05 + x[:, 0]), Hellinger(1.5)]
    for ent in ents:
        space = V2 if ent.vector else V
        for _ in range(20):
            a, b, c = (FeFunction(space, rng.uniform(-2, 2, space.n_dofs)) for _ in range(3))
            lhs = bregman_dual(ent, a, b, qp) - bregman_dual(ent, a, c, qp) + bregman_dual(ent, b, c, qp)
            va, vb, vc = (f.at(qp.cells, qp.bary) for f in (a, b, c))
            prod = (ent.grad(qp.x, vb) - ent.grad(qp.x, vc)) * (vb - va)
            rhs = qp.integrate(prod.sum(axis=1) if prod.ndim == 2 else prod)
            tp_worst = max(tp_worst, abs(lhs - rhs) / (1 + abs(rhs)))
    # logistic decomposition of the bounded entropy
    lo, hi = -0.7, 2.3
    psi = rng.uniform(-50, 50, 1000)
    x = rng.uniform(0, 1, (1000, 2))
    e = np.exp(psi)
    ref = (hi - lo) / 2 * (e - 1) / (e + 1) + (hi + lo) / 2
    fd_dec = float(np.abs(FermiDirac(lo, hi).grad(x, psi) - ref).max())
    ok = fd_fail == 0 and tp_worst <= 1e-12 and fd_dec <= 1e-12
    record(11, "entropy calculus", ok,
           f"FD failures {fd_fail} (worst rel err {fd_worst:.1e}), three-point {tp_worst:.1e}, "
           f"decomposition {fd_dec:.1e}")


def test_12_stability(runs_2d):
    levels = sorted(runs_2d)[-3:]
    u = column(runs_2d, "u_h1_norm", levels)
    lam = column(runs_2d, "dual_norm", levels)
    vu = (max(u) - min(u)) / max(u)
    vl = (max(lam) - min(lam)) / max(lam)
    record(12, "stability", vu <= 0.2 and vl <= 0.2,
           f"H1 norms {fmt(u)} (variation {vu:.1%}), dual norms {fmt(lam)} (variation {vl:.1%})")


def test_13_signorini(runs_sig):
    gated = all(check_signorini_facets(runs_sig[n][0].mesh, "contact") for n in runs_sig)
    converged = all(runs_sig[n][1].reason == "converged" for n in runs_sig)
    margins = all(s.margin > 0 for n in runs_sig for s in runs_sig[n][1].states[1:])
    pf, tf, _ = runs_sig[SIG_REF]
    fine = FeFunction(build_space(pf.mesh, "P1", 2, dirichlet=None), tf.final.u.coefficients)
    errs = []
    for n in LEVELS_SIG:
        p, tr, _ = runs_sig[n]
        coarse = FeFunction(build_space(p.mesh, "P1", 2, dirichlet=None), tr.final.u.coefficients)
        errs.append(fine_error(coarse, fine)[1])
    r = eoc(errs)
    ok = gated and converged and margins and all(v >= 0.5 for v in r)
    record(13, "Signorini", ok,
           f"mesh check {gated}, converged {converged}, margins positive {margins}, "
           f"self-convergence H1 EOC {fmt(r)} vs n = {SIG_REF}")


def test_14_quadrature_robustness():
    # with the bubble/P0 pair and a constant obstacle the nonlinear integrand is
    # cellwise constant, so the P1-P1 pair is the case where the degree matters
    worst, detail = 0.0, []
    for pair in ("bubble_p0", "p1_p1"):
        for n in (16, 32):
            h = {}
            for degree in (4, 6):
                cfg = parse_config({"problem": {"benchmark": "radial_2d"},
                                    "discretization": {"quadrature_degree": degree, "pair": pair}})
                h[degree] = solve_level(cfg, n)[2]["h1"]
            change = abs(h[6] - h[4]) / h[4]
            worst = max(worst, change)
            detail.append(f"{pair} n={n}: {change:.1e}")
    record(14, "quadrature robustness", worst <= 0.01, f"max relative change {worst:.2e} ({'; '.join(detail)})")


def test_15_newton_uniqueness(runs_2d):
    problem, tr, _ = runs_2d[16]
    tight = NewtonConfig(abs_tol=1e-13)
    worst = 0.0
    for k in (1, 3, 5):
        prev, cur = tr.states[k - 1], tr.states[k]
        base = None
        for shift in (0.0, 1.5, -2.0):
            start = FeFunction(prev.psi.space, prev.psi.coefficients + shift)
            u, psi, _ = newton_subproblem(problem, cur.alpha, prev.psi, (None, start), tight)
            if base is None:
                base = (u.coefficients, psi.coefficients)
                continue
            worst = max(worst, float(np.abs(u.coefficients - base[0]).max()),
                        float(np.abs(psi.coefficients - base[1]).max()))
    record(15, "Newton uniqueness proxy", worst <= 1e-8, f"max difference {worst:.2e} over 3 subproblems")
