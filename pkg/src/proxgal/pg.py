"""The proximal Galerkin outer loop and its damped Newton subproblem solver.

Given a problem with primal space ``V``, latent space ``W``, assembled form
``A`` and load ``F``, the pairing ``B`` (``b(v, w) = v^T B w``) and a Legendre
entropy, each outer step ``k`` finds ``(u, psi)`` with

    alpha_k A u + B (psi - psi_prev) = alpha_k F      (free rows of V)
    B^T u - int grad R*(psi) w       = 0               (free rows of W)

and sets ``lambda_k = (psi_prev - psi) / alpha_k``.  The nonlinear term is
integrated with the problem's quadrature point set ``qp``; the same point set
is used for energies of the latent variable so that the discrete dissipation
identity holds up to the Newton tolerance.

The problem object only needs the attributes documented in
:class:`proxgal.problems.ProblemSpec`.
"""
from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .algebra import SingularMatrixError, solve_direct
from .spaces import FeFunction

log = logging.getLogger(__name__)


class NewtonError(RuntimeError):
    """Newton failed to reduce the residual; carries the last residual norms."""

    def __init__(self, message, residuals=None, outer_iteration=None):
        super().__init__(message)
        self.residuals = residuals
        self.outer_iteration = outer_iteration


@dataclass(frozen=True)
class NewtonConfig:
    max_iters: int = 60
    abs_tol: float = 1e-10
    rel_tol: float = 0.0
    damping: float = 0.5
    max_backtracks: int = 30
    max_step_norm: float = 10.0


@dataclass(frozen=True)
class PGConfig:
    """Outer-loop settings.

    ``schedule`` is ``constant`` (alpha_k = alpha0), ``geometric``
    (alpha_k = alpha0 * ratio**(k-1)) or ``doubling`` (geometric with ratio 2).
    ``warm_start`` is ``extrapolate`` (psi_{k-1} - alpha_k lambda_{k-1}) or
    ``previous`` (psi_{k-1}).
    """

    schedule: str = "geometric"
    alpha0: float = 1.0
    ratio: float = 2.0
    max_outer_iters: int = 100
    outer_tol: float = 1e-8
    min_outer_iters: int = 1
    newton: NewtonConfig = field(default_factory=NewtonConfig)
    quadrature_degree: int | None = None
    warm_start: str = "extrapolate"
    strict: bool = False
    dissipation_tol: float = 1e-9

    def __post_init__(self):
        if self.schedule not in ("constant", "geometric", "doubling"):
            raise ValueError(f"unknown schedule {self.schedule!r}")
        if not self.alpha0 > 0:
            raise ValueError("alpha0 must be positive")
        if self.schedule == "geometric" and not self.ratio > 1:
            raise ValueError("geometric schedule needs ratio > 1")
        if not (self.outer_tol > 0 and self.newton.abs_tol > 0):
            raise ValueError("tolerances must be positive")
        if self.warm_start not in ("extrapolate", "previous"):
            raise ValueError(f"unknown warm start {self.warm_start!r}")

    def alpha(self, k: int) -> float:
        if self.schedule == "constant":
            return float(self.alpha0)
        q = 2.0 if self.schedule == "doubling" else self.ratio
        return float(self.alpha0 * q ** (k - 1))


@dataclass
class PGState:
    k: int
    u: FeFunction | None
    psi: FeFunction
    alpha: float
    energy: float = math.nan
    dual: FeFunction | None = None
    newton_iters: int = 0
    newton_residuals: list = field(default_factory=list)
    dissipation_gap: float = math.nan
    margin: float = math.nan
    clamp_events: int = 0
    dual_norm: float = math.nan


@dataclass
class PGTrajectory:
    states: list
    reason: str
    problem: object = None
    config: PGConfig | None = None

    @property
    def final(self) -> PGState:
        return self.states[-1]

    @property
    def iterations(self) -> int:
        return self.states[-1].k

    def energies(self) -> np.ndarray:
        return np.array([s.energy for s in self.states[1:]])

    def dissipation_violations(self, tol: float | None = None) -> int:
        tol = (self.config.dissipation_tol if self.config else 1e-9) if tol is None else tol
        scale = 1.0 + abs(self.states[1].energy) if len(self.states) > 1 else 1.0
        gaps = np.array([s.dissipation_gap for s in self.states])
        return int(np.sum(gaps[np.isfinite(gaps)] > tol * scale))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["k", "alpha", "energy", "dissipation_gap", "newton_iters", "dual_l2", "margin"])
        for s in self.states[1:]:
            w.writerow(
                [s.k] + ["%.17g" % v for v in (s.alpha, s.energy, s.dissipation_gap)]
                + [s.newton_iters] + ["%.17g" % v for v in (s.dual_norm, s.margin)]
            )
        return buf.getvalue()


# -- pointwise quantities -----------------------------------------------------------


def psi_at(problem, psi: FeFunction | np.ndarray) -> np.ndarray:
    c = psi.coefficients if isinstance(psi, FeFunction) else psi
    return problem.PW @ c + problem.psi_offset


def observable(problem, state_or_psi) -> np.ndarray:
    """Observable ``grad R*(psi)`` at the problem's quadrature points."""
    psi = state_or_psi.psi if isinstance(state_or_psi, PGState) else state_or_psi
    return problem.entropy.grad(problem.qp.x, psi_at(problem, psi))


def energy(problem, u: FeFunction | np.ndarray) -> float:
    c = u.coefficients if isinstance(u, FeFunction) else np.asarray(u)
    return float(0.5 * c @ (problem.A @ c) - problem.F @ c)


def dual_variable(trajectory: PGTrajectory, k: int) -> FeFunction:
    """``(psi_{k-1} - psi_k) / alpha_k``."""
    if k < 1:
        raise ValueError("the dual variable is defined for k >= 1")
    prev, cur = trajectory.states[k - 1], trajectory.states[k]
    return FeFunction(cur.psi.space, (prev.psi.coefficients - cur.psi.coefficients) / cur.alpha)


def default_psi0(problem) -> FeFunction:
    """Constant latent value of a strictly feasible constant observable.

    Constrained latent dofs keep their boundary lift values.
    """
    W = problem.W
    o0 = problem.feasible_observable()
    x = problem.qp.x
    val = float(np.mean(problem.entropy.grad_R(x, np.full(len(x), o0))))
    c = np.full(W.n_dofs, val)
    c[W.fixed_dofs] = W.fixed_values
    return FeFunction(W, c)


# -- Newton ------------------------------------------------------------------------


@dataclass
class _System:
    """Free-dof blocks that do not change within an outer iteration."""

    Aff: sp.csr_matrix
    Bff: sp.csr_matrix
    Bfull: sp.csr_matrix
    vf: np.ndarray
    wf: np.ndarray
    lumpV: np.ndarray
    lumpW: np.ndarray


def _system(problem) -> _System:
    cache = getattr(problem, "_pg_system", None)
    if cache is not None:
        return cache
    vf, wf = problem.V.free_dofs, problem.W.free_dofs
    s = _System(
        sp.csr_matrix(problem.A[vf][:, vf]),
        sp.csr_matrix(problem.B[vf][:, wf]),
        sp.csr_matrix(problem.B),
        vf,
        wf,
        problem.lump_V[vf],
        problem.lump_W[wf],
    )
    problem._pg_system = s
    return s


def _residual(problem, S, alpha, u, psi, psi_prev):
    r1 = alpha * (problem.A @ u - problem.F) + S.Bfull @ (psi - psi_prev)
    pq = psi_at(problem, psi)
    w = problem.qp.weights
    r2 = S.Bfull.T @ u - problem.PW.T @ (w * problem.entropy.grad(problem.qp.x, pq))
    return r1[S.vf], r2[S.wf], pq


def _scaled(S, alpha, r1, r2):
    return np.concatenate([r1 / (alpha * S.lumpV), r2 / S.lumpW])


def newton_subproblem(problem, alpha: float, psi_prev: FeFunction, warm_start, config: NewtonConfig = NewtonConfig()):
    """Solve one proximal subproblem by damped Newton.

    Parameters
    ----------
    warm_start : pair ``(u, psi)`` of FeFunctions (``u`` may be ``None``)

    Returns
    -------
    u, psi : FeFunctions
    info : dict with ``iters``, ``residuals`` (scaled infinity norms) and
        ``clamp_events``
    """
    S = _system(problem)
    V = problem.V
    u0, p0 = warm_start
    u = np.zeros(V.n_dofs) if u0 is None else u0.coefficients.copy()
    u[V.fixed_dofs] = V.fixed_values
    psi = p0.coefficients.copy()
    psi[problem.W.fixed_dofs] = problem.W.fixed_values
    pprev = psi_prev.coefficients
    w = problem.qp.weights
    x = problem.qp.x
    ent = problem.entropy
    nv = len(S.vf)

    r1, r2, pq = _residual(problem, S, alpha, u, psi, pprev)
    res = _scaled(S, alpha, r1, r2)
    history = [float(np.abs(res).max())]
    tol = max(config.abs_tol, config.rel_tol * history[0])
    clamps = int(np.sum(ent.clamped(x, pq)))
    it = 0
    while history[-1] > tol:
        if it >= config.max_iters:
            raise NewtonError(f"Newton did not converge in {config.max_iters} iterations", history)
        H = problem.PW.T @ sp.diags(w * ent.hess(x, pq)) @ problem.PW
        H = sp.csr_matrix(H)[S.wf][:, S.wf]
        J = sp.bmat([[alpha * S.Aff, S.Bff], [S.Bff.T, -H]], format="csc")
        try:
            d = solve_direct(J, -np.concatenate([r1, r2]), backward=True)
        except SingularMatrixError as exc:
            raise NewtonError(f"singular Newton system: {exc}", history) from exc
        du, dpsi = d[:nv], d[nv:]
        big = np.abs(dpsi).max() if dpsi.size else 0.0
        if big > config.max_step_norm:
            du, dpsi = du * (config.max_step_norm / big), dpsi * (config.max_step_norm / big)
        merit = np.linalg.norm(res)
        t = 1.0
        for _ in range(config.max_backtracks + 1):
            un, pn = u.copy(), psi.copy()
            un[S.vf] += t * du
            pn[S.wf] += t * dpsi
            r1n, r2n, pqn = _residual(problem, S, alpha, un, pn, pprev)
            resn = _scaled(S, alpha, r1n, r2n)
            if np.linalg.norm(resn) < (1 - 1e-4 * t) * merit:
                break
            t *= config.damping
        else:
            if history[-1] <= 100 * tol:
                log.debug("Newton stagnated at %.3e (tol %.1e); accepted", history[-1], tol)
                break
            raise NewtonError(
                f"line search failed after {config.max_backtracks} backtracks "
                f"(residual {history[-1]:.3e})",
                history,
            )
        u, psi, r1, r2, pq, res = un, pn, r1n, r2n, pqn, resn
        clamps += int(np.sum(ent.clamped(x, pq)))
        history.append(float(np.abs(res).max()))
        it += 1
    info = {"iters": it, "residuals": history, "clamp_events": clamps}
    return FeFunction(V, u), FeFunction(problem.W, psi), info


# -- outer loop ------------------------------------------------------------------------


def pg_solve(problem, config: PGConfig = PGConfig(), psi0: FeFunction | None = None,
             callback: Callable[[PGState], None] | None = None) -> PGTrajectory:
    """Run the proximal Galerkin iteration.

    Stops when ``||lambda_k - lambda_{k-1}||_{L2} <= outer_tol`` or
    ``||u_k - u_{k-1}||_{H1} <= outer_tol`` (after ``min_outer_iters``), or
    at ``max_outer_iters``.  Newton failures are re-raised with the outer
    iteration index attached.
    """
    ent, qp = problem.entropy, problem.qp
    psi0 = default_psi0(problem) if psi0 is None else psi0
    states = [PGState(0, None, psi0, math.nan)]
    reason = "max_iters"
    escale = None
    for k in range(1, config.max_outer_iters + 1):
        alpha = config.alpha(k)
        prev = states[-1]
        guess = prev.psi
        if config.warm_start == "extrapolate" and prev.dual is not None:
            guess = FeFunction(prev.psi.space, prev.psi.coefficients - alpha * prev.dual.coefficients)
        try:
            u, psi, info = newton_subproblem(problem, alpha, prev.psi, (prev.u, guess), config.newton)
        except NewtonError as exc:
            exc.outer_iteration = k
            log.error("Newton failure at outer iteration %d: %s", k, exc)
            raise
        lam = FeFunction(psi.space, (prev.psi.coefficients - psi.coefficients) / alpha)
        pq = psi_at(problem, psi)
        st = PGState(
            k, u, psi, alpha,
            energy=energy(problem, u),
            dual=lam,
            newton_iters=info["iters"],
            newton_residuals=info["residuals"],
            margin=float(ent.margin(qp.x, pq).min()),
            clamp_events=info["clamp_events"],
            dual_norm=float(np.sqrt(max(lam.coefficients @ (problem.M_W @ lam.coefficients), 0.0))),
        )
        if prev.u is not None:
            pp = psi_at(problem, prev.psi)
            div = qp.integrate(ent.dual_divergence(qp.x, pq, pp) + ent.dual_divergence(qp.x, pp, pq))
            st.dissipation_gap = st.energy + div / alpha - prev.energy
        states.append(st)
        if escale is None:
            escale = 1.0 + abs(st.energy)
        if callback is not None:
            callback(st)
        if config.strict and st.dissipation_gap > config.dissipation_tol * escale:
            reason = "dissipation_violation"
            break
        if prev.u is not None and k >= config.min_outer_iters:
            du = u.coefficients - prev.u.coefficients
            dl = lam.coefficients - (prev.dual.coefficients if prev.dual is not None else 0.0)
            h1 = math.sqrt(max(du @ (problem.H1 @ du), 0.0))
            l2 = math.sqrt(max(dl @ (problem.M_W @ dl), 0.0))
            if min(h1, l2) <= config.outer_tol:
                reason = "converged"
                break
    return PGTrajectory(states, reason, problem, config)


def with_overrides(config: PGConfig, **kw) -> PGConfig:
    newton = kw.pop("newton", None)
    cfg = replace(config, **kw)
    if newton:
        cfg = replace(cfg, newton=replace(cfg.newton, **newton))
    return cfg
