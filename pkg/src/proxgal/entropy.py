"""Legendre entropies: conjugates, their derivatives, and Bregman divergences.

Each entropy ``R`` restricts an observable ``o`` to a pointwise convex set
``C(x)``.  The solver works with the latent variable ``psi`` and recovers the
observable as ``o = grad R*(psi)``, which lies strictly inside ``C(x)`` for
every finite ``psi``.  All evaluators take the physical points ``x`` of shape
``(n, dim)`` so that spatially varying bounds are sampled where needed.

Exponentials are evaluated with their argument clamped to ``[-EXP_CLAMP,
EXP_CLAMP]``; :meth:`LegendreEntropy.clamped` reports where that happens so
callers can count such events instead of silently losing feasibility.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Union

import numpy as np
from scipy.special import expit

from .spaces import FeFunction

EXP_CLAMP = 700.0

Data = Union[float, Callable[[np.ndarray], np.ndarray]]


def sample(f: Data, x: np.ndarray) -> np.ndarray:
    """Evaluate a constant or vectorised callable at points ``x`` (n, dim)."""
    x = np.asarray(x, dtype=float)
    if callable(f):
        return np.broadcast_to(np.asarray(f(x), dtype=float), (len(x),))
    return np.full(len(x), float(f))


def _exp(z):
    return np.exp(np.clip(z, -EXP_CLAMP, EXP_CLAMP))


def _exp_divergence(eta, psi):
    """``exp(eta) - exp(psi) - exp(psi) (eta - psi)`` without overflow or cancellation."""
    d = eta - psi
    small = np.abs(d) < 1.0
    out = np.empty(np.broadcast(eta, psi).shape)
    ep = _exp(psi) * np.ones_like(out)
    out[small] = (ep * (np.expm1(np.where(small, d, 0.0)) - np.where(small, d, 0.0)))[small]
    big = ~small
    out[big] = (_exp(eta) * np.ones_like(out) - ep - ep * d)[big]
    return out


def _check_finite(psi):
    psi = np.asarray(psi, dtype=float)
    if not np.all(np.isfinite(psi)):
        raise ValueError("latent variable has non-finite entries")
    return psi


class LegendreEntropy:
    """Common interface; subclasses provide closed forms."""

    vector = False

    def rstar(self, x, psi):
        raise NotImplementedError

    def grad(self, x, psi):
        raise NotImplementedError

    def hess(self, x, psi):
        raise NotImplementedError

    def grad_R(self, x, o):
        raise NotImplementedError

    def R(self, x, o):
        raise NotImplementedError

    def margin(self, x, psi):
        """Distance from ``grad R*(psi)`` to the boundary of ``C(x)`` (positive)."""
        raise NotImplementedError

    def interior(self, x, o) -> np.ndarray:
        """Mask of observables strictly inside ``C(x)``."""
        raise NotImplementedError

    def lift(self, x):
        """``grad R(0)`` at ``x``: the latent value of a zero observable."""
        return self.grad_R(x, np.zeros(len(np.atleast_2d(x))))

    def clamped(self, x, psi) -> np.ndarray:
        return np.abs(np.asarray(psi)) > EXP_CLAMP

    def dual_divergence(self, x, eta, psi):
        """Pointwise ``R*(eta) - R*(psi) - grad R*(psi) (eta - psi)``."""
        d = np.asarray(eta) - np.asarray(psi)
        g = self.grad(x, psi)
        lin = np.sum(g * d, axis=-1) if self.vector else g * d
        return self.rstar(x, eta) - self.rstar(x, psi) - lin

    def inverse_check(self, x, o):
        """Latent value of an interior observable; rejects boundary or exterior input."""
        if not np.all(self.interior(x, o)):
            raise ValueError("observable is not strictly inside the constraint set")
        return self.grad_R(x, o)


@dataclass(frozen=True)
class Shannon(LegendreEntropy):
    """Lower obstacle ``o > phi``: ``R*(psi) = exp(psi) + phi psi``."""

    phi: Data = 0.0

    def rstar(self, x, psi):
        psi = _check_finite(psi)
        return _exp(psi) + sample(self.phi, x) * psi

    def grad(self, x, psi):
        return _exp(_check_finite(psi)) + sample(self.phi, x)

    def hess(self, x, psi):
        return _exp(_check_finite(psi))

    def margin(self, x, psi):
        return _exp(_check_finite(psi))

    def grad_R(self, x, o):
        return np.log(np.asarray(o) - sample(self.phi, x))

    def R(self, x, o):
        y = np.asarray(o) - sample(self.phi, x)
        return y * np.log(y) - y

    def interior(self, x, o):
        return np.asarray(o) > sample(self.phi, x)

    def dual_divergence(self, x, eta, psi):
        return _exp_divergence(np.asarray(eta, dtype=float), np.asarray(psi, dtype=float))


@dataclass(frozen=True)
class FermiDirac(LegendreEntropy):
    """Two-sided bounds ``lower < o < upper`` via the binary entropy."""

    lower: Data = 0.0
    upper: Data = 1.0

    def _ab(self, x):
        a, b = sample(self.lower, x), sample(self.upper, x)
        if np.any(b <= a):
            raise ValueError("upper bound must exceed lower bound")
        return a, b

    def rstar(self, x, psi):
        psi = _check_finite(psi)
        a, b = self._ab(x)
        return a * psi + (b - a) * (np.logaddexp(0.0, psi) - np.log(b - a))

    def grad(self, x, psi):
        a, b = self._ab(x)
        return a + (b - a) * expit(_check_finite(psi))

    def hess(self, x, psi):
        a, b = self._ab(x)
        psi = _check_finite(psi)
        return (b - a) * expit(psi) * expit(-psi)

    def margin(self, x, psi):
        a, b = self._ab(x)
        return (b - a) * expit(-np.abs(_check_finite(psi)))

    def grad_R(self, x, o):
        a, b = self._ab(x)
        o = np.asarray(o)
        return np.log(o - a) - np.log(b - o)

    def R(self, x, o):
        a, b = self._ab(x)
        o = np.asarray(o)
        return (o - a) * np.log(o - a) + (b - o) * np.log(b - o)

    def interior(self, x, o):
        a, b = self._ab(x)
        return (np.asarray(o) > a) & (np.asarray(o) < b)

    def clamped(self, x, psi):
        return np.zeros(np.shape(psi), dtype=bool)


@dataclass(frozen=True)
class Hellinger(LegendreEntropy):
    """Ball constraint ``|o| < gamma`` for vector observables (last axis)."""

    gamma: float = 1.0
    vector = True

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError("gamma must be positive")

    @staticmethod
    def _s(psi):
        return np.sqrt(1.0 + np.sum(psi * psi, axis=-1))

    def rstar(self, x, psi):
        return self.gamma * self._s(_check_finite(psi))

    def grad(self, x, psi):
        psi = _check_finite(psi)
        return self.gamma * psi / self._s(psi)[..., None]

    def hess(self, x, psi):
        psi = _check_finite(psi)
        s = self._s(psi)[..., None, None]
        eye = np.eye(psi.shape[-1])
        outer = psi[..., :, None] * psi[..., None, :]
        return self.gamma / s * (eye - outer / s**2)

    def margin(self, x, psi):
        psi = _check_finite(psi)
        s = self._s(psi)
        return self.gamma / (s * (s + np.linalg.norm(psi, axis=-1)))

    def grad_R(self, x, o):
        o = np.asarray(o, dtype=float)
        return o / np.sqrt(self.gamma**2 - np.sum(o * o, axis=-1))[..., None]

    def R(self, x, o):
        o = np.asarray(o, dtype=float)
        return -np.sqrt(self.gamma**2 - np.sum(o * o, axis=-1))

    def interior(self, x, o):
        return np.linalg.norm(np.asarray(o, dtype=float), axis=-1) < self.gamma

    def lift(self, x):
        return np.zeros_like(np.atleast_2d(np.asarray(x, dtype=float)))

    def clamped(self, x, psi):
        return np.zeros(np.shape(psi)[:-1], dtype=bool)


@dataclass(frozen=True)
class SignoriniLog(LegendreEntropy):
    """Upper bound ``o < g`` on a normal trace: ``R*(psi) = exp(-psi) + g psi``."""

    gap: Data = 1.0

    def rstar(self, x, psi):
        psi = _check_finite(psi)
        return _exp(-psi) + sample(self.gap, x) * psi

    def grad(self, x, psi):
        return sample(self.gap, x) - _exp(-_check_finite(psi))

    def hess(self, x, psi):
        return _exp(-_check_finite(psi))

    def margin(self, x, psi):
        return _exp(-_check_finite(psi))

    def grad_R(self, x, o):
        return -np.log(sample(self.gap, x) - np.asarray(o))

    def R(self, x, o):
        y = sample(self.gap, x) - np.asarray(o)
        return y * np.log(y) - y

    def interior(self, x, o):
        return np.asarray(o) < sample(self.gap, x)

    def dual_divergence(self, x, eta, psi):
        return _exp_divergence(-np.asarray(eta, dtype=float), -np.asarray(psi, dtype=float))


def grad_rstar(entropy: LegendreEntropy, x, psi):
    return entropy.grad(x, psi)


def hess_rstar(entropy: LegendreEntropy, x, psi):
    return entropy.hess(x, psi)


def inverse_check(entropy: LegendreEntropy, x, o):
    return entropy.inverse_check(x, o)


def bregman_dual(entropy: LegendreEntropy, eta, psi, qp, offset=None) -> float:
    """Integrated dual divergence ``int D*(eta, psi)`` over a quadrature point set.

    ``eta`` and ``psi`` are FeFunctions (evaluated at the points) or arrays of
    point values; ``offset`` is added to both (e.g. a boundary lift).
    """

    def vals(f):
        v = f.at(qp.cells, qp.bary) if isinstance(f, FeFunction) else np.asarray(f, dtype=float)
        return v if offset is None else v + offset

    return qp.integrate(entropy.dual_divergence(qp.x, vals(eta), vals(psi)))
