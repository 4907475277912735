"""Order-parameter measures ``nu = m(t) dt + c delta_T`` and friends.

A :class:`StepMeasure` stores the non-decreasing step density by its
jump knots, plus an optional atom at the horizon.  A
:class:`FiniteBetaMeasure` is a probability measure ``mu`` on ``[0, T]``
whose induced density is ``beta * mu([0, t])``; conversion in both
directions, the recovery-sequence construction and the atom/multiplier
substitution live here, together with the weak-* pairing used by the
convergence diagnostics.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad


@dataclass(frozen=True)
class StepMeasure:
    """``nu = m(t) dt + c delta_T`` with ``m`` a right-continuous step.

    ``knots`` is a tuple of ``(t_i, m_i)`` pairs with ``t_i`` strictly
    increasing in ``[0, T)`` and levels ``m_i`` non-decreasing and
    non-negative; ``m(t) = m_i`` on ``[t_i, t_{i+1})`` and 0 before the
    first knot.
    """

    horizon: float
    knots: tuple = ()
    atom: float = 0.0

    def __post_init__(self):
        T = float(self.horizon)
        if T <= 0:
            raise ValueError("horizon must be positive")
        ks = tuple((float(t), float(m)) for t, m in self.knots)
        last_t, last_m = -np.inf, 0.0
        for t, m in ks:
            if not 0.0 <= t < T:
                raise ValueError("knot times must lie in [0, T)")
            if t <= last_t:
                raise ValueError("knot times must be strictly increasing")
            if m < last_m - 1e-15:
                raise ValueError("levels must be non-decreasing")
            if m < 0:
                raise ValueError("levels must be non-negative")
            last_t, last_m = t, m
        if self.atom < 0:
            raise ValueError("atom mass must be non-negative")
        object.__setattr__(self, "horizon", T)
        object.__setattr__(self, "knots", ks)
        object.__setattr__(self, "atom", float(self.atom))

    @classmethod
    def zero(cls, horizon: float) -> "StepMeasure":
        return cls(horizon, (), 0.0)

    def density(self, t):
        """m(t), vectorised; right-continuous."""
        t = np.asarray(t, dtype=float)
        out = np.zeros_like(t)
        for tk, mk in self.knots:
            out = np.where(t >= tk, mk, out)
        return float(out) if out.ndim == 0 else out

    def breakpoints(self):
        """Interval endpoints 0 = s_0 < ... < s_J = T with constant m inside."""
        pts = [0.0] + [t for t, _ in self.knots if t > 0.0] + [self.horizon]
        return np.array(sorted(set(pts)))

    def mass(self) -> float:
        """Total mass ``integral m dt + c``."""
        pts = self.breakpoints()
        mids = 0.5 * (pts[:-1] + pts[1:])
        return float(np.sum(self.density(mids) * np.diff(pts)) + self.atom)

    def integral_density(self, lo: float, hi: float) -> float:
        """``integral_lo^hi m(t) dt`` (atom excluded)."""
        pts = self.breakpoints()
        pts = np.unique(np.clip(np.concatenate([pts, [lo, hi]]), lo, hi))
        mids = 0.5 * (pts[:-1] + pts[1:])
        return float(np.sum(self.density(mids) * np.diff(pts)))

    def to_dict(self):
        return {
            "T": self.horizon,
            "knots": [[t, m] for t, m in self.knots],
            "c": self.atom,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(d["T"], tuple((t, m) for t, m in d["knots"]), d.get("c", 0.0))


@dataclass(frozen=True)
class FiniteBetaMeasure:
    """Probability measure ``mu = sum w_i delta_{q_i}`` on ``[0, T]``.

    The induced order parameter has density ``beta * mu([0, t])`` and no
    atom at the horizon.
    """

    beta: float
    horizon: float
    mu_knots: tuple

    def __post_init__(self):
        if self.beta <= 0:
            raise ValueError("beta must be positive")
        T = float(self.horizon)
        if T <= 0:
            raise ValueError("horizon must be positive")
        ks = tuple((float(q), float(w)) for q, w in self.mu_knots)
        for q, w in ks:
            if not 0.0 <= q <= T:
                raise ValueError("mu atoms must lie in [0, T]")
            if w < -1e-15:
                raise ValueError("mu weights must be non-negative")
        tot = sum(w for _, w in ks)
        if abs(tot - 1.0) > 1e-9:
            raise ValueError("mu weights must sum to 1, got %r" % tot)
        ks = tuple(sorted((q, w) for q, w in ks))
        object.__setattr__(self, "beta", float(self.beta))
        object.__setattr__(self, "horizon", T)
        object.__setattr__(self, "mu_knots", ks)

    def cdf(self, t):
        t = np.asarray(t, dtype=float)
        out = np.zeros_like(t)
        for q, w in self.mu_knots:
            out = out + np.where(t >= q, w, 0.0)
        return float(out) if out.ndim == 0 else out

    def to_dict(self):
        return {
            "beta": self.beta,
            "T": self.horizon,
            "atoms": [[q, w] for q, w in self.mu_knots],
        }

    @classmethod
    def from_dict(cls, d):
        return cls(d["beta"], d["T"], tuple((q, w) for q, w in d["atoms"]))


def to_step_measure(fb: FiniteBetaMeasure) -> StepMeasure:
    """Density ``beta * mu([0, t])`` as a StepMeasure (atom-free)."""
    levels = []
    cum = 0.0
    for q, w in fb.mu_knots:
        if w <= 0.0:
            continue
        cum += w
        if q >= fb.horizon:  # mass exactly at T never reaches the density
            continue
        levels.append((q, fb.beta * cum))
    # merge duplicated positions, keep the last cumulative level
    merged = {}
    for q, m in levels:
        merged[q] = m
    knots = tuple(sorted(merged.items()))
    return StepMeasure(fb.horizon, knots, 0.0)


def recovery_sequence(nu: StepMeasure, beta: float) -> FiniteBetaMeasure:
    """Finite-beta measure converging weak-* to ``nu`` as beta grows.

    Solves ``integral_q^T m dt + c_beta = beta (T - q)`` for ``q_beta``
    by bisection (relative tolerance 1e-12 on the balance residual),
    with ``c_beta = c`` when the atom is positive and ``1/beta``
    otherwise, then returns the probability measure whose cdf is
    ``m(t)/beta`` below ``q_beta`` and 1 from ``q_beta`` on.
    """
    T = nu.horizon
    c_beta = nu.atom if nu.atom > 0 else 1.0 / beta

    def balance(q):
        return beta * (T - q) - nu.integral_density(q, T) - c_beta

    if balance(0.0) <= 0.0:
        raise ValueError("beta too small: no admissible q_beta in (0, T)")
    lo, hi = 0.0, T  # balance(T) = -c_beta < 0, balance(lo) > 0
    scale = beta * T
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        r = balance(mid)
        if abs(r) <= 1e-12 * scale:
            lo = hi = mid
            break
        if r > 0:
            lo = mid
        else:
            hi = mid
    q_beta = 0.5 * (lo + hi)
    if nu.density(q_beta) > beta * (1.0 + 1e-9):
        raise ValueError("beta too small: density exceeds beta at q_beta")

    atoms = []
    prev = 0.0
    for t, m in nu.knots:
        if t >= q_beta:
            break
        w = (m - prev) / beta
        if w > 0:
            atoms.append((t, w))
        prev = m
    rest = 1.0 - prev / beta
    atoms.append((q_beta, rest))
    return FiniteBetaMeasure(beta, T, tuple(atoms))


def substitute_atom(nu: StepMeasure, lam: float, xi) -> tuple:
    """Trade the atom for a multiplier shift, leaving the functional fixed.

    Returns ``(nu with c = 0, lam + c * xi''(T) / 2)``.
    """
    if nu.atom == 0.0:
        return nu, lam
    lam2 = lam + 0.5 * nu.atom * xi.eval(nu.horizon, 2)
    return StepMeasure(nu.horizon, nu.knots, 0.0), lam2


def pair(nu: StepMeasure, phi) -> float:
    """``integral phi d nu = integral_0^T phi(s) m(s) ds + c phi(T)``.

    ``phi`` must be evaluable on arrays or scalars and continuous at T.
    Each constant-level interval is integrated by adaptive quadrature.
    """
    total = nu.atom * float(phi(nu.horizon))
    pts = nu.breakpoints()
    for lo, hi in zip(pts[:-1], pts[1:]):
        m = nu.density(0.5 * (lo + hi))
        if m == 0.0 or hi <= lo:
            continue
        val, _ = quad(lambda s: float(phi(s)), lo, hi, limit=200)
        total += m * val
    return total


def overlap_transport(mu: FiniteBetaMeasure, f, fprime) -> tuple:
    """Both sides of ``beta * integral (f(T) - f(t)) dmu = integral f' dnu``.

    The right-hand side pairs ``f'`` against ``to_step_measure(mu)``;
    for atomic ``mu`` the identity is exact at finite beta.
    """
    T = mu.horizon
    fT = float(f(T))
    lhs = mu.beta * sum(w * (fT - float(f(q))) for q, w in mu.mu_knots)
    rhs = pair(to_step_measure(mu), fprime)
    return lhs, rhs
