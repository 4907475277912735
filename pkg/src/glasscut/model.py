"""Mixture functions, finite alphabets and terminal data for the solver.

The model layer is deliberately small: an even-polynomial covariance
``xi``, a finite spin alphabet ``Sigma``, the log-moment generating
function ``psi`` and the two families of terminal data (soft-max at
inverse temperature ``beta`` and the hard sup at zero temperature).
Everything here is a pure function of immutable values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class MixtureXi:
    """Even polynomial ``xi(t) = sum_k coeffs[k] * t**(2k+2)``.

    ``coeffs[0]`` multiplies ``t**2``, ``coeffs[1]`` multiplies ``t**4``
    and so on; all coefficients must be >= 0 with at least one positive.
    """

    coeffs: tuple

    def __post_init__(self):
        cs = tuple(float(c) for c in self.coeffs)
        if not cs:
            raise ValueError("xi needs at least one coefficient")
        if any(c < 0 for c in cs):
            raise ValueError("xi coefficients must be non-negative")
        if not any(c > 0 for c in cs):
            raise ValueError("xi must have at least one positive coefficient")
        object.__setattr__(self, "coeffs", cs)

    def __call__(self, t, order: int = 0):
        return self.eval(t, order)

    def eval(self, t, order: int = 0):
        """Evaluate ``xi``, ``xi'`` or ``xi''`` at ``t >= 0``."""
        t = np.asarray(t, dtype=float)
        if np.any(t < 0):
            raise ValueError("xi is only evaluated at t >= 0")
        out = np.zeros_like(t)
        for k, c in enumerate(self.coeffs):
            p = 2 * k + 2
            if order == 0:
                out = out + c * t**p
            elif order == 1:
                out = out + c * p * t ** (p - 1)
            elif order == 2:
                out = out + c * p * (p - 1) * t ** (p - 2)
            else:
                raise ValueError("order must be 0, 1 or 2")
        return float(out) if out.ndim == 0 else out

    def as_list(self):
        return list(self.coeffs)


def eval_xi(xi: MixtureXi, t, order: int = 0):
    return xi.eval(t, order)


@dataclass(frozen=True)
class Alphabet:
    """Finite spin set, stored sorted with its squared-value range."""

    values: tuple
    dmin: float = field(init=False)
    Dmax: float = field(init=False)

    def __post_init__(self):
        vals = tuple(sorted(float(v) for v in self.values))
        if not vals:
            raise ValueError("alphabet must be non-empty")
        if len(set(vals)) != len(vals):
            raise ValueError("alphabet values must be distinct")
        object.__setattr__(self, "values", vals)
        sq = [v * v for v in vals]
        object.__setattr__(self, "dmin", min(sq))
        object.__setattr__(self, "Dmax", max(sq))

    @property
    def abs_max(self) -> float:
        return max(abs(v) for v in self.values)

    def __len__(self):
        return len(self.values)

    def array(self):
        return np.asarray(self.values, dtype=float)

    def as_list(self):
        return list(self.values)


@dataclass(frozen=True)
class BoundarySpec:
    """Terminal-data description for the backward solves.

    ``beta is None`` selects the zero-temperature sup; otherwise the
    smooth log-sum-exp data at inverse temperature ``beta``.  The atom
    ``atom`` at the horizon enters only through the effective tilt
    ``lam + atom * xi_pp_T / 2``.  With ``constrained_endpoint`` set the
    sup/sum runs over ``{eps : eps^2 == horizon}`` only.
    """

    lam: float
    atom: float = 0.0
    xi_pp_T: float = 0.0
    beta: float | None = None
    constrained_endpoint: bool = False
    horizon: float | None = None

    def __post_init__(self):
        if self.atom < 0:
            raise ValueError("atom mass must be non-negative")
        if self.beta is not None and self.beta <= 0:
            raise ValueError("beta must be positive or None")
        tilt = self.effective_tilt
        if not math.isfinite(tilt):
            raise ValueError("effective tilt must be finite")
        if self.constrained_endpoint and self.horizon is None:
            raise ValueError("constrained endpoint needs the horizon value")

    @property
    def effective_tilt(self) -> float:
        return self.lam + 0.5 * self.xi_pp_T * self.atom

    def spins(self, sigma: Alphabet) -> np.ndarray:
        eps = sigma.array()
        if not self.constrained_endpoint:
            return eps
        keep = np.isclose(eps**2, self.horizon, rtol=1e-12, atol=1e-12)
        if not keep.any():
            raise ValueError(
                "constrained endpoint: no spin with eps^2 == %r" % (self.horizon,)
            )
        return eps[keep]


def psi(sigma: Alphabet, theta) -> float:
    """log sum_{eps in Sigma} exp(theta * eps^2), overflow-safe."""
    theta = np.asarray(theta, dtype=float)
    expo = np.multiply.outer(theta, sigma.array() ** 2)
    m = expo.max(axis=-1, keepdims=True)
    out = np.squeeze(m, -1) + np.log(np.exp(expo - m).sum(axis=-1))
    return float(out) if out.ndim == 0 else out


def boundary_value(sigma: Alphabet, spec: BoundarySpec, x):
    """Terminal data and its x-derivative proxy at one or many points.

    Returns ``(value, argmax_spin)``.  At zero temperature the value is
    the exact piecewise-affine sup and ``argmax_spin`` the maximising
    spin (ties broken toward larger ``eps^2``); at finite beta the value
    is the log-sum-exp and ``argmax_spin`` the Gibbs mean of ``eps``.
    Both second components equal ``d/dx`` of the value where defined.
    """
    eps = spec.spins(sigma)
    tilt = spec.effective_tilt
    x = np.asarray(x, dtype=float)
    scores = np.multiply.outer(x, eps) + tilt * eps**2
    if spec.beta is None:
        # lexicographic argmax: score first, then eps^2 for ties
        best = scores.max(axis=-1, keepdims=True)
        is_best = scores >= best - 1e-13 * (1.0 + np.abs(best))
        sq = np.where(is_best, eps**2, -np.inf)
        pick = np.argmax(sq, axis=-1)
        value = np.squeeze(best, -1)
        spin = eps[pick]
    else:
        b = spec.beta
        m = scores.max(axis=-1, keepdims=True)
        w = np.exp(b * (scores - m))
        z = w.sum(axis=-1)
        value = np.squeeze(m, -1) + np.log(z) / b
        spin = (w * eps).sum(axis=-1) / z
    if value.ndim == 0:
        return float(value), float(spin)
    return value, spin


def sigma_T_map(v: float, alpha: float):
    """Two-point alphabet and self-overlap level of the shifted cut model.

    ``Sigma(v, alpha) = {1 - sqrt(v)(2a-1), -1 - sqrt(v)(2a-1)}`` and
    ``T(v, alpha) = a(1-cen)^2 + (1-a)(1+cen)^2`` with ``cen = sqrt(v)(2a-1)``.
    """
    if not 0.0 <= v <= 1.0:
        raise ValueError("v must lie in [0, 1]")
    if not 0.0 < alpha < 0.5:
        raise ValueError("alpha must lie in (0, 1/2)")
    cen = math.sqrt(v) * (2.0 * alpha - 1.0)
    sig = Alphabet((1.0 - cen, -1.0 - cen))
    T = alpha * (1.0 - cen) ** 2 + (1.0 - alpha) * (1.0 + cen) ** 2
    return sig, T
