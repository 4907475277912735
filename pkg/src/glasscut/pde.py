"""Backward solver for the order-parameter boundary value problems.

The equation solved on ``[0, T] x R`` is

    du/dt + (xi''(t)/2) (d^2u/dx^2 + m(t) (du/dx)^2) = 0

backwards from terminal data that is either the zero-temperature sup or
the finite-beta log-sum-exp over the alphabet.  Because ``m`` is a step
function, each constant-level interval is crossed in one Cole-Hopf
step:

    u(t, x) = (1/m) log E[ exp(m u(t1, x + Z sqrt(xi'(t1) - xi'(t)))) ]

with ``Z`` standard normal.  Three step implementations cooperate:

* an exact "collapse" when the current slice is log-sum-exp-affine at
  the same inverse temperature as the level ``m`` (this covers every
  single-spin problem and the final interval of finite-beta measures);
* an exact truncated-Gaussian step when the slice is piecewise affine
  (zero-temperature data) or too sharp for the grid, with a small
  quadrature window around each kink correcting for finite sharpness;
* a Gauss-Hermite quadrature pass composed with monotone cubic
  interpolation for generic numeric slices.

The spatial derivative and the multiplier derivative ride along as
payloads: both solve the linearised backward equation, whose
Feynman-Kac representation is exactly the Gibbs-weighted average the
passes compute, so no finite differencing in ``lambda`` is needed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.polynomial.hermite import hermgauss
from scipy.interpolate import CubicSpline
from scipy.special import log_ndtr

from .backend import kernels
from .measures import StepMeasure
from .model import Alphabet, BoundarySpec, MixtureXi

_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)
_GH_CACHE = {}


class GridResolutionError(RuntimeError):
    """Raised when the space grid cannot represent the solution."""


class OutOfMeshError(ValueError):
    """Raised on evaluation outside the stored space-time mesh."""


def _gh_rule(order):
    if order not in _GH_CACHE:
        z, w = hermgauss(order)
        _GH_CACHE[order] = (np.sqrt(2.0) * z, np.log(w) - 0.5 * math.log(math.pi))
    return _GH_CACHE[order]


def _log1mexp(t):
    """log(1 - exp(t)) for t <= 0, elementwise and stable."""
    t = np.asarray(t, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(t < -0.6931471805599453,
                       np.log1p(-np.exp(t)),
                       np.log(-np.expm1(np.minimum(t, 0.0))))
    return np.where(t == -np.inf, 0.0, out)


def _log_ndtr_diff(hi, lo):
    """log(Phi(hi) - Phi(lo)) for hi >= lo, stable in both tails."""
    hi = np.asarray(hi, dtype=float)
    lo = np.asarray(lo, dtype=float)
    use_lower = np.where(np.isinf(hi), False, np.where(np.isinf(lo), True, hi + lo < 0))
    a = np.where(use_lower, hi, -lo)
    b = np.where(use_lower, lo, -hi)
    la = log_ndtr(a)
    lb = log_ndtr(b)
    return la + _log1mexp(np.minimum(lb - la, 0.0))


@dataclass
class SolverConfig:
    """Numerical knobs for the backward/forward solves."""

    gh_order: int = 64
    grid_size: int = 2049
    time_steps: int = 256
    half_width: float | None = None
    mass_budget: float = 2.0
    tilt_bound: float = 1.0
    sharp_cells: float = 3.0
    kink_quad: int = 32
    kink_window: float = 10.0
    z_cap: float = 6.0
    mass_defect_tol: float = 1e-4

    def __post_init__(self):
        if self.gh_order < 8:
            raise ValueError("gh_order must be at least 8")
        if self.grid_size % 2 == 0:
            raise ValueError("grid_size must be odd so that x = 0 is a node")


@dataclass(frozen=True)
class SpaceGrid:
    half_width: float
    size: int

    @property
    def h(self):
        return 2.0 * self.half_width / (self.size - 1)

    @property
    def x(self):
        return np.linspace(-self.half_width, self.half_width, self.size)

    @property
    def center(self):
        return (self.size - 1) // 2


def auto_half_width(xi, sigma, T, tilt_bound, mass_budget):
    """Grid half-width covering kinks, drift and four diffusion sigmas.

    The kinks of the terminal data sit within ``2 |tilt| eps_max``; the
    backward kink drift across an interval of level m is bounded by
    ``eps_max * m * (xi' gap)``, hence by ``eps_max * xi''(T) * mass``
    in total, and the driftless diffusion has standard deviation
    ``sqrt(xi'(T))`` regardless of m.
    """
    eps_max = sigma.abs_max
    L = (
        3.0 * eps_max
        + 4.0 * math.sqrt(xi.eval(T, 1))
        + 2.0 * abs(tilt_bound) * eps_max
        + eps_max * xi.eval(T, 2) * mass_budget
    )
    return max(L, 6.0 * max(eps_max, 1.0))


class _LSESlice:
    """u(y) = (1/kappa) log sum_j exp(kappa (b_j y + a_j)).

    ``kappa = inf`` stores the piecewise-affine sup.  ``dlam`` carries
    d a_j / d lambda for the multiplier payload.  Only branches on the
    upper envelope are kept.
    """

    def __init__(self, slopes, inters, dlam, kappa):
        order = np.argsort(np.asarray(slopes, dtype=float), kind="stable")
        b = np.asarray(slopes, dtype=float)[order]
        a = np.asarray(inters, dtype=float)[order]
        d = np.asarray(dlam, dtype=float)[order]
        keep = self._envelope(b, a)
        self.b = b[keep]
        self.a = a[keep]
        self.d = d[keep]
        self.kappa = float(kappa)
        if self.b.size > 1:
            self.breaks = (self.a[:-1] - self.a[1:]) / (self.b[1:] - self.b[:-1])
        else:
            self.breaks = np.empty(0)

    @staticmethod
    def _envelope(b, a):
        """Boolean mask of lines on the upper envelope (slopes sorted)."""
        idx = []
        for j in range(b.size):
            if idx and b[idx[-1]] == b[j]:
                if a[j] <= a[idx[-1]]:
                    continue
                idx.pop()
            while len(idx) >= 2:
                j1, j2 = idx[-2], idx[-1]
                x12 = (a[j1] - a[j2]) / (b[j2] - b[j1])
                x2j = (a[j2] - a[j]) / (b[j] - b[j2])
                if x2j <= x12:  # middle line never on top
                    idx.pop()
                else:
                    break
            idx.append(j)
        keep = np.zeros(b.size, dtype=bool)
        keep[idx] = True
        return keep

    @property
    def nbranches(self):
        return self.b.size

    def width(self):
        """Smoothing length of the softest kink; 0 when kappa = inf."""
        if self.b.size <= 1 or math.isinf(self.kappa):
            return 0.0
        return 1.0 / (self.kappa * np.diff(self.b).min())

    def collapse(self, m, dxi):
        """Exact Cole-Hopf step (valid when m == kappa or one branch)."""
        return _LSESlice(self.b, self.a + 0.5 * m * self.b**2 * dxi,
                         self.d, self.kappa)

    def fields(self, x):
        """(u, ux, uxx, ulam) at points x, exact."""
        x = np.asarray(x, dtype=float)
        scores = np.multiply.outer(x, self.b) + self.a
        if math.isinf(self.kappa):
            # at exact kinks report the subgradient midpoint, so that
            # symmetric problems stay symmetric on the grid
            best = scores.max(axis=-1, keepdims=True)
            tied = scores >= best - 1e-12 * (1.0 + np.abs(best))
            ntied = tied.sum(axis=-1)
            u = np.squeeze(best, -1)
            ux = (tied * self.b).sum(axis=-1) / ntied
            ulam = (tied * self.d).sum(axis=-1) / ntied
            uxx = np.zeros_like(u)
        else:
            k = self.kappa
            e = k * scores
            mx = e.max(axis=-1, keepdims=True)
            w = np.exp(e - mx)
            z = w.sum(axis=-1)
            u = (np.squeeze(mx, -1) + np.log(z)) / k
            w = w / z[..., None]
            ux = (w * self.b).sum(axis=-1)
            ulam = (w * self.d).sum(axis=-1)
            uxx = k * ((w * self.b**2).sum(axis=-1) - ux**2)
        return u, ux, uxx, ulam


def terminal_slice(sigma: Alphabet, spec: BoundarySpec) -> _LSESlice:
    eps = spec.spins(sigma)
    tilt = spec.effective_tilt
    kappa = np.inf if spec.beta is None else spec.beta
    return _LSESlice(eps, tilt * eps**2, eps**2, kappa)


def _gauss_legendre(n, lo, hi):
    z, w = np.polynomial.legendre.leggauss(n)
    mid, half = 0.5 * (hi + lo), 0.5 * (hi - lo)
    return mid + half * z, half * w


def _kink_corrections(sl: _LSESlice, m, var, x, Lstar, config):
    """Window-quadrature terms for finitely sharp (finite kappa) kinks.

    Additive corrections to the scaled partition function and payload
    numerators, plus the full quadrature replacement ``kink`` for the
    u'' term.  Everything shares the caller's e^{-Lstar} scaling
    (Lstar = 0 when m = 0).
    """
    sig = math.sqrt(var)
    k = sl.kappa
    b, a, d = sl.b, sl.a, sl.d
    out = {key: np.zeros_like(x) for key in ("u0", "Z", "ux", "ulam", "b2", "kink")}
    for r in range(sl.breaks.size):
        c = sl.breaks[r]
        gap = b[r + 1] - b[r]
        W = config.kink_window / (k * gap)
        y, wq = _gauss_legendre(config.kink_quad, c - W, c + W)
        scores = np.outer(y, b) + a[None, :]
        e = k * scores
        mx = e.max(axis=1)
        sm = np.exp(e - mx[:, None])
        z = sm.sum(axis=1)
        u_d = (mx + np.log(z)) / k
        sm /= z[:, None]
        ux_d = sm @ b
        ulam_d = sm @ d
        uxx_d = k * (sm @ (b**2) - ux_d**2)
        pa = scores.max(axis=1)
        j_hard = np.argmax(scores, axis=1)
        bh = b[j_hard]
        dh = d[j_hard]
        logphi = -((y[None, :] - x[:, None]) ** 2) / (2 * var) \
            - math.log(sig) - _LOG_SQRT_2PI  # (M, Q)
        if m > 0:
            w_exact = np.exp(m * u_d[None, :] + logphi - Lstar[:, None]) * wq[None, :]
            w_pa = np.exp(m * pa[None, :] + logphi - Lstar[:, None]) * wq[None, :]
            out["Z"] += (w_exact - w_pa).sum(axis=1)
        else:
            w_exact = np.exp(logphi) * wq[None, :]
            w_pa = w_exact
            out["u0"] += (w_exact * (u_d - pa)[None, :]).sum(axis=1)
        out["ux"] += (w_exact * ux_d[None, :] - w_pa * bh[None, :]).sum(axis=1)
        out["ulam"] += (w_exact * ulam_d[None, :] - w_pa * dh[None, :]).sum(axis=1)
        out["b2"] += (w_exact * (ux_d**2)[None, :] - w_pa * (bh**2)[None, :]).sum(axis=1)
        out["kink"] += (w_exact * uxx_d[None, :]).sum(axis=1)
    return out


def _pa_step_fields(sl: _LSESlice, m, var, x, config):
    """Exact one-interval step from an LSE slice, evaluated at x.

    ``var`` is the xi' gap crossed.  The piecewise-affine part is in
    closed form (tilted truncated Gaussians); for finite kappa the kink
    windows from :func:`_kink_corrections` restore the softening.
    Returns ``(u, ux, uxx, ulam)``.
    """
    if var <= 0:
        return sl.fields(x)
    sig = math.sqrt(var)
    b, a, d = sl.b, sl.a, sl.d
    B = b.size
    x = np.asarray(x, dtype=float)
    edges = np.concatenate([[-np.inf], sl.breaks, [np.inf]])
    soft = B > 1 and not math.isinf(sl.kappa)

    if m > 0.0:
        shift = x[:, None] + m * var * b[None, :]
        hi = (edges[None, 1:] - shift) / sig
        lo = (edges[None, :-1] - shift) / sig
        logterm = m * (np.outer(x, b) + a[None, :]) \
            + 0.5 * m * m * var * b[None, :] ** 2 + _log_ndtr_diff(hi, lo)
        Lstar = logterm.max(axis=1)
        Wb = np.exp(logterm - Lstar[:, None])
        Z = Wb.sum(axis=1)
        num_ux = Wb @ b
        num_ulam = Wb @ d
        num_b2 = Wb @ (b**2)
        num_kink = np.zeros_like(Z)
        if B > 1 and not soft:
            for r in range(B - 1):
                c = sl.breaks[r]
                pa_c = b[r] * c + a[r]
                lk = m * pa_c - (c - x) ** 2 / (2 * var) \
                    - math.log(sig) - _LOG_SQRT_2PI
                num_kink += (b[r + 1] - b[r]) * np.exp(lk - Lstar)
        elif soft:
            corr = _kink_corrections(sl, m, var, x, Lstar, config)
            Z = Z + corr["Z"]
            num_ux = num_ux + corr["ux"]
            num_ulam = num_ulam + corr["ulam"]
            num_b2 = num_b2 + corr["b2"]
            num_kink = corr["kink"]
        u = (Lstar + np.log(Z)) / m
        ux = num_ux / Z
        ulam = num_ulam / Z
        uxx = m * (num_b2 / Z - ux**2) + num_kink / Z
        return u, ux, uxx, ulam

    # m == 0: plain Gaussian average of the data
    hi = (edges[None, 1:] - x[:, None]) / sig
    lo = (edges[None, :-1] - x[:, None]) / sig
    mass = np.exp(log_ndtr(hi)) - np.exp(log_ndtr(lo))
    pdf_hi = np.where(np.isfinite(hi), np.exp(-0.5 * hi**2 - _LOG_SQRT_2PI), 0.0)
    pdf_lo = np.where(np.isfinite(lo), np.exp(-0.5 * lo**2 - _LOG_SQRT_2PI), 0.0)
    u = ((np.outer(x, b) + a[None, :]) * mass
         + sig * b[None, :] * (pdf_lo - pdf_hi)).sum(axis=1)
    ux = mass @ b
    ulam = mass @ d
    uxx = np.zeros_like(u)
    if B > 1 and not soft:
        for r in range(B - 1):
            c = sl.breaks[r]
            uxx += (b[r + 1] - b[r]) * np.exp(
                -((c - x) ** 2) / (2 * var) - math.log(sig) - _LOG_SQRT_2PI
            )
    elif soft:
        corr = _kink_corrections(sl, 0.0, var, x, np.zeros_like(u), config)
        u = u + corr["u0"]
        ux = ux + corr["ux"]
        ulam = ulam + corr["ulam"]
        uxx = corr["kink"]
    return u, ux, uxx, ulam


@dataclass
class PdeSolution:
    """Backward solution on grid x time mesh with derivative fields.

    ``m_right[i]`` is the density level on ``[times[i], times[i+1])``.
    Storage is in the u-normalisation; v-form values follow from
    ``v(t, x) = beta u(t, x / beta)`` on demand.
    """

    grid: SpaceGrid
    times: np.ndarray
    u: np.ndarray
    ux: np.ndarray
    uxx: np.ndarray
    ulam: np.ndarray
    m_right: np.ndarray
    xi: MixtureXi
    sigma: Alphabet
    nu: StepMeasure
    spec: BoundarySpec
    config: SolverConfig
    normalization: str = "u"

    @property
    def horizon(self):
        return float(self.times[-1])

    def value00(self):
        return float(self.u[0, self.grid.center])

    def ux00(self):
        return float(self.ux[0, self.grid.center])

    def ulam00(self):
        return float(self.ulam[0, self.grid.center])

    def _field(self, name):
        try:
            return {"u": self.u, "ux": self.ux, "uxx": self.uxx,
                    "ulam": self.ulam}[name]
        except KeyError:
            raise ValueError("unknown field %r" % name) from None

    def _interp_row(self, arr, row, x):
        dd = kernels.pchip_slopes(np.ascontiguousarray(arr[row]), self.grid.h)
        pos = (x + self.grid.half_width) / self.grid.h
        j = np.clip(np.floor(pos).astype(int), 0, self.grid.size - 2)
        f = pos - j
        f2, f3 = f * f, f * f * f
        return ((2 * f3 - 3 * f2 + 1) * arr[row, j]
                + (-2 * f3 + 3 * f2) * arr[row, j + 1]
                + self.grid.h * ((f3 - 2 * f2 + f) * dd[j] + (f3 - f2) * dd[j + 1]))

    def evaluate(self, t, x, field="u"):
        """Monotone-cubic in x, linear in t between stored slices."""
        arr = self._field(field)
        T = self.horizon
        if not 0.0 <= t <= T + 1e-12:
            raise OutOfMeshError("t=%r outside [0, %r]" % (t, T))
        x = np.asarray(x, dtype=float)
        if np.any(np.abs(x) > self.grid.half_width * (1 + 1e-12)):
            raise OutOfMeshError("x outside the grid")
        i = int(np.searchsorted(self.times, t, side="right") - 1)
        i = min(max(i, 0), len(self.times) - 2)
        t0, t1 = self.times[i], self.times[i + 1]
        w = 0.0 if t1 == t0 else min(max((t - t0) / (t1 - t0), 0.0), 1.0)
        out = (1 - w) * self._interp_row(arr, i, x)
        if w > 0:
            out = out + w * self._interp_row(arr, i + 1, x)
        return float(out) if out.ndim == 0 else out

    def evaluate_vform(self, beta, t, x, field="u"):
        """v-normalised value via v(t, x) = beta * u(t, x / beta)."""
        scale = {"u": beta, "ux": 1.0, "uxx": 1.0 / beta, "ulam": beta}[field]
        return scale * self.evaluate(t, np.asarray(x) / beta, field)

    def density_level(self, t):
        if len(self.m_right) == 0:
            return 0.0
        i = int(np.searchsorted(self.times, t, side="right") - 1)
        return float(self.m_right[min(max(i, 0), len(self.m_right) - 1)])

    def to_table(self):
        """Flat (t, x, u, ux, uxx, ulam) rows for the CSV dump."""
        rows = []
        for i, t in enumerate(self.times):
            for j, xv in enumerate(self.grid.x):
                rows.append((t, xv, self.u[i, j], self.ux[i, j],
                             self.uxx[i, j], self.ulam[i, j]))
        return rows


@dataclass
class ForwardDensity:
    """Density of the optimal forward trajectory started at (0, 0)."""

    grid: SpaceGrid
    times: np.ndarray
    rho: np.ndarray
    mass_defect: float

    def moment(self, j, weight):
        return float(np.trapezoid(self.rho[j] * weight, self.grid.x))


def _intervals(nu: StepMeasure):
    """Constant-level intervals of nu with equal-level neighbours merged."""
    bps = nu.breakpoints()
    out = []
    for lo, hi in zip(bps[:-1], bps[1:]):
        m = float(nu.density(0.5 * (lo + hi)))
        if out and out[-1][2] == m:
            out[-1] = (out[-1][0], hi, m)
        else:
            out.append((lo, hi, m))
    return out


def _pad_slice(arr, P, h, left_slope, right_slope):
    left = arr[0] + left_slope * h * np.arange(-P, 0)
    right = arr[-1] + right_slope * h * np.arange(1, P + 1)
    return np.concatenate([left, arr, right])


def _numeric_step(fields, m, var, grid, config):
    """Gauss-Hermite pass from a numeric slice across a xi' gap."""
    u, ux, ulam = fields
    h = grid.h
    offs, logw = _gh_rule(config.gh_order)
    off = math.sqrt(var) * offs
    P = int(math.ceil(np.abs(off).max() / h)) + 2
    js = np.floor(off / h).astype(np.int64)
    fs = off / h - js
    u_pad = _pad_slice(u, P, h, ux[0], ux[-1])
    ux_pad = _pad_slice(ux, P, h, 0.0, 0.0)
    ulam_pad = _pad_slice(ulam, P, h, 0.0, 0.0)
    du = kernels.pchip_slopes(u_pad, h)
    pays = np.vstack([ux_pad, ulam_pad])
    dpays = np.vstack([kernels.pchip_slopes(ux_pad, h),
                       kernels.pchip_slopes(ulam_pad, h)])
    u_out, pays_out = kernels.gh_weighted_pass(
        u_pad, du, pays, dpays, js, fs, logw, float(m), grid.size, P, h
    )
    return u_out, pays_out[0], pays_out[1]


def solve_backward(xi: MixtureXi, sigma: Alphabet, T: float, nu: StepMeasure,
                   spec: BoundarySpec, config: SolverConfig | None = None,
                   mesh: str = "fine") -> PdeSolution:
    """Solve the backward problem and return fields on the time mesh.

    ``mesh='fine'`` refines every constant-level interval to steps of at
    most ``T / config.time_steps`` (needed by the forward density and
    the G-function); ``mesh='knots'`` stores slices at the measure
    breakpoints only, which is all a functional value needs.
    """
    config = config or SolverConfig()
    if mesh not in ("fine", "knots"):
        raise ValueError("mesh must be 'fine' or 'knots'")
    if abs(nu.horizon - T) > 1e-12 * max(1.0, T):
        raise ValueError("measure horizon does not match T")
    if spec.beta is not None and nu.atom != 0.0:
        raise ValueError("finite-beta solves need the atom absorbed first")

    intervals = _intervals(nu)
    drift_mass = sum(m * (xi.eval(hi, 1) - xi.eval(lo, 1))
                     for lo, hi, m in intervals) / max(xi.eval(T, 2), 1e-300) \
        + nu.atom
    L = auto_half_width(
        xi, sigma, T,
        max(config.tilt_bound, abs(spec.effective_tilt)),
        max(config.mass_budget, drift_mass),
    )
    if config.half_width is not None:
        L = max(config.half_width, L if drift_mass > config.mass_budget else 0.0)
    grid = SpaceGrid(L, config.grid_size)

    dt_max = T / config.time_steps
    times = [T]
    slices = [_materialize_state(terminal_slice(sigma, spec), grid)]
    state = terminal_slice(sigma, spec)

    for lo, hi, m in reversed(intervals):
        nsub = max(1, int(math.ceil((hi - lo) / dt_max))) if mesh == "fine" else 1
        sub = np.linspace(hi, lo, nsub + 1)[1:]
        var_full = xi.eval(hi, 1) - xi.eval(lo, 1)

        if isinstance(state, _LSESlice):
            collapsible = state.nbranches == 1 or (
                not math.isinf(state.kappa)
                and abs(m - state.kappa) <= 1e-12 * state.kappa
            )
            if collapsible:
                for t in sub:
                    part = state.collapse(m, xi.eval(hi, 1) - xi.eval(t, 1))
                    times.append(float(t))
                    slices.append(_materialize_state(part, grid))
                state = state.collapse(m, var_full)
                continue
            sharp = math.isinf(state.kappa) or \
                state.width() < config.sharp_cells * grid.h
            if sharp:
                last = None
                for t in sub:
                    var = xi.eval(hi, 1) - xi.eval(t, 1)
                    f = _pa_step_fields(state, m, var, grid.x, config)
                    times.append(float(t))
                    slices.append(f)
                    last = f
                state = (last[0], last[1], last[3])
                continue
            # resolved on the grid: freeze to numbers, then GH below
            f = state.fields(grid.x)
            state = (f[0], f[1], f[3])

        u_hi, ux_hi, ulam_hi = state
        guard = m * sigma.abs_max * math.sqrt(max(var_full, 0.0))
        chain = guard > config.z_cap
        if chain:
            need = int(math.ceil((guard / config.z_cap) ** 2))
            nsub = max(len(sub), min(256, need))
            sub = np.linspace(hi, lo, nsub + 1)[1:]
        prev, prev_t = (u_hi, ux_hi, ulam_hi), hi
        for t in sub:
            if chain:
                var = xi.eval(prev_t, 1) - xi.eval(t, 1)
                src = prev
            else:
                var = xi.eval(hi, 1) - xi.eval(t, 1)
                src = (u_hi, ux_hi, ulam_hi)
            out = src if var <= 0 else _numeric_step(src, m, var, grid, config)
            times.append(float(t))
            slices.append((out[0], out[1], out[2]))
            prev, prev_t = out, t
        state = prev

    order = np.argsort(times)
    ts = np.asarray(times)[order]
    S, M = len(ts), grid.size
    U, UX, UXX, ULAM = (np.empty((S, M)) for _ in range(4))
    for row, k in enumerate(order):
        f = slices[k]
        if len(f) == 4:
            U[row], UX[row], UXX[row], ULAM[row] = f
        else:
            U[row], UX[row], ULAM[row] = f
            UXX[row] = kernels.pchip_slopes(np.ascontiguousarray(UX[row]), grid.h)
    m_right = np.array([nu.density(0.5 * (ts[i] + ts[i + 1]))
                        for i in range(S - 1)])
    return PdeSolution(grid, ts, U, UX, UXX, ULAM, m_right,
                       xi, sigma, nu, spec, config)


def _materialize_state(sl: _LSESlice, grid):
    return sl.fields(grid.x)


def evaluate(sol: PdeSolution, t, x, field="u"):
    return sol.evaluate(t, x, field)


def forward_density(sol: PdeSolution, xi: MixtureXi | None = None,
                    nu: StepMeasure | None = None,
                    config: SolverConfig | None = None) -> ForwardDensity:
    """Propagate the optimal-trajectory density forward from delta_0.

    Lie splitting per mesh step: semi-Lagrangian advection under the
    drift ``xi'' m u_x`` (with the xi' gap integrated exactly) followed
    by Gaussian convolution.  Each step renormalises the trapezoid mass
    and accumulates the defect; an excessive defect signals an
    under-resolved grid.  A near-delta head is tracked analytically as
    a Gaussian until it spans a few grid cells.
    """
    xi = xi or sol.xi
    config = config or sol.config
    grid = sol.grid
    x, h = grid.x, grid.h
    ts = sol.times
    S = len(ts)
    rho = np.zeros((S, grid.size))
    rho[0, grid.center] = 1.0 / h
    offs, logw = _gh_rule(config.gh_order)

    means = np.zeros(S)
    varis = np.zeros(S)
    j0 = 0
    while j0 < S - 1 and varis[j0] < (2.0 * h) ** 2:
        m = sol.m_right[j0]
        dvar = xi.eval(ts[j0 + 1], 1) - xi.eval(ts[j0], 1)
        uxm = float(np.interp(means[j0], x, sol.ux[j0]))
        uxxm = float(np.interp(means[j0], x, sol.uxx[j0]))
        means[j0 + 1] = means[j0] + m * dvar * uxm
        varis[j0 + 1] = varis[j0] * (1.0 + m * dvar * uxxm) ** 2 + dvar
        j0 += 1
    for j in range(1, j0 + 1):
        v = max(varis[j], (0.5 * h) ** 2)
        g = np.exp(-((x - means[j]) ** 2) / (2 * v))
        s = np.trapezoid(g, x)
        rho[j] = g / s if s > 0 else rho[j]

    defect = 0.0
    for j in range(j0, S - 1):
        m = sol.m_right[j]
        dvar = xi.eval(ts[j + 1], 1) - xi.eval(ts[j], 1)
        cur = rho[j]
        if m > 0.0 and dvar > 0.0:
            # invert y = x + disp(x) by fixed-point sweeps; using one
            # interpolant for the map and its Jacobian keeps the
            # advection conservative to interpolation order
            disp = m * dvar * 0.5 * (sol.ux[j] + sol.ux[j + 1])
            s_disp = CubicSpline(x, disp)
            xs = x - disp
            for _ in range(4):
                xs = np.clip(x - s_disp(xs), -grid.half_width, grid.half_width)
            jac = 1.0 / np.maximum(1.0 + s_disp(xs, 1), 1e-3)
            adv = CubicSpline(x, cur)(xs)
            cur = np.maximum(adv * jac, 0.0)
        if dvar > 0.0:
            sd = math.sqrt(dvar)
            if sd >= 2.5 * h:
                # sampled Gaussian kernel: spectrally accurate at this width
                half = int(math.ceil(8.0 * sd / h))
                ker = np.exp(-((np.arange(-half, half + 1) * h) ** 2) / (2 * dvar))
                ker /= ker.sum()
                cur = np.convolve(cur, ker, mode="same")
            else:
                off = sd * offs
                P = int(math.ceil(np.abs(off).max() / h)) + 2
                js = np.floor(off / h).astype(np.int64)
                fs = off / h - js
                pad = np.concatenate([np.zeros(P), cur, np.zeros(P)])
                dpad = kernels.pchip_slopes(pad, h)
                empty = np.zeros((0, pad.size))
                out, _ = kernels.gh_weighted_pass(pad, dpad, empty, empty, js, fs,
                                                  logw, 0.0, grid.size, P, h)
                cur = np.maximum(out, 0.0)
        s = np.trapezoid(cur, x)
        if s <= 0:
            raise GridResolutionError("forward density lost all mass")
        defect += abs(s - 1.0)
        rho[j + 1] = cur / s
    if defect > config.mass_defect_tol * max(1.0, sol.horizon):
        raise GridResolutionError(
            "forward mass defect %.3e exceeds tolerance" % defect
        )
    return ForwardDensity(grid, ts, rho, defect)


def g_function(sol: PdeSolution, rho: ForwardDensity, xi: MixtureXi | None = None):
    """G(t) = 1/2 int_t^T xi''(s) (E[u_x^2](s) - s) ds on the mesh.

    Returns ``(times, G, E2)`` with E2 the curve E_rho[(u_x)^2](s);
    G(T) = 0 by construction.
    """
    xi = xi or sol.xi
    x = sol.grid.x
    ts = sol.times
    E2 = np.array([np.trapezoid(rho.rho[j] * sol.ux[j] ** 2, x)
                   for j in range(len(ts))])
    f = xi.eval(ts, 2) * (E2 - ts)
    G = np.zeros_like(ts)
    for i in range(len(ts) - 2, -1, -1):
        G[i] = G[i + 1] + 0.25 * (f[i] + f[i + 1]) * (ts[i + 1] - ts[i])
    return ts, G, E2
