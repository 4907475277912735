"""Minimisation of the variational objectives over (measure, multiplier).

A k-step order parameter is parameterised by knot positions and
non-negative level increments, which keeps the monotone-cone constraint
a box constraint.  The inner loop is cyclic pattern-search coordinate
descent on the memoised objective; the multiplier is solved by
bisection on the exact stationarity function ``du/dlambda(0,0) - T``
(monotone in lambda by convexity), alternating with the measure step
until the joint value settles.  At finite beta the increments are
capped at ``beta`` so the measure stays admissible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import functional as fn
from . import pde
from .measures import FiniteBetaMeasure, StepMeasure
from .measures import pair as measures_pair
from .model import Alphabet, MixtureXi

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass
class MinimizerResult:
    nu_star: StepMeasure
    lambda_star: float
    value: float
    residuals: fn.OptimalityReport | None
    k: int
    trace: list = field(default_factory=list)
    beta: float | None = None
    converged: bool = True

    @property
    def mu_star(self) -> FiniteBetaMeasure | None:
        """Probability-measure form of the minimiser at finite beta."""
        if self.beta is None:
            return None
        atoms = []
        prev = 0.0
        for t, m in self.nu_star.knots:
            if m - prev > 1e-9:
                atoms.append((t, (m - prev) / self.beta))
            prev = m
        rest = 1.0 - sum(w for _, w in atoms)
        if rest > 1e-9 or not atoms:
            atoms.append((self.nu_star.horizon, max(rest, 0.0)))
        tot = sum(w for _, w in atoms)
        atoms = [(q, w / tot) for q, w in atoms]
        return FiniteBetaMeasure(self.beta, self.nu_star.horizon, tuple(atoms))

    def mass(self):
        return self.nu_star.mass()


@dataclass
class BetaLadder:
    betas: list
    minimizers: list
    limit_candidate: MinimizerResult
    gamma_gap: list
    pair_diagnostics: list


class _Objective:
    """Memo-backed objective over (knots, increments, lambda)."""

    def __init__(self, xi, sigma, T, beta, config):
        self.xi = xi
        self.sigma = sigma
        self.T = T
        self.beta = beta
        self.config = config
        self.cap = math.inf if beta is None else beta
        self.evals = 0

    def measure(self, ts, dms):
        pairs = {}
        for t, dm in zip(ts, dms):
            if dm <= 1e-10:
                continue
            t = min(max(float(t), 0.0), self.T * (1.0 - 1e-12))
            pairs[t] = pairs.get(t, 0.0) + float(dm)
        knots = []
        level = 0.0
        for t in sorted(pairs):
            level += pairs[t]
            knots.append((t, level))
        return StepMeasure(self.T, tuple(knots), 0.0)

    def value(self, ts, dms, lam):
        self.evals += 1
        nu = self.measure(ts, dms)
        sol = fn._solve(self.xi, self.sigma, self.T, nu, lam, self.beta,
                        self.config, "knots")
        return fn._assemble(self.xi, self.T, nu, lam, sol).value

    def stationarity(self, ts, dms, lam):
        nu = self.measure(ts, dms)
        sol = fn._solve(self.xi, self.sigma, self.T, nu, lam, self.beta,
                        self.config, "knots")
        return sol.ulam00() - self.T


def _solve_lambda(obj, ts, dms, lo, hi, guess=None, tol=1e-7):
    """Multiplier with du/dlambda(0,0) = T (monotone in lambda).

    Brackets locally around the previous solution when available, then
    bisects the stationarity function.
    """
    if guess is not None:
        w = 0.25
        a, b = max(lo, guess - w), min(hi, guess + w)
        sa, sb = obj.stationarity(ts, dms, a), obj.stationarity(ts, dms, b)
        tries = 0
        while sa > 0.0 and a > lo and tries < 12:
            a = max(lo, a - w)
            w *= 2.0
            sa = obj.stationarity(ts, dms, a)
            tries += 1
        while sb < 0.0 and b < hi and tries < 24:
            b = min(hi, b + w)
            w *= 2.0
            sb = obj.stationarity(ts, dms, b)
            tries += 1
        if sa <= 0.0 <= sb:
            lo, hi = a, b
        elif sa > 0.0:
            return lo if a <= lo else a
        elif sb < 0.0:
            return hi if b >= hi else b
    else:
        if obj.stationarity(ts, dms, lo) >= 0.0:
            return lo
        if obj.stationarity(ts, dms, hi) <= 0.0:
            return hi
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if hi - lo <= 1e-10 * max(1.0, abs(mid)):
            break
        s = obj.stationarity(ts, dms, mid)
        if abs(s) < 1e-3 * tol:
            return mid
        if s < 0.0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _golden_lambda(obj, ts, dms, lo, hi, iters=60):
    """Derivative-free golden-section fallback for the multiplier."""
    a, b = lo, hi
    c = b - GOLDEN * (b - a)
    d = a + GOLDEN * (b - a)
    fc = obj.value(ts, dms, c)
    fd = obj.value(ts, dms, d)
    for _ in range(iters):
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - GOLDEN * (b - a)
            fc = obj.value(ts, dms, c)
        else:
            a, c, fc = c, d, fd
            d = a + GOLDEN * (b - a)
            fd = obj.value(ts, dms, d)
    return 0.5 * (a + b)


def _coordinate_cycles(obj, ts, dms, lam, steps, tol, max_cycles=40):
    """Pattern-search descent over knot positions and increments."""
    best = obj.value(ts, dms, lam)
    k = len(ts)
    for _ in range(max_cycles):
        improved = 0.0
        for kind in ("dm", "t"):
            arr = dms if kind == "dm" else ts
            for i in range(k):
                st = steps[kind][i]
                for _ in range(30):
                    moved = False
                    for sgn in (+1.0, -1.0):
                        cand = arr[i] + sgn * st
                        if kind == "dm":
                            cand = min(max(cand, 0.0), obj.cap - (sum(dms) - dms[i]))
                        else:
                            cand = min(max(cand, 0.0), obj.T * (1 - 1e-12))
                        if cand == arr[i]:
                            continue
                        old = arr[i]
                        arr[i] = cand
                        v = obj.value(ts, dms, lam)
                        if v < best - 1e-15:
                            improved += best - v
                            best = v
                            steps[kind][i] = min(st * 2.0, 0.25)
                            moved = True
                            break
                        arr[i] = old
                    if moved:
                        break
                    st *= 0.5
                    steps[kind][i] = st
                    if st < 1e-13:
                        break
        if improved < tol:
            break
    return best


def _default_init(obj, k, lam):
    """Replica-symmetric warm start: one knot at the E2 fixed point."""
    T = obj.T
    nu0 = StepMeasure.zero(T)
    sol = fn._solve(obj.xi, obj.sigma, T, nu0, lam, obj.beta, obj.config, "fine")
    rho = pde.forward_density(sol)
    _, _, E2 = pde.g_function(sol, rho, obj.xi)
    ts_mesh = sol.times
    # bisection for E2(q) = q (E2 is non-decreasing, E2(T) <= D)
    gap = E2 - ts_mesh
    idx = np.nonzero(gap <= 0)[0]
    q0 = float(ts_mesh[idx[0]]) if idx.size else 0.5 * T
    q0 = min(max(q0, 0.0), T * 0.9)
    level = 1.0 if obj.beta is None else 0.9 * obj.beta
    ts = [q0 + (T * 0.95 - q0) * j / k for j in range(k)]
    dms = [level / k] * k
    return ts, dms


def minimize_local(xi: MixtureXi, sigma: Alphabet, T: float,
                   temperature: float | None, k: int,
                   config: pde.SolverConfig | None = None,
                   warm_start=None, tol_value: float = 1e-9,
                   tol_resid: float = 1e-4, max_rounds: int = 500,
                   lambda_method: str = "stationarity",
                   diagnostics: bool = True) -> MinimizerResult:
    """Minimise the local objective at fixed horizon T with k knots.

    ``temperature`` is the inverse temperature beta, or None for the
    ground-state problem.  At ``T in {d, D}`` the multiplier is pinned
    to zero; otherwise it is re-solved against its exact stationarity
    condition (or by golden section when requested) after every measure
    descent round.
    """
    fn._check_horizon(sigma, T)
    beta = temperature
    if k < 1:
        raise ValueError("knot budget must be at least 1")
    endpoint = fn._endpointness(sigma, T)
    config = config or pde.SolverConfig()
    obj = _Objective(xi, sigma, T, beta, config)

    if warm_start is not None:
        ts, dms, lam = warm_start
        ts, dms = list(map(float, ts)), list(map(float, dms))
        if not ts:
            ts, dms = [0.5 * T], [0.0]
        while len(ts) < k:  # split the heaviest knot
            j = int(np.argmax(dms))
            ts.append(max(ts[j] - 0.08 * T, 0.0))
            dms[j] *= 0.5
            dms.append(dms[j])
        ts, dms = ts[:k], dms[:k]
    else:
        lam = 0.0
        ts, dms = _default_init(obj, k, lam)
    if endpoint:
        lam = 0.0
        window = None
    else:
        probe = obj.value(ts, dms, lam)
        window = fn.lambda_window(abs(probe) + 2.0, config.mass_budget,
                                  xi, sigma, T)

    steps = {"t": [0.05 * T] * k, "dm": [0.1 if beta is None else 0.1 * beta] * k}
    best = obj.value(ts, dms, lam)
    trace = [(0, best, lam)]
    converged = False
    for rnd in range(1, max_rounds + 1):
        prev = best
        if not endpoint:
            if lambda_method == "golden":
                lam = _golden_lambda(obj, ts, dms, window[0], window[1])
            else:
                lam = _solve_lambda(obj, ts, dms, window[0], window[1],
                                    guess=lam if rnd > 1 else None,
                                    tol=tol_resid)
        best = _coordinate_cycles(obj, ts, dms, lam, steps, tol_value)
        trace.append((rnd, best, lam))
        if prev - best < tol_value and rnd >= 2:
            converged = True
            break
    if not endpoint:  # the last measure move may have left lambda stale
        lam = _solve_lambda(obj, ts, dms, window[0], window[1], guess=lam,
                            tol=tol_resid)
        best = obj.value(ts, dms, lam)

    nu_star = obj.measure(ts, dms)
    report = None
    if diagnostics:
        if beta is None:
            fv = fn.eval_zero_temp(xi, sigma, T, nu_star, lam, config,
                                   diagnostics=True)
        else:
            mu = MinimizerResult(nu_star, lam, best, None, k,
                                 beta=beta).mu_star
            fv = fn.eval_finite_beta(xi, sigma, T, mu, lam, config,
                                     diagnostics=True)
        report = fv.residuals
        best = fv.value
    return MinimizerResult(nu_star, lam, best, report, k, trace, beta,
                           converged and (report is None
                                          or report.within(tol_resid)))


def minimize_local_auto(xi, sigma, T, temperature, k_max=4, k_min=1,
                        tol_resid=1e-4, **kw) -> MinimizerResult:
    """Increase the knot budget until the residuals pass (or k_max)."""
    best = None
    warm = kw.pop("warm_start", None)
    for k in range(k_min, k_max + 1):
        res = minimize_local(xi, sigma, T, temperature, k,
                             warm_start=warm, tol_resid=tol_resid, **kw)
        if best is None or res.value <= best.value + 1e-12:
            best = res
        warm = _warm_from(res)
        if res.residuals is not None and res.residuals.within(tol_resid):
            return res
    return best


def _warm_from(res: MinimizerResult):
    ts = [t for t, _ in res.nu_star.knots]
    dms = []
    prev = 0.0
    for _, m in res.nu_star.knots:
        dms.append(m - prev)
        prev = m
    if not ts:
        ts, dms = [0.5 * res.nu_star.horizon], [0.0]
    return (ts, dms, res.lambda_star)


def ground_state_unconstrained(xi: MixtureXi, sigma: Alphabet, k: int,
                               config=None, tol_T: float = 1e-4,
                               **kw):
    """sup over T in [d, D] of the constrained minimum, by golden section.

    Neighbouring evaluations warm-start each other.  Returns
    ``(T_star, MinimizerResult)``.
    """
    d, D = sigma.dmin, sigma.Dmax
    cache = {}

    def val(T, warm=None):
        T = min(max(T, d), D)
        if T not in cache:
            cache[T] = minimize_local(xi, sigma, T, None, k, config=config,
                                      warm_start=warm, diagnostics=False, **kw)
        return cache[T]

    if D - d <= 1e-12:
        res = minimize_local(xi, sigma, d, None, k, config=config, **kw)
        return d, res

    a, b = d, D
    c1 = b - GOLDEN * (b - a)
    c2 = a + GOLDEN * (b - a)
    f1, f2 = val(c1).value, val(c2).value
    while b - a > tol_T:
        if f1 >= f2:  # maximising in T
            b, c2, f2 = c2, c1, f1
            c1 = b - GOLDEN * (b - a)
            f1 = val(c1, _warm_from(cache[min(cache, key=lambda t: abs(t - c1))])).value
        else:
            a, c1, f1 = c1, c2, f2
            c2 = a + GOLDEN * (b - a)
            f2 = val(c2, _warm_from(cache[min(cache, key=lambda t: abs(t - c2))])).value
    T_star = 0.5 * (a + b)
    res = minimize_local(xi, sigma, T_star, None, k, config=config,
                         warm_start=_warm_from(
                             cache[min(cache, key=lambda t: abs(t - T_star))]),
                         **kw)
    return T_star, res


def beta_ladder(xi: MixtureXi, sigma: Alphabet, T: float, betas,
                k: int, config=None, zero_result: MinimizerResult | None = None,
                **kw) -> BetaLadder:
    """Track minimisers along increasing beta toward zero temperature.

    Reports per-rung value gaps against the ground-state minimum
    (sandwich bound ``log|Sigma| / beta``) and weak-* pairing
    diagnostics of the rung measures against a fixed test battery.
    """
    betas = sorted(betas)
    if zero_result is None:
        zero_result = minimize_local(xi, sigma, T, None, k, config=config, **kw)
    phis = [lambda s: 1.0,
            lambda s: s,
            lambda s: xi.eval(s, 2) * s]
    rungs, gaps, pairs = [], [], []
    warm = None
    for b in betas:
        res = minimize_local(xi, sigma, T, b, k, config=config,
                             warm_start=warm, **kw)
        warm = _warm_from(res)
        rungs.append(res)
        gaps.append(abs(res.value - zero_result.value))
        pairs.append([measures_pair(res.nu_star, phi) for phi in phis])
    return BetaLadder(list(betas), rungs, zero_result, gaps, pairs)


def nondegeneracy_probe(xi: MixtureXi, sigma: Alphabet, T: float,
                        result: MinimizerResult, config=None,
                        t_grid=None):
    """Check the G-function mechanism that forbids the zero measure.

    At the accepted minimiser: G >= -tol on [0, T], G(T) = 0 and
    G' (T) = 0 through the multiplier stationarity.  For the forced
    nu = 0 problem with a two-point alphabet the solver's u_xx is the
    explicit heat kernel; the probe evaluates E[(u_xx)^2(t, X_t)] by
    quadrature and compares with the closed form

        1 / (2 pi sqrt(T^2 - t^2)) * exp(-(lam* a)^2 / (T + t))

    (for xi = 2 t^2, where 2 lam* a locates the terminal kink), whose
    divergence as t -> T is the contradiction: G would dip negative
    just before T, so the minimiser must carry mass.
    """
    if result.beta is not None:
        raise ValueError("probe expects a zero-temperature result")
    config = config or pde.SolverConfig()
    fv = fn.eval_zero_temp(xi, sigma, T, result.nu_star, result.lambda_star,
                           config, diagnostics=True)
    out = {"residuals": fv.residuals, "g_min": fv.residuals.g_min,
           "mass": result.nu_star.mass()}

    if len(sigma) != 2:
        out["kernel"] = None
        return out
    # hypothetical nu = 0 with multiplier solving E[(u_x)^2(T, X_T)] = T:
    # at nu = 0, X_T ~ N(0, xi'(T)) and u_x(T) steps between the spins at
    # the kink x0 = -lam (e1 + e2), so the condition is solvable exactly.
    e1, e2 = max(sigma.values), min(sigma.values)
    s2 = xi.eval(T, 1)
    from scipy.stats import norm
    p_hi = (T - e2**2) / (e1**2 - e2**2) if e1**2 != e2**2 else None
    if p_hi is not None and 0.0 < p_hi < 1.0:
        x0 = norm.ppf(1.0 - p_hi) * math.sqrt(s2)
        lam0 = -x0 / (e1 + e2) if abs(e1 + e2) > 1e-14 else 0.0
    else:
        x0, lam0 = 0.0, 0.0
    nu0 = StepMeasure.zero(T)
    spec = fn._boundary_spec(xi, sigma, T, lam0, 0.0, None)
    sol0 = pde.solve_backward(xi, sigma, T, nu0, spec, config=config,
                              mesh="fine")
    db = e1 - e2
    xipp = xi.eval(T, 2)
    if t_grid is None:
        t_grid = np.linspace(0.3 * T, 0.98 * T, 12)
    rows = []
    z, w = np.polynomial.hermite.hermgauss(96)
    mesh_ts = sol0.times
    for t in t_grid:
        t = float(mesh_ts[int(np.argmin(np.abs(mesh_ts - t)))])
        if t >= T:
            continue
        var_fwd = xi.eval(t, 1)
        var_back = xi.eval(T, 1) - xi.eval(t, 1)
        # u_xx(t, .) = db * N(.; x0, var_back); square-average it over
        # X_t ~ N(0, var_fwd) by Gauss-Hermite quadrature ...
        xs = math.sqrt(2.0 * var_fwd) * z
        kern = db * np.exp(-((xs - x0) ** 2) / (2 * var_back)) / math.sqrt(
            2 * math.pi * var_back)
        quad = float(np.sum(w * kern**2) / math.sqrt(math.pi))
        # ... and compare with the closed form, which for xi = 2t^2 is
        # exp(-(lam0 a)^2/(T+t)) / (2 pi sqrt(T^2 - t^2)) when db = 2
        vb, vf = var_back, var_fwd
        closed = db**2 / (2.0 * math.pi) / math.sqrt(vb * (vb + 2 * vf)) * \
            math.exp(-(x0**2) / (vb + 2 * vf))
        # the solver's own u_xx at a spot point, exact mesh time
        xprobe = min(abs(x0) + math.sqrt(var_back), 0.5 * sol0.grid.half_width)
        num_uxx = sol0.evaluate(t, float(xprobe), "uxx")
        exact_uxx = db * math.exp(-((xprobe - x0) ** 2) / (2 * var_back)) \
            / math.sqrt(2 * math.pi * var_back)
        rows.append({
            "t": t, "kernel_quad": quad, "kernel_closed": closed,
            "uxx_solver": num_uxx, "uxx_closed": exact_uxx,
        })
    out["kernel"] = rows
    out["lambda_forced"] = lam0
    out["kernel_divergence"] = rows[-1]["kernel_closed"] > rows[0]["kernel_closed"] * 3
    return out
