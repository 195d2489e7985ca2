"""Random-duality predictions for the CLuP detector.

Everything here is per-sqrt(n) normalized.  The central object is

    xi_rd(c2, c1, gamma, nu) = sqrt(alpha) sqrt(1 - 2 c1 + c2 + sigma^2)
                               + E f_box1(h, gamma, nu) - nu c1 - gamma c2

with h standard normal.  It is concave in (gamma, nu), so the inner
maximization is done by a damped Newton method on analytic moments of the
clamped minimizer x* = clamp(-(h + nu) / (2 gamma), -1, 1).  The outer layers
(min over c1, then a min or a root in c2) use stationarity conditions that
follow from the envelope theorem:

    d/dc1 max xi = -sqrt(alpha) / sqrt(D) - nu_hat
    d/dc2 max xi =  sqrt(alpha) / (2 sqrt(D)) - gamma_hat,   D = 1 - 2 c1 + c2 + sigma^2
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import special

from .numerics import (SQRT2, SQRT2PI, ConvergenceError, OptimizerSettings, find_root,
                       minimize_scalar, norm_cdf, norm_pdf, norm_sf)
from .model import snr_db_to_sigma

_SQRT_PI_2 = math.sqrt(math.pi / 2.0)

# c1 and c2 grids used to isolate branches before refinement
C1_GRID_POINTS = 48
C2_GRID_POINTS = 64
# how close to the boundary c1 = sqrt(c2) and c2 = 1 the searches go
C1_EDGE = 1e-7
C2_EDGE = 1e-7

_ROOT = OptimizerSettings(tolerance=1e-13, max_evals=200)


@dataclass(frozen=True)
class RdtParams:
    alpha: float
    sigma: float

    def __post_init__(self):
        if not (self.alpha > 0 and math.isfinite(self.alpha)):
            raise ValueError("alpha must be positive and finite")
        if not (self.sigma >= 0 and math.isfinite(self.sigma)):
            raise ValueError("sigma must be non-negative and finite")

    @classmethod
    def from_snr_db(cls, alpha: float, snr_db: float) -> "RdtParams":
        return cls(alpha, snr_db_to_sigma(snr_db))


@dataclass(frozen=True)
class RdtPoint:
    c2: float
    c1: float
    gamma: float
    nu: float
    xi: float


@dataclass(frozen=True)
class StationaryPoint:
    xi: float
    c2: float
    c1: float
    nu: float
    gamma: float
    gamma1: float
    grad_norm: float


@dataclass(frozen=True)
class PolytopePrediction:
    r_plt: float
    nu_hat_plt: float
    perr_plt: float
    c2: float
    c1: float
    gamma: float


@dataclass(frozen=True)
class ClupPrediction:
    c2_star: float
    c1_star: float
    gamma_hat: float
    nu_hat: float
    perr: float
    xi: float
    saturated: bool = False
    roots: Tuple[float, ...] = ()


@dataclass
class CurveScan:
    axis: str
    fixed_value: float
    grid: np.ndarray
    values: np.ndarray
    local_minima: List[Tuple[float, float]] = field(default_factory=list)

    def to_csv(self) -> str:
        lines = ["grid,value"]
        lines += [f"{g!r},{v!r}" for g, v in zip(self.grid, self.values)]
        return "\n".join(lines) + "\n"


# ---------------------------------------------------------------- box term

def _check_gamma(gamma):
    if np.any(np.asarray(gamma) <= 0):
        raise ValueError("gamma must be positive")


def f_box1(h, gamma, nu):
    """min over x in [-1, 1] of (h + nu) x + gamma x^2, in closed form."""
    _check_gamma(gamma)
    u = np.asarray(h, dtype=float) + nu
    out = np.where(np.abs(u) <= 2 * gamma, -u * u / (4 * gamma), -np.abs(u) + gamma)
    return out if out.ndim else float(out)


def optimal_x_coordinate(h, gamma, nu):
    _check_gamma(gamma)
    out = np.clip(-(np.asarray(h, dtype=float) + nu) / (2 * gamma), -1.0, 1.0)
    return out if out.ndim else float(out)


def i22(gamma, nu):
    return (0.5 * (nu + gamma) * math.erfc((nu + 2 * gamma) / SQRT2)
            - math.exp(-0.5 * (nu + 2 * gamma) ** 2) / SQRT2PI)


def i1(gamma, nu):
    c = _SQRT_PI_2 * (nu * nu + 1)
    return (c * math.erf((2 * gamma - nu) / SQRT2) + c * math.erf((2 * gamma + nu) / SQRT2)
            + math.exp(-0.5 * (nu + 2 * gamma) ** 2) * (nu - 2 * gamma)
            - math.exp(-0.5 * (nu - 2 * gamma) ** 2) * (nu + 2 * gamma)) / (4 * SQRT2PI * gamma)


def i21(gamma, nu):
    return (-0.5 * (nu - gamma) * (math.erf((nu - 2 * gamma) / SQRT2) + 1)
            - math.exp(-0.5 * (nu - 2 * gamma) ** 2) / SQRT2PI)


def e_fbox1(gamma: float, nu: float) -> float:
    """E f_box1(h, gamma, nu) for standard normal h, as I22 - I1 + I21."""
    _check_gamma(gamma)
    return i22(gamma, nu) - i1(gamma, nu) + i21(gamma, nu)


_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(24)
# below this gamma the interior integrals are taken by quadrature, since the
# closed forms lose digits to cancellation as the interval shrinks
_SMALL_GAMMA = 0.25


def interior_moments(a: float, b: float, shift: float):
    """Integrals of (h + shift)^k phi(h) over [a, b] for k = 0, 1, 2."""
    if b - a < 4 * _SMALL_GAMMA:
        half = 0.5 * (b - a)
        h = 0.5 * (a + b) + half * _GL_NODES
        w = half * _GL_WEIGHTS * np.exp(-0.5 * h * h) / SQRT2PI
        u = h + shift
        return float(w.sum()), float(w @ u), float(w @ (u * u))
    p0 = norm_cdf(b) - norm_cdf(a) if b < 0 else norm_sf(a) - norm_sf(b)
    fa, fb = norm_pdf(a), norm_pdf(b)
    m1 = fa - fb
    m2 = p0 + a * fa - b * fb
    return p0, m1 + shift * p0, m2 + 2 * shift * m1 + shift * shift * p0


def box_terms(gamma: float, nu: float):
    """E f_box1, the moments of x* and the Hessian of E f_box1 in (nu, gamma).

    Returns
    -------
    value : float
        E f_box1(h, gamma, nu), computed stably for small gamma.
    ex, ex2 : float
        E x* and E x*^2 (the gradient of E f_box1 in nu and gamma).
    h_nn, h_ng, h_gg : float
        Second derivatives of E f_box1.
    """
    a = -2 * gamma - nu
    b = 2 * gamma - nu
    pa, qb = norm_cdf(a), norm_sf(b)
    fa, fb = norm_pdf(a), norm_pdf(b)
    pint, iu, iu2 = interior_moments(a, b, nu)
    ex_int = -iu / (2 * gamma)
    ex2_int = iu2 / (4 * gamma * gamma)
    value = (nu + gamma) * pa - fa + (gamma - nu) * qb - fb - iu2 / (4 * gamma)
    return (value, pa - qb + ex_int, pa + qb + ex2_int,
            -pint / (2 * gamma), -ex_int / gamma, -2 * ex2_int / gamma)


def box_moments(gamma: float, nu: float):
    """(E x*, E x*^2, h_nn, h_ng, h_gg); see :func:`box_terms`."""
    return box_terms(gamma, nu)[1:]


# ---------------------------------------------------------------- xi and its saddle

def _sqrt_arg(params: RdtParams, c2, c1):
    d = 1 - 2 * c1 + c2 + params.sigma ** 2
    if d < 0:
        raise ValueError("1 - 2 c1 + c2 + sigma^2 must be non-negative")
    return d


def xi_rd(params: RdtParams, c2, c1, gamma, nu) -> float:
    d = _sqrt_arg(params, c2, c1)
    return math.sqrt(params.alpha) * math.sqrt(d) + e_fbox1(gamma, nu) - nu * c1 - gamma * c2


def _newton_saddle(value, moments, targets, start, tol=1e-13, max_iter=200):
    """Damped Newton ascent for a smooth concave function of (nu, gamma > 0).

    ``moments(gamma, nu)`` returns the gradient of the non-linear part and its
    Hessian as (g_nu, g_gamma, h_nn, h_ng, h_gg); ``targets`` are the linear
    coefficients subtracted from the gradient.
    """
    gamma, nu = start
    t_nu, t_gamma = targets
    f = value(gamma, nu)
    gn = math.inf
    for _ in range(max_iter):
        g_nu, g_g, h_nn, h_ng, h_gg = moments(gamma, nu)
        r_nu, r_g = g_nu - t_nu, g_g - t_gamma
        gn = math.hypot(r_nu, r_g)
        if gn < tol:
            break
        det = h_nn * h_gg - h_ng * h_ng
        if h_nn < 0 and det > 0:
            d_nu = -(h_gg * r_nu - h_ng * r_g) / det
            d_g = -(-h_ng * r_nu + h_nn * r_g) / det
        else:
            d_nu, d_g = r_nu, r_g
        slope = d_nu * r_nu + d_g * r_g
        if slope <= 0:
            d_nu, d_g = r_nu, r_g
            slope = gn * gn
        t = 1.0
        while gamma + t * d_g <= 0:
            t *= 0.5
        accepted = False
        while t > 1e-16:
            gn_, nn_ = gamma + t * d_g, nu + t * d_nu
            fn = value(gn_, nn_)
            if fn >= f + 1e-4 * t * slope:
                accepted = True
                break
            # near the optimum the value stalls at round-off; fall back to
            # requiring a smaller gradient there
            if abs(fn - f) <= 1e-13 * max(1.0, abs(f)):
                m = moments(gn_, nn_)
                if math.hypot(m[0] - t_nu, m[1] - t_gamma) < gn:
                    accepted = True
                    break
            t *= 0.5
        if not accepted:
            break
        gamma, nu, f = gn_, nn_, fn
    g_nu, g_g = moments(gamma, nu)[:2]
    gn = math.hypot(g_nu - t_nu, g_g - t_gamma)
    return gamma, nu, f, gn


def _heuristic_start(c2, c1):
    # small-gamma asymptotics: E x* ~ erf(-nu/sqrt 2) and 1 - E x*^2 ~ (8/3) gamma phi(nu)
    nu = -SQRT2 * float(special.erfinv(min(max(c1 / math.sqrt(c2), -0.999), 0.999)))
    gamma = min(1.0, 3 * (1 - c2) / (8 * norm_pdf(nu)))
    return max(gamma, 1e-12), nu


def xi_rd_saddle(params: RdtParams, c2: float, c1: float, start=None, tol_grad: float = 1e-8) -> RdtPoint:
    """max over gamma > 0 and nu of xi_rd at fixed (c2, c1).

    Raises
    ------
    ConvergenceError
        If the gradient norm at the returned point exceeds ``tol_grad``.
    """
    lin = math.sqrt(params.alpha) * math.sqrt(_sqrt_arg(params, c2, c1))
    starts = [start] if start is not None else []
    starts += [_heuristic_start(c2, c1), (1.0, 0.0)]
    best = None
    for s0 in starts:
        gamma, nu, f, gn = _newton_saddle(
            lambda g, v: box_terms(g, v)[0] - v * c1 - g * c2, box_moments, (c1, c2), s0)
        if best is None or gn < best[3]:
            best = (gamma, nu, f, gn)
        if gn <= tol_grad:
            break
    gamma, nu, f, gn = best
    if not gn <= tol_grad:
        raise ConvergenceError(f"saddle at c2={c2}, c1={c1}: gradient norm {gn:.3g}")
    return RdtPoint(c2=c2, c1=c1, gamma=gamma, nu=nu, xi=lin + f)


def _c1_slope(params: RdtParams, pt: RdtPoint) -> float:
    d = 1 - 2 * pt.c1 + pt.c2 + params.sigma ** 2
    return -math.sqrt(params.alpha) / math.sqrt(d) - pt.nu


def _c2_slope(params: RdtParams, pt: RdtPoint) -> float:
    d = 1 - 2 * pt.c1 + pt.c2 + params.sigma ** 2
    return math.sqrt(params.alpha) / (2 * math.sqrt(d)) - pt.gamma


def c1_upper(c2: float) -> float:
    return min((1 + c2) / 2, math.sqrt(c2)) - C1_EDGE


def _c1_profile(params, c2, grid):
    pts = []
    start = None
    for c1 in grid:
        pt = xi_rd_saddle(params, c2, float(c1), start=start)
        pts.append(pt)
        start = (pt.gamma, pt.nu)
    return pts


def _refine_c1(params, c2, lo: RdtPoint, hi: RdtPoint) -> RdtPoint:
    """Root of the c1-slope between two bracketing profile points."""
    cache = {}

    def slope(c1):
        near = lo if abs(c1 - lo.c1) < abs(c1 - hi.c1) else hi
        pt = xi_rd_saddle(params, c2, c1, start=(near.gamma, near.nu))
        cache[c1] = pt
        return _c1_slope(params, pt)

    c1 = find_root(slope, (lo.c1, hi.c1), _ROOT)
    return cache.get(c1) or xi_rd_saddle(params, c2, c1, start=(lo.gamma, lo.nu))


def c1_local_minima(params: RdtParams, c2: float, n_grid: int = C1_GRID_POINTS) -> List[RdtPoint]:
    """All local minima in c1 of max_{gamma,nu} xi_rd at fixed c2."""
    hi = c1_upper(c2)
    grid = np.linspace(0.0, hi, n_grid)
    pts = _c1_profile(params, c2, grid)
    slopes = [_c1_slope(params, p) for p in pts]
    out = []
    if slopes[0] >= 0:
        out.append(pts[0])
    for k in range(len(pts) - 1):
        if slopes[k] < 0 <= slopes[k + 1]:
            out.append(_refine_c1(params, c2, pts[k], pts[k + 1]))
    if not out:
        out.append(min(pts, key=lambda p: p.xi))
    return out


def xi_reduced_c2(params: RdtParams, c2: float) -> RdtPoint:
    """min over c1 of the (gamma, nu) saddle at fixed c2 (global minimum)."""
    return min(c1_local_minima(params, c2), key=lambda p: p.xi)


# ---------------------------------------------------------------- polytope radius

@lru_cache(maxsize=256)
def r_plt_theory(params: RdtParams) -> PolytopePrediction:
    """Normalized optimal residual of the box relaxation and its error rate.

    Minimizes the c1-reduced curve over c2 by scanning and then solving the
    c2-stationarity condition.
    """
    grid = np.linspace(0.02, 1 - C2_EDGE, C2_GRID_POINTS)
    pts = [xi_reduced_c2(params, float(c2)) for c2 in grid]
    k = int(np.argmin([p.xi for p in pts]))
    lo, hi = grid[max(k - 1, 0)], grid[min(k + 1, len(grid) - 1)]
    cache = {}

    def slope(c2):
        pt = xi_reduced_c2(params, c2)
        cache[c2] = pt
        return _c2_slope(params, pt)

    if slope(lo) < 0 < slope(hi):
        c2 = find_root(slope, (lo, hi), _ROOT)
        best = cache[c2] if c2 in cache else xi_reduced_c2(params, c2)
    else:
        c2, _ = minimize_scalar(lambda c: xi_reduced_c2(params, c).xi, (lo, hi),
                                OptimizerSettings(tolerance=1e-12))
        best = xi_reduced_c2(params, c2)
    return PolytopePrediction(r_plt=best.xi, nu_hat_plt=best.nu, perr_plt=perr_from_nu(best.nu),
                              c2=best.c2, c1=best.c1, gamma=best.gamma)


def perr_from_nu(nu: float) -> float:
    """Error rate 1 - erfc(nu / sqrt(2)) / 2 of a saddle with dual nu."""
    return 1.0 - 0.5 * math.erfc(nu / SQRT2)


# ---------------------------------------------------------------- CLuP prediction

def _level_roots(params, target, lo, hi, n_grid):
    """All c2 in [lo, hi] where the reduced curve crosses ``target``."""
    grid = np.linspace(lo, hi, n_grid)
    vals = [xi_reduced_c2(params, float(c)).xi - target for c in grid]
    roots = []
    for k in range(n_grid - 1):
        if vals[k] == 0:
            roots.append(float(grid[k]))
        elif vals[k] * vals[k + 1] < 0:
            roots.append(find_root(lambda c: xi_reduced_c2(params, c).xi - target,
                                   (grid[k], grid[k + 1]), _ROOT))
    if vals[-1] == 0:
        roots.append(float(grid[-1]))
    return roots, vals


def clup_rdt_predict(params: RdtParams, r_sc: float) -> ClupPrediction:
    """Predicted (c2, c1, nu, error rate) of CLuP at radius r_sc * r_plt.

    The prediction is the largest c2 whose reduced value equals the radius.
    If the radius exceeds the reduced value everywhere below c2 = 1 the
    result is pinned at the upper end of the scan and flagged ``saturated``.
    """
    if r_sc < 1:
        raise ValueError("r_sc must be at least 1")
    plt = r_plt_theory(params)
    if r_sc == 1.0:
        return ClupPrediction(plt.c2, plt.c1, plt.gamma, plt.nu_hat_plt, plt.perr_plt, plt.r_plt,
                              roots=(plt.c2,))
    target = r_sc * plt.r_plt
    roots, vals = _level_roots(params, target, plt.c2, 1 - C2_EDGE, C2_GRID_POINTS)
    if not roots:
        if vals[-1] < 0:
            pt = xi_reduced_c2(params, 1 - C2_EDGE)
            return ClupPrediction(pt.c2, pt.c1, pt.gamma, pt.nu, perr_from_nu(pt.nu), pt.xi,
                                  saturated=True)
        raise ConvergenceError("no level crossing found for the requested radius")
    pt = xi_reduced_c2(params, roots[-1])
    return ClupPrediction(pt.c2, pt.c1, pt.gamma, pt.nu, perr_from_nu(pt.nu), pt.xi,
                          roots=tuple(roots))


# ---------------------------------------------------------------- curve scans

def scan_xi(params: RdtParams, axis: str, fixed_value: Optional[float], grid: Sequence[float]) -> CurveScan:
    """Evaluate the reduced curve along c1 (at fixed c2) or along c2.

    Candidate minima are grid points strictly below both neighbours by at
    least 1e-10; each one is refined by a bounded scalar minimization.
    """
    axis = axis.upper()
    grid = np.asarray(grid, dtype=float)
    if np.any(np.diff(grid) <= 0):
        raise ValueError("grid must be strictly increasing")
    if axis == "C1":
        pts = _c1_profile(params, fixed_value, grid)
        values = np.array([p.xi for p in pts])

        def at(c1):
            near = pts[int(np.argmin(np.abs(grid - c1)))]
            return xi_rd_saddle(params, fixed_value, c1, start=(near.gamma, near.nu)).xi
    elif axis == "C2":
        values = np.array([xi_reduced_c2(params, float(c)).xi for c in grid])

        def at(c2):
            return xi_reduced_c2(params, c2).xi
    else:
        raise ValueError("axis must be 'C1' or 'C2'")
    minima = []
    for k in range(1, len(grid) - 1):
        if values[k] <= values[k - 1] - 1e-10 and values[k] <= values[k + 1] - 1e-10:
            x, v = minimize_scalar(at, (grid[k - 1], grid[k + 1]), OptimizerSettings(tolerance=1e-10))
            minima.append((x, v))
    return CurveScan(axis=axis, fixed_value=fixed_value, grid=grid, values=values, local_minima=minima)


# ---------------------------------------------------------------- stationary points

def _stationary_from_point(params: RdtParams, pt: RdtPoint, r: float) -> StationaryPoint:
    d = 1 - 2 * pt.c1 + pt.c2 + params.sigma ** 2
    sa = math.sqrt(params.alpha)
    gamma1 = 1.0 / (2 * math.sqrt(pt.c2) * (-pt.nu / 2 - pt.gamma))
    ex, ex2 = box_moments(pt.gamma, pt.nu)[:2]
    grad = np.array([
        -1 / (2 * math.sqrt(pt.c2)) + gamma1 * (sa / (2 * math.sqrt(d)) - pt.gamma),
        gamma1 * (-sa / math.sqrt(d) - pt.nu),
        gamma1 * (ex - pt.c1),
        gamma1 * (ex2 - pt.c2),
        pt.xi - r,
    ])
    return StationaryPoint(xi=pt.xi, c2=pt.c2, c1=pt.c1, nu=pt.nu, gamma=pt.gamma, gamma1=gamma1,
                           grad_norm=float(np.linalg.norm(grad)))


def find_stationary_points(params: RdtParams, r: float, n_grid: int = 2 * C2_GRID_POINTS) -> List[StationaryPoint]:
    """Stationary points of -sqrt(c2) + gamma1 (xi_rd - r) over (c2, c1, gamma, nu, gamma1).

    After eliminating (gamma, nu) by the saddle and c1 by its stationarity
    condition, the remaining equations say that the c1-reduced curve passes
    through r; every crossing is a stationary point, and gamma1 is then fixed
    by the c2 equation.
    """
    if not r > 0:
        raise ValueError("r must be positive")
    roots, _ = _level_roots(params, r, 0.01, 1 - C2_EDGE, n_grid)
    out = []
    for c2 in roots:
        sp = _stationary_from_point(params, xi_reduced_c2(params, c2), r)
        if not any(abs(sp.c2 - q.c2) < 1e-6 for q in out):
            out.append(sp)
    return out


# ---------------------------------------------------------------- radius limits

def r_sc_upper_limit(params: RdtParams, xi_ml: float) -> float:
    if not xi_ml > 0:
        raise ValueError("xi_ml must be positive")
    return xi_ml / r_plt_theory(params).r_plt


@dataclass(frozen=True)
class OptimalRadius:
    r_sc_star: float
    perr_star: float
    c2: float
    nu_hat: float
    at_ml_limit: bool


def r_sc_optimal_perr(params: RdtParams) -> OptimalRadius:
    """Radius multiplier in [1, upper limit] minimizing the predicted error.

    The search runs over c2 in [c2_plt, 1] (the radius being the reduced
    curve at c2), which covers exactly r_sc in [1, xi_ml / r_plt].  At c2 = 1
    the curve coincides with the ML one, whose minimizer gives the endpoint.
    """
    from .rdt_ml import ml_minimize

    plt = r_plt_theory(params)
    ml = ml_minimize(params)
    nu_end = ml.nu_hat
    grid = np.linspace(plt.c2, 1 - C2_EDGE, C2_GRID_POINTS)
    nus = [xi_reduced_c2(params, float(c)).nu for c in grid]
    k = int(np.argmin(nus))
    if nus[k] < nu_end:
        lo, hi = grid[max(k - 1, 0)], grid[min(k + 1, len(grid) - 1)]
        c2, nu = minimize_scalar(lambda c: xi_reduced_c2(params, c).nu, (lo, hi),
                                 OptimizerSettings(tolerance=1e-11))
        xi = xi_reduced_c2(params, c2).xi
        if nu < nu_end:
            return OptimalRadius(xi / plt.r_plt, perr_from_nu(nu), c2, nu, False)
    return OptimalRadius(ml.xi_global / plt.r_plt, ml.perr, 1.0, nu_end, True)
