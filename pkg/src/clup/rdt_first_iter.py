"""Random-duality prediction for the first CLuP iterate.

With x^(0) agreeing with x_sol on a fraction rho of coordinates, the first
step is written in the shifted variable z = x_sol - x in [0, 2/sqrt(n)]^n
(up to sign per coordinate).  Its objective is

    xi_1 = sqrt(alpha) sqrt(c1z + sigma^2) + I_box(gamma, nu) - nu s1 - gamma c1z

where I_box mixes the per-coordinate minima over z in [0, 2] with weights
rho and 1 - rho.  The prediction is the smallest s1 for which
min over c1z of max over (gamma, nu) of xi_1 equals the radius r.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict
from typing import Iterable

import numpy as np

from .numerics import SQRT2, SQRT2PI, ConvergenceError, OptimizerSettings, find_root, minimize_scalar, norm_cdf
from .rdt_clup import RdtParams, StationaryPoint, _newton_saddle, interior_moments

C1Z_MAX = 4.0
_SQRT_PI_2 = math.sqrt(math.pi / 2.0)


@dataclass(frozen=True)
class FirstIterSolution:
    nu_hat: float
    gamma_hat: float
    c1z_hat: float
    s1_hat: float
    xi1: float
    perr1: float
    e_norm_sq: float
    e_overlap: float
    rho: float

    def to_row(self) -> dict:
        return asdict(self)


def _check(gamma, rho):
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    if not 0 <= rho <= 1:
        raise ValueError("rho must lie in [0, 1]")


def i11(gamma: float, nu: float) -> float:
    c = _SQRT_PI_2 * (nu * nu + 1)
    return -(math.exp(-0.5 * (4 * gamma + nu) ** 2) * (nu - 4 * gamma)
             + c * math.erf(2 * SQRT2 * gamma + nu / SQRT2) - c * math.erf(nu / SQRT2)
             - math.exp(-0.5 * nu * nu) * nu) / (4 * SQRT2PI * gamma)


def i21(gamma: float, nu: float) -> float:
    return ((4 * gamma + 2 * nu) * 0.5 * math.erfc((4 * gamma + nu) / SQRT2)
            - 2 * math.exp(-0.5 * (4 * gamma + nu) ** 2) / SQRT2PI)


def i_box1(gamma: float, nu: float, rho: float) -> float:
    _check(gamma, rho)
    return (rho * i11(gamma, nu) + (1 - rho) * i11(gamma, -nu)
            + rho * i21(gamma, nu) + (1 - rho) * i21(gamma, -nu))


def f_z(h, gamma, nu):
    """min over z in [0, 2] of (h + nu) z + gamma z^2."""
    u = np.asarray(h, dtype=float) + nu
    z = np.clip(-u / (2 * gamma), 0.0, 2.0)
    out = u * z + gamma * z * z
    return out if out.ndim else float(out)


def _z_terms(gamma, nu):
    """Value, E z*, E z*^2 and Hessian of E f_z in (nu, gamma)."""
    a = -4 * gamma - nu  # z* = 2 below a
    b = -nu              # z* = 0 above b
    pa = norm_cdf(a)
    pint, iu, iu2 = interior_moments(a, b, nu)
    ez_int = -iu / (2 * gamma)
    ez2_int = iu2 / (4 * gamma * gamma)
    # h < a contributes 2 (h + nu) + 4 gamma
    value = 2 * (nu * pa - math.exp(-0.5 * a * a) / SQRT2PI) + 4 * gamma * pa - iu2 / (4 * gamma)
    return (value, 2 * pa + ez_int, 4 * pa + ez2_int,
            -pint / (2 * gamma), -ez_int / gamma, -2 * ez2_int / gamma)


def _mixture_terms(gamma, nu, rho):
    p = _z_terms(gamma, nu)
    q = _z_terms(gamma, -nu)
    value = rho * p[0] + (1 - rho) * q[0]
    g_nu = rho * p[1] - (1 - rho) * q[1]
    g_g = rho * p[2] + (1 - rho) * q[2]
    h_nn = rho * p[3] + (1 - rho) * q[3]
    h_ng = rho * p[4] - (1 - rho) * q[4]
    h_gg = rho * p[5] + (1 - rho) * q[5]
    return value, g_nu, g_g, h_nn, h_ng, h_gg


def xi_rd_1(params: RdtParams, c1z: float, s1: float, gamma: float, nu: float, rho: float) -> float:
    if c1z < 0:
        raise ValueError("c1z must be non-negative")
    return (math.sqrt(params.alpha) * math.sqrt(c1z + params.sigma ** 2)
            + i_box1(gamma, nu, rho) - nu * s1 - gamma * c1z)


def saddle_1(params, c1z, s1, rho, start=(1.0, 0.0), tol_grad=1e-8):
    """max over (gamma, nu) of xi_rd_1; returns (xi, gamma, nu)."""
    lin = math.sqrt(params.alpha) * math.sqrt(c1z + params.sigma ** 2)
    best = None
    for s0 in (start, (1.0, 0.0)):
        gamma, nu, f, gn = _newton_saddle(
            lambda g, v: _mixture_terms(g, v, rho)[0] - v * s1 - g * c1z,
            lambda g, v: _mixture_terms(g, v, rho)[1:], (s1, c1z), s0, max_iter=1000)
        if best is None or gn < best[3]:
            best = (gamma, nu, f, gn)
        if gn <= tol_grad:
            break
    gamma, nu, f, gn = best
    if not gn <= tol_grad:
        raise ConvergenceError(f"first-iteration saddle: gradient norm {gn:.3g}")
    return lin + f, gamma, nu


def _saddle_or_inf(params, c1z, s1, rho, start=(1.0, 0.0)):
    # when the moment constraints cannot be met (e.g. s1^2 > c1z, or c1z near
    # 4 with s1 != 0) the dual is unbounded and the Newton ascent stalls; the
    # value is then +inf, which the outer minimization simply avoids
    try:
        return saddle_1(params, c1z, s1, rho, start)
    except ConvergenceError:
        return math.inf, start[0], start[1]


def reduced_xi_1(params, s1, rho, n_grid=41):
    """min over c1z in (0, 4) of the saddle; returns (xi, c1z, gamma, nu)."""
    grid = np.linspace(max(0.01, 1.01 * s1 * s1), C1Z_MAX - 0.01, n_grid)
    vals = []
    start = (1.0, 0.0)
    for c in grid:
        v, g, n = _saddle_or_inf(params, float(c), s1, rho, start)
        vals.append(v)
        if math.isfinite(v):
            start = (g, n)
    k = int(np.argmin(vals))
    if not math.isfinite(vals[k]):
        raise ConvergenceError("first-iteration saddle unbounded on the whole c1z range")
    lo, hi = grid[max(k - 1, 0)], grid[min(k + 1, len(grid) - 1)]
    c1z, _ = minimize_scalar(lambda c: _saddle_or_inf(params, c, s1, rho)[0], (lo, hi),
                             OptimizerSettings(tolerance=1e-12))
    xi, g, n = saddle_1(params, c1z, s1, rho)
    return xi, c1z, g, n


def s_x1(gamma, nu):
    return (-nu / 2 / gamma * (0.5 * math.erfc(nu / SQRT2) - 0.5 * math.erfc((nu + 4 * gamma) / SQRT2))
            + 1 / 2 / gamma / SQRT2PI * (math.exp(-nu * nu / 2) - math.exp(-(4 * gamma + nu) ** 2 / 2)))


def s_xsq1(gamma, nu):
    return -i11(gamma, nu) / gamma


def s_x2(gamma, nu):
    return 2 * (0.5 * math.erfc((4 * gamma + nu) / SQRT2))


def s_xsq2(gamma, nu):
    return 2 * s_x2(gamma, nu)


def first_iter_moments(gamma, nu, rho):
    """(E x_sol^T x, E ||x||^2) of the first iterate."""
    e_overlap = 1 - (rho * s_x1(gamma, nu) + (1 - rho) * s_x1(gamma, -nu)
                     + rho * s_x2(gamma, nu) + (1 - rho) * s_x2(gamma, -nu))
    e_norm_sq = (rho * s_xsq1(gamma, nu) + (1 - rho) * s_xsq1(gamma, -nu)
                 + rho * s_xsq2(gamma, nu) + (1 - rho) * s_xsq2(gamma, -nu)
                 + 2 * e_overlap - 1)
    return e_overlap, e_norm_sq


def first_iter_perr(gamma, nu, rho):
    return 1 - (rho * 0.5 * math.erfc((-2 * gamma - nu) / SQRT2)
                + (1 - rho) * 0.5 * math.erfc((-2 * gamma + nu) / SQRT2))


def first_iter_solve(params: RdtParams, r: float, rho: float = 0.5) -> FirstIterSolution:
    """Smallest s1 whose reduced first-iteration value reaches r.

    The reduced value decreases in s1, so the smallest feasible s1 is the
    root of reduced_xi_1(s1) = r, bracketed by stepping s1 down from 0.
    """
    if not r > 0:
        raise ValueError("r must be positive")
    _check(1.0, rho)

    def excess(s1):
        return reduced_xi_1(params, s1, rho)[0] - r

    hi = 0.0
    f_hi = excess(hi)
    lo = -0.05
    f_lo = excess(lo)
    while f_lo * f_hi > 0 and lo > -2.0:
        hi, f_hi = lo, f_lo
        lo -= 0.1
        f_lo = excess(lo)
    if f_lo * f_hi > 0:
        raise ConvergenceError("no s1 reaches the requested radius")
    s1 = find_root(excess, (lo, hi), OptimizerSettings(tolerance=1e-12))
    xi, c1z, gamma, nu = reduced_xi_1(params, s1, rho)
    e_overlap, e_norm_sq = first_iter_moments(gamma, nu, rho)
    return FirstIterSolution(nu_hat=nu, gamma_hat=gamma, c1z_hat=c1z, s1_hat=s1, xi1=xi,
                             perr1=first_iter_perr(gamma, nu, rho), e_norm_sq=e_norm_sq,
                             e_overlap=e_overlap, rho=rho)


def escape_check(params: RdtParams, r: float, rho: float, stationary: Iterable[StationaryPoint],
                 solution: FirstIterSolution = None) -> bool:
    """True when the first iterate's predicted norm clears the lowest stationary c2."""
    stationary = list(stationary)
    if not stationary:
        return True
    sol = solution if solution is not None else first_iter_solve(params, r, rho)
    return sol.e_norm_sq > min(p.c2 for p in stationary)
