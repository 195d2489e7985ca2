"""Random-duality prediction for exact ML detection.

After the inner maximization over nu (attained at nu = sqrt(2) erfinv(-c1))
the objective is a function of the overlap c1 alone:

    xi_ml(c1) = sqrt(alpha) sqrt(2 - 2 c1 + sigma^2) - sqrt(2/pi) exp(-erfinv(c1)^2)

with derivative -sqrt(alpha) / sqrt(2 - 2 c1 + sigma^2) + sqrt(2) erfinv(c1).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
from scipy import special

from .numerics import OptimizerSettings, ConvergenceError, erfinv, find_root, minimize_scalar
from .rdt_clup import RdtParams
from .model import snr_db_to_sigma

_SQRT_2_PI = math.sqrt(2.0 / math.pi)
SCAN_POINTS = 2000

# reference values from the lifted (1FL) analysis, for reporting only:
# snr_db -> (xi, perr)
LIFTED_ML_REFERENCE = {
    8.0: (3.3339e-01, 9.00e-02),
    9.0: (3.1048e-01, 2.25e-02),
    10.0: (2.8099e-01, 4.20e-03),
    11.0: (2.5162e-01, 9.72e-04),
    12.0: (2.2457e-01, 2.01e-04),
    13.0: (2.0022e-01, 3.30e-05),
}


@dataclass
class MlRdtSolution:
    c1_global: float
    xi_global: float
    perr: float
    nu_hat: float
    local_minima: List[Tuple[float, float, float]] = field(default_factory=list)


def nu_hat_ml(c1: float) -> float:
    return math.sqrt(2.0) * erfinv(-c1)


def xi_rd_ml_nu(params: RdtParams, c1: float, nu: float) -> float:
    """Objective before the maximization over nu (concave in nu)."""
    e_abs = nu * math.erf(nu / math.sqrt(2.0)) + _SQRT_2_PI * math.exp(-nu * nu / 2)
    return math.sqrt(params.alpha) * math.sqrt(2 - 2 * c1 + params.sigma ** 2) - nu * c1 - e_abs


def xi_rd_ml(params: RdtParams, c1):
    c1 = np.asarray(c1, dtype=float)
    if np.any(np.abs(c1) >= 1):
        raise ValueError("c1 must lie in (-1, 1)")
    u = special.erfinv(c1)
    out = np.sqrt(params.alpha) * np.sqrt(2 - 2 * c1 + params.sigma ** 2) - _SQRT_2_PI * np.exp(-u * u)
    return out if out.ndim else float(out)


def xi_rd_ml_slope(params: RdtParams, c1):
    c1 = np.asarray(c1, dtype=float)
    out = -np.sqrt(params.alpha) / np.sqrt(2 - 2 * c1 + params.sigma ** 2) + math.sqrt(2.0) * special.erfinv(c1)
    return out if out.ndim else float(out)


def c1_cap(params: RdtParams) -> float:
    snr_db = -20 * math.log10(params.sigma) if params.sigma > 0 else math.inf
    return 1 - 1e-9 if snr_db <= 14 else 1 - 1e-12


def _scan(params: RdtParams, n: int = SCAN_POINTS):
    # uniform in u = erfinv(c1): the minimizer sits ever closer to 1 as the
    # SNR grows and a uniform c1 grid would not resolve it
    u = np.linspace(0.0, special.erfinv(c1_cap(params)), n)
    c1 = special.erf(u)
    return c1, xi_rd_ml(params, c1), xi_rd_ml_slope(params, c1)


def ml_minimize(params: RdtParams) -> MlRdtSolution:
    """All local minima of xi_ml over c1 in [0, cap] and the global one."""
    c1, vals, slopes = _scan(params)
    minima = []
    if slopes[0] >= 0:
        minima.append((0.0, float(vals[0])))
    for k in range(len(c1) - 1):
        if slopes[k] < 0 <= slopes[k + 1]:
            x = find_root(lambda c: xi_rd_ml_slope(params, c), (c1[k], c1[k + 1]),
                          OptimizerSettings(tolerance=1e-15))
            minima.append((x, xi_rd_ml(params, x)))
    if slopes[-1] < 0:
        minima.append((float(c1[-1]), float(vals[-1])))
    if not minima:
        raise ConvergenceError("no minimum found")
    c1g, xig = min(minima, key=lambda t: t[1])
    return MlRdtSolution(c1_global=c1g, xi_global=xig, perr=(1 - c1g) / 2, nu_hat=nu_hat_ml(c1g),
                         local_minima=[(c, x, (1 - c) / 2) for c, x in minima])


def _slope_extrema(params: RdtParams) -> Tuple[Optional[float], Optional[float]]:
    """First interior local maximum of the c1-slope and the local minimum after it.

    Two minima coexist exactly when the slope crosses zero upwards, comes
    back below zero and crosses again, i.e. when the bump is positive and the
    dip that follows is negative.
    """
    c1, _, slopes = _scan(params)
    peak = dip = None
    settings = OptimizerSettings(tolerance=1e-13)
    for k in range(1, len(c1) - 1):
        if peak is None and slopes[k] >= slopes[k - 1] and slopes[k] > slopes[k + 1]:
            _, v = minimize_scalar(lambda c: -xi_rd_ml_slope(params, c), (c1[k - 1], c1[k + 1]), settings)
            peak = -v
        elif peak is not None and slopes[k] <= slopes[k - 1] and slopes[k] < slopes[k + 1]:
            _, dip = minimize_scalar(lambda c: xi_rd_ml_slope(params, c), (c1[k - 1], c1[k + 1]), settings)
            break
    return peak, dip


@dataclass(frozen=True)
class CriticalSnrs:
    multi_onset_db: float
    discontinuity_db: float


def ml_critical_snrs(alpha: float, lo_db: float = 6.0, hi_db: float = 16.0, tol_db: float = 1e-4) -> CriticalSnrs:
    """SNRs where a second local minimum appears and where it takes over.

    ``multi_onset_db`` is the upper edge of the SNR range with two minima:
    above it the curve has a single minimum.  ``discontinuity_db`` is where
    the two minima have equal value, i.e. where the global minimizer jumps.
    """
    def two_minima(db):
        peak, dip = _slope_extrema(RdtParams(alpha, snr_db_to_sigma(db)))
        return peak is not None and dip is not None and peak > 0 > dip

    grid = np.arange(lo_db, hi_db + 1e-9, 0.25)
    flags = [two_minima(db) for db in grid]
    if not any(flags):
        raise ConvergenceError("no multi-minimum regime in the scanned SNR range")
    last = max(i for i, f in enumerate(flags) if f)
    if last == len(grid) - 1:
        raise ConvergenceError("multi-minimum regime extends past the scanned range")
    a, b = grid[last], grid[last + 1]
    while b - a > tol_db:
        mid = 0.5 * (a + b)
        a, b = (mid, b) if two_minima(mid) else (a, mid)
    onset = float(0.5 * (a + b))

    def gap(db):
        mins = ml_minimize(RdtParams(alpha, snr_db_to_sigma(db))).local_minima
        if len(mins) < 2:
            return math.nan
        return mins[-1][1] - mins[0][1]  # high-overlap minus low-overlap value

    region = [db for db, f in zip(grid, flags) if f]
    g_lo, g_hi = gap(region[0]), gap(onset - 1e-3)
    if not (g_lo > 0 > g_hi):
        raise ConvergenceError("no exchange of global minima in the multi-minimum range")
    disc = find_root(gap, (region[0], onset - 1e-3), OptimizerSettings(tolerance=tol_db))
    return CriticalSnrs(multi_onset_db=onset, discontinuity_db=disc)
