"""Special functions and small optimization primitives.

The error-function family is taken from ``scipy.special`` (double precision,
well under the 1e-12 accuracy the saddle-point layers need).  The optimizers
are thin wrappers over ``scipy.optimize`` that turn silent non-convergence
into a :class:`ConvergenceError`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import optimize, special

SQRT2 = math.sqrt(2.0)
SQRT2PI = math.sqrt(2.0 * math.pi)


class ConvergenceError(RuntimeError):
    """Raised when an iterative routine fails to meet its tolerance."""


@dataclass(frozen=True)
class OptimizerSettings:
    """Tolerances and budget shared by the optimizers in this module.

    Parameters
    ----------
    tolerance : float
        Absolute tolerance on the argument.
    value_tolerance : float
        Absolute tolerance on the objective value (simplex search only).
    max_evals : int
        Budget of function evaluations (or iterations for root finding).
    simplex_scale : sequence of float
        Per-coordinate size of the initial simplex for :func:`maximize_nd`.
    """

    tolerance: float = 1e-10
    value_tolerance: float = 1e-12
    max_evals: int = 2000
    simplex_scale: Sequence[float] = field(default_factory=lambda: (0.1,))

    def __post_init__(self):
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")
        if self.max_evals < 1:
            raise ValueError("max_evals must be at least 1")


DEFAULT_SETTINGS = OptimizerSettings()


def erf(x):
    return special.erf(x)


def erfc(x):
    return special.erfc(x)


def erfinv(p):
    """Inverse error function on the open interval (-1, 1).

    Raises
    ------
    ValueError
        If any ``|p| >= 1``.
    """
    p_arr = np.asarray(p, dtype=float)
    if np.any(np.abs(p_arr) >= 1.0) or np.any(~np.isfinite(p_arr)):
        raise ValueError("erfinv is defined only for |p| < 1")
    out = special.erfinv(p_arr)
    return float(out) if out.ndim == 0 else out


def norm_cdf(x: float) -> float:
    return 0.5 * math.erfc(-x / SQRT2)


def norm_sf(x: float) -> float:
    return 0.5 * math.erfc(x / SQRT2)


def norm_pdf(x: float) -> float:
    return math.exp(-0.5 * x * x) / SQRT2PI


def minimize_scalar(f: Callable[[float], float], bracket, settings: OptimizerSettings = DEFAULT_SETTINGS):
    """Bounded Brent minimization of ``f`` on ``bracket = (lo, hi)``.

    Returns
    -------
    (argmin, value)
    """
    lo, hi = float(bracket[0]), float(bracket[-1])
    if not lo < hi:
        raise ValueError("bracket must satisfy lo < hi")
    res = optimize.minimize_scalar(
        f, bounds=(lo, hi), method="bounded",
        options={"xatol": settings.tolerance, "maxiter": settings.max_evals},
    )
    if not res.success:
        raise ConvergenceError(f"scalar minimization failed: {res.message}")
    return float(res.x), float(res.fun)


def find_root(f: Callable[[float], float], bracket, settings: OptimizerSettings = DEFAULT_SETTINGS) -> float:
    """Brent root finding on a sign-changing bracket."""
    lo, hi = float(bracket[0]), float(bracket[-1])
    flo, fhi = f(lo), f(hi)
    if flo == 0.0:
        return lo
    if fhi == 0.0:
        return hi
    if np.sign(flo) == np.sign(fhi):
        raise ValueError("find_root needs a sign change over the bracket")
    root, info = optimize.brentq(
        f, lo, hi, xtol=settings.tolerance, rtol=4 * np.finfo(float).eps,
        maxiter=settings.max_evals, full_output=True, disp=False,
    )
    if not info.converged:
        raise ConvergenceError(f"root finding failed: {info.flag}")
    return float(root)


def maximize_nd(f: Callable[[np.ndarray], float], start, settings: OptimizerSettings = DEFAULT_SETTINGS,
                restarts: int = 3):
    """Derivative-free maximization by Nelder-Mead with restarts.

    Each restart begins from the previous best point with a fresh simplex,
    which undoes the simplex collapse that plain Nelder-Mead suffers from.
    The perturbations are deterministic, so reruns are bit-identical.

    Returns
    -------
    (argmax, value)
    """
    x = np.atleast_1d(np.asarray(start, dtype=float)).copy()
    d = x.size
    scale = np.resize(np.asarray(settings.simplex_scale, dtype=float), d)
    best_x, best_v = x, -np.inf
    converged = False
    for k in range(restarts):
        simplex = np.vstack([best_x if k else x] * (d + 1))
        step = scale / (1 + k)
        for j in range(d):
            simplex[j + 1, j] += step[j] * max(1.0, abs(simplex[0, j]))
        res = optimize.minimize(
            lambda z: -f(z), simplex[0], method="Nelder-Mead",
            options={"initial_simplex": simplex, "xatol": settings.tolerance,
                     "fatol": settings.value_tolerance, "maxfev": settings.max_evals},
        )
        moved = np.max(np.abs(res.x - best_x)) if np.isfinite(best_v) else np.inf
        if -res.fun >= best_v:
            best_x, best_v = res.x.copy(), -float(res.fun)
        converged = res.success
        if k > 0 and res.success and moved <= 10 * settings.tolerance:
            break
    if not converged:
        raise ConvergenceError("simplex maximization did not converge")
    return best_x, best_v
