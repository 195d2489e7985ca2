"""Reference detectors: box (polytope) relaxation, ball relaxation and a
bit-flipping local search standing in for exact ML."""

from __future__ import annotations

import math
from typing import Optional, Tuple

import numpy as np

from .inner_solver import SolverContext
from .model import ProblemInstance, make_rng, sign_round
from .numerics import OptimizerSettings, find_root


def polytope_detect(instance: ProblemInstance, context: Optional[SolverContext] = None) -> Tuple[np.ndarray, float]:
    """Sign-rounded minimizer of ||y - A x|| over the box, and that minimum."""
    ctx = context if context is not None else SolverContext(instance)
    x_plt, r_min = ctx.box_min()
    return sign_round(x_plt), float(r_min)


def ball_relaxation(instance: ProblemInstance, radius: float = 1.0) -> np.ndarray:
    """argmin ||y - A x|| over ||x|| <= radius (minimum-norm point if not unique).

    In SVD coordinates the regularized solution x(lam) has components
    s_k c_k / (s_k^2 + lam), whose norm decreases in lam; the boundary case
    solves ||x(lam)|| = radius by bracketing.
    """
    U, s, Vt = np.linalg.svd(instance.A, full_matrices=False)
    c = U.T @ instance.y
    keep = s > s.max() * max(instance.A.shape) * np.finfo(float).eps
    s, c, Vt = s[keep], c[keep], Vt[keep]
    x_ls = Vt.T @ (c / s)
    if np.linalg.norm(x_ls) <= radius:
        return x_ls

    def excess(lam):
        return float(np.linalg.norm(s * c / (s * s + lam))) - radius

    hi = 1.0
    while excess(hi) > 0:
        hi *= 4.0
    lam = find_root(excess, (0.0, hi), OptimizerSettings(tolerance=1e-15))
    return Vt.T @ (s * c / (s * s + lam))


def ball_detect(instance: ProblemInstance) -> Tuple[np.ndarray, float]:
    """Sign-rounded unit-ball relaxation and its residual."""
    x = ball_relaxation(instance)
    return sign_round(x), instance.residual(x)


def _greedy_flips(A, y, G, x, check: bool = True):
    """Steepest single-coordinate descent on ||y - A x||^2 until no flip helps.

    Flipping x_i changes the squared residual by 4 x_i (a_i^T e + x_i ||a_i||^2)
    with e = A x - y; g = A^T e is updated from one column of G per flip.
    """
    x = x.copy()
    e = A @ x - y
    g = A.T @ e
    diag = np.diag(G)
    val = float(e @ e)
    flips = 0
    while True:
        delta = 4 * x * (-g + x * diag)
        i = int(np.argmin(delta))
        if delta[i] >= -1e-14 * max(val, 1.0):
            return x, val, flips
        step = -2 * x[i]
        x[i] = -x[i]
        g += step * G[:, i]
        e += step * A[:, i]
        new = float(e @ e)
        if check and new > val + 1e-12 * max(val, 1.0):
            raise AssertionError("bit flip increased the residual")
        val = new
        flips += 1


def bit_flip_ml(instance: ProblemInstance, x_init=None, restarts: int = 10, seed: int = 0) -> Tuple[np.ndarray, float]:
    """Best local minimum of ||y - A x|| over sign vectors from several starts.

    The first start is ``x_init`` (a random sign vector when absent); the
    others are random sign vectors from the stream (seed, 2, j).
    """
    if restarts < 1:
        raise ValueError("restarts must be at least 1")
    A, y, n = instance.A, instance.y, instance.n
    G = A.T @ A
    scale = 1.0 / math.sqrt(n)
    best_x, best_v = None, math.inf
    for j in range(restarts):
        if j == 0 and x_init is not None:
            x0 = sign_round(x_init)
        else:
            x0 = np.where(make_rng(seed, 2, j).integers(0, 2, n) == 1, scale, -scale)
        x, v, _ = _greedy_flips(A, y, G, x0)
        if v < best_v:
            best_x, best_v = x, v
    # recompute from scratch so the reported residual carries no update drift
    return best_x, instance.residual(best_x)

