"""Independent reference computations used only by the tests."""

import functools
import itertools
import math

import numpy as np
from scipy import integrate


def gaussian_expectation(f, kinks=()):
    """E f(h), h ~ N(0, 1), by adaptive quadrature split at the kinks of f."""
    edges = [-np.inf] + sorted(kinks) + [np.inf]
    total = 0.0
    for a, b in zip(edges, edges[1:]):
        val, _ = integrate.quad(lambda h: f(h) * math.exp(-0.5 * h * h) / math.sqrt(2 * math.pi),
                                a, b, epsabs=1e-14, epsrel=1e-13, limit=200)
        total += val
    return total


def gauss_hermite_expectation(f, points=200):
    """E f(h), h ~ N(0, 1), by probabilists' Gauss-Hermite quadrature."""
    x, w = _hermegauss(points)
    return float(w @ f(x) / math.sqrt(2 * math.pi))


@functools.lru_cache(maxsize=None)
def _hermegauss(points):
    return np.polynomial.hermite_e.hermegauss(points)


def exhaustive_ml(A, y, n):
    """argmin of ||y - A x|| over {+-1/sqrt(n)}^n by enumeration."""
    bits = (np.arange(2 ** n)[:, None] >> np.arange(n)) & 1
    X = np.where(bits == 1, 1.0, -1.0) / math.sqrt(n)
    res = np.linalg.norm(X @ A.T - y, axis=1)
    k = int(np.argmin(res))
    return X[k], float(res[k])


def face_enumeration_max(A, y, w, r, b, halfspaces=()):
    """max w^T x over ||A x - y|| <= r, |x_i| <= b (and a^T x >= beta) by faces.

    Every face of the box is tried: fixed coordinates sit on +-b and the free
    block maximizes w^T x on the ball restricted to that face (closed form
    via the normal equations), with each half-space either ignored or held
    at equality; faces where the active half-spaces alone fix the free block
    are also tried with the ball slack.  The best candidate satisfying every
    constraint is the optimum.  Exponential in n; meant for n <= 8.
    """
    n = A.shape[1]
    best_val, best_x = -math.inf, None
    hs = list(halfspaces)
    for pattern in itertools.product((-1, 0, 1), repeat=n):
        pattern = np.array(pattern)
        free = pattern == 0
        x = np.where(free, 0.0, pattern * b)
        yp = y - A @ x
        k = int(free.sum())
        for on in itertools.product((False, True), repeat=len(hs)):
            cands = []
            act = [h for h, o in zip(hs, on) if o]
            if k == 0:
                cands.append(x.copy())
            elif len(act) == k:
                # ball slack: the active half-spaces alone pin the free block
                C = np.array([a[free] for a, _ in act])
                beta = np.array([bb - a[~free] @ x[~free] for a, bb in act])
                if abs(np.linalg.det(C)) > 1e-12:
                    c = x.copy()
                    c[free] = np.linalg.solve(C, beta)
                    cands.append(c)
            if k > 0:
                cands += _ball_face_candidates(A[:, free], yp, w[free], r, x, free, act)
            for c in cands:
                ok = (np.abs(c).max() <= b + 1e-10 and np.linalg.norm(A @ c - y) <= r + 1e-10
                      and all(a @ c >= bb - 1e-10 for a, bb in hs))
                if ok and w @ c > best_val:
                    best_val, best_x = float(w @ c), c
    return best_val, best_x


def box_least_squares(A, y, b):
    """min ||y - A x|| over |x_i| <= b by trying the least-squares fit on every face."""
    n = A.shape[1]
    best_r, best_x = math.inf, None
    for pattern in itertools.product((-1, 0, 1), repeat=n):
        pattern = np.array(pattern)
        free = pattern == 0
        x = np.where(free, 0.0, pattern * b)
        if free.any():
            x[free] = np.linalg.lstsq(A[:, free], y - A @ x, rcond=None)[0]
        if np.abs(x).max() <= b + 1e-12:
            r = float(np.linalg.norm(A @ x - y))
            if r < best_r:
                best_r, best_x = r, x
    return best_x, best_r


def _ball_face_candidates(AF, yp, wf, r, x, free, act):
    """Points of the face maximizing w^T x with the ball (and ``act``) tight."""
    k = AF.shape[1]
    G = AF.T @ AF
    if np.linalg.matrix_rank(G) < k:
        return []
    x_ls = np.linalg.solve(G, AF.T @ yp)
    rho2 = float(np.sum((AF @ x_ls - yp) ** 2))
    if r * r < rho2:
        return []
    Gi = np.linalg.inv(G)
    u = Gi @ wf
    v = np.zeros(k)
    if act:
        # stationarity w + C^T eta = mu G (x - x_ls) with the active rows tight
        C = np.array([a[free] for a, _ in act])
        beta = np.array([bb - a[~free] @ x[~free] for a, bb in act])
        M = C @ Gi @ C.T
        if abs(np.linalg.det(M)) < 1e-14:
            return []
        Mi = np.linalg.inv(M)
        u = u - Gi @ C.T @ Mi @ C @ Gi @ wf
        v = Gi @ C.T @ Mi @ (beta - C @ x_ls)
    qa, qb, qc = u @ G @ u, u @ G @ v, v @ G @ v - (r * r - rho2)
    disc = qb * qb - qa * qc
    if qa <= 0 or disc < 0:
        return []
    out = []
    for t in ((-qb + math.sqrt(disc)) / qa, (-qb - math.sqrt(disc)) / qa):
        c = x.copy()
        c[free] = x_ls + t * u + v
        out.append(c)
    return out


def ball_projection_bisection(x0, A, y, r):
    """Projection onto ||A x - y|| <= r by bisection on the multiplier (eigh basis)."""
    if np.linalg.norm(A @ x0 - y) <= r:
        return x0.copy()
    lam, V = np.linalg.eigh(A.T @ A)
    b0 = V.T @ (x0)
    c = V.T @ (A.T @ y)

    def x_of(mu):
        return V @ ((b0 + mu * c) / (1 + mu * lam))

    lo, hi = 0.0, 1.0
    while np.linalg.norm(A @ x_of(hi) - y) > r:
        hi *= 2
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if np.linalg.norm(A @ x_of(mid) - y) > r:
            lo = mid
        else:
            hi = mid
    return x_of(hi)


def ball_relaxation_bisection(A, y, radius=1.0):
    """argmin ||A x - y|| over ||x|| <= radius by bisection on the Tikhonov weight."""
    x = np.linalg.lstsq(A, y, rcond=None)[0]
    if np.linalg.norm(x) <= radius:
        return x
    n = A.shape[1]
    G, g = A.T @ A, A.T @ y

    def x_of(lam):
        return np.linalg.solve(G + lam * np.eye(n), g)

    lo, hi = 0.0, 1.0
    while np.linalg.norm(x_of(hi)) > radius:
        hi *= 2
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if np.linalg.norm(x_of(mid)) > radius:
            lo = mid
        else:
            hi = mid
    return x_of(hi)
