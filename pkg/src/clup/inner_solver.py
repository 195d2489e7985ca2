"""The convex subproblem solved at every CLuP step.

    maximize  w^T x
    subject to ||y - A x||_2 <= r,  -b <= x_i <= b  (b = 1/sqrt(n)),
               a_k^T x >= beta_k  for optional extra half-spaces.

The main path is a primal-dual interior-point method (Mehrotra
predictor-corrector) on the smooth form 0.5 (||A x - y||^2 - r^2) <= 0,
followed by an exact "polish": once the coordinates sitting on the box are
known, the remaining free block has the closed-form solution

    x_F = x_ls + tau G_F^{-1} w_F,   tau = sqrt((r^2 - rho^2) / w_F^T G_F^{-1} w_F)

where x_ls is the least-squares fit of the free block and rho its residual.
The polish is accepted only if it passes an explicit KKT check, so the
interior-point result is always the fallback.  Consecutive CLuP steps change
the active set very little, which makes warm-started polishing the common
case.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg, optimize

from .model import ProblemInstance
from .numerics import ConvergenceError, OptimizerSettings, find_root

TOL_FEAS = 1e-8
TOL_KKT = 1e-8
MAX_ITER = 20000
# the interior-point method converges in tens of iterations; this caps it
# independently of the caller's budget
_IPM_MAX_ITER = 200


class Status(enum.Enum):
    OPTIMAL = "Optimal"
    INFEASIBLE = "Infeasible"
    MAX_ITERATIONS = "MaxIterations"


class InfeasibleError(RuntimeError):
    """The residual ball does not meet the box."""


@dataclass(frozen=True, eq=False)
class InnerProblem:
    instance: ProblemInstance
    w: np.ndarray
    r: float
    extra_halfspaces: Tuple[Tuple[np.ndarray, float], ...] = ()

    def __post_init__(self):
        # r = 0 is meaningful for noiseless systems, where the box minimum is 0
        if not self.r >= 0:
            raise ValueError("radius must be non-negative")
        if np.shape(self.w) != (self.instance.n,):
            raise ValueError("objective has the wrong dimension")
        for a, _ in self.extra_halfspaces:
            if np.shape(a) != (self.instance.n,):
                raise ValueError("half-space normal has the wrong dimension")


@dataclass
class SolverReport:
    x_star: np.ndarray
    objective: float
    residual: float
    iterations: int
    status: Status
    kkt_residual: float
    method: str = ""
    merit_trace: List[float] = field(default_factory=list)
    active: Optional[np.ndarray] = None
    multiplier: float = 0.0


class SolverContext:
    """Per-instance cache of A^T A, A^T y, the SVD of A and the box minimum."""

    def __init__(self, instance: ProblemInstance):
        self.instance = instance
        A, y = instance.A, instance.y
        self.G = A.T @ A
        self.Aty = A.T @ y
        self.yy = float(y @ y)
        self._svd = None
        self._box_min = None

    @property
    def svd(self):
        if self._svd is None:
            self._svd = np.linalg.svd(self.instance.A, full_matrices=False)
        return self._svd

    def box_min(self):
        if self._box_min is None:
            self._box_min = _min_box_residual(self.instance)
        return self._box_min


def _context(instance, context):
    if context is None:
        return SolverContext(instance)
    if context.instance is not instance:
        raise ValueError("context belongs to a different instance")
    return context


# ---------------------------------------------------------------- KKT measure

def kkt_residual(problem: InnerProblem, x, mu: float, eta=(), tol_active: float = 1e-9) -> float:
    """First-order optimality violation for multipliers (mu, eta).

    With q = w - mu A^T (A x - y) + sum eta_k a_k the box multipliers are
    read off q: a free coordinate needs q_i = 0, one on the upper face
    q_i >= 0 and one on the lower face q_i <= 0.  Complementarity of the ball
    and half-space constraints and the signs of mu, eta are included.
    """
    inst = problem.instance
    b = inst.bound
    r_vec = inst.A @ x - inst.y
    q = problem.w - mu * (inst.A.T @ r_vec)
    viol = [0.0, max(-mu, 0.0)]
    for (a, beta), e in zip(problem.extra_halfspaces, eta):
        q = q + e * a
        viol += [max(-e, 0.0), abs(e * (a @ x - beta))]
    at_up = x >= b - tol_active
    at_lo = x <= -b + tol_active
    free = ~(at_up | at_lo)
    if free.any():
        viol.append(np.abs(q[free]).max())
    if at_up.any():
        viol.append(max(-q[at_up].min(), 0.0))
    if at_lo.any():
        viol.append(max(q[at_lo].max(), 0.0))
    res = float(np.linalg.norm(r_vec))
    viol.append(abs(mu) * abs(problem.r - res) * (problem.r + res) / 2)
    return float(max(viol))


def _feasibility_gap(problem: InnerProblem, x) -> float:
    inst = problem.instance
    gap = max(inst.residual(x) - problem.r, float(np.abs(x).max() - inst.bound), 0.0)
    for a, beta in problem.extra_halfspaces:
        gap = max(gap, beta - float(a @ x))
    return gap


# ---------------------------------------------------------------- active-set polish

def _polish(problem: InnerProblem, up: np.ndarray, lo: np.ndarray, hs_on=None):
    """Closed-form optimum with ``up``/``lo`` coordinates fixed on the box.

    Half-spaces flagged in ``hs_on`` are imposed as equalities.  On the free
    block the optimum is x = x_ls + t G^-1 (w + C^T eta), with t = 1/mu fixed
    by the ball and eta by the active equalities; both are linear in t, so t
    solves a scalar quadratic.

    Returns (x, mu, eta) or None when the face system has no solution.
    """
    inst = problem.instance
    A, b, R = inst.A, inst.bound, problem.r
    nh = len(problem.extra_halfspaces)
    hs_on = np.zeros(nh, dtype=bool) if hs_on is None else np.asarray(hs_on, dtype=bool)
    free = ~(up | lo)
    x = np.zeros(inst.n)
    x[up], x[lo] = b, -b
    yp = inst.y - A @ x
    k = int(free.sum())
    eta = np.zeros(nh)
    if k == 0:
        if hs_on.any() or np.linalg.norm(yp) > R:
            return None
        return x, 0.0, eta
    if k > inst.m:
        return None
    AF = A[:, free]
    Q, Rf = np.linalg.qr(AF)
    if np.abs(np.diag(Rf)).min() <= 1e-12 * np.abs(np.diag(Rf)).max():
        return None
    qty = Q.T @ yp
    x_ls = linalg.solve_triangular(Rf, qty)
    rho2 = max(yp @ yp - qty @ qty, 0.0)
    if R * R < rho2:
        return None

    def ginv(v):  # G^-1 v and R G^-1 v (whose norm is the G-norm)
        z = linalg.solve_triangular(Rf, v, trans="T")
        return linalg.solve_triangular(Rf, z), z

    wf = problem.w[free]
    u, ru = ginv(wf)
    p, rp = u, ru
    q = np.zeros(k)
    rq = np.zeros(k)
    s0 = s1 = np.zeros(0)
    if hs_on.any():
        idx = np.flatnonzero(hs_on)
        CF = np.array([problem.extra_halfspaces[j][0][free] for j in idx])
        bet = np.array([problem.extra_halfspaces[j][1] - problem.extra_halfspaces[j][0][~free] @ x[~free]
                        for j in idx])
        V, RV = ginv(CF.T)
        M = CF @ V
        try:
            s0 = np.linalg.solve(M, bet - CF @ x_ls)
            s1 = -np.linalg.solve(M, CF @ u)
        except np.linalg.LinAlgError:
            return None
        p, rp = u + V @ s1, ru + RV @ s1
        q, rq = V @ s0, RV @ s0
    # ||t rp + rq||^2 = R^2 - rho2
    qa, qb, qc = rp @ rp, rp @ rq, rq @ rq - (R * R - rho2)
    if qa <= 0:
        return None
    disc = qb * qb - qa * qc
    if disc < 0:
        return None
    t = (-qb + math.sqrt(disc)) / qa
    if not t > 0:
        return None
    x[free] = x_ls + t * p + q
    if hs_on.any():
        eta[hs_on] = (s0 + t * s1) / t
    return x, 1.0 / t, eta


def _polish_from(problem: InnerProblem, up, lo, tol_feas, tol_kkt, hs_on=None, max_rounds=12):
    """Primal-dual active-set iterations started from a guessed face.

    Coordinates the closed form pushes out of the box are fixed on that
    face; fixed coordinates whose multiplier has the wrong sign are freed.
    Half-spaces are switched on when violated and off when their
    multiplier turns negative.
    """
    inst = problem.instance
    b = inst.bound
    nh = len(problem.extra_halfspaces)
    up, lo = up.copy(), lo.copy()
    hs_on = np.zeros(nh, dtype=bool) if hs_on is None else np.array(hs_on, dtype=bool)
    for rounds in range(1, max_rounds + 1):
        sol = _polish(problem, up, lo, hs_on)
        if sol is None:
            return None
        x, mu, eta = sol
        changed = False
        over, under = x > b + tol_feas, x < -b - tol_feas
        viol = np.array([a @ x < beta - tol_feas for a, beta in problem.extra_halfspaces], dtype=bool)
        if over.any() or under.any() or (viol & ~hs_on).any():
            up |= over
            lo |= under
            hs_on |= viol
            changed = True
        else:
            q = problem.w - mu * (inst.A.T @ (inst.A @ x - inst.y))
            for (a, _), e in zip(problem.extra_halfspaces, eta):
                q = q + e * a
            bad_up = up & (q < -tol_kkt)
            bad_lo = lo & (q > tol_kkt)
            bad_hs = hs_on & (eta < -tol_kkt)
            if bad_up.any() or bad_lo.any() or bad_hs.any():
                up &= ~bad_up
                lo &= ~bad_lo
                hs_on &= ~bad_hs
                changed = True
        if not changed:
            x = np.clip(x, -b, b)
            return x, mu, eta, rounds, up, lo
    return None


# ---------------------------------------------------------------- interior point

def _ipm(problem: InnerProblem, ctx: SolverContext, max_iter: int, tol: float = 1e-13):
    """Mehrotra predictor-corrector on the smooth reformulation.

    Constraints are written g_j(x) + s_j = 0 with slacks s >= 0 and duals
    z >= 0: x - b <= 0, -x - b <= 0, 0.5 (||A x - y||^2 - r^2) <= 0 and
    beta_k - a_k^T x <= 0.  Each Newton step reduces to one n x n symmetric
    positive definite solve.
    """
    inst = problem.instance
    A, y, b, R = inst.A, inst.y, inst.bound, problem.r
    n = inst.n
    w = np.asarray(problem.w, dtype=float)
    C = np.array([a for a, _ in problem.extra_halfspaces]).reshape(-1, n)
    beta = np.array([bb for _, bb in problem.extra_halfspaces], dtype=float)
    nh = C.shape[0]
    G = ctx.G
    wscale = max(float(np.abs(w).max()), 1e-300)

    x = np.zeros(n)
    r_vec = A @ x - y
    su = np.full(n, b)
    sl = np.full(n, b)
    sq = max(-0.5 * (r_vec @ r_vec - R * R), 1e-2 * R * R)
    sh = np.maximum(C @ x - beta, 1e-2) if nh else np.zeros(0)
    zu = np.full(n, 1e-2 * wscale)
    zl = np.full(n, 1e-2 * wscale)
    zq = wscale
    zh = np.full(nh, 1e-2 * wscale)
    p = 2 * n + 1 + nh
    merit = []
    it = 0
    status = Status.MAX_ITERATIONS

    for it in range(1, max_iter + 1):
        r_vec = A @ x - y
        grad_q = A.T @ r_vec
        rd = -w + zu - zl + zq * grad_q - (C.T @ zh if nh else 0.0)
        rpu = x - b + su
        rpl = -x - b + sl
        rpq = 0.5 * (r_vec @ r_vec - R * R) + sq
        rph = beta - C @ x + sh if nh else np.zeros(0)
        mu = (su @ zu + sl @ zl + sq * zq + sh @ zh) / p
        res_d = float(np.abs(rd).max()) / wscale
        res_p = max(float(np.abs(rpu).max()), float(np.abs(rpl).max()),
                    abs(rpq) / max(R * R, 1e-300), float(np.abs(rph).max()) if nh else 0.0)
        merit.append(max(mu / wscale, res_d, res_p))
        if not math.isfinite(merit[-1]):
            break
        if mu / wscale < tol and res_p < 1e3 * tol:
            # the dual residual stalls around 1e-8 relative once the barrier
            # terms dominate the Newton matrix; the polish removes that error
            status = Status.OPTIMAL
            break

        d = zu / su + zl / sl
        H = zq * G + (zq / sq) * np.outer(grad_q, grad_q)
        if nh:
            H += (C.T * (zh / sh)) @ C
        H[np.diag_indices(n)] += d
        sc = 1.0 / np.sqrt(np.diag(H))
        Hs = H * sc[:, None] * sc[None, :]
        Hs[np.diag_indices(n)] += 1e-13
        try:
            cf = linalg.cho_factor(Hs, check_finite=False)
        except linalg.LinAlgError:
            break

        def solve(rhs):
            r0 = sc * rhs
            u = linalg.cho_solve(cf, r0, check_finite=False)
            for _ in range(2):
                u = u + linalg.cho_solve(cf, r0 - Hs @ u, check_finite=False)
            return sc * u

        def direction(rcu, rcl, rcq, rch):
            rhs = (-rd - (-rcu + zu * rpu) / su + (-rcl + zl * rpl) / sl
                   - grad_q * ((-rcq + zq * rpq) / sq))
            if nh:
                rhs = rhs + C.T @ ((-rch + zh * rph) / sh)
            dx = solve(rhs)
            dsu = -rpu - dx
            dsl = -rpl + dx
            dsq = -rpq - grad_q @ dx
            dsh = -rph + C @ dx if nh else np.zeros(0)
            dzu = (-rcu - zu * dsu) / su
            dzl = (-rcl - zl * dsl) / sl
            dzq = (-rcq - zq * dsq) / sq
            dzh = (-rch - zh * dsh) / sh if nh else np.zeros(0)
            return dx, np.concatenate([dsu, dsl, [dsq], dsh]), np.concatenate([dzu, dzl, [dzq], dzh])

        S = np.concatenate([su, sl, [sq], sh])
        Z = np.concatenate([zu, zl, [zq], zh])

        def split(v):
            return v[:n], v[n:2 * n], v[2 * n], v[2 * n + 1:]

        def max_step(v, dv):
            neg = dv < 0
            return min(1.0, float((-v[neg] / dv[neg]).min())) if neg.any() else 1.0

        # predictor
        dx, dS, dZ = direction(*split(S * Z))
        ap, ad = max_step(S, dS), max_step(Z, dZ)
        mu_aff = ((S + ap * dS) @ (Z + ad * dZ)) / p
        sigma = (mu_aff / mu) ** 3
        # corrector
        dx, dS, dZ = direction(*split(S * Z + dS * dZ - sigma * mu))
        step = min(1.0, 0.99 * min(max_step(S, dS), max_step(Z, dZ)))
        x = x + step * dx
        S = S + step * dS
        Z = Z + step * dZ
        su, sl, sq, sh = split(S)
        zu, zl, zq, zh = split(Z)
        sq = float(sq)
        zq = float(zq)
    return x, zq, zh, zu, zl, su, sl, it, status, merit


# ---------------------------------------------------------------- public API

def solve_inner(problem: InnerProblem, tol_feas: float = TOL_FEAS, tol_kkt: float = TOL_KKT,
                max_iter: int = MAX_ITER, context: Optional[SolverContext] = None,
                active_hint: Optional[np.ndarray] = None) -> SolverReport:
    """Maximize w^T x over the residual ball, the box and extra half-spaces.

    Parameters
    ----------
    active_hint : array of int in {-1, 0, 1}, optional
        Guessed face of the box for each coordinate (e.g. from the previous
        CLuP step).  Tried first by the exact polish; ignored if it fails.

    Returns
    -------
    SolverReport
        ``status`` is Infeasible when the smallest residual over the box
        exceeds ``r + tol_feas``.
    """
    inst = problem.instance
    ctx = _context(inst, context)
    w = np.asarray(problem.w, dtype=float)
    b = inst.bound
    x_plt, r_min = ctx.box_min()

    def report(x, mu, eta, iters, method, merit=(), status=Status.OPTIMAL):
        kkt = kkt_residual(problem, x, mu, eta)
        gap = _feasibility_gap(problem, x)
        if status is Status.OPTIMAL and (kkt > tol_kkt or gap > tol_feas):
            status = Status.MAX_ITERATIONS
        act = np.where(x >= b - 1e-12, 1, np.where(x <= -b + 1e-12, -1, 0))
        return SolverReport(x_star=x, objective=-float(w @ x), residual=inst.residual(x), iterations=iters,
                            status=status, kkt_residual=kkt, method=method, merit_trace=list(merit),
                            active=act, multiplier=mu)

    if r_min > problem.r + tol_feas:
        return SolverReport(x_star=x_plt, objective=-float(w @ x_plt), residual=r_min, iterations=0,
                            status=Status.INFEASIBLE, kkt_residual=math.inf, method="certificate")
    if problem.r <= r_min:
        # the feasible set is (numerically) the single box minimizer; no
        # multiplier need exist there, so the KKT measure is informational only
        rep = report(x_plt, 0.0, (), 0, "degenerate")
        rep.status = Status.OPTIMAL
        return rep

    def in_halfspaces(x):
        return all(a @ x >= beta - tol_feas for a, beta in problem.extra_halfspaces)

    # the ball may not bind at all: then the best box vertex is optimal
    vertex = np.where(w >= 0, b, -b)
    if inst.residual(vertex) <= problem.r and in_halfspaces(vertex):
        return report(vertex, 0.0, np.zeros(len(problem.extra_halfspaces)), 0, "vertex")
    if active_hint is not None:
        hint = np.asarray(active_hint)
        got = _polish_from(problem, hint > 0, hint < 0, tol_feas, tol_kkt)
        if got is not None:
            x, mu, eta, rounds, _, _ = got
            rep = report(x, mu, eta, rounds, "polish")
            if rep.status is Status.OPTIMAL:
                return rep

    x, zq, zh, zu, zl, su, sl, iters, status, merit = _ipm(problem, ctx, min(max_iter, _IPM_MAX_ITER))
    ipm_rep = report(np.clip(x, -b, b), zq, zh, iters, "ipm", merit, status)
    if ipm_rep.status is Status.OPTIMAL and ipm_rep.kkt_residual < 1e-3 * tol_kkt:
        return ipm_rep
    hs_on = np.array([zh[j] > a @ x - beta for j, (a, beta) in enumerate(problem.extra_halfspaces)], dtype=bool)
    got = _polish_from(problem, zu > su, zl > sl, tol_feas, tol_kkt, hs_on)
    if got is not None:
        xp, mu, eta, rounds, _, _ = got
        rep = report(xp, mu, eta, iters + rounds, "ipm+polish", merit)
        if rep.status is Status.OPTIMAL and rep.kkt_residual <= max(ipm_rep.kkt_residual, tol_kkt):
            return rep
    return ipm_rep


def project_residual_ball(x0, instance: ProblemInstance, r: float, context: Optional[SolverContext] = None):
    """Euclidean projection of x0 onto {x : ||y - A x|| <= r}.

    The projection is x(mu) = (I + mu A^T A)^{-1} (x0 + mu A^T y) with the
    multiplier mu >= 0 solving ||A x(mu) - y|| = r, a monotone scalar
    equation in the SVD coordinates of A.
    """
    if not r > 0:
        raise ValueError("radius must be positive")
    x0 = np.asarray(x0, dtype=float)
    ctx = _context(instance, context)
    A, y = instance.A, instance.y
    if np.linalg.norm(A @ x0 - y) <= r:
        return x0.copy()
    U, s, Vt = ctx.svd
    c = U.T @ y
    d = Vt @ x0
    perp2 = max(float(y @ y - c @ c), 0.0)
    if perp2 > r * r * (1 + 1e-12):
        raise InfeasibleError("the residual ball is empty: r is below the least-squares residual")

    def excess(mu):
        return perp2 + float(np.sum(((c - s * d) / (1 + mu * s * s)) ** 2)) - r * r

    if excess(0.0) <= 0:
        return x0.copy()  # on the boundary up to rounding
    hi = 1.0
    while excess(hi) > 0:
        hi *= 10
        if hi > 1e300:
            raise ConvergenceError("projection multiplier diverged")
    mu = find_root(excess, (0.0, hi), OptimizerSettings(tolerance=1e-15 * hi, max_evals=500))
    coef = (d + mu * s * c) / (1 + mu * s * s)
    return x0 - Vt.T @ (Vt @ x0) + Vt.T @ coef


def _box_ls_polish(instance: ProblemInstance, x):
    """Exact box-constrained least squares from an approximate solution.

    Re-solves the free block by least squares and adjusts the active set
    until the gradient signs on the faces are consistent.
    """
    A, y, b = instance.A, instance.y, instance.bound
    up = x >= b - 1e-9
    lo = x <= -b + 1e-9
    for _ in range(20):
        free = ~(up | lo)
        z = np.where(up, b, np.where(lo, -b, 0.0))
        if free.any():
            sol, *_ = np.linalg.lstsq(A[:, free], y - A @ z, rcond=None)
            z[free] = sol
        g = A.T @ (A @ z - y)
        over, under = free & (z > b), free & (z < -b)
        bad_up, bad_lo = up & (g > 1e-12), lo & (g < -1e-12)
        if not (over.any() or under.any() or bad_up.any() or bad_lo.any()):
            return z
        up = (up & ~bad_up) | over
        lo = (lo & ~bad_lo) | under
    return None


def _min_box_residual(instance: ProblemInstance):
    A, y, b = instance.A, instance.y, instance.bound
    res = optimize.lsq_linear(A, y, bounds=(-b, b), method="trf", tol=1e-14, lsmr_tol="auto")
    x = _box_ls_polish(instance, np.clip(res.x, -b, b))
    if x is None:
        res = optimize.lsq_linear(A, y, bounds=(-b, b), method="bvls", tol=1e-14)
        if not res.success:
            raise ConvergenceError("box least squares did not converge")
        x = np.clip(res.x, -b, b)
    return x, instance.residual(x)


def min_box_residual(instance: ProblemInstance, context: Optional[SolverContext] = None):
    """Minimum of ||y - A x|| over the box, and its minimizer x_plt."""
    x, r = _context(instance, context).box_min()
    return x.copy(), r
