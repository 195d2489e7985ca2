"""The CLuP iteration and its restart / warm-start / radius-schedule variants.

One CLuP step maximizes (x^(i))^T x over the residual ball intersected with
the box, then renormalizes:

    x^(i+1,s) = argmax { (x^(i))^T x : ||y - A x|| <= r, x in [-1/sqrt(n), 1/sqrt(n)]^n }
    x^(i+1)   = x^(i+1,s) / ||x^(i+1,s)||
    c2^(i+1)  = ((x^(i))^T x^(i+1,s))^2,    delta = |sqrt(c2^(i+1)) - sqrt(c2^(i))|

starting from c2^(0) = (1e10)^2 and stopping once delta < delta_min (after at
least one step) or after i_max steps.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import asdict, dataclass
from typing import List, Optional, Tuple

import numpy as np

from .inner_solver import InfeasibleError, InnerProblem, SolverContext, Status, solve_inner
from .model import OverlapStats, ProblemInstance, make_rng, overlap_stats, sign_round
from .rdt_clup import RdtParams, r_plt_theory

INITIAL_DELTA = 1e10


class RadiusMode(enum.Enum):
    PER_INSTANCE = "per-instance"
    THEORETICAL = "theoretical"


class WarmStart(enum.Enum):
    RANDOM_SIGN = "random-sign"
    POLYTOPE_ROUND = "polytope-round"
    POLYTOPE_WITH_OVERLAP = "polytope-overlap"


@dataclass(frozen=True)
class ClupConfig:
    """Radius policy and stopping rule.

    ``radius_schedule`` holds per-iteration multipliers of r_plt (the same
    unit as ``r_sc``); the last entry is reused once the list runs out.
    """

    r_sc: float = 1.1
    radius_mode: RadiusMode = RadiusMode.PER_INSTANCE
    i_max: int = 50
    delta_min: float = 1e-8
    restarts: int = 1
    radius_schedule: Optional[Tuple[float, ...]] = None
    warm_start: WarmStart = WarmStart.RANDOM_SIGN

    def __post_init__(self):
        if not self.r_sc > 0:
            raise ValueError("r_sc must be positive")
        if self.radius_mode is RadiusMode.PER_INSTANCE and self.r_sc < 1:
            raise ValueError("r_sc below 1 makes per-instance radii infeasible")
        if not self.delta_min > 0:
            raise ValueError("delta_min must be positive")
        if self.i_max < 1 or self.restarts < 1:
            raise ValueError("i_max and restarts must be at least 1")
        if self.radius_schedule is not None:
            sched = tuple(float(v) for v in self.radius_schedule)
            if not sched:
                raise ValueError("radius schedule must not be empty")
            if any(b < a for a, b in zip(sched, sched[1:])):
                raise ValueError("radius schedule must be non-decreasing")
            if any(v <= 0 for v in sched):
                raise ValueError("radius schedule entries must be positive")
            object.__setattr__(self, "radius_schedule", sched)

    def to_record(self) -> dict:
        d = asdict(self)
        d["radius_mode"] = self.radius_mode.value
        d["warm_start"] = self.warm_start.value
        return d


@dataclass(frozen=True)
class TraceEntry:
    c2: float
    c1: float
    delta: float
    inner_iterations: int
    radius: float


@dataclass
class ClupResult:
    """Outcome of one CLuP run.

    ``stats`` describes the unnormalized final inner solution x^(i,s);
    ``ber`` is the bit-error rate of the sign-rounded ``x_clup``.
    """

    x_final: np.ndarray
    x_clup: np.ndarray
    x_inner: np.ndarray
    trace: List[TraceEntry]
    converged: bool
    stats: OverlapStats
    ber: float
    seed: int = 0
    config: Optional[ClupConfig] = None

    @property
    def iterations(self) -> int:
        return len(self.trace)

    def to_json(self) -> str:
        return json.dumps({
            "seed": self.seed,
            "config": self.config.to_record() if self.config else None,
            "converged": self.converged,
            "iterations": self.iterations,
            "final": {"c2": self.stats.c2, "c1": self.stats.c1, "ber": self.ber},
            "trace": [asdict(t) for t in self.trace],
        })


def max_objective_drop(result: ClupResult) -> float:
    """Largest decrease of sqrt(c2) between consecutive trace entries (0 if none)."""
    root = [math.sqrt(t.c2) for t in result.trace]
    return max([0.0] + [a - b for a, b in zip(root, root[1:])])


def random_start(n: int, seed: int, start_index: int = 0) -> np.ndarray:
    """Uniform point of {+-1/sqrt(n)}^n from the stream (seed, 1, start_index)."""
    rng = make_rng(seed, 1, start_index)
    return np.where(rng.integers(0, 2, n) == 1, 1.0, -1.0) / math.sqrt(n)


def base_radius(instance: ProblemInstance, mode: RadiusMode, context: SolverContext) -> float:
    """The unscaled radius r_plt in the units of ||y - A x||."""
    if mode is RadiusMode.PER_INSTANCE:
        return context.box_min()[1]
    params = RdtParams(instance.alpha, instance.sigma)
    return math.sqrt(instance.n) * r_plt_theory(params).r_plt


def _run(instance, config, x0, seed, context, halfspaces=()):
    ctx = context if context is not None else SolverContext(instance)
    r_base = base_radius(instance, config.radius_mode, ctx)
    sched = config.radius_schedule or (config.r_sc,)
    x = np.asarray(x0, dtype=float)
    x = x / np.linalg.norm(x)
    prev = INITIAL_DELTA
    trace: List[TraceEntry] = []
    converged = False
    hint = None
    xs = x
    for i in range(config.i_max):
        r = sched[min(i, len(sched) - 1)] * r_base
        rep = solve_inner(InnerProblem(instance, x, r, tuple(halfspaces)), context=ctx, active_hint=hint)
        if rep.status is Status.INFEASIBLE:
            raise InfeasibleError(f"radius {r:.6g} is below the box minimum {rep.residual:.6g}")
        xs = rep.x_star
        obj = float(x @ xs)
        delta = abs(obj - prev)
        trace.append(TraceEntry(c2=obj * obj, c1=float(instance.x_sol @ xs), delta=delta,
                                inner_iterations=rep.iterations, radius=r))
        hint = rep.active
        prev = obj
        x = xs / np.linalg.norm(xs)
        if delta < config.delta_min:
            converged = True
            break
    x_clup = sign_round(x)
    return ClupResult(x_final=x, x_clup=x_clup, x_inner=xs, trace=trace, converged=converged,
                      stats=overlap_stats(xs, instance), seed=seed, config=config,
                      ber=overlap_stats(x_clup, instance).ber)


def clup_run(instance: ProblemInstance, config: ClupConfig = ClupConfig(), x0=None, seed: int = 0,
             context: Optional[SolverContext] = None) -> ClupResult:
    """Run the CLuP iteration from x0 (random sign vector from ``seed`` if absent).

    Raises
    ------
    InfeasibleError
        If some iteration's radius is below the box-constrained minimum residual.
    """
    if x0 is None:
        x0 = random_start(instance.n, seed)
    return _run(instance, config, x0, seed, context)


def clup_multistart(instance: ProblemInstance, config: ClupConfig, num_starts: int, seed: int = 0,
                    context: Optional[SolverContext] = None) -> ClupResult:
    """Best of ``num_starts`` random starts, ranked by the final ||x^(i,s)||^2."""
    if num_starts < 1:
        raise ValueError("num_starts must be at least 1")
    ctx = context if context is not None else SolverContext(instance)
    best = None
    for j in range(num_starts):
        res = _run(instance, config, random_start(instance.n, seed, j), seed, ctx)
        if best is None or res.stats.c2 > best.stats.c2:
            best = res
    return best


def clup_warmstart_polytope(instance: ProblemInstance, config: ClupConfig = ClupConfig(),
                            c1_plt: Optional[float] = None, context: Optional[SolverContext] = None,
                            seed: int = 0):
    """Two-stage run seeded by the box relaxation.

    Stage one starts at x_hat = x_plt / ||x_plt|| with the extra constraint
    x_hat^T x >= c1_plt, where c1_plt is the predicted overlap of the box
    relaxation; stage two is a plain run from the stage-one output.

    The constraint uses the normalized direction: x_plt itself has squared
    norm close to c2_plt < c1_plt, so x_plt^T x >= c1_plt typically cuts off
    every point of the residual ball.  If even the normalized constraint
    misses the feasible set, its level is lowered to 99.9% of the largest
    attainable x_hat^T x.

    Returns
    -------
    (ClupResult, ClupResult, float)
        The stage-two result (the answer), the stage-one result and the
        half-space level actually imposed.
    """
    ctx = context if context is not None else SolverContext(instance)
    x_plt, _ = ctx.box_min()
    if not np.any(x_plt):
        x_plt = random_start(instance.n, seed)
    x_hat = x_plt / np.linalg.norm(x_plt)
    if c1_plt is None:
        c1_plt = r_plt_theory(RdtParams(instance.alpha, instance.sigma)).c1
    r_first = (config.radius_schedule or (config.r_sc,))[0] * base_radius(instance, config.radius_mode, ctx)
    best = solve_inner(InnerProblem(instance, x_hat, r_first), context=ctx)
    if best.status is Status.INFEASIBLE:
        raise InfeasibleError(f"radius {r_first:.6g} is below the box minimum {best.residual:.6g}")
    top = float(x_hat @ best.x_star)
    level = c1_plt if top > c1_plt else top - 1e-3 * abs(top)
    stage1 = _run(instance, config, x_hat, seed, ctx, halfspaces=((x_hat, level),))
    stage2 = _run(instance, config, stage1.x_final, seed, ctx)
    return stage2, stage1, level


def clup_radius_schedule(instance: ProblemInstance, config: ClupConfig, x0=None, seed: int = 0,
                         context: Optional[SolverContext] = None) -> ClupResult:
    """clup_run with per-iteration radii taken from ``config.radius_schedule``."""
    if config.radius_schedule is None:
        raise ValueError("config has no radius schedule")
    return clup_run(instance, config, x0, seed, context)


def clup_detect(instance: ProblemInstance, config: ClupConfig = ClupConfig(), seed: int = 0,
                context: Optional[SolverContext] = None) -> ClupResult:
    """Dispatch on ``config.warm_start`` and ``config.restarts``."""
    ctx = context if context is not None else SolverContext(instance)
    if config.warm_start is WarmStart.POLYTOPE_WITH_OVERLAP:
        return clup_warmstart_polytope(instance, config, context=ctx, seed=seed)[0]
    if config.warm_start is WarmStart.POLYTOPE_ROUND:
        x_plt, _ = ctx.box_min()
        return _run(instance, config, sign_round(x_plt), seed, ctx)
    if config.restarts > 1:
        return clup_multistart(instance, config, config.restarts, seed, ctx)
    return clup_run(instance, config, seed=seed, context=ctx)
