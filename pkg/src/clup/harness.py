"""Command-line driver for theory sweeps and Monte Carlo campaigns.

Every command writes a flat table of records (CSV with a versioned header
comment, or JSON).  Each record echoes its inputs and seed so that a single
row can be replayed.  Simulation trials derive all randomness from
(seed, trial index); the worker count never changes the results.

Examples
--------
    clup-run predict --snr-db 10:15:1 --r-sc 1.1,1.3,1.5
    clup-run simulate --snr-db 12 --r-sc 1.1 --trials 200 --workers 8 --out sim.csv
    clup-run stationary --snr-db 10 --r 0.225173
    clup-run scan --axis C1 --fixed 0.96 --grid 0.5:0.97:0.01 --snr-db 9
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import subprocess
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache, partial
from typing import Callable, Dict, Iterable, List, Optional, Sequence

import numpy as np

from . import __version__
from .algorithm import ClupConfig, RadiusMode, WarmStart, clup_detect, max_objective_drop
from .baselines import ball_detect, bit_flip_ml, polytope_detect
from .inner_solver import SolverContext
from .model import bit_errors, generate_instance, snr_db_to_sigma
from .rdt_clup import RdtParams, clup_rdt_predict, find_stationary_points, r_plt_theory, r_sc_optimal_perr, scan_xi
from .rdt_first_iter import escape_check, first_iter_solve
from .rdt_ml import ml_critical_snrs, ml_minimize

log = logging.getLogger("clup")

SCHEMA_VERSION = 1
COMMANDS = ("predict", "simulate", "ml", "stationary", "scan", "first_iter")
WORKERS_ENV = "CLUP_WORKERS"


@dataclass(frozen=True)
class ExperimentConfig:
    command: str
    alpha: float = 0.8
    snr_db_list: tuple = (12.0,)
    n: int = 400
    trials: int = 1
    r_sc_list: tuple = (1.1,)
    rho: float = 0.5
    seed: int = 0
    workers: int = 1
    output_path: str = "-"
    format: str = "csv"
    radius_mode: str = "per-instance"
    warm_start: str = "random-sign"
    restarts: int = 1
    i_max: int = 50
    delta_min: float = 1e-8
    r_list: tuple = ()
    axis: str = "C1"
    fixed: Optional[float] = None
    grid: tuple = ()
    baselines: bool = False
    ml_restarts: int = 10

    def __post_init__(self):
        if self.command not in COMMANDS:
            raise ValueError(f"unknown command {self.command!r}")
        if self.trials < 1:
            raise ValueError("trials must be at least 1")
        if not self.snr_db_list:
            raise ValueError("SNR list must not be empty")
        if self.workers < 1:
            raise ValueError("workers must be at least 1")
        if self.format not in ("csv", "json"):
            raise ValueError("format must be csv or json")

    def clup_config(self, r_sc: float) -> ClupConfig:
        return ClupConfig(r_sc=r_sc, radius_mode=RadiusMode(self.radius_mode), i_max=self.i_max,
                          delta_min=self.delta_min, restarts=self.restarts,
                          warm_start=WarmStart(self.warm_start))


@dataclass
class ResultRecord:
    kind: str
    inputs: Dict[str, object]
    outputs: Dict[str, object]
    provenance: Dict[str, object] = field(default_factory=dict)
    error: str = ""

    def flat(self) -> Dict[str, object]:
        row = {"kind": self.kind}
        row.update(self.inputs)
        row.update(self.outputs)
        row.update(self.provenance)
        row["error"] = self.error
        return row


# ---------------------------------------------------------------- provenance

@lru_cache(maxsize=1)
def git_describe() -> str:
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"], capture_output=True,
                             text=True, timeout=5, cwd=os.path.dirname(os.path.abspath(__file__)))
        return out.stdout.strip() or f"v{__version__}"
    except (OSError, subprocess.SubprocessError):
        return f"v{__version__}"


def timestamp() -> str:
    # SOURCE_DATE_EPOCH pins the stamp, which makes reruns byte-identical
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    t = int(epoch) if epoch else time.time()
    return time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime(t))


def provenance(seed: int) -> Dict[str, object]:
    return {"git_describe": git_describe(), "seed": seed, "timestamp": timestamp()}


def trial_seed(seed: int, trial: int) -> int:
    """Instance and start seed of one trial, a fixed function of (seed, trial)."""
    return (seed << 32) + trial


# ---------------------------------------------------------------- parallel map

def _pmap(fn: Callable, items: Sequence, workers: int) -> List:
    if workers <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items, chunksize=max(1, len(items) // (4 * workers))))


def _call_safe(fn, item):
    try:
        return fn(item), ""
    except Exception as exc:  # recorded per row; the run continues
        return {}, f"{type(exc).__name__}: {exc}"


def _safe(fn):
    return partial(_call_safe, fn)


# ---------------------------------------------------------------- commands

def _predict_row(item):
    alpha, snr, r_sc = item
    params = RdtParams.from_snr_db(alpha, snr)
    plt = r_plt_theory(params)
    pred = clup_rdt_predict(params, r_sc)
    ml = ml_minimize(params)
    opt = _optimal(alpha, snr)
    return {"r_plt": plt.r_plt, "perr_plt": plt.perr_plt, "c2_plt": plt.c2, "c1_plt": plt.c1,
            "c2": pred.c2_star, "c1": pred.c1_star, "gamma": pred.gamma_hat, "nu": pred.nu_hat,
            "xi": pred.xi, "perr": pred.perr, "saturated": pred.saturated,
            "xi_ml": ml.xi_global, "c1_ml": ml.c1_global, "perr_ml": ml.perr,
            "r_sc_opt": opt.r_sc_star, "perr_opt": opt.perr_star}


@lru_cache(maxsize=64)
def _optimal(alpha, snr):
    return r_sc_optimal_perr(RdtParams.from_snr_db(alpha, snr))


def cmd_predict(cfg: ExperimentConfig) -> List[ResultRecord]:
    items = [(cfg.alpha, snr, r_sc) for snr in cfg.snr_db_list for r_sc in cfg.r_sc_list]
    results = _pmap(_safe(_predict_row), items, cfg.workers)
    return [ResultRecord("prediction", {"alpha": a, "snr_db": s, "r_sc": r}, out, provenance(cfg.seed), err)
            for (a, s, r), (out, err) in zip(items, results)]


def _simulate_trial(item):
    cfg, snr, r_sc, trial = item
    ts = trial_seed(cfg.seed, trial)
    inst = generate_instance(cfg.n, cfg.alpha, snr_db_to_sigma(snr), ts)
    ctx = SolverContext(inst)
    res = clup_detect(inst, cfg.clup_config(r_sc), seed=ts, context=ctx)
    out = {"c2": res.stats.c2, "c1": res.stats.c1, "bit_errors": bit_errors(res.x_clup, inst.x_sol),
           "iterations": res.iterations, "converged": res.converged,
           "max_objective_drop": max_objective_drop(res)}
    if cfg.baselines:
        x_plt, _ = polytope_detect(inst, ctx)
        x_ball, _ = ball_detect(inst)
        x_ml, _ = bit_flip_ml(inst, res.x_clup, cfg.ml_restarts, ts)
        out.update(plt_bit_errors=bit_errors(x_plt, inst.x_sol), ball_bit_errors=bit_errors(x_ball, inst.x_sol),
                   ml_bit_errors=bit_errors(x_ml, inst.x_sol))
    return out


def _aggregate(rows: List[dict], n: int) -> Dict[str, object]:
    """Means with standard errors; BERs use the binomial error over all bits."""
    k = len(rows)
    out: Dict[str, object] = {"count": k}
    if k == 0:
        return out
    for key in ("c2", "c1", "iterations"):
        v = np.array([r[key] for r in rows], dtype=float)
        out[f"mean_{key}"] = float(v.mean())
        out[f"se_{key}"] = float(v.std(ddof=1) / math.sqrt(k)) if k > 1 else math.nan
    out["median_iterations"] = float(np.median([r["iterations"] for r in rows]))
    out["converged_fraction"] = float(np.mean([r["converged"] for r in rows]))
    bits = k * n
    for prefix in ("", "plt_", "ball_", "ml_"):
        key = f"{prefix}bit_errors"
        if key in rows[0]:
            p = sum(r[key] for r in rows) / bits
            out[f"{prefix}ber"] = p
            out[f"{prefix}ber_se"] = math.sqrt(p * (1 - p) / bits)
    return out


def cmd_simulate(cfg: ExperimentConfig) -> List[ResultRecord]:
    records = []
    for snr in cfg.snr_db_list:
        for r_sc in cfg.r_sc_list:
            items = [(cfg, snr, r_sc, t) for t in range(cfg.trials)]
            results = _pmap(_safe(_simulate_trial), items, cfg.workers)
            good = []
            base = {"alpha": cfg.alpha, "snr_db": snr, "r_sc": r_sc, "n": cfg.n}
            for t, (out, err) in enumerate(results):
                if err:
                    log.warning("trial %d at %.3g dB, r_sc %.3g failed: %s", t, snr, r_sc, err)
                else:
                    good.append(out)
                records.append(ResultRecord("simulation", dict(base, trial=t), out,
                                            provenance(trial_seed(cfg.seed, t)), err))
            agg = _aggregate(good, cfg.n)
            agg["failures"] = len(results) - len(good)
            records.append(ResultRecord("simulation", dict(base, trial="all"), agg, provenance(cfg.seed)))
    return records


def _ml_row(item):
    alpha, snr = item
    sol = ml_minimize(RdtParams.from_snr_db(alpha, snr))
    out = {"c1": sol.c1_global, "xi": sol.xi_global, "perr": sol.perr, "nu": sol.nu_hat,
           "local_minima": len(sol.local_minima)}
    for k, (c, x, p) in enumerate(sol.local_minima):
        out.update({f"min{k}_c1": c, f"min{k}_xi": x, f"min{k}_perr": p})
    return out


def cmd_ml(cfg: ExperimentConfig) -> List[ResultRecord]:
    items = [(cfg.alpha, snr) for snr in cfg.snr_db_list]
    results = _pmap(_safe(_ml_row), items, cfg.workers)
    records = [ResultRecord("ml", {"alpha": a, "snr_db": s}, out, provenance(cfg.seed), err)
               for (a, s), (out, err) in zip(items, results)]
    crit, err = _safe(lambda a: ml_critical_snrs(a))(cfg.alpha)
    out = {} if err else {"multi_onset_db": crit.multi_onset_db, "discontinuity_db": crit.discontinuity_db}
    records.append(ResultRecord("ml", {"alpha": cfg.alpha, "snr_db": "critical"}, out, provenance(cfg.seed), err))
    return records


def _radii(cfg: ExperimentConfig, snr: float) -> List[tuple]:
    """(r_sc, r) pairs: explicit --r values, else r_sc multiples of r_plt."""
    if cfg.r_list:
        return [(None, r) for r in cfg.r_list]
    r_plt = r_plt_theory(RdtParams.from_snr_db(cfg.alpha, snr)).r_plt
    return [(r_sc, r_sc * r_plt) for r_sc in cfg.r_sc_list]


def _stationary_rows(item):
    alpha, snr, r = item
    pts = find_stationary_points(RdtParams.from_snr_db(alpha, snr), r)
    return [{"point": k, "xi": p.xi, "c2": p.c2, "c1": p.c1, "nu": p.nu, "gamma": p.gamma,
             "gamma1": p.gamma1, "grad_norm": p.grad_norm} for k, p in enumerate(pts)]


def cmd_stationary(cfg: ExperimentConfig) -> List[ResultRecord]:
    items, tags = [], []
    for snr in cfg.snr_db_list:
        for r_sc, r in _radii(cfg, snr):
            items.append((cfg.alpha, snr, r))
            tags.append(r_sc)
    results = _pmap(_safe(_stationary_rows), items, cfg.workers)
    records = []
    for (a, s, r), r_sc, (rows, err) in zip(items, tags, results):
        inputs = {"alpha": a, "snr_db": s, "r_sc": r_sc, "r": r}
        if err or not rows:
            records.append(ResultRecord("stationary", inputs, {}, provenance(cfg.seed), err or "no stationary point"))
        for row in rows:
            records.append(ResultRecord("stationary", inputs, row, provenance(cfg.seed)))
    return records


def cmd_scan(cfg: ExperimentConfig) -> List[ResultRecord]:
    if not cfg.grid:
        raise ValueError("scan needs --grid")
    if cfg.axis.upper() == "C1" and cfg.fixed is None:
        raise ValueError("a C1 scan needs --fixed c2")
    records = []
    for snr in cfg.snr_db_list:
        inputs = {"alpha": cfg.alpha, "snr_db": snr, "axis": cfg.axis.upper(), "fixed": cfg.fixed}
        out, err = _safe(lambda g: scan_xi(RdtParams.from_snr_db(cfg.alpha, snr), cfg.axis, cfg.fixed, g))(cfg.grid)
        if err:
            records.append(ResultRecord("scan", dict(inputs, point="summary"), {}, provenance(cfg.seed), err))
            continue
        for k, (g, v) in enumerate(zip(out.grid, out.values)):
            records.append(ResultRecord("scan", dict(inputs, point=k), {"grid": float(g), "value": float(v)},
                                        provenance(cfg.seed)))
        summary = {"local_minima": len(out.local_minima)}
        for k, (g, v) in enumerate(out.local_minima):
            summary.update({f"min{k}_at": g, f"min{k}_value": v})
        records.append(ResultRecord("scan", dict(inputs, point="summary"), summary, provenance(cfg.seed)))
    return records


def _first_iter_row(item):
    alpha, snr, r, rho = item
    params = RdtParams.from_snr_db(alpha, snr)
    sol = first_iter_solve(params, r, rho)
    out = sol.to_row()
    out.pop("rho")
    pts = find_stationary_points(params, r)
    out["escapes"] = escape_check(params, r, rho, pts, sol)
    out["stationary_c2_min"] = min((p.c2 for p in pts), default=math.nan)
    return out


def cmd_first_iter(cfg: ExperimentConfig) -> List[ResultRecord]:
    items, tags = [], []
    for snr in cfg.snr_db_list:
        for r_sc, r in _radii(cfg, snr):
            items.append((cfg.alpha, snr, r, cfg.rho))
            tags.append(r_sc)
    results = _pmap(_safe(_first_iter_row), items, cfg.workers)
    return [ResultRecord("first_iter", {"alpha": a, "snr_db": s, "r_sc": r_sc, "r": r, "rho": rho}, out,
                         provenance(cfg.seed), err)
            for (a, s, r, rho), r_sc, (out, err) in zip(items, tags, results)]


RUNNERS = {"predict": cmd_predict, "simulate": cmd_simulate, "ml": cmd_ml,
           "stationary": cmd_stationary, "scan": cmd_scan, "first_iter": cmd_first_iter}


def run(cfg: ExperimentConfig) -> List[ResultRecord]:
    return RUNNERS[cfg.command](cfg)


# ---------------------------------------------------------------- output

def _fmt(v) -> str:
    if isinstance(v, bool):
        return str(v).lower()
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, np.generic):
        return _fmt(v.item())
    return "" if v is None else str(v)


def to_csv(records: Iterable[ResultRecord], command: str) -> str:
    rows = [r.flat() for r in records]
    columns: List[str] = []
    for row in rows:
        columns += [k for k in row if k not in columns]
    buf = io.StringIO()
    buf.write(f"# clup-results schema={SCHEMA_VERSION} command={command}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_fmt(row.get(c)) for c in columns])
    return buf.getvalue()


def _jsonable(v):
    if isinstance(v, np.generic):
        return v.item()
    if isinstance(v, float) and not math.isfinite(v):
        return None
    return v


def to_json(records: Iterable[ResultRecord], command: str) -> str:
    doc = {"schema": SCHEMA_VERSION, "command": command,
           "records": [{"kind": r.kind,
                        "inputs": {k: _jsonable(v) for k, v in r.inputs.items()},
                        "outputs": {k: _jsonable(v) for k, v in r.outputs.items()},
                        "provenance": r.provenance, "error": r.error} for r in records]}
    return json.dumps(doc, indent=1) + "\n"


def write(records: List[ResultRecord], cfg: ExperimentConfig) -> None:
    text = (to_csv if cfg.format == "csv" else to_json)(records, cfg.command)
    if cfg.output_path == "-":
        sys.stdout.write(text)
    else:
        with open(cfg.output_path, "w", encoding="utf-8") as fh:
            fh.write(text)


# ---------------------------------------------------------------- CLI

def parse_list(text: str) -> tuple:
    """'1,2.5,3' or an inclusive range 'start:stop:step'."""
    text = text.strip()
    if ":" in text:
        parts = [float(p) for p in text.split(":")]
        if len(parts) != 3 or parts[2] <= 0:
            raise argparse.ArgumentTypeError(f"bad range {text!r}")
        start, stop, step = parts
        k = int(math.floor((stop - start) / step + 1e-9))
        return tuple(round(start + i * step, 12) for i in range(k + 1))
    try:
        return tuple(float(p) for p in text.split(",") if p)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="clup-run", description=__doc__.split("\n\n")[0])
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--alpha", type=float, default=0.8)
    p.add_argument("--snr-db", type=parse_list, default=(12.0,), help="comma list or start:stop:step")
    p.add_argument("--n", type=int, default=400)
    p.add_argument("--trials", type=int, default=1)
    p.add_argument("--r-sc", type=parse_list, default=(1.1,))
    p.add_argument("--r", type=parse_list, default=(), help="explicit normalized radii (stationary, first_iter)")
    p.add_argument("--rho", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=int(os.environ.get(WORKERS_ENV, "1")))
    p.add_argument("--out", default="-")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--radius-mode", choices=[m.value for m in RadiusMode], default=RadiusMode.PER_INSTANCE.value)
    p.add_argument("--warm-start", choices=[w.value for w in WarmStart], default=WarmStart.RANDOM_SIGN.value)
    p.add_argument("--restarts", type=int, default=1)
    p.add_argument("--i-max", type=int, default=50)
    p.add_argument("--delta-min", type=float, default=1e-8)
    p.add_argument("--axis", choices=("C1", "C2", "c1", "c2"), default="C1")
    p.add_argument("--fixed", type=float, default=None, help="c2 held fixed in a C1 scan")
    p.add_argument("--grid", type=parse_list, default=(), help="scan grid, comma list or start:stop:step")
    p.add_argument("--baselines", action="store_true", help="also run polytope, ball and bit-flip ML")
    p.add_argument("--ml-restarts", type=int, default=10)
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def config_from_args(args: argparse.Namespace) -> ExperimentConfig:
    return ExperimentConfig(command=args.command, alpha=args.alpha, snr_db_list=args.snr_db, n=args.n,
                            trials=args.trials, r_sc_list=args.r_sc, rho=args.rho, seed=args.seed,
                            workers=args.workers, output_path=args.out, format=args.format,
                            radius_mode=args.radius_mode, warm_start=args.warm_start, restarts=args.restarts,
                            i_max=args.i_max, delta_min=args.delta_min, r_list=args.r, axis=args.axis,
                            fixed=args.fixed, grid=args.grid, baselines=args.baselines,
                            ml_restarts=args.ml_restarts)


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = config_from_args(args)
        records = run(cfg)
    except ValueError as exc:
        log.error("%s", exc)
        return 2
    write(records, cfg)
    failed = sum(1 for r in records if r.error)
    if failed:
        log.error("%d of %d rows failed", failed, len(records))
    return 0 if failed == 0 else 1


if __name__ == "__main__":
    sys.exit(main())
