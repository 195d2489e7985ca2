"""Random binary MIMO instances y = A x_sol + sigma v and overlap statistics."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

GENERATOR_NAME = "Philox"


def make_rng(*key: int) -> np.random.Generator:
    """Counter-based generator keyed by a tuple of non-negative integers."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(list(key))))


def snr_db_to_sigma(snr_db: float) -> float:
    """Noise scale sigma with 10 log10(1/sigma^2) = snr_db."""
    return 10.0 ** (-snr_db / 20.0)


def sigma_to_snr_db(sigma: float) -> float:
    return -20.0 * math.log10(sigma)


def rows_for(n: int, alpha: float) -> int:
    # round half up, so alpha*n = k + 0.5 gives k + 1
    return int(math.floor(alpha * n + 0.5))


@dataclass(frozen=True, eq=False)
class ProblemInstance:
    """One realized system.  Arrays are read-only after construction."""

    n: int
    m: int
    alpha: float
    sigma: float
    seed: int
    A: np.ndarray
    x_sol: np.ndarray
    v: np.ndarray
    y: np.ndarray

    @property
    def bound(self) -> float:
        """Half-width of the box, 1/sqrt(n)."""
        return 1.0 / math.sqrt(self.n)

    def residual(self, x) -> float:
        return float(np.linalg.norm(self.y - self.A @ x))

    def to_record(self) -> dict:
        return {"n": self.n, "m": self.m, "alpha": self.alpha, "sigma": self.sigma,
                "seed": self.seed, "rng": GENERATOR_NAME}

    @classmethod
    def from_record(cls, rec: dict) -> "ProblemInstance":
        return generate_instance(rec["n"], rec["alpha"], rec["sigma"], rec["seed"])


def _freeze(*arrays):
    for a in arrays:
        a.setflags(write=False)


def make_instance(A, x_sol, y, sigma=0.0, seed=-1, v=None) -> ProblemInstance:
    """Wrap explicit arrays (used for hand-built and test problems)."""
    A = np.array(A, dtype=float, ndmin=2)
    x_sol = np.array(x_sol, dtype=float, ndmin=1)
    y = np.array(y, dtype=float, ndmin=1)
    m, n = A.shape
    if x_sol.shape != (n,) or y.shape != (m,):
        raise ValueError("inconsistent dimensions")
    v = np.zeros(m) if v is None else np.array(v, dtype=float)
    _freeze(A, x_sol, y, v)
    return ProblemInstance(n=n, m=m, alpha=m / n, sigma=float(sigma), seed=seed, A=A, x_sol=x_sol, v=v, y=y)


def generate_instance(n: int, alpha: float, sigma: float, seed: int) -> ProblemInstance:
    """Draw A and v i.i.d. standard normal and x_sol uniform on {+-1/sqrt(n)}^n.

    The whole instance is a deterministic function of ``(n, alpha, sigma, seed)``.
    """
    if n < 1 or not alpha > 0:
        raise ValueError("need n >= 1 and alpha > 0")
    m = rows_for(n, alpha)
    if m < 1:
        raise ValueError(f"round(alpha*n) = {m} < 1")
    rng = make_rng(seed, 0)
    A = rng.standard_normal((m, n))
    x_sol = np.where(rng.integers(0, 2, n) == 1, 1.0, -1.0) / math.sqrt(n)
    v = rng.standard_normal(m)
    y = A @ x_sol + sigma * v
    _freeze(A, x_sol, v, y)
    return ProblemInstance(n=n, m=m, alpha=float(alpha), sigma=float(sigma), seed=seed,
                           A=A, x_sol=x_sol, v=v, y=y)


@dataclass(frozen=True)
class OverlapStats:
    c2: float
    c1: float
    ber: float


def sign_round(x) -> np.ndarray:
    """Map to {+-1/sqrt(n)}^n with sign(0) taken as +."""
    x = np.asarray(x, dtype=float)
    return np.where(x >= 0, 1.0, -1.0) / math.sqrt(x.size)


def bit_errors(x, x_sol) -> int:
    """Number of sign mismatches; an exact zero counts as an error."""
    x = np.asarray(x)
    return int(np.count_nonzero(np.sign(x) != np.sign(x_sol)))


def overlap_stats(x, instance: ProblemInstance) -> OverlapStats:
    x = np.asarray(x, dtype=float)
    if x.shape != (instance.n,):
        raise ValueError("dimension mismatch")
    return OverlapStats(c2=float(x @ x), c1=float(instance.x_sol @ x),
                        ber=bit_errors(x, instance.x_sol) / instance.n)
