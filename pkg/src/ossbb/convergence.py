"""Empirical weak convergence orders against the closed-form oracle."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .analytic import reference_price
from .estimators import METHODS, RunningStats, SimConfig, blocks, discount_factor, path_payoffs
from .model import Model, OptionSpec


class InsufficientPrecision(RuntimeError):
    """Statistical noise swamps the bias on too many grid points, even at the sample cap."""


@dataclass
class GridPoint:
    N: int
    h: float
    mean: float
    std_error: float
    bias: float
    M: int

    @property
    def resolved(self) -> bool:
        return abs(self.bias) > 5.0 * self.std_error

    def row(self, estimator: str) -> dict:
        return {"estimator": estimator, "N": self.N, "h": self.h, "mean": self.mean,
                "bias": self.bias, "std_error": self.std_error, "M": self.M}


@dataclass
class WeakOrderFit:
    estimator: str
    slope: float
    intercept: float
    points: list[GridPoint]
    oracle: float

    @property
    def used(self) -> list[GridPoint]:
        return [p for p in self.points if p.resolved]

    def bias_bound(self, h: float) -> float:
        """Fitted ``C h^alpha`` at step width ``h``."""
        return float(math.exp(self.intercept) * h**self.slope)


def _extend(stats: RunningStats, estimator, model, opt, s0, N, M_new, seed, stream, discount):
    cfg = SimConfig(n_steps=N, n_paths=M_new, seed=seed, stream=stream, discount=discount)
    done = stats.n
    for off, n in blocks(M_new - done):
        stats.add_block(path_payoffs(estimator, model, opt, s0, cfg, done + off, n))


def weak_order(estimator: str, model: Model, opt: OptionSpec, s0: float,
               n_grid=tuple(8 * 2**k for k in range(7)), M: int = 10**6, M_cap: int = 16 * 10**6,
               min_points: int = 3, seed: int = 0, stream: int = 0, discount: bool = True,
               oracle: float | None = None) -> WeakOrderFit:
    """Fit ``log|mean - oracle|`` against ``log h`` over the N-grid.

    M is raised fourfold (by appending fresh paths) until the finest N resolves
    its bias to three standard errors and at least ``min_points`` grid points
    resolve theirs to five, or until ``M_cap``. Only points with
    ``|bias| > 5 std_error`` enter the fit.
    """
    if estimator not in ("baseline", "bb", "oss_bb"):
        raise ValueError(f"unknown estimator {estimator!r}")
    n_grid = sorted(int(n) for n in n_grid)
    if oracle is None:
        oracle = reference_price(model, opt, s0, discount)
    stats = {N: RunningStats() for N in n_grid}

    def snapshot():
        pts = []
        for N in n_grid:
            st = stats[N]
            mean = float(st.mean[0])
            pts.append(GridPoint(N=N, h=opt.tau / N, mean=mean, std_error=math.sqrt(st.variance[0] / st.n),
                                 bias=mean - oracle, M=st.n))
        return pts

    while True:
        for N in n_grid:
            _extend(stats[N], estimator, model, opt, s0, N, M, seed, stream, discount)
        pts = snapshot()
        finest = pts[-1]
        enough = sum(p.resolved for p in pts) >= min_points
        if (abs(finest.bias) > 3.0 * finest.std_error and enough) or 4 * M > M_cap:
            break
        M *= 4
    used = [p for p in pts if p.resolved]
    if len(used) < min(min_points, len(pts)):
        raise InsufficientPrecision(
            f"{estimator}: only {len(used)} of {len(pts)} grid points have |bias| > 5 std_error at M={M}")
    slope, intercept = np.polyfit(np.log([p.h for p in used]), np.log([abs(p.bias) for p in used]), 1)
    return WeakOrderFit(estimator, float(slope), float(intercept), pts, float(oracle))


def payoff_bounds(estimator: str, model: Model, opt: OptionSpec, s0: float, n_grid, M: int,
                  seed: int = 0, stream: int = 0, discount: bool = True) -> list[dict]:
    """Largest per-path payoff and sample variance on each grid point.

    Both bridge estimators pay at most ``B - K`` (discounted) on every path,
    so the sample variance is bounded by ``(B - K)**2`` uniformly in N.
    """
    if estimator not in METHODS:
        raise ValueError(f"unknown estimator {estimator!r}")
    rows = []
    for N in n_grid:
        cfg = SimConfig(n_steps=int(N), n_paths=M, seed=seed, stream=stream, discount=discount)
        st = RunningStats()
        top = 0.0
        for off, n in blocks(M):
            v = path_payoffs(estimator, model, opt, s0, cfg, off, n)
            st.add_block(v)
            top = max(top, float(v.max()))
        rows.append({"N": int(N), "max_payoff": top, "variance": float(st.variance[0]),
                     "bound": (opt.B - opt.K) * discount_factor(model, opt, cfg)})
    return rows
