"""Full-path Monte Carlo estimators for the up-and-out call.

Paths are simulated in fixed-size blocks. Inside a block numba spreads the
paths over threads, but every path reads its own counter-addressed draws and
writes its own output slot, and block statistics are merged in block order.
Results are therefore bit-identical for any thread count.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numba as nb
import numpy as np

from .model import Model, OptionSpec, coefficients
from .rng import draw_block, lane, nquantile, to_unit
from .schemes import EMPTY, TWO_TAIL, bb_cross, constrained_step, oss_cross, step_split

BASELINE = 0
BB = 1
OSS_BB = 2
EUROPEAN = 3
METHODS = {"baseline": BASELINE, "bb": BB, "oss_bb": OSS_BB, "european": EUROPEAN}

BLOCK = 1 << 16
KO_FLOOR = 1e-300
LOG_SWITCH = 1e-8

# diagnostic columns
D_CLAMP, D_DEGENERATE, D_EARLY_KO, D_TWO_TAIL, D_GUARD = range(5)
DIAG_NAMES = ("quantile_clamps", "degenerate_survival", "early_knockouts", "two_tail_steps", "barrier_guards")


@dataclass(frozen=True)
class SimConfig:
    n_steps: int
    n_paths: int
    scheme: str = "milstein"
    seed: int = 0
    stream: int = 0
    discount: bool = True

    def __post_init__(self):
        if self.n_steps < 1:
            raise ValueError(f"n_steps must be >= 1, got {self.n_steps}")
        if self.n_paths < 1:
            raise ValueError(f"n_paths must be >= 1, got {self.n_paths}")
        if self.scheme not in ("euler", "milstein"):
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if not 0 <= self.seed < 2**64 or not 0 <= self.stream < 2**64:
            raise ValueError("seed and stream must fit in 64 unsigned bits")

    def h(self, opt: OptionSpec) -> float:
        return opt.tau / self.n_steps


@dataclass
class EstimatorReport:
    mean: float
    sample_variance: float
    n_paths: int
    n_steps: int
    wall_time: float = 0.0
    estimator: str = ""
    diagnostics: dict = field(default_factory=dict)

    @property
    def std_error(self) -> float:
        return math.sqrt(self.sample_variance / self.n_paths)

    def row(self) -> dict:
        return {
            "estimator": self.estimator,
            "N": self.n_steps,
            "M": self.n_paths,
            "mean": self.mean,
            "variance": self.sample_variance,
            "std_error": self.std_error,
            "wall_time": self.wall_time,
        }


class RunningStats:
    """Chan/Welford merge of block statistics; merge order is the caller's."""

    def __init__(self, width: int = 1):
        self.n = 0
        self.mean = np.zeros(width)
        self.m2 = np.zeros(width)

    def add_block(self, x: np.ndarray):
        x = x.reshape(len(x), -1)
        nb_ = len(x)
        if nb_ == 0:
            return
        bmean = x.mean(axis=0)
        bm2 = ((x - bmean) ** 2).sum(axis=0)
        n = self.n + nb_
        delta = bmean - self.mean
        self.mean = self.mean + delta * (nb_ / n)
        self.m2 = self.m2 + bm2 + delta**2 * (self.n * nb_ / n)
        self.n = n

    @property
    def variance(self) -> np.ndarray:
        if self.n < 2:
            return np.zeros_like(self.m2)
        return self.m2 / (self.n - 1)


def discount_factor(model: Model, opt: OptionSpec, cfg: SimConfig) -> float:
    return math.exp(-model.r * opt.tau) if cfg.discount else 1.0


def use_milstein(model: Model, cfg: SimConfig) -> bool:
    return cfg.scheme == "milstein" and not model.declares_euler


@nb.njit(cache=True)
def _coeffs(kind, prm, milstein, s, t):
    mu, sig, sigp = coefficients(kind, prm, s, t)
    if not milstein:
        sigp = 0.0
    return mu, sig, sigp


@nb.njit(cache=True)
def oss_path(kind, prm, milstein, s0, barrier, strike, t0, h, n_steps, seed, stream, path, diag):
    """One-step survival Brownian bridge payoff of a single path (undiscounted)."""
    if s0 >= barrier:
        return 0.0
    s = s0
    w = 1.0
    logw = 0.0
    x = 1.0
    b4 = draw_block(seed, stream, path, 0)
    for n in range(n_steps):
        if (n & 3) == 0:
            b4 = draw_block(seed, stream, path, n >> 2)
        u = to_unit(lane(b4, n & 3))
        mu, sig, sigp = _coeffs(kind, prm, milstein, s, t0 + n * h)
        a, b, base, br, zlo, zhi = step_split(s, mu, sig, sigp, h, barrier)
        if br == TWO_TAIL:
            diag[D_TWO_TAIL] += 1
        s1, z, pm, p, clamped, guarded = constrained_step(a, b, base, br, zlo, zhi, barrier, u)
        diag[D_CLAMP] += clamped
        diag[D_GUARD] += guarded
        if br == EMPTY or p <= 0.0:
            diag[D_DEGENERATE] += 1
            return 0.0
        if p < LOG_SWITCH:
            logw += math.log(p)
        else:
            w *= p
        x *= 1.0 - oss_cross(s, s1, sig, h, barrier)
        s = s1
    if logw != 0.0:
        w *= math.exp(logw)
    return max(s - strike, 0.0) * x * w


@nb.njit(cache=True)
def bb_path(kind, prm, milstein, s0, barrier, strike, t0, h, n_steps, seed, stream, path, diag):
    """Brownian bridge payoff of a single path (undiscounted)."""
    s = s0
    x = 1.0
    b4 = draw_block(seed, stream, path, 0)
    sqh = math.sqrt(h)
    for n in range(n_steps):
        if (n & 3) == 0:
            b4 = draw_block(seed, stream, path, n >> 2)
        z = nquantile(to_unit(lane(b4, n & 3)))
        mu, sig, sigp = _coeffs(kind, prm, milstein, s, t0 + n * h)
        s1 = s + mu * h + sig * sqh * z + 0.5 * sig * sigp * h * (z * z - 1.0)
        x *= 1.0 - bb_cross(s, s1, sig, h, barrier)
        s = s1
        if x < KO_FLOOR:
            diag[D_EARLY_KO] += 1
            return 0.0
    return max(s - strike, 0.0) * x


@nb.njit(cache=True)
def plain_path(kind, prm, milstein, s0, barrier, strike, t0, h, n_steps, seed, stream, path, monitor):
    """Milstein path payoff, knocked out on discrete monitoring when ``monitor`` is set."""
    s = s0
    alive = s0 <= barrier
    b4 = draw_block(seed, stream, path, 0)
    sqh = math.sqrt(h)
    for n in range(n_steps):
        if (n & 3) == 0:
            b4 = draw_block(seed, stream, path, n >> 2)
        z = nquantile(to_unit(lane(b4, n & 3)))
        mu, sig, sigp = _coeffs(kind, prm, milstein, s, t0 + n * h)
        s = s + mu * h + sig * sqh * z + 0.5 * sig * sigp * h * (z * z - 1.0)
        if s > barrier:
            alive = False
    if monitor and not alive:
        return 0.0
    return max(s - strike, 0.0)


@nb.njit(parallel=True, cache=True)
def price_block(method, kind, prm, milstein, s0, barrier, strike, t0, h, n_steps,
                seed, stream, path0, out, diag):
    for i in nb.prange(out.shape[0]):
        path = path0 + i
        if method == OSS_BB:
            out[i] = oss_path(kind, prm, milstein, s0, barrier, strike, t0, h, n_steps,
                              seed, stream, path, diag[i])
        elif method == BB:
            out[i] = bb_path(kind, prm, milstein, s0, barrier, strike, t0, h, n_steps,
                             seed, stream, path, diag[i])
        else:
            out[i] = plain_path(kind, prm, milstein, s0, barrier, strike, t0, h, n_steps,
                                seed, stream, path, method == BASELINE)


def path_payoffs(method: str, model: Model, opt: OptionSpec, s0: float, cfg: SimConfig,
                 path0: int, n: int, diag: np.ndarray | None = None) -> np.ndarray:
    """Discounted per-path payoffs for paths ``path0 .. path0+n-1``."""
    out = np.empty(n)
    if diag is None:
        diag = np.zeros((n, len(DIAG_NAMES)), dtype=np.int64)
    price_block(METHODS[method], model.kind, model.param_array(), use_milstein(model, cfg),
                float(s0), float(opt.B), float(opt.K), float(opt.t0), cfg.h(opt), cfg.n_steps,
                np.uint64(cfg.seed), np.uint64(cfg.stream), np.uint64(path0), out, diag)
    return out * discount_factor(model, opt, cfg)


def blocks(n_paths: int):
    for start in range(0, n_paths, BLOCK):
        yield start, min(BLOCK, n_paths - start)


def run_estimator(method: str, model: Model, opt: OptionSpec, s0: float, cfg: SimConfig) -> EstimatorReport:
    """Simulate ``cfg.n_paths`` paths of ``method`` and summarise them."""
    if method not in METHODS:
        raise ValueError(f"unknown estimator {method!r}")
    t_start = time.perf_counter()
    stats = RunningStats()
    diag_tot = np.zeros(len(DIAG_NAMES), dtype=np.int64)
    for start, n in blocks(cfg.n_paths):
        diag = np.zeros((n, len(DIAG_NAMES)), dtype=np.int64)
        stats.add_block(path_payoffs(method, model, opt, s0, cfg, start, n, diag))
        diag_tot += diag.sum(axis=0)
    return EstimatorReport(
        mean=float(stats.mean[0]),
        sample_variance=float(stats.variance[0]),
        n_paths=cfg.n_paths,
        n_steps=cfg.n_steps,
        wall_time=time.perf_counter() - t_start,
        estimator=method,
        diagnostics=dict(zip(DIAG_NAMES, (int(v) for v in diag_tot))),
    )


def price_discrete_baseline(model: Model, opt: OptionSpec, s0: float, cfg: SimConfig) -> EstimatorReport:
    """Discretely monitored knock-out on the simulation grid (weak order 1/2 at best)."""
    return run_estimator("baseline", model, opt, s0, cfg)


def price_bb(model: Model, opt: OptionSpec, s0: float, cfg: SimConfig) -> EstimatorReport:
    """Brownian bridge estimator: terminal payoff times the product of non-crossing factors."""
    return run_estimator("bb", model, opt, s0, cfg)


def price_oss_bb(model: Model, opt: OptionSpec, s0: float, cfg: SimConfig) -> EstimatorReport:
    """One-step survival Brownian bridge estimator."""
    return run_estimator("oss_bb", model, opt, s0, cfg)


def price_european(model: Model, opt: OptionSpec, s0: float, cfg: SimConfig) -> EstimatorReport:
    """Plain European call on the same Milstein paths (no barrier)."""
    return run_estimator("european", model, opt, s0, cfg)
