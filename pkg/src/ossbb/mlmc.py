"""Multilevel Monte Carlo for the one-step survival estimator.

Level ``l`` runs a fine path with ``N0 * 2**l`` steps. The coupled coarse path
takes ``N0 * 2**(l-1)`` steps of width ``2h``, each split into two constrained
half-steps that reuse the fine path's two uniforms. Drift, volatility and its
derivative stay frozen at the start of the coarse step, and the second half
carries the cross term with the first half's draw, so that without a barrier
the pair reproduces one Milstein step of width ``2h`` with
``Z = (z1 + z2) / sqrt(2)``.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numba as nb
import numpy as np

from .estimators import (
    DIAG_NAMES,
    D_CLAMP,
    D_DEGENERATE,
    D_GUARD,
    D_TWO_TAIL,
    LOG_SWITCH,
    RunningStats,
    SimConfig,
    _coeffs,
    blocks,
    discount_factor,
    oss_path,
    use_milstein,
)
from .model import Model, OptionSpec
from .rng import draw_block, lane, to_unit
from .schemes import EMPTY, TWO_TAIL, constrained_step, oss_cross, quad_below, step_split


class MaxLevelExceeded(RuntimeError):
    pass


@nb.njit(cache=True)
def coarse_step(s, mu, sig, sigp, h, barrier, u1, u2, diag):
    """Two frozen-coefficient constrained half-steps of width ``h``.

    Returns ``(s_half, s_next, survival_mass, bridge_survival)``; the mass is
    the product of both half-step survival probabilities and the bridge factor
    the product of both non-crossing probabilities.
    """
    a, b, base, br, zlo, zhi = step_split(s, mu, sig, sigp, h, barrier)
    if br == TWO_TAIL:
        diag[D_TWO_TAIL] += 1
    s_half, z1, _, p1, c1, g1 = constrained_step(a, b, base, br, zlo, zhi, barrier, u1)
    if br == EMPTY or p1 <= 0.0:
        diag[D_DEGENERATE] += 1
        return s_half, s_half, 0.0, 0.0
    b2 = b + 2.0 * a * z1
    base2 = s_half + mu * h - a
    br2, zlo2, zhi2 = quad_below(a, b2, base2 - barrier)
    if br2 == TWO_TAIL:
        diag[D_TWO_TAIL] += 1
    s_next, _, _, p2, c2, g2 = constrained_step(a, b2, base2, br2, zlo2, zhi2, barrier, u2)
    diag[D_CLAMP] += c1 + c2
    diag[D_GUARD] += g1 + g2
    if br2 == EMPTY or p2 <= 0.0:
        diag[D_DEGENERATE] += 1
        return s_half, s_next, 0.0, 0.0
    keep = (1.0 - oss_cross(s, s_half, sig, h, barrier)) * (1.0 - oss_cross(s_half, s_next, sig, h, barrier))
    return s_half, s_next, p1 * p2, keep


@nb.njit(cache=True)
def coarse_path(kind, prm, milstein, s0, barrier, strike, t0, h, n_fine, seed, stream, path, diag):
    """Coarse one-step survival payoff driven by the fine path's uniforms (undiscounted)."""
    if s0 >= barrier:
        return 0.0
    s = s0
    w = 1.0
    logw = 0.0
    x = 1.0
    b4 = draw_block(seed, stream, path, 0)
    for n in range(0, n_fine, 2):
        if (n & 3) == 0:
            b4 = draw_block(seed, stream, path, n >> 2)
        u1 = to_unit(lane(b4, n & 3))
        u2 = to_unit(lane(b4, (n + 1) & 3))
        mu, sig, sigp = _coeffs(kind, prm, milstein, s, t0 + n * h)
        _, s1, p, keep = coarse_step(s, mu, sig, sigp, h, barrier, u1, u2, diag)
        if p <= 0.0:
            return 0.0
        if p < LOG_SWITCH:
            logw += math.log(p)
        else:
            w *= p
        x *= keep
        s = s1
    if logw != 0.0:
        w *= math.exp(logw)
    return max(s - strike, 0.0) * x * w


@nb.njit(parallel=True, cache=True)
def level_block(kind, prm, milstein, s0, barrier, strike, t0, h, n_fine, coupled,
                seed, stream, path0, fine, coarse, diag):
    for i in nb.prange(fine.shape[0]):
        path = path0 + i
        fine[i] = oss_path(kind, prm, milstein, s0, barrier, strike, t0, h, n_fine,
                           seed, stream, path, diag[i])
        if coupled:
            coarse[i] = coarse_path(kind, prm, milstein, s0, barrier, strike, t0, h, n_fine,
                                    seed, stream, path, diag[i])
        else:
            coarse[i] = 0.0


def coarse_path_oss(model: Model, opt: OptionSpec, s0: float, n_fine: int, seed: int = 0,
                    stream: int = 0, path: int = 0, scheme: str = "milstein"):
    """Coarse payoff (undiscounted) of one path on the ``n_fine // 2`` coarse grid, plus diagnostics."""
    if n_fine < 2 or n_fine % 2:
        raise ValueError(f"fine grid must have an even number of steps, got {n_fine}")
    cfg = SimConfig(n_steps=n_fine, n_paths=1, scheme=scheme, seed=seed, stream=stream)
    diag = np.zeros(len(DIAG_NAMES), dtype=np.int64)
    v = coarse_path(model.kind, model.param_array(), use_milstein(model, cfg), float(s0), float(opt.B),
                    float(opt.K), float(opt.t0), cfg.h(opt), n_fine, np.uint64(seed), np.uint64(stream),
                    np.uint64(path), diag)
    return float(v), dict(zip(DIAG_NAMES, (int(d) for d in diag)))


@dataclass
class LevelStats:
    level: int
    h: float
    n_samples: int = 0
    mean: float = 0.0
    variance: float = 0.0
    mean_fine: float = 0.0
    variance_fine: float = 0.0
    cost: float = 0.0
    _dy: RunningStats = field(default_factory=RunningStats, repr=False)
    _pf: RunningStats = field(default_factory=RunningStats, repr=False)

    def add(self, fine: np.ndarray, coarse: np.ndarray):
        self._dy.add_block(fine - coarse)
        self._pf.add_block(fine)
        self.n_samples = self._dy.n
        self.mean = float(self._dy.mean[0])
        self.variance = float(self._dy.variance[0])
        self.mean_fine = float(self._pf.mean[0])
        self.variance_fine = float(self._pf.variance[0])

    def row(self) -> dict:
        return {"level": self.level, "h_l": self.h, "M_l": self.n_samples, "mean_Yl": self.mean,
                "var_Yl": self.variance, "var_Pl": self.variance_fine, "cost": self.cost}


def level_paths(model: Model, opt: OptionSpec, s0: float, level: int, n0: int, seed: int,
                stream: int, path0: int, n: int, scheme: str = "milstein", discount: bool = True):
    """Discounted fine and coupled coarse payoffs for ``n`` paths of one level."""
    n_fine = n0 * 2**level
    cfg = SimConfig(n_steps=n_fine, n_paths=n, scheme=scheme, seed=seed, stream=stream, discount=discount)
    fine = np.empty(n)
    coarse = np.empty(n)
    diag = np.zeros((n, len(DIAG_NAMES)), dtype=np.int64)
    level_block(model.kind, model.param_array(), use_milstein(model, cfg), float(s0), float(opt.B),
                float(opt.K), float(opt.t0), cfg.h(opt), n_fine, level > 0,
                np.uint64(seed), np.uint64(stream), np.uint64(path0), fine, coarse, diag)
    df = discount_factor(model, opt, cfg)
    return fine * df, coarse * df


def level_estimator(model: Model, opt: OptionSpec, s0: float, level: int, n_samples: int,
                    n0: int = 4, seed: int = 0, stream: int = 0, scheme: str = "milstein",
                    discount: bool = True, stats: LevelStats | None = None) -> LevelStats:
    """Sample ``Y_l = P_l - P_{l-1}`` (``Y_0 = P_0``); extends ``stats`` if given.

    Level ``l`` draws from RNG stream ``stream + l``.
    """
    if level < 0:
        raise ValueError("level must be non-negative")
    if stats is None:
        stats = LevelStats(level=level, h=opt.tau / (n0 * 2**level))
    start = stats.n_samples
    for off, n in blocks(n_samples):
        f, c = level_paths(model, opt, s0, level, n0, seed, stream + level, start + off, n, scheme, discount)
        stats.add(f, c)
    stats.cost = float(n0 * 2**level)
    return stats


@dataclass(frozen=True)
class MlmcConfig:
    eps: float
    n0: int = 4
    max_level: int = 10
    n_initial: int = 100
    n_pilot: int = 16
    alpha: float = 1.0
    seed: int = 0
    stream: int = 0
    scheme: str = "milstein"
    discount: bool = True

    def __post_init__(self):
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        if self.n0 < 1:
            raise ValueError("n0 must be >= 1")
        if self.n_initial < 2 or self.n_pilot < 2:
            raise ValueError("pilot sample counts must be >= 2")


@dataclass
class MlmcResult:
    price: float
    levels: list[LevelStats]
    eps: float
    wall_time: float

    @property
    def total_cost(self) -> float:
        return float(sum(l.n_samples * l.cost for l in self.levels))


def _converged(levels: list[LevelStats], eps: float, alpha: float) -> bool:
    L = len(levels) - 1
    scale = 2.0**alpha - 1.0
    target = eps / math.sqrt(2.0)
    if L == 0:
        return abs(levels[0].mean) / scale < target
    if L == 1:
        return False
    rem = max(abs(levels[L].mean), abs(levels[L - 1].mean) / 2.0**alpha) / scale
    return rem < target


def _variances(levels: list[LevelStats], beta_floor: float) -> np.ndarray:
    v = np.array([max(l.variance, 0.0) for l in levels])
    # small-sample guard: a level's variance may not drop faster than the decay rate suggests
    for l in range(2, len(v)):
        v[l] = max(v[l], 0.5 * v[l - 1] / 2.0**beta_floor)
    return v


def mlmc_price(model: Model, opt: OptionSpec, s0: float, mcfg: MlmcConfig) -> MlmcResult:
    """MLMC driver with optimal sample allocation.

    Level 0 starts with ``n_initial`` pilot samples and every refinement
    level with ``n_pilot``. Samples are then
    allocated as ``M_l ~ sqrt(V_l / C_l)`` for a sampling variance of
    ``eps**2 / 2`` and extended until the allocation is stable. Levels are
    added until the bias proxy drops below ``eps / sqrt(2)``.
    """
    t_start = time.perf_counter()
    levels: list[LevelStats] = []

    def extend(l: int, n: int):
        level_estimator(model, opt, s0, l, n, mcfg.n0, mcfg.seed, mcfg.stream, mcfg.scheme,
                        mcfg.discount, stats=levels[l])

    L = 0
    while True:
        levels.append(LevelStats(level=L, h=opt.tau / (mcfg.n0 * 2**L)))
        extend(L, mcfg.n_initial if L == 0 else mcfg.n_pilot)
        c = np.array([float(mcfg.n0 * 2**l.level) for l in levels])
        while True:
            v = _variances(levels, mcfg.alpha)
            m_opt = np.ceil(2.0 / mcfg.eps**2 * np.sqrt(v / c) * np.sum(np.sqrt(v * c)))
            extra = [int(m) - l.n_samples for m, l in zip(m_opt, levels)]
            if max(extra) <= 0:
                break
            for l, e in enumerate(extra):
                if e > 0:
                    extend(l, e)
        if _converged(levels, mcfg.eps, mcfg.alpha):
            break
        L += 1
        if L > mcfg.max_level:
            raise MaxLevelExceeded(f"no convergence up to level {mcfg.max_level} for eps={mcfg.eps}")
    price = float(sum(l.mean for l in levels))
    return MlmcResult(price=price, levels=levels, eps=mcfg.eps, wall_time=time.perf_counter() - t_start)


def variance_decay(model: Model, opt: OptionSpec, s0: float, levels=range(0, 9), n_samples: int = 20000,
                   n0: int = 4, seed: int = 0, stream: int = 0):
    """Level statistics for a fixed sample size per level (the data behind a beta plot)."""
    return [level_estimator(model, opt, s0, l, n_samples, n0, seed, stream) for l in levels]


def fit_beta(stats: list[LevelStats], lo: int = 3, hi: int = 8) -> float:
    """Decay rate beta from a least-squares fit of log2 Var[Y_l] against l."""
    sel = [s for s in stats if lo <= s.level <= hi]
    lv = np.array([s.level for s in sel], dtype=float)
    slope = np.polyfit(lv, np.log2([s.variance for s in sel]), 1)[0]
    return float(-slope)
