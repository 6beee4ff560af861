"""Pathwise sensitivities and common-random-number finite differences.

Pathwise Greeks propagate forward-mode tangents through every step of the
path: coefficient tangents, the roots of the survival quadratic, the survival
mass, the constrained draw, the next state and the bridge crossing factor.
The survival weight is carried as a relative tangent (sum of dp/p) so that it
never underflows along with the weight itself.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numba as nb
import numpy as np

from .estimators import (
    BB,
    DIAG_NAMES,
    D_CLAMP,
    D_DEGENERATE,
    D_EARLY_KO,
    D_GUARD,
    D_TWO_TAIL,
    KO_FLOOR,
    LOG_SWITCH,
    OSS_BB,
    EstimatorReport,
    RunningStats,
    SimConfig,
    _coeffs,
    blocks,
    discount_factor,
    path_payoffs,
    use_milstein,
)
from .model import Model, OptionSpec, check_components, coefficient_partials, bump
from .rng import draw_block, lane, nquantile, npdf, to_unit
from .schemes import (
    EMPTY,
    INF,
    TWO_TAIL,
    WHOLE,
    bb_cross,
    constrained_step,
    cross_tangent,
    oss_cross,
    root_tangent,
    step_split,
)


class NonFiniteTangent(ArithmeticError):
    pass


# extra diagnostic column flagging a non-finite tangent on the path
NONFINITE = len(DIAG_NAMES)


@dataclass(frozen=True)
class GreekRequest:
    components: tuple[str, ...]
    order: str = "first_pathwise"
    steps: dict | None = None

    ORDERS = ("first_pathwise", "first_fd", "second_fd", "second_fd_of_pathwise")

    def __post_init__(self):
        if self.order not in self.ORDERS:
            raise ValueError(f"unknown order {self.order!r}")
        for c, st in (self.steps or {}).items():
            if not st > 0:
                raise ValueError(f"finite-difference step for {c} must be positive")

    def step(self, component: str, default: float) -> float:
        return (self.steps or {}).get(component, default)


def tangent_seeds(model: Model, components) -> tuple[np.ndarray, np.ndarray]:
    """Seed matrix ``[dS0, dB, dK]`` per component and the model-parameter index (-1 if none)."""
    seeds = np.zeros((len(components), 3))
    pidx = np.full(len(components), -1, dtype=np.int64)
    for i, c in enumerate(components):
        if c == "S0":
            seeds[i, 0] = 1.0
        elif c == "B":
            seeds[i, 1] = 1.0
        elif c == "K":
            seeds[i, 2] = 1.0
        else:
            pidx[i] = model.param_names.index(c)
    return seeds, pidx


@nb.njit(cache=True)
def _dcoeffs(kind, prm, milstein, s, t, ds, pj):
    mu_s, sig_s, sigp_s = coefficient_partials(kind, prm, s, t, -1)
    dmu = mu_s * ds
    dsig = sig_s * ds
    dsigp = sigp_s * ds
    if pj >= 0:
        mu_p, sig_p, sigp_p = coefficient_partials(kind, prm, s, t, pj)
        dmu += mu_p
        dsig += sig_p
        dsigp += sigp_p
    if not milstein:
        dsigp = 0.0
    return dmu, dsig, dsigp


@nb.njit(cache=True)
def oss_path_tangent(kind, prm, milstein, s0, barrier, strike, t0, h, n_steps,
                     seed, stream, path, seeds, pidx, dout, diag):
    """Payoff and its tangents for one one-step-survival path; tangents go to ``dout``."""
    nc = seeds.shape[0]
    for c in range(nc):
        dout[c] = 0.0
    if s0 >= barrier:
        return 0.0
    ds = np.empty(nc)
    dx = np.zeros(nc)
    rw = np.zeros(nc)
    for c in range(nc):
        ds[c] = seeds[c, 0]
    s = s0
    w = 1.0
    logw = 0.0
    x = 1.0
    sqh = math.sqrt(h)
    b4 = draw_block(seed, stream, path, 0)
    for n in range(n_steps):
        if (n & 3) == 0:
            b4 = draw_block(seed, stream, path, n >> 2)
        u = to_unit(lane(b4, n & 3))
        t = t0 + n * h
        mu, sig, sigp = _coeffs(kind, prm, milstein, s, t)
        a, b, base, br, zlo, zhi = step_split(s, mu, sig, sigp, h, barrier)
        if br == TWO_TAIL:
            diag[D_TWO_TAIL] += 1
        s1, z, pm, p, clamped, guarded = constrained_step(a, b, base, br, zlo, zhi, barrier, u)
        diag[D_CLAMP] += clamped
        diag[D_GUARD] += guarded
        if br == EMPTY or p <= 0.0:
            diag[D_DEGENERATE] += 1
            for c in range(nc):
                dout[c] = 0.0
            return 0.0
        pstar = oss_cross(s, s1, sig, h, barrier)
        phi_lo = 0.0 if zlo == -INF else npdf(zlo)
        phi_hi = 0.0 if zhi == INF else npdf(zhi)
        phi_z = npdf(z)
        linear = a == 0.0
        for c in range(nc):
            dbar = seeds[c, 1]
            dmu, dsig, dsigp = _dcoeffs(kind, prm, milstein, s, t, ds[c], pidx[c])
            da = 0.0 if linear else 0.5 * h * (dsig * sigp + sig * dsigp)
            db = sqh * dsig
            dbase = ds[c] + h * dmu - da
            dc0 = dbase - dbar
            dzlo = root_tangent(a, b, zlo, da, db, dc0)
            dzhi = root_tangent(a, b, zhi, da, db, dc0)
            dlo = phi_lo * dzlo
            dhi = phi_hi * dzhi
            if br == WHOLE:
                dp = 0.0
                dz = 0.0
            elif br == TWO_TAIL:
                dp = dlo - dhi
                if p * u < pm:
                    dz = dp * u / phi_z
                else:
                    dz = (dp * u - dlo + dhi) / phi_z
            else:
                dp = dhi - dlo
                dz = (dlo + dp * u) / phi_z
            if clamped or guarded:
                dz = 0.0
            ds1 = dbase + db * z + da * z * z + (b + 2.0 * a * z) * dz
            dps = cross_tangent(s, s1, sig, h, barrier, pstar, ds[c], ds1, dsig, dbar)
            dx[c] = dx[c] * (1.0 - pstar) - x * dps
            rw[c] += dp / p
            ds[c] = ds1
        if p < LOG_SWITCH:
            logw += math.log(p)
        else:
            w *= p
        x *= 1.0 - pstar
        s = s1
    if logw != 0.0:
        w *= math.exp(logw)
    q = max(s - strike, 0.0)
    itm = 1.0 if s > strike else 0.0
    for c in range(nc):
        dq = itm * (ds[c] - seeds[c, 2])
        dout[c] = dq * x * w + q * (dx[c] * w + x * w * rw[c])
        if not math.isfinite(dout[c]):
            diag[NONFINITE] = n_steps
    return q * x * w


@nb.njit(cache=True)
def bb_path_tangent(kind, prm, milstein, s0, barrier, strike, t0, h, n_steps,
                    seed, stream, path, seeds, pidx, dout, diag):
    """Brownian bridge payoff and tangents for one path."""
    nc = seeds.shape[0]
    ds = np.empty(nc)
    dx = np.zeros(nc)
    for c in range(nc):
        ds[c] = seeds[c, 0]
        dout[c] = 0.0
    s = s0
    x = 1.0
    sqh = math.sqrt(h)
    b4 = draw_block(seed, stream, path, 0)
    for n in range(n_steps):
        if (n & 3) == 0:
            b4 = draw_block(seed, stream, path, n >> 2)
        z = nquantile(to_unit(lane(b4, n & 3)))
        t = t0 + n * h
        mu, sig, sigp = _coeffs(kind, prm, milstein, s, t)
        s1 = s + mu * h + sig * sqh * z + 0.5 * sig * sigp * h * (z * z - 1.0)
        phat = bb_cross(s, s1, sig, h, barrier)
        inside = s < barrier and s1 < barrier
        for c in range(nc):
            dmu, dsig, dsigp = _dcoeffs(kind, prm, milstein, s, t, ds[c], pidx[c])
            ds1 = ds[c] + h * dmu + sqh * dsig * z + 0.5 * h * (dsig * sigp + sig * dsigp) * (z * z - 1.0)
            dph = 0.0
            if inside:
                dph = cross_tangent(s, s1, sig, h, barrier, phat, ds[c], ds1, dsig, seeds[c, 1])
            dx[c] = dx[c] * (1.0 - phat) - x * dph
            ds[c] = ds1
        x *= 1.0 - phat
        s = s1
        if x < KO_FLOOR:
            diag[D_EARLY_KO] += 1
            return 0.0
    q = max(s - strike, 0.0)
    itm = 1.0 if s > strike else 0.0
    for c in range(nc):
        dout[c] = itm * (ds[c] - seeds[c, 2]) * x + q * dx[c]
        if not math.isfinite(dout[c]):
            diag[NONFINITE] = n_steps
    return q * x


@nb.njit(parallel=True, cache=True)
def tangent_block(method, kind, prm, milstein, s0, barrier, strike, t0, h, n_steps,
                  seed, stream, path0, seeds, pidx, out, dout, diag):
    for i in nb.prange(out.shape[0]):
        path = path0 + i
        if method == OSS_BB:
            out[i] = oss_path_tangent(kind, prm, milstein, s0, barrier, strike, t0, h, n_steps,
                                      seed, stream, path, seeds, pidx, dout[i], diag[i])
        else:
            out[i] = bb_path_tangent(kind, prm, milstein, s0, barrier, strike, t0, h, n_steps,
                                     seed, stream, path, seeds, pidx, dout[i], diag[i])


_METHOD = {"oss_bb": OSS_BB, "bb": BB}


def path_tangents(method: str, model: Model, opt: OptionSpec, s0: float, cfg: SimConfig,
                  components, path0: int, n: int, diag: np.ndarray | None = None,
                  seeds=None, pidx=None):
    """Discounted per-path payoffs and their pathwise derivatives ``(n,)`` and ``(n, n_comp)``."""
    components = tuple(components)
    if seeds is None:
        seeds, pidx = tangent_seeds(model, components)
    nc = seeds.shape[0]
    out = np.empty(n)
    dout = np.empty((n, nc))
    if diag is None:
        diag = np.zeros((n, len(DIAG_NAMES) + 1), dtype=np.int64)
    tangent_block(_METHOD[method], model.kind, model.param_array(), use_milstein(model, cfg),
                  float(s0), float(opt.B), float(opt.K), float(opt.t0), cfg.h(opt), cfg.n_steps,
                  np.uint64(cfg.seed), np.uint64(cfg.stream), np.uint64(path0),
                  seeds, pidx, out, dout, diag)
    bad = diag[:, -1]
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise NonFiniteTangent(f"non-finite tangent on path {path0 + i} (n_steps={cfg.n_steps})")
    df = discount_factor(model, opt, cfg)
    dout *= df
    if cfg.discount:
        for i, c in enumerate(components):
            if c == "r":
                dout[:, i] -= opt.tau * out * df
    return out * df, dout


def _pathwise(method: str, model, opt, s0, cfg, components) -> dict[str, EstimatorReport]:
    components = check_components(model, components)
    t_start = time.perf_counter()
    stats = RunningStats(len(components))
    diag_tot = np.zeros(len(DIAG_NAMES) + 1, dtype=np.int64)
    for start, n in blocks(cfg.n_paths):
        diag = np.zeros((n, len(DIAG_NAMES) + 1), dtype=np.int64)
        _, d = path_tangents(method, model, opt, s0, cfg, components, start, n, diag)
        stats.add_block(d)
        diag_tot += diag.sum(axis=0)
    wall = time.perf_counter() - t_start
    diagnostics = dict(zip(DIAG_NAMES, (int(v) for v in diag_tot)))
    var = stats.variance
    return {
        c: EstimatorReport(mean=float(stats.mean[i]), sample_variance=float(var[i]),
                           n_paths=cfg.n_paths, n_steps=cfg.n_steps, wall_time=wall,
                           estimator=f"{method}_pathwise", diagnostics=diagnostics)
        for i, c in enumerate(components)
    }


def oss_pathwise_greeks(model: Model, opt: OptionSpec, s0: float, cfg: SimConfig,
                        components=("S0",)) -> dict[str, EstimatorReport]:
    """First-order pathwise sensitivities of the one-step survival estimator."""
    return _pathwise("oss_bb", model, opt, s0, cfg, components)


def bb_pathwise_greeks(model: Model, opt: OptionSpec, s0: float, cfg: SimConfig,
                       components=("S0",)) -> dict[str, EstimatorReport]:
    """First-order pathwise sensitivities of the Brownian bridge estimator."""
    return _pathwise("bb", model, opt, s0, cfg, components)


def _fd_combine(values: list[np.ndarray], order: int, step: float) -> np.ndarray:
    if order == 1:
        return (values[2] - values[0]) / (2.0 * step)
    return (values[2] - 2.0 * values[1] + values[0]) / (step * step)


def fd_paths(model: Model, opt: OptionSpec, s0: float, cfg: SimConfig, component: str,
             order: int, step: float, estimator: str, of_pathwise: bool, path0: int, n: int) -> np.ndarray:
    """Per-path central differences over paths ``path0 .. path0+n-1`` with common random numbers."""
    bumped = [bump(model, opt, s0, component, k * step) for k in (-1.0, 0.0, 1.0)]
    if of_pathwise:
        lo, hi = (path_tangents(estimator, m, o, s, cfg, (component,), path0, n)[1][:, 0]
                  for m, o, s in (bumped[0], bumped[2]))
        return (hi - lo) / (2.0 * step)
    need = (0, 2) if order == 1 else (0, 1, 2)
    vals = [path_payoffs(estimator, m, o, s, cfg, path0, n) if k in need else None
            for k, (m, o, s) in enumerate(bumped)]
    return _fd_combine(vals, order, step)


def _check_fd(model, component, order, step):
    if not step > 0:
        raise ValueError(f"finite-difference step must be positive, got {step}")
    if order not in (1, 2):
        raise ValueError(f"order must be 1 or 2, got {order}")
    check_components(model, (component,))


def fd_greek(model: Model, opt: OptionSpec, s0: float, cfg: SimConfig, component: str,
             order: int = 1, step: float = 1e-4, estimator: str = "oss_bb",
             of_pathwise: bool = False) -> EstimatorReport:
    """Central finite difference with common random numbers, differenced path by path.

    ``of_pathwise=True`` differences the pathwise first derivative instead of
    the payoff (first-order difference of Delta gives a Gamma, for example).
    """
    _check_fd(model, component, order, step)
    t_start = time.perf_counter()
    stats = RunningStats()
    for start, n in blocks(cfg.n_paths):
        stats.add_block(fd_paths(model, opt, s0, cfg, component, order, step, estimator, of_pathwise, start, n))
    kind = "fd_of_pathwise" if of_pathwise else f"fd{order}"
    return EstimatorReport(mean=float(stats.mean[0]), sample_variance=float(stats.variance[0]),
                           n_paths=cfg.n_paths, n_steps=cfg.n_steps,
                           wall_time=time.perf_counter() - t_start, estimator=f"{estimator}_{kind}")


@dataclass
class StabilityFit:
    m_grid: np.ndarray
    variances: np.ndarray
    replicates: np.ndarray
    slope: float
    intercept: float

    @property
    def constant(self) -> float:
        """Fitted C in Var(D_h P_M) ~ C / M."""
        return float(np.exp(self.intercept))


def batch_mean_variance(model: Model, opt: OptionSpec, s0: float, cfg: SimConfig, component: str,
                        order: int, step: float, estimator: str, M: int, R: int) -> float:
    """Sample variance of R independent M-path finite-difference estimates."""
    sums = np.zeros(R)
    for start, n in blocks(R * M):
        d = fd_paths(model, opt, s0, cfg, component, order, step, estimator, False, start, n)
        sums += np.bincount((start + np.arange(n)) // M, weights=d, minlength=R)
    return float(np.var(sums / M, ddof=1))


def stability_scan(model: Model, opt: OptionSpec, s0: float, cfg: SimConfig, component: str = "S0",
                   order: int = 2, step: float = 1e-3, m_grid=(10**3, 10**4, 10**5, 10**6),
                   estimator: str = "oss_bb", replicates: int = 32,
                   min_paths: int = 10**6) -> StabilityFit:
    """Variance of the finite-difference estimator against sample size, with a log-log fit.

    ``Var(D_h P_M)`` is measured directly as the spread of independent
    M-path estimates, using ``max(replicates, ceil(min_paths / M))`` of them.
    A single-batch ``s^2 / M`` would understate it at small M whenever rare
    paths (payoff kinks inside the bump) dominate the variance. Each grid
    point uses its own RNG stream so the points are independent.
    """
    _check_fd(model, component, order, step)
    m_grid = np.asarray(m_grid, dtype=np.int64)
    if np.any(np.diff(m_grid) <= 0):
        raise ValueError("M-grid must be increasing")
    if replicates < 2:
        raise ValueError("need at least two replicates per grid point")
    variances, reps = [], []
    for k, m in enumerate(m_grid):
        R = max(replicates, -(-min_paths // int(m)))
        run_cfg = SimConfig(n_steps=cfg.n_steps, n_paths=int(m) * R, scheme=cfg.scheme, seed=cfg.seed,
                            stream=cfg.stream + 1000 + k, discount=cfg.discount)
        variances.append(batch_mean_variance(model, opt, s0, run_cfg, component, order, step,
                                             estimator, int(m), R))
        reps.append(R)
    variances = np.array(variances)
    slope, intercept = np.polyfit(np.log(m_grid), np.log(variances), 1)
    return StabilityFit(m_grid, variances, np.array(reps), float(slope), float(intercept))
