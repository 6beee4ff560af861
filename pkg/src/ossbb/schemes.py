"""One-step kernels: Euler/Milstein steps, survival splits, crossing probabilities.

A Milstein step from ``s`` is written as a quadratic in the Gaussian draw::

    S_next = base + b*z + a*z**2,   a = sigma*sigma'*h/2,  b = sigma*sqrt(h),
                                    base = s + mu*h - a

so the survival set ``{z : S_next < B}`` is ``{a z^2 + b z + (base - B) < 0}``.
The same form covers the second half of a coupled coarse step, where ``b``
picks up the cross term with the first half's draw.

All ``njit`` functions here are scalar and allocation free; the Python
wrappers at the bottom are the public, validated entry points.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numba as nb
import numpy as np

from .model import Model
from .rng import P_CLAMP_HI, P_CLAMP_LO, ncdf, npdf, nquantile

INTERVAL = 0
TWO_TAIL = 1
WHOLE = 2
EMPTY = 3
BRANCH_NAMES = {INTERVAL: "interval", TWO_TAIL: "two-tail", WHOLE: "whole-line", EMPTY: "empty"}

# |a| below this fraction of |b| is treated as the linear (Euler) case
LINEAR_TOL = 1e-12
INF = np.inf


class DegenerateSurvival(ArithmeticError):
    """The one-step survival set has zero probability mass."""


@nb.njit(cache=True)
def euler_next(s, mu, sig, h, z):
    return s + mu * h + sig * math.sqrt(h) * z


@nb.njit(cache=True)
def milstein_next(s, mu, sig, sigp, h, z):
    return s + mu * h + sig * math.sqrt(h) * z + 0.5 * sig * sigp * h * (z * z - 1.0)


@nb.njit(cache=True)
def quad_below(a, b, c0):
    """Describe ``{z : a z^2 + b z + c0 < 0}`` as ``(branch, z_lo, z_hi)``.

    INTERVAL means ``z_lo < z < z_hi`` (either end may be infinite), TWO_TAIL
    means ``z < z_lo`` or ``z > z_hi``.
    """
    if abs(a) <= LINEAR_TOL * abs(b):
        if b > 0.0:
            return INTERVAL, -INF, -c0 / b
        if b < 0.0:
            return INTERVAL, -c0 / b, INF
        if c0 < 0.0:
            return WHOLE, -INF, INF
        return EMPTY, 0.0, 0.0
    d = b * b - 4.0 * a * c0
    if d <= 0.0:
        if a > 0.0:
            return EMPTY, 0.0, 0.0
        return WHOLE, -INF, INF
    q = -0.5 * (b + math.copysign(math.sqrt(d), b))
    r1 = q / a
    r2 = c0 / q
    lo = min(r1, r2)
    hi = max(r1, r2)
    if a > 0.0:
        return INTERVAL, lo, hi
    return TWO_TAIL, lo, hi


@nb.njit(cache=True)
def root_tangent(a, b, r, da, db, dc0):
    """Derivative of a root ``r`` of ``a z^2 + b z + c0`` (implicit function rule)."""
    if math.isinf(r):
        return 0.0
    return -(da * r * r + db * r + dc0) / (2.0 * a * r + b)


# Phi(x) is exactly zero in double precision below this
_PHI_ZERO = -39.0


@nb.njit(cache=True, inline="always")
def _tail(x):
    """Phi(x), short-circuited where it underflows."""
    if x < _PHI_ZERO:
        return 0.0
    return ncdf(x)


@nb.njit(cache=True)
def split_probs(branch, zlo, zhi):
    """Return ``(p_minus, p, q_hi)`` with ``q_hi = Phi(-z_hi)`` the mass above the upper root.

    For TWO_TAIL ``p_minus`` is the left-tail mass and ``p`` the total mass.
    """
    if branch == EMPTY:
        return 0.0, 0.0, 0.0
    if branch == WHOLE:
        return 0.0, 1.0, 0.0
    plo = 0.0 if zlo == -INF else _tail(zlo)
    qhi = 0.0 if zhi == INF else _tail(-zhi)
    if branch == TWO_TAIL:
        return plo, min(1.0, plo + qhi), qhi
    if zlo > 0.0:
        # both roots in the upper tail: difference of complements keeps precision
        p = _tail(-zlo) - qhi
    elif zhi > 0.0:
        p = (1.0 - qhi) - plo
    else:
        p = _tail(zhi) - plo
    return plo, min(1.0, max(0.0, p)), qhi


@nb.njit(cache=True)
def _q_clamped(p):
    if p < P_CLAMP_LO:
        return nquantile(P_CLAMP_LO), 1
    if p > P_CLAMP_HI:
        return nquantile(P_CLAMP_HI), 1
    return nquantile(p), 0


@nb.njit(cache=True)
def survival_draw(branch, pm, p, qhi, u):
    """Map ``u`` onto the survival set: ``z = Phi^-1(p_minus + p u)``.

    Arguments above one half are evaluated through the complementary tail
    (``1 - p_minus - p u = q_hi + p (1 - u)``) so that draws near the upper
    root keep full precision. Returns ``(z, clamped)``.
    """
    if branch == WHOLE:
        if u <= 0.5:
            return _q_clamped(u)
        z, c = _q_clamped(1.0 - u)
        return -z, c
    if branch == TWO_TAIL:
        v = p * u
        if v < pm:
            return _q_clamped(v)
        z, c = _q_clamped(qhi - (v - pm))
        return -z, c
    arg = pm + p * u
    if arg <= 0.5:
        return _q_clamped(arg)
    z, c = _q_clamped(qhi + p * (1.0 - u))
    return -z, c


@nb.njit(cache=True)
def step_split(s, mu, sig, sigp, h, barrier):
    """Quadratic coefficients and survival set of one Milstein step from ``s``."""
    a = 0.5 * sig * sigp * h
    b = sig * math.sqrt(h)
    if abs(a) <= LINEAR_TOL * abs(b):
        a = 0.0
    base = s + mu * h - a
    br, zlo, zhi = quad_below(a, b, base - barrier)
    return a, b, base, br, zlo, zhi


@nb.njit(cache=True)
def constrained_step(a, b, base, br, zlo, zhi, barrier, u):
    """Constrained draw and next state of ``base + b z + a z^2`` below the barrier.

    Returns ``(s_next, z, p_minus, p, clamped, guarded)``; ``guarded`` flags a
    rounding-level overshoot that was pulled back just below the barrier.
    """
    pm, p, qhi = split_probs(br, zlo, zhi)
    if br == EMPTY or p <= 0.0:
        return barrier, 0.0, pm, 0.0, 0, 0
    z, clamped = survival_draw(br, pm, p, qhi, u)
    s_next = base + b * z + a * z * z
    guarded = 0
    if s_next >= barrier:
        s_next = np.nextafter(barrier, -INF)
        guarded = 1
    return s_next, z, pm, p, clamped, guarded


@nb.njit(cache=True)
def bb_cross(s, s_next, sig, h, barrier):
    d0 = max(barrier - s, 0.0)
    d1 = max(barrier - s_next, 0.0)
    return math.exp(-2.0 * d0 * d1 / (sig * sig * h))


@nb.njit(cache=True)
def oss_cross(s, s_next, sig, h, barrier):
    return math.exp(-2.0 * (barrier - s) * (barrier - s_next) / (sig * sig * h))


@nb.njit(cache=True)
def cross_tangent(s, s_next, sig, h, barrier, pstar, ds, ds_next, dsig, dbar):
    """Forward-mode derivative of ``oss_cross`` given input tangents."""
    a0 = barrier - s
    a1 = barrier - s_next
    e = -2.0 * a0 * a1 / (sig * sig * h)
    de = -2.0 / (sig * sig * h) * ((dbar - ds) * a1 + a0 * (dbar - ds_next)) - 2.0 * e * dsig / sig
    return pstar * de


# ---------------------------------------------------------------- python API


@dataclass(frozen=True)
class StepInput:
    s_n: float
    t_n: float
    h: float
    model: Model
    barrier: float

    def __post_init__(self):
        if not self.h > 0:
            raise ValueError(f"step width must be positive, got {self.h}")

    def coeffs(self):
        m = self.model
        return (float(m.mu(self.s_n, self.t_n)), float(m.sigma(self.s_n, self.t_n)),
                float(m.sigma_prime(self.s_n, self.t_n)))


@dataclass(frozen=True)
class SurvivalSplit:
    p_minus: float
    p: float
    branch: str
    z_lo: float
    z_hi: float


def milstein_step(inp: StepInput, z: float) -> float:
    mu, sig, sigp = inp.coeffs()
    return milstein_next(inp.s_n, mu, sig, sigp, inp.h, z)


def euler_step(inp: StepInput, z: float) -> float:
    mu, sig, _ = inp.coeffs()
    return euler_next(inp.s_n, mu, sig, inp.h, z)


def survival_split(inp: StepInput) -> SurvivalSplit:
    """Probability mass and shape of the set of draws that keep the step below B."""
    if not inp.s_n < inp.barrier:
        raise ValueError(f"survival split needs s_n < B, got s_n={inp.s_n}, B={inp.barrier}")
    mu, sig, sigp = inp.coeffs()
    if not sig > 0:
        raise ValueError(f"volatility must be positive, got {sig}")
    _, _, _, br, zlo, zhi = step_split(inp.s_n, mu, sig, sigp, inp.h, inp.barrier)
    pm, p, _ = split_probs(br, zlo, zhi)
    return SurvivalSplit(p_minus=pm, p=p, branch=BRANCH_NAMES[br], z_lo=zlo, z_hi=zhi)


def oss_step(inp: StepInput, u: float) -> float:
    """Milstein step conditioned on staying below the barrier."""
    if not inp.s_n < inp.barrier:
        raise ValueError(f"oss_step needs s_n < B, got s_n={inp.s_n}, B={inp.barrier}")
    mu, sig, sigp = inp.coeffs()
    a, b, base, br, zlo, zhi = step_split(inp.s_n, mu, sig, sigp, inp.h, inp.barrier)
    s_next, _, _, p, _, _ = constrained_step(a, b, base, br, zlo, zhi, inp.barrier, u)
    if p <= 0.0:
        raise DegenerateSurvival(f"no surviving draws from s_n={inp.s_n}")
    return s_next


def bb_crossing_prob(s_n, s_next, sigma_n, h, B) -> float:
    if not (h > 0 and sigma_n > 0):
        raise ValueError("need h > 0 and sigma_n > 0")
    return bb_cross(s_n, s_next, sigma_n, h, B)


def oss_crossing_prob(s_n, s_next, sigma_n, h, B) -> float:
    if not (s_n < B and s_next < B):
        raise ValueError("oss crossing probability needs both states below the barrier")
    return oss_cross(s_n, s_next, sigma_n, h, B)
