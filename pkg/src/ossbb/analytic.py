"""Closed-form Black-Scholes prices for the GBM oracle."""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

from scipy.special import ndtr


@dataclass(frozen=True)
class BsParams:
    S0: float
    K: float
    B: float
    r: float
    sigma: float
    tau: float

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        if not self.tau > 0:
            raise ValueError("need T > t0")
        if not self.B > self.K:
            raise ValueError("need B > K")


def bs_call(p: BsParams) -> float:
    """European call, discounted at ``r``."""
    sd = p.sigma * math.sqrt(p.tau)
    d1 = (math.log(p.S0 / p.K) + (p.r + 0.5 * p.sigma**2) * p.tau) / sd
    d2 = d1 - sd
    return float(p.S0 * ndtr(d1) - p.K * math.exp(-p.r * p.tau) * ndtr(d2))


def bs_put(p: BsParams) -> float:
    sd = p.sigma * math.sqrt(p.tau)
    d1 = (math.log(p.S0 / p.K) + (p.r + 0.5 * p.sigma**2) * p.tau) / sd
    d2 = d1 - sd
    return float(p.K * math.exp(-p.r * p.tau) * ndtr(-d2) - p.S0 * ndtr(-d1))


def bs_up_and_out_call(p: BsParams) -> float:
    """Continuously monitored up-and-out call with ``K < B`` (reflection principle).

    Written as the vanilla call restricted to ``S_T < B`` minus its image
    under reflection at the barrier.
    """
    S, K, H, r, v, T = p.S0, p.K, p.B, p.r, p.sigma, p.tau
    if S >= H:
        return 0.0
    sd = v * math.sqrt(T)
    lam = (r + 0.5 * v * v) / (v * v)
    df = math.exp(-r * T)

    x1 = math.log(S / K) / sd + lam * sd
    x2 = math.log(S / H) / sd + lam * sd
    y1 = math.log(H * H / (S * K)) / sd + lam * sd
    y2 = math.log(H / S) / sd + lam * sd
    hs = H / S
    direct = S * (ndtr(x1) - ndtr(x2)) - K * df * (ndtr(x1 - sd) - ndtr(x2 - sd))
    image = (S * hs ** (2 * lam) * (ndtr(-y2) - ndtr(-y1))
             - K * df * hs ** (2 * lam - 2) * (ndtr(-y2 + sd) - ndtr(-y1 + sd)))
    return float(max(direct - image, 0.0))


def _field(component: str) -> str:
    return {"vol": "sigma"}.get(component, component)


def bs_barrier_greeks(p: BsParams, component: str = "S0", order: int = 1,
                      rel_step: float = 1e-5) -> float:
    """Derivative of the closed-form barrier price by Richardson-extrapolated central differences."""
    name = _field(component)
    x0 = getattr(p, name)
    h = rel_step * max(abs(x0), 1.0)
    if name == "S0" and p.B > p.S0:
        # keep every stencil point below the barrier
        h = min(h, 0.2 * (p.B - p.S0))

    def f(dx):
        return bs_up_and_out_call(replace(p, **{name: x0 + dx}))

    def diff(step):
        if order == 1:
            return (f(step) - f(-step)) / (2 * step)
        if order == 2:
            return (f(step) - 2 * f(0.0) + f(-step)) / (step * step)
        raise ValueError(f"order must be 1 or 2, got {order}")

    # central differences have an h^2 leading error term
    return float((4.0 * diff(h) - diff(2 * h)) / 3.0)


def reference_price(model, opt, s0: float, discount: bool = True) -> float:
    """Oracle price matching an engine run of a GBM model."""
    p = BsParams(S0=s0, K=opt.K, B=opt.B, r=model.r, sigma=model.vol, tau=opt.tau)
    v = bs_up_and_out_call(p)
    return v if discount else v * math.exp(model.r * opt.tau)
