"""SDE models, option contract and the differentiable parameter vector.

Models are frozen dataclasses. Each one maps onto a numba-friendly pair
``(kind, params)`` so the path kernels can evaluate the coefficients
without Python callbacks.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from typing import ClassVar, Mapping

import numba as nb
import numpy as np

GBM_KIND = 0
CEV_KIND = 1


@dataclass(frozen=True)
class OptionSpec:
    """Continuously monitored up-and-out call."""

    B: float
    K: float
    T: float = 1.0
    t0: float = 0.0

    def __post_init__(self):
        if not self.T > self.t0:
            raise ValueError(f"need T > t0, got T={self.T}, t0={self.t0}")
        if not self.K >= 0:
            raise ValueError(f"strike must be non-negative, got {self.K}")
        if not self.B > self.K:
            raise ValueError(f"need B > K, got B={self.B}, K={self.K}")

    @property
    def tau(self) -> float:
        return self.T - self.t0


def payoff_q(s_T, opt: OptionSpec):
    """Call payoff ``(s_T - K)^+`` before knock-out."""
    return np.maximum(np.asarray(s_T, dtype=float) - opt.K, 0.0)


class Model:
    """Base class for scalar SDE models ``dS = mu dt + sigma dW``.

    Subclasses are frozen dataclasses whose float fields are the model
    parameters (all of them differentiable). ``r`` is always present and
    doubles as the discount rate.
    """

    kind: ClassVar[int]

    @property
    def param_names(self) -> tuple[str, ...]:
        return tuple(f.name for f in dataclasses.fields(self) if f.name != "euler")

    def param_array(self) -> np.ndarray:
        return np.array([getattr(self, n) for n in self.param_names], dtype=np.float64)

    def replace(self, **changes) -> "Model":
        return dataclasses.replace(self, **changes)

    @property
    def declares_euler(self) -> bool:
        return bool(getattr(self, "euler", False))

    def mu(self, s, t=0.0):
        return _vec(coefficients, self.kind, self.param_array(), s, t)[0]

    def sigma(self, s, t=0.0):
        return _vec(coefficients, self.kind, self.param_array(), s, t)[1]

    def sigma_prime(self, s, t=0.0):
        sp = _vec(coefficients, self.kind, self.param_array(), s, t)[2]
        return sp * 0.0 if self.declares_euler else sp

    def partials(self, s, t=0.0, wrt: str = "s"):
        """Return ``(dmu, dsigma, dsigma_prime)`` with respect to ``s`` or a parameter.

        Names that are not model parameters (``S0``, ``B``, ``K``) give zeros.
        """
        if wrt == "s":
            j = -1
        elif wrt in self.param_names:
            j = self.param_names.index(wrt)
        else:
            z = np.zeros_like(np.asarray(s, dtype=float))[()]
            return z, z, z
        out = _vec_grad(self.kind, self.param_array(), s, t, j)
        if self.declares_euler:
            out = (out[0], out[1], out[2] * 0.0)
        return out


def _vec(fn, kind, prm, s, t):
    if np.ndim(s) == 0:
        return np.array(fn(kind, prm, float(s), float(t)))
    s = np.asarray(s, dtype=float)
    res = np.empty((3, s.size))
    for i, si in enumerate(s.ravel()):
        res[:, i] = fn(kind, prm, si, float(t))
    return res.reshape((3,) + np.shape(s))


def _vec_grad(kind, prm, s, t, j):
    if np.ndim(s) == 0:
        return coefficient_partials(kind, prm, float(s), float(t), j)
    s = np.asarray(s, dtype=float)
    res = np.empty((3, s.size))
    for i, si in enumerate(s.ravel()):
        res[:, i] = coefficient_partials(kind, prm, si, float(t), j)
    return res[0].reshape(s.shape), res[1].reshape(s.shape), res[2].reshape(s.shape)


@dataclass(frozen=True)
class GBM(Model):
    """Geometric Brownian motion: ``mu = r s``, ``sigma = vol s``.

    With ``euler=True`` the model declares ``sigma' = 0`` so every step runs
    through the Euler branch.
    """

    r: float
    vol: float
    euler: bool = False
    kind: ClassVar[int] = GBM_KIND

    def __post_init__(self):
        if not self.vol > 0:
            raise ValueError(f"volatility must be positive, got {self.vol}")


@dataclass(frozen=True)
class CEV(Model):
    """Constant elasticity of variance: ``sigma(s) = vol * s**beta``."""

    r: float
    vol: float
    beta: float
    euler: bool = False
    kind: ClassVar[int] = CEV_KIND

    def __post_init__(self):
        if not self.vol > 0:
            raise ValueError(f"volatility must be positive, got {self.vol}")


def gbm_model(r: float, sigma: float) -> GBM:
    return GBM(r=r, vol=sigma)


@nb.njit(cache=True)
def coefficients(kind, prm, s, t):
    r = prm[0]
    if kind == GBM_KIND:
        v = prm[1]
        return r * s, v * s, v
    v = prm[1]
    b = prm[2]
    sb = s**b
    return r * s, v * sb, v * b * sb / s


@nb.njit(cache=True)
def coefficient_partials(kind, prm, s, t, j):
    """Partials of (mu, sigma, sigma') w.r.t. ``s`` (j = -1) or parameter j."""
    r = prm[0]
    if kind == GBM_KIND:
        v = prm[1]
        if j == -1:
            return r, v, 0.0
        if j == 0:
            return s, 0.0, 0.0
        if j == 1:
            return 0.0, s, 1.0
        return 0.0, 0.0, 0.0
    v = prm[1]
    b = prm[2]
    sb = s**b
    if j == -1:
        return r, v * b * sb / s, v * b * (b - 1.0) * sb / (s * s)
    if j == 0:
        return s, 0.0, 0.0
    if j == 1:
        return 0.0, sb, b * sb / s
    if j == 2:
        ls = math.log(s)
        return 0.0, v * sb * ls, v * sb / s * (1.0 + b * ls)
    return 0.0, 0.0, 0.0


REFERENCE_CASE = {
    "t0": 0.0,
    "T": 1.0,
    "S0": 1.0,
    "B": 1.1,
    "r": 0.05,
    "sigma": 0.2,
    "K": 1.0,
}


def reference_case() -> tuple[GBM, OptionSpec, float]:
    """Model, contract and spot of the reference experiment."""
    p = REFERENCE_CASE
    return GBM(r=p["r"], vol=p["sigma"]), OptionSpec(B=p["B"], K=p["K"], T=p["T"], t0=p["t0"]), p["S0"]


CONTRACT_COMPONENTS = ("S0", "B", "K")


def check_components(model: Model, components) -> tuple[str, ...]:
    components = tuple(components)
    if len(set(components)) != len(components):
        raise ValueError(f"duplicate components in {components}")
    known = CONTRACT_COMPONENTS + model.param_names
    for c in components:
        if c not in known:
            raise ValueError(f"unknown component {c!r}; expected one of {known}")
    return components


def bump(model: Model, opt: OptionSpec, s0: float, component: str, delta: float):
    """Shift one component of the parameter vector, returning new (model, opt, s0)."""
    if component == "S0":
        return model, opt, s0 + delta
    if component in ("B", "K"):
        return model, dataclasses.replace(opt, **{component: getattr(opt, component) + delta}), s0
    return model.replace(**{component: getattr(model, component) + delta}), opt, s0


def param_vector(model: Model, opt: OptionSpec, s0: float) -> Mapping[str, float]:
    out = {"S0": s0, "B": opt.B, "K": opt.K}
    out.update({n: getattr(model, n) for n in model.param_names})
    return out
