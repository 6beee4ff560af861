"""Counter-based uniforms (Philox4x64-10) and the standard normal Phi / Phi^-1.

Every variate is addressed by ``(seed, stream, path, index)``, so a path's
draws do not depend on how paths are split across chunks or threads.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba as nb
import numpy as np

_M0 = np.uint64(0xD2E7470EE14C6C93)
_M1 = np.uint64(0xCA5A826395121157)
_W0 = np.uint64(0x9E3779B97F4A7C15)
_W1 = np.uint64(0xBB67AE8584CAA73B)
_MASK32 = np.uint64(0xFFFFFFFF)
_S32 = np.uint64(32)
_S11 = np.uint64(11)
_TWO_M53 = 2.0**-53

# arguments of the quantile inside the path kernels are clamped to this band
P_CLAMP_LO = 1e-16
P_CLAMP_HI = 1.0 - 1e-16


@nb.njit(cache=True, inline="always")
def _mulhilo(a, b):
    alo = a & _MASK32
    ahi = a >> _S32
    blo = b & _MASK32
    bhi = b >> _S32
    t = alo * blo
    m1 = ahi * blo + (t >> _S32)
    m2 = alo * bhi + (m1 & _MASK32)
    hi = ahi * bhi + (m1 >> _S32) + (m2 >> _S32)
    return hi, a * b


@nb.njit(cache=True)
def philox4x64(c0, c1, c2, c3, k0, k1):
    """Philox4x64 with 10 rounds on a 256-bit counter and 128-bit key."""
    for _ in range(10):
        hi0, lo0 = _mulhilo(_M0, c0)
        hi1, lo1 = _mulhilo(_M1, c2)
        c0, c1, c2, c3 = hi1 ^ c1 ^ k0, lo1, hi0 ^ c3 ^ k1, lo0
        k0 = k0 + _W0
        k1 = k1 + _W1
    return c0, c1, c2, c3


@nb.njit(cache=True, inline="always")
def to_unit(x):
    """Top 53 bits of ``x`` mapped to the open interval (0, 1)."""
    return (float(x >> _S11) + 0.5) * _TWO_M53


@nb.njit(cache=True)
def draw_block(seed, stream, path, block):
    """Four raw 64-bit words for draws ``4*block .. 4*block+3`` of one path."""
    return philox4x64(np.uint64(block), np.uint64(path), np.uint64(0), np.uint64(0),
                      np.uint64(seed), np.uint64(stream))


@nb.njit(cache=True, inline="always")
def lane(b, j):
    if j == 0:
        return b[0]
    if j == 1:
        return b[1]
    if j == 2:
        return b[2]
    return b[3]


@nb.njit(cache=True)
def uniform_at(seed, stream, path, index):
    b = draw_block(seed, stream, path, index >> 2)
    return to_unit(lane(b, index & 3))


@nb.njit(cache=True)
def uniforms_for_path(seed, stream, path, n, out):
    for blk in range((n + 3) // 4):
        b = draw_block(seed, stream, path, blk)
        for j in range(4):
            i = 4 * blk + j
            if i < n:
                out[i] = to_unit(lane(b, j))


def uniform_matrix(seed: int, stream: int, path_start: int, n_paths: int, n: int) -> np.ndarray:
    """Draws ``[path, index]`` for a contiguous block of paths (testing and tooling)."""
    out = np.empty((n_paths, n))
    for p in range(n_paths):
        uniforms_for_path(seed, stream, path_start + p, n, out[p])
    return out


@dataclass
class RngStream:
    """Sequential view of one (seed, stream_id, path) sub-sequence."""

    seed: int = 0
    stream_id: int = 0
    path: int = 0
    counter: int = field(default=0)

    def next_uniform(self) -> float:
        u = uniform_at(self.seed, self.stream_id, self.path, self.counter)
        self.counter += 1
        return u

    def uniforms(self, n: int) -> np.ndarray:
        out = np.empty(n)
        for i in range(n):
            out[i] = self.next_uniform()
        return out

    def next_normal(self) -> float:
        return normal_quantile(self.next_uniform())

    def split(self, stream_id: int) -> "RngStream":
        return RngStream(self.seed, stream_id, self.path)


_SQRT1_2 = 0.7071067811865476
_INV_SQRT_2PI = 0.3989422804014327


@nb.njit(cache=True)
def ncdf(x):
    return 0.5 * math.erfc(-x * _SQRT1_2)


@nb.njit(cache=True)
def npdf(x):
    return _INV_SQRT_2PI * math.exp(-0.5 * x * x)


@nb.njit(cache=True)
def nquantile(p):
    # Wichura, AS241 (PPND16); relative accuracy about 1e-16.
    q = p - 0.5
    if abs(q) <= 0.425:
        r = 0.180625 - q * q
        num = (((((((2.5090809287301226727e3 * r + 3.3430575583588128105e4) * r
                    + 6.7265770927008700853e4) * r + 4.5921953931549871457e4) * r
                  + 1.3731693765509461125e4) * r + 1.9715909503065514427e3) * r
                + 1.3314166789178437745e2) * r + 3.3871328727963666080e0)
        den = (((((((5.2264952788528545610e3 * r + 2.8729085735721942674e4) * r
                    + 3.9307895800092710610e4) * r + 2.1213794301586595867e4) * r
                  + 5.3941960214247511077e3) * r + 6.8718700749205790830e2) * r
                + 4.2313330701600911252e1) * r + 1.0)
        return q * num / den
    r = p if q < 0.0 else 1.0 - p
    r = math.sqrt(-math.log(r))
    if r <= 5.0:
        r -= 1.6
        num = (((((((7.74545014278341407640e-4 * r + 2.27238449892691845833e-2) * r
                    + 2.41780725177450611770e-1) * r + 1.27045825245236838258e0) * r
                  + 3.64784832476320460504e0) * r + 5.76949722146069140550e0) * r
                + 4.63033784615654529590e0) * r + 1.42343711074968357734e0)
        den = (((((((1.05075007164441684324e-9 * r + 5.47593808499534494600e-4) * r
                    + 1.51986665636164571966e-2) * r + 1.48103976427480074590e-1) * r
                  + 6.89767334985100004550e-1) * r + 1.67638483018380384940e0) * r
                + 2.05319162663775882187e0) * r + 1.0)
    else:
        r -= 5.0
        num = (((((((2.01033439929228813265e-7 * r + 2.71155556874348757815e-5) * r
                    + 1.24266094738807843860e-3) * r + 2.65321895265761230930e-2) * r
                  + 2.96560571828504891230e-1) * r + 1.78482653991729133580e0) * r
                + 5.46378491116411436990e0) * r + 6.65790464350110377720e0)
        den = (((((((2.04426310338993978564e-15 * r + 1.42151175831644588870e-7) * r
                    + 1.84631831751005468180e-5) * r + 7.86869131145613259100e-4) * r
                  + 1.48753612908506148525e-2) * r + 1.36929880922735805310e-1) * r
                + 5.99832206555887937690e-1) * r + 1.0)
    x = num / den
    return -x if q < 0.0 else x


def normal_cdf(x):
    """Standard normal CDF; scalar or array."""
    if np.ndim(x) == 0:
        return ncdf(float(x))
    x = np.asarray(x, dtype=float)
    return np.vectorize(ncdf, otypes=[float])(x)


def normal_quantile(p):
    """Inverse standard normal CDF for ``p`` in the open unit interval."""
    arr = np.asarray(p, dtype=float)
    if np.any(~((arr > 0.0) & (arr < 1.0))):
        raise ValueError("normal_quantile needs 0 < p < 1")
    if arr.ndim == 0:
        return nquantile(float(arr))
    return np.vectorize(nquantile, otypes=[float])(arr)
