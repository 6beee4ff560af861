import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import ndtr, ndtri

from ossbb import GBM, CEV, OptionSpec, SimConfig, price_oss_bb
from ossbb.mlmc import (
    LevelStats,
    MaxLevelExceeded,
    MlmcConfig,
    coarse_path_oss,
    coarse_step,
    fit_beta,
    level_estimator,
    level_paths,
    mlmc_price,
    variance_decay,
)
from ossbb.rng import uniform_matrix
from ossbb.schemes import split_probs, step_split


def diag():
    return np.zeros(5, dtype=np.int64)


def test_small_nu_first_half_probability_limit():
    s, mu, sig, h, B = 1.0, 0.05, 0.2, 1 / 64, 1.1
    nu = 1e-10
    _, _, _, br, zlo, zhi = step_split(s, mu, sig, nu / (sig * h), h, B)
    p = split_probs(br, zlo, zhi)[1]
    assert p == pytest.approx(ndtr((B - s - mu * h) / (sig * math.sqrt(h))), abs=1e-6)


@pytest.mark.parametrize("model", [GBM(0.05, 0.2), CEV(0.03, 0.3, 0.6)])
def test_unconstrained_coarse_path_is_milstein_on_double_step(model):
    """Without a barrier the half-step pair is one Milstein step of width 2h with Z = (z1 + z2)/sqrt(2)."""
    n_fine, seed, stream = 16, 7, 2
    opt = OptionSpec(B=1e9, K=0.9)
    h = opt.tau / n_fine
    u = uniform_matrix(seed, stream, 0, 32, n_fine)
    for path in range(32):
        got, _ = coarse_path_oss(model, opt, 1.0, n_fine, seed=seed, stream=stream, path=path)
        z = ndtri(u[path])
        s = 1.0
        for n in range(0, n_fine, 2):
            Z = (z[n] + z[n + 1]) / math.sqrt(2.0)
            mu, sig, sigp = model.mu(s), model.sigma(s), model.sigma_prime(s)
            H = 2 * h
            s = s + mu * H + sig * math.sqrt(H) * Z + 0.5 * sig * sigp * H * (Z * Z - 1.0)
        assert got == pytest.approx(max(s - opt.K, 0.0), abs=1e-12)


@settings(max_examples=300, deadline=None)
@given(st.floats(0.6, 1.0999), st.floats(-0.2, 0.2), st.floats(0.05, 0.8), st.floats(1e-4, 0.25),
       st.floats(1e-9, 1 - 1e-9), st.floats(1e-9, 1 - 1e-9))
def test_coarse_step_stays_below_barrier(s, r, vol, h, u1, u2):
    B = 1.1
    d = diag()
    s_half, s_next, p, keep = coarse_step(s, r * s, vol * s, vol, h, B, u1, u2, d)
    assert 0.0 <= p <= 1.0 and 0.0 <= keep <= 1.0
    if p > 0:
        assert s_half < B and s_next < B


def test_coarse_path_rejects_odd_grid(t1):
    model, opt, s0 = t1
    with pytest.raises(ValueError):
        coarse_path_oss(model, opt, s0, 7)


def test_level_zero_bit_exact(t1):
    model, opt, s0 = t1
    st0 = level_estimator(model, opt, s0, 0, 70_000, n0=4, seed=3, stream=5)
    ref = price_oss_bb(model, opt, s0, SimConfig(n_steps=4, n_paths=70_000, seed=3, stream=5))
    assert st0.mean == ref.mean
    assert st0.variance == ref.sample_variance


def test_fine_side_matches_single_level(t1):
    model, opt, s0 = t1
    fine, coarse = level_paths(model, opt, s0, 2, 4, seed=1, stream=4, path0=0, n=1000)
    ref = price_oss_bb(model, opt, s0, SimConfig(n_steps=16, n_paths=1000, seed=1, stream=4))
    assert fine.mean() == pytest.approx(ref.mean, rel=1e-13)
    assert np.all(coarse >= 0) and np.all(coarse <= opt.B - opt.K)


def test_level_stats_extend_matches_single_run(t1):
    model, opt, s0 = t1
    a = level_estimator(model, opt, s0, 2, 3000, seed=1)
    level_estimator(model, opt, s0, 2, 2000, seed=1, stats=a)
    b = level_estimator(model, opt, s0, 2, 5000, seed=1)
    assert a.n_samples == 5000
    assert a.mean == pytest.approx(b.mean, rel=1e-12)


def test_level_rejects_negative():
    m, o = GBM(0.05, 0.2), OptionSpec(B=1.1, K=1.0)
    with pytest.raises(ValueError):
        level_estimator(m, o, 1.0, -1, 10)


def test_telescoping_sum_matches_finest_grid(t1):
    model, opt, s0 = t1
    levels = [level_estimator(model, opt, s0, l, 100_000, n0=4, seed=8) for l in range(4)]
    total = sum(s.mean for s in levels)
    se = math.sqrt(sum(s.variance / s.n_samples for s in levels))
    ref = price_oss_bb(model, opt, s0, SimConfig(n_steps=32, n_paths=200_000, seed=9))
    assert abs(total - ref.mean) < 3 * math.hypot(se, ref.std_error)


def test_level_variances_decay(t1):
    model, opt, s0 = t1
    stats = variance_decay(model, opt, s0, levels=range(1, 6), n_samples=40_000, seed=2)
    v = [s.variance for s in stats]
    assert all(a > b for a, b in zip(v, v[1:]))
    assert fit_beta(stats, lo=1, hi=5) > 1.0


def test_loose_tolerance_stops_at_level_zero(t1):
    model, opt, s0 = t1
    res = mlmc_price(model, opt, s0, MlmcConfig(eps=10 * 1.2e-3, seed=4, stream=1))
    assert len(res.levels) == 1
    lvl = res.levels[0]
    ref = price_oss_bb(model, opt, s0, SimConfig(n_steps=4, n_paths=lvl.n_samples, seed=4, stream=1))
    assert res.price == pytest.approx(ref.mean, rel=1e-12)
    assert res.total_cost == lvl.n_samples * 4


def test_max_level_exceeded(t1):
    model, opt, s0 = t1
    with pytest.raises(MaxLevelExceeded):
        mlmc_price(model, opt, s0, MlmcConfig(eps=4e-4, max_level=0))


def test_mlmc_price_close_to_oracle(t1):
    model, opt, s0 = t1
    res = mlmc_price(model, opt, s0, MlmcConfig(eps=5e-4, seed=1))
    assert abs(res.price - 0.0011861405278910109) < 3 * 5e-4
    assert [l.level for l in res.levels] == list(range(len(res.levels)))
    assert all(l.variance >= 0 for l in res.levels)


@pytest.mark.parametrize("kw", [{"eps": 0.0}, {"eps": -1.0}, {"eps": 1e-3, "n0": 0},
                                {"eps": 1e-3, "n_pilot": 1}])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        MlmcConfig(**kw)


def test_level_stats_row():
    s = LevelStats(level=2, h=1 / 16)
    s.add(np.array([1.0, 2.0, 3.0]), np.array([0.5, 1.5, 3.5]))
    row = s.row()
    assert row["M_l"] == 3 and row["mean_Yl"] == pytest.approx(1 / 6)
    assert row["var_Yl"] == pytest.approx(np.var([0.5, 0.5, -0.5], ddof=1))
