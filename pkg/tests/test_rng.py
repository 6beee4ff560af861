import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
import mpmath
from scipy.special import ndtri

from ossbb.rng import (
    RngStream,
    draw_block,
    normal_cdf,
    normal_quantile,
    uniform_matrix,
)


@pytest.mark.parametrize("seed,stream,path,block", [(0, 0, 1, 0), (12345, 7, 3, 9), (2**63 + 5, 2**40, 17, 2**33)])
def test_philox_matches_numpy(seed, stream, path, block):
    # numpy's generator bumps the counter before each output block
    bg = np.random.Philox(key=np.array([seed, stream], dtype=np.uint64))
    st_ = bg.state
    ctr = (block - 1) % 2**64
    st_["state"]["counter"] = np.array([ctr, path - 1 if block == 0 else path, 0, 0], dtype=np.uint64)
    st_["buffer_pos"] = 4
    bg.state = st_
    expect = bg.random_raw(4)
    got = draw_block(np.uint64(seed), np.uint64(stream), np.uint64(path), np.uint64(block))
    assert [int(x) for x in got] == [int(x) for x in expect]


def test_uniform_range_and_determinism():
    a = uniform_matrix(3, 1, 0, 50, 40)
    b = uniform_matrix(3, 1, 0, 50, 40)
    assert np.array_equal(a, b)
    assert np.all((a > 0) & (a < 1))


def test_uniform_mean():
    u = uniform_matrix(11, 0, 0, 1000, 1000).ravel()
    assert abs(u.mean() - 0.5) < 3 * math.sqrt(1 / 12 / u.size)
    assert abs(u.mean() - 0.5) < 0.002


def test_substreams_uncorrelated():
    a = uniform_matrix(5, 4, 0, 1000, 100).ravel()
    b = uniform_matrix(5, 5, 0, 1000, 100).ravel()
    assert abs(np.corrcoef(a, b)[0, 1]) < 0.01


def test_stream_is_index_addressable():
    s = RngStream(seed=9, stream_id=2, path=4)
    seq = s.uniforms(10)
    assert np.array_equal(seq, uniform_matrix(9, 2, 4, 1, 10)[0])
    assert s.split(3).uniforms(1)[0] == uniform_matrix(9, 3, 4, 1, 1)[0, 0]


def test_cdf_examples():
    assert normal_cdf(0.0) == 0.5
    assert normal_cdf(1.0) == pytest.approx(0.8413447460685429, abs=1e-15)


@settings(max_examples=200, deadline=None)
@given(st.floats(-37.0, 37.0))
def test_cdf_reflection(x):
    assert normal_cdf(-x) == pytest.approx(1.0 - normal_cdf(x), abs=1e-14)


@settings(max_examples=200, deadline=None)
@given(st.floats(-37.0, 8.0))
def test_cdf_matches_high_precision(x):
    # relative condition number of Phi at x is about x^2
    ref = float(mpmath.ncdf(mpmath.mpf(x)))
    assert normal_cdf(x) == pytest.approx(ref, rel=4e-16 * (2.0 + x * x))


def test_quantile_examples():
    assert normal_quantile(0.5) == 0.0
    assert normal_quantile(0.841344746) == pytest.approx(1.0, abs=1e-9)
    for p in (1e-10, 0.3, 1 - 1e-10):
        assert normal_cdf(normal_quantile(p)) == pytest.approx(p, abs=1e-12)


@pytest.mark.parametrize("p", [0.0, 1.0, -0.1, 1.5, float("nan")])
def test_quantile_rejects_outside_unit_interval(p):
    with pytest.raises(ValueError):
        normal_quantile(p)


@settings(max_examples=300, deadline=None)
@given(st.floats(1e-12, 1 - 1e-12))
def test_quantile_round_trip(p):
    assert normal_cdf(normal_quantile(p)) == pytest.approx(p, abs=1e-12)


def test_quantile_tail_accuracy():
    p = np.concatenate([np.logspace(-300, -1, 200), 1 - np.logspace(-16, -1, 50)])
    got = normal_quantile(p)
    ref = ndtri(p)
    assert np.max(np.abs(got - ref) / np.abs(ref)) < 1e-14
