import pytest

from ossbb.convergence import GridPoint, InsufficientPrecision, WeakOrderFit, payoff_bounds, weak_order


@pytest.mark.parametrize("estimator", ["bb", "oss_bb"])
def test_payoff_bounded_by_barrier_minus_strike(t1, estimator):
    model, opt, s0 = t1
    for row in payoff_bounds(estimator, model, opt, s0, (4, 32, 256), M=20_000):
        assert row["max_payoff"] <= row["bound"]
        assert row["variance"] <= row["bound"] ** 2


def test_payoff_bounds_rejects_unknown(t1):
    with pytest.raises(ValueError):
        payoff_bounds("nope", *t1, (4,), M=10)


def test_weak_order_rejects_unknown(t1):
    with pytest.raises(ValueError):
        weak_order("european", *t1)


def test_insufficient_precision_when_bias_hidden(t1):
    # a handful of paths cannot resolve any bias, and the cap forbids escalation
    with pytest.raises(InsufficientPrecision):
        weak_order("oss_bb", *t1, n_grid=(64, 128, 256), M=200, M_cap=200)


def test_baseline_order_half(t1):
    fit = weak_order("baseline", *t1, n_grid=(8, 16, 32, 64, 128), M=200_000, M_cap=800_000)
    assert len(fit.used) >= 3
    assert fit.slope == pytest.approx(0.5, abs=0.15)
    # the discretely monitored estimator overprices
    assert all(p.bias > 0 for p in fit.used)


def test_fit_helpers():
    pts = [GridPoint(N=n, h=1 / n, mean=1 + 1 / n, std_error=1e-6, bias=1 / n, M=10) for n in (8, 16, 32)]
    fit = WeakOrderFit("bb", 1.0, 0.0, pts, 1.0)
    assert len(fit.used) == 3
    assert fit.bias_bound(0.5) == pytest.approx(0.5)
    assert pts[0].row("bb")["N"] == 8
    assert not GridPoint(N=8, h=0.125, mean=1.0, std_error=1.0, bias=1.0, M=10).resolved
