import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from ness_kmc.model import (Event, ModelParams, bath_exchange, clock_rates, default_h,
                            energy_state, exchange_pair, rate)

energies = st.floats(min_value=0.0, max_value=1e6, allow_nan=False)
fractions = st.floats(min_value=1e-9, max_value=1 - 1e-9)


class TestRate:
    def test_examples(self):
        assert rate(4, 9, 10) == 2
        assert rate(0, 5, 10) == 0
        assert rate(400, 900, 10) == 10

    @pytest.mark.parametrize("a,b", [(-1, 1), (1, -1e-300), (math.nan, 1), (1, math.inf)])
    def test_domain_error(self, a, b):
        with pytest.raises(ValueError):
            rate(a, b, 10)

    @given(energies, energies, st.floats(min_value=1e-3, max_value=1e3))
    def test_bounds(self, a, b, K):
        r = rate(a, b, K)
        assert 0 <= r <= K
        assert r == min(K, math.sqrt(min(a, b)))


class TestExchange:
    def test_examples(self):
        assert exchange_pair(2, 4, 0.5) == (3, 3)
        assert exchange_pair(1, 3, 0.25) == (1, 3)
        a, b = exchange_pair(5, 0, 0.9)
        assert a == pytest.approx(4.5) and b == pytest.approx(0.5)

    @pytest.mark.parametrize("p", [0.0, 1.0, -0.1, 1.5])
    def test_p_outside(self, p):
        with pytest.raises(ValueError):
            exchange_pair(1, 1, p)

    @given(energies, energies, fractions)
    def test_conserves(self, a, b, p):
        x, y = exchange_pair(a, b, p)
        assert x >= 0 and y >= 0
        assert abs((x + y) - (a + b)) <= 1e-12 * max(a + b, 1e-300)

    def test_bath(self):
        assert bath_exchange(1, 1, 0.5) == 1
        assert bath_exchange(0, 2, 0.75) == 1.5
        assert bath_exchange(3, 0, 1 - 1e-15) == pytest.approx(3)
        with pytest.raises(ValueError):
            bath_exchange(1, -1, 0.5)
        with pytest.raises(ValueError):
            bath_exchange(1, 1, 1.0)


class TestClockRates:
    def test_examples(self):
        p = ModelParams(N=2, T_L=1, T_R=1, K=10)
        r = clock_rates([4, 9], p)
        assert np.array_equal(r, [1, 2, 1]) and r.sum() == 4
        assert np.array_equal(clock_rates([0], ModelParams(N=1, T_L=1, T_R=2)), [0, 0])
        r = clock_rates([100, 100, 100], ModelParams(N=3, T_L=1, T_R=2, K=10))
        np.testing.assert_allclose(r, [1, 10, 10, math.sqrt(2)], rtol=0, atol=1e-15)

    @given(st.lists(energies, min_size=1, max_size=8))
    def test_total_bound(self, e):
        p = ModelParams(N=len(e), T_L=1, T_R=2, K=10)
        r = clock_rates(e, p)
        assert r.size == p.N + 1 == p.n_clocks
        assert np.all((r >= 0) & (r <= p.K))
        assert r.sum() <= (p.N + 1) * p.K

    def test_wrong_length(self):
        with pytest.raises(ValueError):
            clock_rates([1, 2], ModelParams(N=3))


class TestParams:
    def test_default_h(self):
        p = ModelParams(N=3)
        assert p.h == default_h(3, 10.0) == 1 / 40
        assert p.h * (p.N + 1) * p.K < 1.59

    @pytest.mark.parametrize("kw", [
        dict(N=0), dict(N=2.5), dict(K=7.9), dict(eta=0.25), dict(eta=0.0),
        dict(h=0.04), dict(M0=1.0), dict(M1=0.5), dict(seed=-1), dict(seed=2**64),
        dict(T_L=0.0), dict(e_min=-1.0),
    ])
    def test_invalid(self, kw):
        base = dict(N=3, T_L=1.0, T_R=2.0, K=10.0)
        base.update(kw)
        with pytest.raises(ValueError):
            ModelParams(**base)

    def test_thresholds(self):
        p = ModelParams(N=3)
        assert not p.calibrated
        q = p.with_thresholds(100, 5)
        assert q.calibrated and q.M0 == 100.0 and p.M0 is None


class TestTypes:
    def test_event_invariants(self):
        Event(1, 0.0, 0.5, 1.0)
        for bad in (dict(p=0.0), dict(p=1.0), dict(time=-1.0), dict(bath_draw=-1.0)):
            kw = dict(clock=1, time=0.0, p=0.5, bath_draw=1.0)
            kw.update(bad)
            with pytest.raises(ValueError):
                Event(**kw)

    def test_energy_state(self):
        assert energy_state([1, 2]).dtype == np.float64
        for bad in ([-1.0], [math.nan], [], [math.inf]):
            with pytest.raises(ValueError):
                energy_state(bad)
        with pytest.raises(ValueError):
            energy_state([1, 2], N=3)
