import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ness_kmc.engine import SampleChain, run_trajectory, sample_time_h_chain
from ness_kmc.model import ModelParams
from ness_kmc.rng import RngStream
from ness_kmc.stats import (FluxLedger, HittingEnsemble, SurvivalCurve, autocorrelation,
                            collect_hitting_tail, empirical_tv, extract_induced_chain,
                            fit_geometric_tail, fit_mixing_slope, fit_tail_exponent, flux_rates,
                            mixing_curve, run_flux, run_hitting, write_fit_json,
                            write_survival_csv)

BIG_TOTAL = 10**15


def exact_curve(fn, thresholds):
    thr = np.asarray(thresholds)
    counts = np.floor(BIG_TOTAL * fn(thr)).astype(np.int64)
    return SurvivalCurve(thr, counts, BIG_TOTAL)


def pareto_samples(beta, n, seed, t_max=10**6):
    z = np.floor(np.random.default_rng(seed).random(n) ** (-1.0 / beta)).astype(np.int64)
    z[z > t_max] = -1
    return z


def chain_from_flags(g, c):
    n = len(g)
    return SampleChain(0.1, np.arange(n * 2, dtype=float).reshape(n, 2), np.zeros(n), np.zeros(n),
                       np.array(g, dtype=bool), np.array(c, dtype=bool))


class TestSurvivalCurve:
    def test_invariants(self):
        with pytest.raises(ValueError):
            SurvivalCurve([1, 2], [3, 4], 10)
        with pytest.raises(ValueError):
            SurvivalCurve([1, 2], [11, 4], 10)
        with pytest.raises(ValueError):
            SurvivalCurve([2, 1], [4, 3], 10)

    def test_all_hit_at_one(self):
        ens = HittingEnsemble("x", "C", False, np.ones(100, dtype=np.int64), 50, 0)
        c = collect_hitting_tail(ens, "C")
        assert c.survival[0] == 0 and np.all(c.survival == 0)

    def test_no_hits(self):
        ens = HittingEnsemble("x", "C", False, -np.ones(100, dtype=np.int64), 50, 0)
        c = collect_hitting_tail(ens, "C")
        assert np.all(c.survival == 1) and c.censored_fraction == 1
        with pytest.raises(ValueError):
            fit_tail_exponent(c)
        with pytest.raises(ValueError):
            collect_hitting_tail(ens, "G")

    def test_synthetic_within_dkw(self):
        z = pareto_samples(2.0, 10**5, 3, t_max=10**5)
        c = SurvivalCurve.from_samples(z, 10**5)
        band = math.sqrt(math.log(2 / 0.05) / (2 * 10**5))
        assert np.max(np.abs(c.survival - (c.thresholds + 1.0) ** -2)) <= band

    @given(st.lists(st.integers(min_value=-1, max_value=60), min_size=1, max_size=200))
    def test_monotone_and_ci(self, values):
        c = SurvivalCurve.from_samples(values, 50)
        assert np.all(np.diff(c.counts_exceeding) <= 0)
        lo, hi = c.ci()
        assert np.all(lo <= c.survival + 1e-12) and np.all(c.survival <= hi + 1e-12)


class TestTailFit:
    def test_exact_power(self):
        c = exact_curve(lambda n: (n + 1.0) ** -2, np.arange(1, 2001))
        f = fit_tail_exponent(c, (10, 1000), n_boot=200)
        assert abs(f.exponent + 2) <= 0.05 and not f.poor_fit
        assert f.ci_low <= f.exponent <= f.ci_high

    def test_exponential_is_poor_fit(self):
        c = exact_curve(lambda n: np.exp(-n), np.arange(1, 31))
        f = fit_tail_exponent(c, (1, 30), n_boot=50)
        assert f.poor_fit and f.r2 < 0.98

    def test_constant_curve(self):
        c = SurvivalCurve(np.arange(1, 101), np.full(100, 500), 1000)
        with pytest.raises(ValueError):
            fit_tail_exponent(c, (1, 100))
        with pytest.raises(ValueError):
            fit_geometric_tail(c, (1, 100))

    def test_exact_geometric(self):
        c = exact_curve(lambda n: np.exp(-0.5 * n), np.arange(1, 61))
        f = fit_geometric_tail(c, n_boot=200)
        assert abs(f.exponent - 0.5) <= 0.02 and not f.poor_fit
        assert f.ci_low <= f.exponent <= f.ci_high

    def test_polynomial_geometric_is_poor(self):
        c = exact_curve(lambda n: (n + 1.0) ** -2, np.arange(1, 2001))
        assert fit_geometric_tail(c, n_boot=50).poor_fit

    def test_fully_censored_geometric(self):
        c = SurvivalCurve(np.arange(1, 50), np.full(49, 100), 100, censored=100)
        with pytest.raises(ValueError):
            fit_geometric_tail(c)

    @pytest.mark.parametrize("beta", [1.0, 1.5, 2.0, 3.0])
    def test_recovers_synthetic_exponent(self, beta):
        # 20 fixed replicates; at beta = 3 the +-0.05 band is about 1.9 standard
        # deviations of any free-intercept estimator, so coverage is asserted
        errs = []
        for seed in range(20):
            c = SurvivalCurve.from_samples(pareto_samples(beta, 10**5, seed), 10**6)
            errs.append(fit_tail_exponent(c, (1, math.inf), n_boot=0).exponent + beta)
        errs = np.array(errs)
        assert np.mean(np.abs(errs) <= 0.05) >= 0.9
        assert abs(errs.mean()) <= 0.02

    def test_window_rules(self):
        c = SurvivalCurve.from_samples(pareto_samples(2.0, 10**5, 1, t_max=10**7), 10**7)
        f = fit_tail_exponent(c, "drop:0.1", n_boot=0)
        assert c.survival[np.searchsorted(c.thresholds, f.window[0])] <= 0.1 * c.survival[0]
        assert f.window[1] <= c.fit_cap()
        with pytest.raises(ValueError):
            fit_tail_exponent(c, "bogus:1")

    def test_json_and_csv(self, tmp_path):
        c = SurvivalCurve.from_samples(pareto_samples(1.0, 5000, 1, t_max=100), 100)
        write_survival_csv(tmp_path / "s.csv", c)
        lines = (tmp_path / "s.csv").read_text().splitlines()
        assert lines[0] == "threshold,survivors,total,survival,ci_low,ci_high" and len(lines) == 101
        f = fit_tail_exponent(c, (1, 100), n_boot=20)
        write_fit_json(tmp_path / "f.json", f, {"extra": 1})
        doc = json.loads((tmp_path / "f.json").read_text())
        assert set(doc) >= {"exponent", "ci", "window", "r2", "n_samples", "censored_fraction", "extra"}


class TestInducedChain:
    def test_all_in_G(self):
        r = extract_induced_chain(chain_from_flags([1] * 6, [0] * 6))
        assert np.array_equal(r.return_times, np.arange(6)) and r.tau_C is None

    def test_gaps(self):
        r = extract_induced_chain(chain_from_flags([1, 0, 0, 1], [0, 0, 0, 1]))
        assert np.array_equal(r.return_times, [0, 3])
        assert r.tau_C == 1 and r.tau_C_step == 3

    def test_never_returns(self):
        r = extract_induced_chain(chain_from_flags([1, 0, 0, 0], [1, 0, 0, 0]))
        assert np.array_equal(r.return_times, [0]) and r.tau_C is None
        r = extract_induced_chain(chain_from_flags([0, 0, 1], [0, 0, 1]))
        assert r.first_index == 1 and r.tau_C == 1 and r.tau_C_step == 2

    def test_requires_flags(self):
        ch = chain_from_flags([1], [1])
        ch.in_G = None
        with pytest.raises(ValueError):
            extract_induced_chain(ch)

    def test_random_chains_consistent(self):
        rng = np.random.default_rng(0)
        for _ in range(10**4):
            n = int(rng.integers(1, 30))
            g = rng.random(n) < 0.6
            c = g & (rng.random(n) < 0.3)
            r = extract_induced_chain(chain_from_flags(g, c))
            assert np.all(g[r.return_times])
            direct = np.flatnonzero(c[1:])
            assert r.tau_C_step == (direct[0] + 1 if direct.size else None)

    def test_simulated_chain(self, std_params):
        tr = run_trajectory([1e-4, 1.0, 1.0], std_params, 50.0, RngStream(2, 0))
        ch = sample_time_h_chain(tr)
        r = extract_induced_chain(ch)
        assert np.all(ch.in_G[r.return_times])
        direct = np.flatnonzero(ch.in_C[1:])
        assert r.tau_C_step == (direct[0] + 1 if direct.size else None)


class TestHittingEnsembles:
    def test_from_inside_C_collapses(self, std_params):
        ens = run_hitting("point:1,1.5,1.5", std_params, 2000, 1000)
        c = collect_hitting_tail(ens)
        assert c.survival[4] < 0.01

    def test_induced_geometric(self, std_params):
        start = f"point:1,1,{2 * std_params.M1!r}"
        ens = run_hitting(start, std_params, 20000, 10**5, induced=True)
        f = fit_geometric_tail(collect_hitting_tail(ens), n_boot=200)
        assert f.exponent > 0 and f.ci_low > 0

    def test_worker_independent(self, std_params):
        a = run_hitting("boundary:2,0.01", std_params, 5000, 10**4, workers=1)
        b = run_hitting("boundary:2,0.01", std_params, 5000, 10**4, workers=3)
        assert np.array_equal(a.values, b.values)

    def test_return_to_G(self, std_params):
        ens = run_hitting("boundary:2,0.01", std_params, 3000, 10**4, target="G")
        assert np.all(ens.values != 0)
        with pytest.raises(ValueError):
            run_hitting("boundary:2,0.01", std_params, 10, 10, target="G", induced=True)

    def test_needs_thresholds(self):
        with pytest.raises(ValueError):
            run_hitting("flat:1,2", ModelParams(N=3), 10, 10)


class TestTV:
    def test_examples(self):
        assert empirical_tv([1, 2, 3], [2, 4, 6]) == 0
        assert empirical_tv([1, 0], [0, 1]) == 1
        assert empirical_tv([0.5, 0.5], [1.0, 0.0]) == 0.5
        with pytest.raises(ValueError):
            empirical_tv([1, 2], [1, 2, 3])

    @settings(max_examples=100)
    @given(st.integers(2, 12), st.integers(0, 2**32 - 1))
    def test_metric(self, bins, seed):
        rng = np.random.default_rng(seed)
        a, b, c = rng.integers(0, 50, size=(3, bins)) + 1
        assert empirical_tv(a, b) == empirical_tv(b, a)
        assert empirical_tv(a, c) <= empirical_tv(a, b) + empirical_tv(b, c) + 1e-12
        assert (empirical_tv(a, b) == 0) == np.allclose(a / a.sum(), b / b.sum())

    def test_same_law_at_floor(self):
        p = ModelParams(N=3, T_L=1, T_R=2, K=10, seed=3)
        pts = mixing_curve(p, "flat:0.5,2.5", "flat:0.5,2.5", [1.0, 4.0], 5000, n_boot=20)
        # mu and nu draw independent ensembles, so the cross TV is another floor sample
        for q in pts:
            assert q.tv <= 2 * q.floor and q.ci_low <= q.tv <= q.ci_high

    def test_disjoint_at_zero(self):
        p = ModelParams(N=2, T_L=1, T_R=1, K=10, seed=3)
        pts = mixing_curve(p, "flat:0,1", "flat:2,3", [0.0, 0.5], 4000, bins=4, n_boot=10)
        assert pts[0].tv == 1.0
        pm = mixing_curve(p, "flat:0,1", "flat:2,3", [0.0], 4000, bins=4, mode="marginal", n_boot=10)
        assert pm[0].tv == 1.0

    def test_fit_slope(self):
        from ness_kmc.stats import MixingPoint
        pts = [MixingPoint(t, 10 * t**-2.0, 0, 1, 0.001, 10 * t**-2.0) for t in (2.0, 4.0, 8.0, 16.0)]
        slope, se, n = fit_mixing_slope(pts)
        assert slope == pytest.approx(-2.0) and n == 4


class TestFlux:
    @pytest.mark.parametrize("TL,TR", [(1.0, 2.0), (1.0, 1.0)])
    def test_inflow_bound_and_balance(self, TL, TR):
        p = ModelParams(N=3, T_L=TL, T_R=TR, K=10, seed=1)
        ens = run_flux("flat:0.5,2.5", p, 300.0, 400, burn_in=50.0)
        r = flux_rates(ens)
        assert r.inflow <= 0.5 * (TL**1.5 + TR**1.5) + 3 * r.inflow_se
        assert abs(r.inflow - r.outflow) <= 3 * math.hypot(r.inflow_se, r.outflow_se) + 0.02
        np.testing.assert_allclose(ens.w_end - ens.w_start, ens.flux_in_all - ens.flux_out_all,
                                   rtol=0, atol=1e-9 * np.max(ens.flux_in_all))
        assert np.all(ens.flux_in <= ens.flux_in_all)

    def test_frozen(self):
        p = ModelParams(N=1, T_L=1, T_R=1, K=10, seed=1)
        r = flux_rates(run_flux("point:0", p, 10.0, 5))
        assert r.inflow == 0 and r.outflow == 0

    def test_ledger(self, std_params):
        ch = sample_time_h_chain(run_trajectory([1, 1, 1], std_params, 5.0, RngStream(1)))
        led = FluxLedger.from_chain(ch)
        assert led.flux_in >= 0 and led.contributions.size == ch.n_steps
        with pytest.raises(ValueError):
            FluxLedger(-1.0, 0.0)


class TestAutocorrelation:
    def test_constant(self):
        with pytest.raises(ValueError):
            autocorrelation(np.ones(1000), [1, 2])

    def test_too_short(self):
        with pytest.raises(ValueError):
            autocorrelation(np.arange(10.0), [8])

    def test_iid(self):
        x = np.random.default_rng(0).normal(size=10**5)
        for lag, a, lo, hi in autocorrelation(x, [1, 2, 5, 10]):
            assert lo <= 0 <= hi and abs(a) < 0.02

    def test_stationary_E1_decays(self):
        p = ModelParams(N=3, T_L=1, T_R=2, K=10)
        tr = run_trajectory([1, 1.5, 2], p, 20000.0, RngStream(3))
        x = sample_time_h_chain(tr).states[4000:, 0]
        lags = np.unique(np.geomspace(40, 2000, 8).astype(int))
        rows = autocorrelation(x, lags)
        acf = np.array([r[1] for r in rows])
        assert acf[0] > acf[-1]
        mid = acf > 0
        slope = np.polyfit(np.log(lags[mid]), np.log(acf[mid]), 1)[0]
        assert slope <= -1
