"""
Full-scale statistical checks on simulated days.

These take tens of minutes and run only with IMPACT_NUMBA_RUN_SLOW=1.
"""

import functools
import os

import numpy as np
import pytest

from impact_numba import stats
from impact_numba.config import preset
from impact_numba.flowgen import (
    build_day_flow,
    calibrate_base_exponents,
    day_seed,
    generate_correlated_signs,
    mu_of_q,
    resolve_config,
)
from impact_numba.impact import PriceSeries, reconstruct_prices
from impact_numba.proxy import (
    ProxyParams,
    compare_curves,
    linkage_counts,
    metaorder_impacts,
    peak_impact_curve,
    proxy_grouping,
    true_grouping,
)

pytestmark = pytest.mark.skipif(
    os.environ.get("IMPACT_NUMBA_RUN_SLOW") != "1",
    reason="set IMPACT_NUMBA_RUN_SLOW=1 to run full-scale checks",
)

N_DAYS = 40


@functools.lru_cache(maxsize=None)
def simulated_days(scenario, n_days=N_DAYS, priced=True, **overrides):
    cfg = resolve_config(preset(scenario, {"n_days": n_days, **overrides}))
    days = []
    for d in range(n_days):
        events = build_day_flow(cfg, np.random.default_rng(day_seed(cfg.seed, d)), d).events
        if priced:
            prices = reconstruct_prices(events, cfg)
        else:
            zeros = np.zeros(len(events))
            prices = PriceSeries(events.timestamp, zeros, zeros, d)
        days.append((events, prices))
    return cfg, days


class TestSignProcess:
    def test_long_lag_autocorrelation(self):
        n = 4_000_000
        signs = generate_correlated_signs(np.random.default_rng(0), n, 0.1, 0.5, 1_000).astype(np.float64)
        for tau in (10, 30, 100):
            measured = np.mean(signs[:-tau] * signs[tau:])
            assert measured == pytest.approx(0.1 * tau ** -0.5, rel=0.2)


class TestOrderFlow:
    def test_imbalance_scaling_without_volume_dependence(self):
        _, days = simulated_days("NC-NVD-NVF", 20, priced=False)
        grid = stats.build_imbalance_grid(days, (0.0,))
        fit = stats.moment_scaling({T: grid.imbalance(0.0, T) for T in grid.T_values}, 1, n_boot=0)
        assert fit.exponent == pytest.approx(1.5, abs=0.15)

    def test_volume_binned_autocorrelation(self):
        cfg, days = simulated_days("C-VD-VF", priced=False)
        events = [ev for ev, _ in days]
        result = stats.sign_autocorr_by_volume(events, n_boot=0)
        gammas = np.array([curve.gamma for curve in result.bins])
        assert np.all(np.diff(gammas) > 0)
        assert gammas[0] == pytest.approx(0.4, abs=0.15)

        # the top bin decays like the size tail of the metaorders that trade there
        volume = np.concatenate([ev.volume for ev in events])
        top = volume / np.mean([ev.volume.sum() for ev in events]) >= result.edges[-2]
        mu_1, _ = calibrate_base_exponents(cfg)
        expected = float(np.mean(mu_of_q(volume[top], mu_1, cfg.lam, cfg.eps_mu))) - 1.0
        assert gammas[-1] == pytest.approx(expected, abs=0.2)

    def test_autocorrelation_without_volume_dependence(self):
        _, days = simulated_days("C-NVD-VF", priced=False)
        result = stats.sign_autocorr_by_volume([ev for ev, _ in days], n_boot=0)
        for curve in result.bins:
            assert curve.gamma == pytest.approx(0.5, abs=0.1)

    def test_imbalance_exponents_follow_theory(self):
        cfg, days = simulated_days("C-VD-VF", priced=False)
        a_values = (0.0, 0.5, 1.0, 3.0)
        grid = stats.build_imbalance_grid(days, a_values)
        measured = []
        for a in a_values:
            fit = stats.moment_scaling({T: grid.imbalance(a, T) for T in grid.T_values}, 1, n_boot=0)
            measured.append(fit.exponent)
            theory = stats.theory_exponents(cfg, a, 1)
            if a <= theory.a_c - 0.5:
                assert fit.exponent == pytest.approx(theory.imbalance, abs=0.2)
        assert np.all(np.diff(measured) < 0.05)
        assert measured[-1] == pytest.approx(1.0, abs=0.2)


class TestPrices:
    def test_signature_decreases_without_correlation(self):
        _, days = simulated_days("NC-NVD-VF")
        lags, values, _ = stats.signature_plot([p for _, p in days], n_boot=0)
        window = (lags >= 10) & (lags <= 1_000)
        assert np.all(np.diff(values[window]) < 0)

    def test_signature_is_flat_with_correlation(self):
        _, days = simulated_days("C-NVD-VF")
        lags, values, _ = stats.signature_plot([p for _, p in days], n_boot=0)
        window = (lags >= 100) & (lags <= 1_000)
        np.testing.assert_allclose(values[window], values[window].mean(), rtol=0.1)

    def test_signature_is_flat_with_volume_dependence(self):
        _, days = simulated_days("NC-VD-VF", lam=1 / 6, lam_p=1 / 6)
        lags, values, _ = stats.signature_plot([p for _, p in days], n_boot=0)
        window = (lags >= 100) & (lags <= 1_000)
        np.testing.assert_allclose(values[window], values[window].mean(), rtol=0.1)

    def test_price_moments_are_diffusive(self):
        _, days = simulated_days("C-VD-VF")
        lags = np.array([2 ** k for k in range(0, 11)])
        fits = stats.price_moment_scaling([p for _, p in days], (1, 2, 3), lags, n_boot=0)
        for n, fit in fits.items():
            assert fit.exponent == pytest.approx(float(n), abs=0.15)

    def test_aggregated_impact_collapse(self):
        _, days = simulated_days("C-NVD-VF")
        grid = stats.build_imbalance_grid(days, (0.0,))
        result = stats.aggregated_impact(grid, 0.0, stats.COLLAPSE_T, n_boot=0)
        assert result.chi == pytest.approx(0.75, abs=0.05)
        assert result.omega == pytest.approx(0.25, abs=0.05)

    def test_master_curves_overlap(self):
        _, days = simulated_days("C-NVD-VF", 100)
        grid = stats.build_imbalance_grid(days, (0.0,))
        result = stats.aggregated_impact(grid, 0.0, (64, 256, 1_024), n_bins=10, n_boot=0)
        assert result.overlap() < 0.1

    def test_covariance_exponent_is_not_monotonic(self):
        _, days = simulated_days("C-VD-VF")
        grid = stats.build_imbalance_grid(days)
        a, zeta = stats.covariance_surface(grid, n_boot=0).exponent_curve()
        lowest = int(np.argmin(zeta))
        assert 0 < lowest < len(a) - 1

    @pytest.mark.parametrize("scenario", ["NC-NVD-VF", "C-NVD-VF"])
    def test_covariance_exponent_is_monotone_without_volume_dependence(self, scenario):
        _, days = simulated_days(scenario)
        grid = stats.build_imbalance_grid(days)
        _, zeta = stats.covariance_surface(grid, n_boot=0).exponent_curve()
        # no dip below both ends
        assert zeta[1:-1].min() > min(zeta[0], zeta[-1]) - 0.1

    def test_correlation_surface(self):
        cfg, days = simulated_days("C-VD-VF")
        grid = stats.build_imbalance_grid(days)
        surface = stats.correlation_R(grid, n_boot=0)
        a = np.array(surface.a_values)
        for j, _ in enumerate(surface.T_values):
            peak = a[np.nanargmax(surface.values[:, j])]
            assert 0.4 <= peak <= 1.1
        fits = [stats.fit_Ra(surface, T, "B") for T in surface.T_values if 16 <= T <= 1_024]
        assert np.median([f.sigma2 for f in fits]) == pytest.approx(cfg.sigma_l ** 2, abs=0.2)
        assert np.median([f.lam for f in fits]) == pytest.approx(cfg.lam, abs=0.03)

    def test_single_term_fits_pick_the_right_term(self):
        def wins(scenario, T_values):
            _, days = simulated_days(scenario)
            surface = stats.correlation_R(stats.build_imbalance_grid(days), n_boot=0)
            return [stats.fit_Ra(surface, T, "A").aic < stats.fit_Ra(surface, T, "B").aic for T in T_values]

        # without volume dependence the peak stays at a = 1/2 and the extra parameter of B buys nothing
        assert np.mean(wins("C-NVD-VF", [T for T in stats.T_GRID if 16 <= T <= 1_024])) > 0.5
        # with it the peak moves to lambda * ln T, which A cannot follow
        assert not any(wins("C-VD-VF", (256, 512, 1_024)))


@functools.lru_cache(maxsize=None)
def metaorder_impacts_by_day(scenario, n_days):
    cfg, days = simulated_days(scenario, n_days)
    params = ProxyParams(cfg.phi, cfg.mu_m, cfg.s_max)
    truth, proxy = [], []
    for events, prices in days:
        truth.append(metaorder_impacts(true_grouping(events), events, prices))
        rng = np.random.default_rng([cfg.seed, events.day_id, 1])
        proxy.append(metaorder_impacts(proxy_grouping(events.anonymized(), params, rng), events, prices))
    return truth, proxy


class TestProxyMetaorders:
    def test_square_root_law_and_proxy_agreement(self):
        truth, proxy = metaorder_impacts_by_day("C-NVD-VF", 100)
        true_curve = peak_impact_curve(truth, n_boot=0)
        proxy_curve = peak_impact_curve(proxy, label="proxy", n_boot=0)
        assert true_curve.fit.exponent == pytest.approx(0.5, abs=0.05)

        comparison = compare_curves(true_curve, proxy_curve)
        large = (comparison.centers > 1e-3) & np.isfinite(comparison.ratio)
        np.testing.assert_allclose(comparison.ratio[large], 1.0, atol=0.15)

    def test_proxy_curve_is_less_concave_at_small_volumes(self):
        truth, proxy = metaorder_impacts_by_day("C-NVD-VF", 100)
        true_curve = peak_impact_curve(truth, n_boot=0)
        proxy_curve = peak_impact_curve(proxy, label="proxy", n_boot=0)
        assert proxy_curve.local_slope(1e-6, 1e-4) > true_curve.local_slope(1e-6, 1e-4)
        crossover = compare_curves(true_curve, proxy_curve).crossover
        assert crossover is not None
        assert 1e-4 < crossover <= 3e-3

    def test_Y_is_stable_across_batches(self):
        truth, proxy = metaorder_impacts_by_day("C-NVD-VF", 100)
        for label, impacts in (("true", truth), ("proxy", proxy)):
            first, second = impacts[:50], impacts[50:]
            assert min(sum(len(m.impact) for m in b) for b in (first, second)) >= 100_000
            Y_first = peak_impact_curve(first, label=label, n_boot=0).Y
            Y_second = peak_impact_curve(second, label=label, n_boot=0).Y
            assert Y_first == pytest.approx(Y_second, rel=0.1)

    def test_linkage_purity_falls_with_density(self):
        cfg, days = simulated_days("C-NVD-VF", 100)
        params = ProxyParams(cfg.phi, cfg.mu_m, cfg.s_max)
        same = linked = 0
        for events, _ in days[:10]:
            rng = np.random.default_rng([cfg.seed, events.day_id, 1])
            s, k = linkage_counts(proxy_grouping(events.anonymized(), params, rng), events)
            same += s
            linked += k
        # at simulation density neighbouring metaorders interleave
        assert 0.0 < same / linked < 0.9
