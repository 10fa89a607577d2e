"""
Tests for order-flow and price diagnostics.
"""

import math

import numpy as np
import pytest

from impact_numba.config import SimulationConfig, preset
from impact_numba.errors import FitError, NumericalError
from impact_numba.flowgen import EventFlow
from impact_numba.impact import PriceSeries
from impact_numba.stats import (
    A_GRID,
    COLLAPSE_T,
    T_GRID,
    CollapseResult,
    ImbalanceGrid,
    RaFit,
    Surface,
    aggregated_impact,
    build_imbalance_grid,
    correlation_R,
    covariance_surface,
    critical_covariance_exponent,
    fit_power_law,
    fit_Ra,
    imbalance_moments,
    imbalance_windows,
    moment_scaling,
    price_moment_scaling,
    sign_autocorr_by_volume,
    signature_plot,
    theory_exponents,
)


def make_flow(sign, volume, day_id=0):
    n = len(sign)
    return EventFlow(
        timestamp=np.arange(n, dtype=np.float64),
        volume=np.asarray(volume, dtype=np.float64),
        sign=np.asarray(sign, dtype=np.int8),
        rank=np.ones(n, dtype=np.int64),
        parent_id=np.arange(n, dtype=np.float64),
        beta_q=np.full(n, 0.25),
        day_id=day_id,
    )


def random_walk(rng, n, day_id=0):
    p = np.cumsum(rng.standard_normal(n))
    after = np.append(p[1:], p[-1] + rng.standard_normal())
    return PriceSeries(np.arange(n, dtype=np.float64), p, after, day_id)


def synthetic_grid(I_by_T, D_by_T, a=0.0):
    T_values = tuple(sorted(I_by_T))
    return ImbalanceGrid(
        a_values=(a,),
        T_values=T_values,
        I={(a, T): I_by_T[T] for T in T_values},
        Delta={T: D_by_T[T] for T in T_values},
    )


class TestGrids:
    """Grid constants."""

    def test_window_lengths(self):
        assert T_GRID[0] == 8 and T_GRID[-1] == 8192
        assert len(T_GRID) == 11

    def test_exponent_grid(self):
        assert A_GRID[0] == -0.5 and A_GRID[-1] == 3.0
        np.testing.assert_allclose(np.diff(A_GRID), 0.25)

    def test_collapse_lengths(self):
        assert COLLAPSE_T == (64, 128, 256, 512, 1024)


class TestPowerLawFit:
    """Log-log and offset power-law fits."""

    def test_exact_power_law(self):
        x = np.logspace(0, 3, 20)
        fit = fit_power_law(x, 3.0 * x ** 0.5)
        assert fit.exponent == pytest.approx(0.5, abs=1e-12)
        assert fit.prefactor == pytest.approx(3.0, rel=1e-12)
        assert fit.stderr == pytest.approx(0.0, abs=1e-10)
        np.testing.assert_allclose(fit.predict(x), 3.0 * x ** 0.5, rtol=1e-10)

    def test_fit_range(self):
        x = np.logspace(0, 3, 31)
        y = np.where(x < 10, x ** 2.0, 100.0 * (x / 10.0) ** 0.5)
        fit = fit_power_law(x, y, fit_range=(10.0, 1_000.0))
        assert fit.exponent == pytest.approx(0.5, abs=1e-10)
        assert fit.fit_range[0] >= 10.0

    def test_offset_model(self):
        x = 2.0 ** np.arange(0, 11)
        fit = fit_power_law(x, 2.0 + 3.0 * x ** 0.7, model="offset")
        assert fit.exponent == pytest.approx(0.7, rel=1e-3)
        assert fit.offset == pytest.approx(2.0, rel=1e-2)

    def test_too_few_points(self):
        with pytest.raises(FitError):
            fit_power_law([1.0], [1.0])

    def test_non_positive_values(self):
        with pytest.raises(FitError):
            fit_power_law([1.0, 2.0, 3.0], [1.0, -1.0, 2.0])

    def test_unknown_model(self):
        with pytest.raises(FitError):
            fit_power_law([1.0, 2.0, 3.0], [1.0, 2.0, 3.0], model="spline")


class TestSignAutocorrelation:
    """Volume-binned sign autocorrelation."""

    def setup_method(self):
        rng = np.random.default_rng(3)
        self.days = [
            make_flow(np.ones(3_000), rng.lognormal(3.0, 1.0, 3_000), day_id=d) for d in range(3)
        ]

    def test_constant_signs(self):
        result = sign_autocorr_by_volume(self.days, n_bins=3, lags=[1, 10, 100], fit_range=(1, 100),
                                         min_events=100, n_boot=10)
        assert len(result.bins) == 3
        assert len(result.edges) == 4
        for curve in result.bins + [result.unconditional]:
            np.testing.assert_allclose(curve.values, 1.0)
            assert abs(curve.gamma) < 1e-10

    def test_bin_counts_cover_the_flow(self):
        result = sign_autocorr_by_volume(self.days, n_bins=4, lags=[1, 2], fit_range=(1, 2),
                                         min_events=1, n_boot=0)
        assert sum(c.n_events for c in result.bins) == 9_000
        assert result.unconditional.n_events == 9_000

    def test_sparse_bins_are_empty(self):
        result = sign_autocorr_by_volume(self.days, n_bins=4, lags=[1, 10], min_events=10 ** 9, n_boot=0)
        assert all(curve.is_empty for curve in result.bins)
        assert math.isnan(result.bins[0].gamma)

    def test_iid_signs(self):
        rng = np.random.default_rng(4)
        day = make_flow(np.where(rng.random(200_000) < 0.5, -1, 1), np.ones(200_000))
        result = sign_autocorr_by_volume([day], n_bins=1, lags=[1, 5, 50], min_events=1, n_boot=0)
        assert np.all(np.abs(result.unconditional.values) < 3 / math.sqrt(200_000) * 2)

    def test_no_events(self):
        with pytest.raises(NumericalError):
            sign_autocorr_by_volume([make_flow([], [])])

    def test_volume_scales_agree_on_equal_days(self):
        rng = np.random.default_rng(6)
        volume = rng.lognormal(3.0, 1.0, 3_000)
        days = [make_flow(np.ones(3_000), rng.permutation(volume), day_id=d) for d in range(3)]
        kwargs = dict(n_bins=3, lags=[1, 10], fit_range=(1, 10), min_events=100, n_boot=0)
        pooled = sign_autocorr_by_volume(days, volume_scale="pooled", **kwargs)
        per_day = sign_autocorr_by_volume(days, volume_scale="day", **kwargs)
        np.testing.assert_allclose(pooled.edges, per_day.edges, rtol=1e-12)
        assert [c.n_events for c in pooled.bins] == [c.n_events for c in per_day.bins]

    def test_pooled_scale_ignores_day_volume(self):
        volume = np.random.default_rng(7).lognormal(3.0, 1.0, 3_000)
        days = [make_flow(np.ones(3_000), volume, day_id=0), make_flow(np.ones(3_000), 4.0 * volume, day_id=1)]
        kwargs = dict(n_bins=3, lags=[1, 10], fit_range=(1, 10), min_events=1, n_boot=0)
        per_day = sign_autocorr_by_volume(days, volume_scale="day", **kwargs)
        pooled = sign_autocorr_by_volume(days, volume_scale="pooled", **kwargs)
        # per-day scaling maps both days onto the same rescaled volumes
        assert per_day.edges[-1] / per_day.edges[0] < pooled.edges[-1] / pooled.edges[0]

    def test_unknown_volume_scale(self):
        with pytest.raises(NumericalError):
            sign_autocorr_by_volume(self.days, volume_scale="median")


class TestImbalance:
    """Volume-weighted window imbalances."""

    def test_windows(self):
        flow = make_flow(np.ones(10), np.full(10, 2.0))
        np.testing.assert_allclose(imbalance_windows(flow, 1.0, 4), [8.0, 8.0])
        np.testing.assert_allclose(imbalance_windows(flow, 0.0, 5), [5.0, 5.0])

    def test_windows_match_brute_force(self):
        rng = np.random.default_rng(5)
        sign = np.where(rng.random(1_000) < 0.5, -1, 1)
        volume = rng.lognormal(3.0, 1.0, 1_000)
        flow = make_flow(sign, volume)
        out = imbalance_windows(flow, 0.75, 64)
        for w in range(len(out)):
            expected = 0.0
            for i in range(w * 64, (w + 1) * 64):
                expected += sign[i] * volume[i] ** 0.75
            assert out[w] == pytest.approx(expected, rel=1e-10, abs=1e-9)

    def test_invalid_window(self):
        with pytest.raises(NumericalError):
            imbalance_windows(make_flow(np.ones(4), np.ones(4)), 0.0, 0)

    def test_grid_windows_do_not_straddle_days(self):
        rng = np.random.default_rng(6)
        days = []
        for d in range(2):
            n = 100 + 7 * d
            flow = make_flow(np.ones(n), np.ones(n), d)
            days.append((flow, random_walk(rng, n, d)))
        grid = build_imbalance_grid(days, (0.0, 1.0), (8, 16))
        assert grid.n_windows(8) == 100 // 8 + 107 // 8
        np.testing.assert_allclose(grid.imbalance(0.0, 16), 16.0)
        prices = days[1][1]
        assert grid.delta(8)[-1] == pytest.approx(prices.after[103] - prices.prices[96])

    def test_grid_length_mismatch(self):
        flow = make_flow(np.ones(10), np.ones(10))
        prices = random_walk(np.random.default_rng(0), 9)
        with pytest.raises(NumericalError):
            build_imbalance_grid([(flow, prices)], (0.0,), (4,))

    def test_moments_surface(self):
        rng = np.random.default_rng(7)
        I = {T: rng.standard_normal(500) for T in (8, 16)}
        D = {T: rng.standard_normal(500) for T in (8, 16)}
        surface = imbalance_moments(synthetic_grid(I, D), n=2, n_boot=10)
        assert surface.at(0.0, 8) == pytest.approx(np.mean(I[8] ** 4))
        assert np.all(np.isfinite(surface.stderr))

    def test_diffusive_moment_scaling(self):
        rng = np.random.default_rng(8)
        values = {T: math.sqrt(T) * rng.standard_normal(20_000) for T in T_GRID[:8]}
        fit = moment_scaling(values, n=1, n_boot=20)
        assert abs(fit.exponent - 1.0) < 0.05
        assert fit.stderr > 0

    def test_moment_scaling_needs_support(self):
        rng = np.random.default_rng(9)
        values = {T: rng.standard_normal(100) for T in (8, 16, 32)}
        with pytest.raises(NumericalError):
            moment_scaling(values, n_boot=0)


class TestTheory:
    """Predicted exponents."""

    def setup_method(self):
        self.cfg = SimulationConfig()

    def test_imbalance_exponent(self):
        assert theory_exponents(self.cfg, 0.0, 1).imbalance == pytest.approx(1.5)
        assert theory_exponents(self.cfg, 1.0, 1).imbalance == pytest.approx(1.5 - 2 * 0.125)
        assert theory_exponents(self.cfg, 3.0, 1).imbalance == 1.0

    def test_critical_imbalance_exponent(self):
        assert theory_exponents(self.cfg, 0.0, 1).a_c == pytest.approx(2.0)
        assert theory_exponents(self.cfg, 0.0, 2).a_c == pytest.approx((1 - 1.5 / 4) / 0.125)

    def test_critical_covariance_exponent(self):
        assert critical_covariance_exponent(self.cfg) == pytest.approx(1.0 / 6.0, rel=1e-6)

    def test_covariance_branches(self):
        below = theory_exponents(self.cfg, 0.0)
        above = theory_exponents(self.cfg, 1.0)
        assert below.covariance == pytest.approx(2.5 - (1.5 + 0.5 * 0.125))
        assert above.covariance == pytest.approx(1.0 - (0.25 - 1.5 * 0.25))

    def test_volume_independent(self):
        cfg = preset("NC-NVD-VF")
        result = theory_exponents(cfg, 2.0, 1)
        assert result.imbalance == pytest.approx(1.5)
        assert result.a_c == math.inf
        assert result.a_c_prime is None
        assert critical_covariance_exponent(cfg) is None


class TestPriceDiagnostics:
    """Signature plot and price-moment scaling."""

    def setup_method(self):
        rng = np.random.default_rng(10)
        self.walks = [random_walk(rng, 50_000, d) for d in range(4)]

    def test_signature_of_random_walk_is_flat(self):
        lags, values, stderr = signature_plot(self.walks, lags=[1, 10, 100], n_boot=20)
        np.testing.assert_array_equal(lags, [1, 10, 100])
        np.testing.assert_allclose(values, 1.0, rtol=0.15)
        assert np.all(stderr > 0)

    def test_signature_single_day_has_zero_stderr(self):
        _, _, stderr = signature_plot(self.walks[:1], lags=[1, 2], n_boot=20)
        np.testing.assert_array_equal(stderr, 0.0)

    def test_diffusive_price_moments(self):
        fits = price_moment_scaling(self.walks, n_list=(1,), lags=[1, 2, 4, 8, 16, 32, 64, 128], n_boot=0)
        assert abs(fits[1].exponent - 1.0) < 0.1

    def test_constant_prices(self):
        flat = PriceSeries(np.arange(100.0), np.zeros(100), np.zeros(100))
        with pytest.raises(NumericalError):
            price_moment_scaling([flat], n_list=(1,), lags=[1, 2, 4], n_boot=0)


class TestAggregatedImpact:
    """Conditional price change and its collapse exponents."""

    def setup_method(self):
        rng = np.random.default_rng(11)
        self.chi, self.omega = 0.7, 0.5
        I, D = {}, {}
        for T in COLLAPSE_T:
            I[T] = T ** self.chi * rng.standard_normal(20_000)
            D[T] = T ** (self.chi - self.omega) * np.tanh(I[T] / T ** self.chi)
        self.grid = synthetic_grid(I, D)

    def test_recovers_exponents(self):
        result = aggregated_impact(self.grid, n_boot=0)
        assert abs(result.chi - self.chi) <= 0.03
        assert abs(result.omega - self.omega) <= 0.03
        assert result.T_values == COLLAPSE_T
        for T, (x, y) in result.master_curve.items():
            assert len(x) == 40 and len(y) == 40

    def test_missing_window_length(self):
        with pytest.raises(NumericalError):
            aggregated_impact(self.grid, T_values=(64, 2048), n_boot=0)

    def test_constant_price_change(self):
        I = {T: np.random.default_rng(T).standard_normal(100) for T in (64, 128)}
        D = {T: np.ones(100) for T in (64, 128)}
        with pytest.raises(NumericalError):
            aggregated_impact(synthetic_grid(I, D), T_values=(64, 128), n_boot=0)

    def test_collapsed_curves_overlap(self):
        result = aggregated_impact(self.grid, n_boot=0)
        assert result.overlap() < 0.1
        assert result.overlap((64, 256, 1024)) < 0.1

    def test_overlap_by_hand(self):
        centers = np.array([0.0, 1.0, 2.0])
        result = CollapseResult(
            chi=0.5, omega=0.5, slopes={}, bin_edges=np.arange(4.0), distance=0.0,
            master_curve={1: (centers, np.array([1.0, 1.0, np.nan])), 2: (centers, np.array([3.0, 3.0, 5.0]))},
            T_values=(1, 2),
        )
        # mean curve is 2 on the shared bins, each curve sits 1 away
        assert result.overlap() == pytest.approx(0.5)
        with pytest.raises(NumericalError):
            result.overlap((1, 4))
        with pytest.raises(NumericalError):
            result.overlap((1,))

    def test_overlap_weights_bins_by_count(self):
        centers = np.array([0.0, 1.0])
        result = CollapseResult(
            chi=0.5, omega=0.5, slopes={}, bin_edges=np.arange(3.0), distance=0.0,
            master_curve={1: (centers, np.array([1.0, 2.0])), 2: (centers, np.array([3.0, 2.0]))},
            T_values=(1, 2), master_counts={1: np.array([3, 1]), 2: np.array([4, 2])},
        )
        # weights 3 and 1; only the first bin disagrees
        assert result.overlap() == pytest.approx(math.sqrt(0.75) / 2.0)

    def test_collapse_counts_windows_per_bin(self):
        result = aggregated_impact(self.grid, n_boot=0)
        for T in COLLAPSE_T:
            counts = result.master_counts[T]
            assert counts.sum() <= 20_000
            assert np.all(np.isnan(result.master_curve[T][1][counts < 5]))


class TestCovarianceAndCorrelation:
    """Price-imbalance covariance and correlation surfaces."""

    def setup_method(self):
        rng = np.random.default_rng(12)
        self.T_values = (8, 16, 32, 64, 128, 256)
        self.I = {T: math.sqrt(T) * rng.standard_normal(20_000) for T in self.T_values}

    def test_covariance_exponent(self):
        D = {T: 0.5 * T ** -0.25 * self.I[T] for T in self.T_values}
        surface = covariance_surface(synthetic_grid(self.I, D), n_boot=20)
        fit = surface.fits[0.0]
        assert abs(fit.exponent - 0.75) < 0.05
        assert surface.excluded == []
        a, zeta = surface.exponent_curve()
        np.testing.assert_allclose(a, [0.0])

    def test_self_covariance_matches_moment_exponent(self):
        grid = synthetic_grid(self.I, dict(self.I))
        surface = covariance_surface(grid, n_boot=0)
        moment = moment_scaling(self.I, n=1, n_boot=0)
        assert surface.fits[0.0].exponent == pytest.approx(moment.exponent, rel=1e-10)

    def test_negative_cells_are_excluded(self):
        D = {T: -self.I[T] for T in self.T_values}
        surface = covariance_surface(synthetic_grid(self.I, D), n_boot=10)
        assert surface.fits[0.0] is None
        assert len(surface.excluded) == len(self.T_values)

    def test_fit_stops_below_T_max(self):
        D = {T: self.I[T] for T in self.T_values}
        surface = covariance_surface(synthetic_grid(self.I, D), T_max=100.0, n_boot=0)
        assert surface.fits[0.0].fit_range[1] == 64.0

    def test_correlation_is_bounded(self):
        D = {T: 3.0 * self.I[T] for T in self.T_values}
        surface = correlation_R(synthetic_grid(self.I, D), n_boot=10)
        np.testing.assert_allclose(surface.values, 1.0, rtol=1e-12)
        assert np.all(surface.values <= 1.0)

    def test_correlation_of_zero_price_change(self):
        D = {T: np.zeros(20_000) for T in self.T_values}
        surface = correlation_R(synthetic_grid(self.I, D), n_boot=0)
        assert np.all(np.isnan(surface.values))


class TestCorrelationFit:
    """Single-term fits of the correlation profile in a."""

    def setup_method(self):
        self.a = np.array(A_GRID)
        self.T_values = (64, 256)

    def _surface(self, column_for_T):
        values = np.stack([column_for_T(T) for T in self.T_values], axis=1)
        return Surface(tuple(A_GRID), self.T_values, values, np.zeros_like(values))

    def test_volume_dependent_mode(self):
        def column(T):
            return np.exp(-0.5 * self.a ** 2) * 0.3 * np.exp(0.125 * self.a * math.log(T))

        fit = fit_Ra(self._surface(column), 64, mode="B")
        assert fit.sigma2 == pytest.approx(1.0, rel=1e-4)
        assert fit.lam == pytest.approx(0.125, rel=1e-4)
        assert fit.amplitude == pytest.approx(0.3, rel=1e-4)
        assert fit.residual < 1e-8

    def test_volume_independent_mode(self):
        def column(T):
            return np.exp(-0.4 * self.a ** 2) * 0.2 * np.exp(0.4 * self.a)

        fit = fit_Ra(self._surface(column), 256, mode="A")
        assert fit.sigma2 == pytest.approx(0.8, rel=1e-4)
        assert fit.amplitude == pytest.approx(0.2, rel=1e-4)
        assert math.isnan(fit.lam)

    def test_aic_by_hand(self):
        fit = RaFit(T=64, mode="B", sigma2=1.0, lam=0.1, amplitude=0.3, residual=0.1, stderr={}, n_points=8)
        assert fit.aic == pytest.approx(8 * math.log(0.01) + 6)

    def test_aic_prefers_the_volume_dependent_term_at_long_windows(self):
        noise = np.random.default_rng(9).normal(0.0, 1e-3, len(self.a))
        self.T_values = (1024,)

        def column(T):
            return np.exp(-0.5 * self.a ** 2) * 0.3 * np.exp(0.125 * self.a * math.log(T)) + noise

        surface = self._surface(column)
        fit_a, fit_b = fit_Ra(surface, 1024, mode="A"), fit_Ra(surface, 1024, mode="B")
        assert fit_b.n_points == fit_a.n_points == int(np.sum(self.a < 1.5))
        assert fit_b.aic < fit_a.aic

    def test_unknown_mode(self):
        surface = self._surface(lambda T: np.ones(len(self.a)))
        with pytest.raises(FitError):
            fit_Ra(surface, 64, mode="C")

    def test_missing_T(self):
        surface = self._surface(lambda T: np.ones(len(self.a)))
        with pytest.raises(FitError):
            fit_Ra(surface, 1024)
