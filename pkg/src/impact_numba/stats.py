# src/impact_numba/stats.py

"""
Order-flow and price diagnostics.

Every estimator works on one or more simulated days, each given as an ``EventFlow`` and
its ``PriceSeries``. Windows are counted in trades, never straddle a day boundary and do
not overlap. Standard errors are bootstrap estimates (200 replicates by default) obtained
by resampling windows, or whole days where an estimator pools per-day sums.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import bisect, curve_fit

from .config import SimulationConfig
from .errors import FitError, NumericalError
from .flowgen import EventFlow, beta_of_q, calibrate_base_exponents, mu_of_q
from .helpers import _increment_moments, _lagged_products, _window_deltas, _window_sums
from .impact import PriceSeries

logger = logging.getLogger(__name__)

T_GRID: Tuple[int, ...] = tuple(2 ** k for k in range(3, 14))
A_GRID: Tuple[float, ...] = tuple(float(a) for a in np.arange(-0.5, 3.0 + 1e-9, 0.25))
COLLAPSE_T: Tuple[int, ...] = (64, 128, 256, 512, 1024)
AUTOCORR_LAGS: np.ndarray = np.unique(np.round(np.logspace(0, 3, 31)).astype(np.int64))
N_BOOT = 200
MAX_LAG_FRACTION = 10.0


# ==============================================================================
# Result types
# ==============================================================================


@dataclass(frozen=True)
class ScalingFit:
    """Power law ``prefactor * T ** exponent``, optionally on top of a constant ``offset``."""

    exponent: float
    prefactor: float
    fit_range: Tuple[float, float]
    stderr: float = 0.0
    model: str = "power"
    offset: float = 0.0
    n_points: int = 0

    def predict(self, x) -> np.ndarray:
        return self.offset + self.prefactor * np.asarray(x, dtype=np.float64) ** self.exponent


@dataclass(frozen=True, eq=False)
class ImbalanceGrid:
    """Window imbalances ``I[(a, T)]`` and price changes ``Delta[T]`` pooled over days.

    Row ``w`` of every ``(a, T)`` cell and of ``Delta[T]`` refer to the same window.
    """

    a_values: Tuple[float, ...]
    T_values: Tuple[int, ...]
    I: Dict[Tuple[float, int], np.ndarray]
    Delta: Dict[int, np.ndarray]

    def imbalance(self, a: float, T: int) -> np.ndarray:
        return self.I[(float(a), int(T))]

    def delta(self, T: int) -> np.ndarray:
        return self.Delta[int(T)]

    def n_windows(self, T: int) -> int:
        return len(self.Delta[int(T)])


@dataclass(frozen=True, eq=False)
class AutocorrCurve:
    label: str
    q_range: Tuple[float, float]
    n_events: int
    lags: np.ndarray
    values: np.ndarray
    fit: Optional[ScalingFit] = None

    @property
    def is_empty(self) -> bool:
        return self.fit is None and not np.isfinite(self.values).any()

    @property
    def gamma(self) -> float:
        return float("nan") if self.fit is None else -self.fit.exponent

    @property
    def gamma_stderr(self) -> float:
        return float("nan") if self.fit is None else self.fit.stderr


@dataclass(frozen=True, eq=False)
class SignAutocorrResult:
    edges: np.ndarray
    bins: List[AutocorrCurve]
    unconditional: AutocorrCurve


@dataclass(frozen=True)
class TheoryExponents:
    a: float
    n: int
    imbalance: float
    covariance: float
    a_c: float
    a_c_prime: Optional[float]
    mu_hat: float
    beta_hat: float


@dataclass(frozen=True, eq=False)
class CollapseResult:
    chi: float
    omega: float
    master_curve: Dict[int, Tuple[np.ndarray, np.ndarray]]
    slopes: Dict[int, float]
    bin_edges: np.ndarray
    distance: float
    chi_stderr: float = float("nan")
    omega_stderr: float = float("nan")
    T_values: Tuple[int, ...] = ()
    master_counts: Dict[int, np.ndarray] = field(default_factory=dict)

    def overlap(self, T_values: Optional[Sequence[int]] = None) -> float:
        """RMS spread of the master curves around their mean, relative to the RMS of the mean.

        Only bins populated for every selected window length count. Bins are weighted by their
        smallest window count across T when ``master_counts`` is filled, and equally otherwise.
        """
        T_values = self.T_values if T_values is None else tuple(int(T) for T in T_values)
        missing = [T for T in T_values if T not in self.master_curve]
        if missing:
            raise NumericalError(f"no master curve for T={missing}")
        if len(T_values) < 2:
            raise NumericalError("overlap needs at least two window lengths")
        curves = np.stack([self.master_curve[T][1] for T in T_values])
        shared = np.isfinite(curves).all(axis=0)
        if not shared.any():
            raise NumericalError("master curves share no populated bin")
        curves = curves[:, shared]
        if all(T in self.master_counts for T in T_values):
            weights = np.stack([self.master_counts[T] for T in T_values])[:, shared].min(axis=0).astype(np.float64)
        else:
            weights = np.ones(curves.shape[1])
        mean = curves.mean(axis=0)
        scale = float(np.sqrt(np.average(mean ** 2, weights=weights)))
        if scale == 0:
            raise NumericalError("mean master curve is identically zero")
        spread = np.average(np.mean((curves - mean) ** 2, axis=0), weights=weights)
        return float(np.sqrt(spread)) / scale


@dataclass(frozen=True, eq=False)
class Surface:
    """Values on the (a, T) grid; rows follow ``a_values`` and columns ``T_values``."""

    a_values: Tuple[float, ...]
    T_values: Tuple[int, ...]
    values: np.ndarray
    stderr: np.ndarray

    def at(self, a: float, T: int) -> float:
        return float(self.values[self.a_values.index(float(a)), self.T_values.index(int(T))])


@dataclass(frozen=True, eq=False)
class CovarianceSurface(Surface):
    fits: Dict[float, Optional[ScalingFit]] = field(default_factory=dict)
    excluded: List[Tuple[float, int]] = field(default_factory=list)

    def exponent_curve(self) -> Tuple[np.ndarray, np.ndarray]:
        a = np.array([a for a in self.a_values if self.fits.get(a) is not None])
        zeta = np.array([self.fits[x].exponent for x in a])
        return a, zeta


@dataclass(frozen=True)
class RaFit:
    T: int
    mode: str
    sigma2: float
    lam: float
    amplitude: float
    residual: float
    stderr: Dict[str, float]
    n_points: int = 0

    @property
    def aic(self) -> float:
        """Akaike criterion of the least-squares fit; lower is better."""
        k = 2 if self.mode == "A" else 3
        return self.n_points * math.log(max(self.residual, 1e-300) ** 2) + 2 * k


# ==============================================================================
# Fitting helpers
# ==============================================================================


def fit_power_law(
    x,
    y,
    fit_range: Optional[Tuple[float, float]] = None,
    model: str = "power",
) -> ScalingFit:
    """Fit ``y = prefactor * x ** exponent`` by log-log least squares, or with ``model='offset'``
    the form ``offset + prefactor * x ** exponent`` by relative-error non-linear least squares.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    keep = np.isfinite(x) & np.isfinite(y)
    if fit_range is not None:
        keep &= (x >= fit_range[0]) & (x <= fit_range[1])
    x, y = x[keep], y[keep]
    if len(np.unique(x)) < 2:
        raise FitError("need at least two distinct points in the fit range")
    if np.any(x <= 0) or np.any(y <= 0):
        raise FitError("power-law fit requires positive values")

    lx, ly = np.log(x), np.log(y)
    lx_mean = lx.mean()
    sxx = np.sum((lx - lx_mean) ** 2)
    slope = float(np.sum((lx - lx_mean) * (ly - ly.mean())) / sxx)
    intercept = float(ly.mean() - slope * lx_mean)
    if len(x) > 2:
        resid = ly - (intercept + slope * lx)
        stderr = float(math.sqrt(np.sum(resid ** 2) / (len(x) - 2) / sxx))
    else:
        stderr = 0.0
    span = (float(x.min()), float(x.max()))
    if model == "power":
        return ScalingFit(slope, math.exp(intercept), span, stderr, "power", 0.0, len(x))
    if model != "offset":
        raise FitError(f"Unknown model: {model}. Available: ['offset', 'power']")

    def offset_law(t, a0, a1, zeta):
        return a0 + a1 * t ** zeta

    try:
        popt, pcov = curve_fit(
            offset_law, x, y, p0=(0.0, math.exp(intercept), slope), sigma=y, maxfev=20_000
        )
    except (RuntimeError, ValueError) as exc:
        raise FitError(f"offset power-law fit did not converge: {exc}") from exc
    if not np.all(np.isfinite(popt)):
        raise FitError("offset power-law fit returned non-finite parameters")
    err = float(np.sqrt(pcov[2, 2])) if np.isfinite(pcov[2, 2]) else float("nan")
    return ScalingFit(float(popt[2]), float(popt[1]), span, err, "offset", float(popt[0]), len(x))


def _bootstrap_std(
    replicate: Callable[[np.random.Generator], np.ndarray],
    n_boot: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Standard deviation of ``replicate`` over resamples; failed replicates are skipped."""
    draws = []
    for _ in range(n_boot):
        try:
            draws.append(np.asarray(replicate(rng), dtype=np.float64))
        except NumericalError:
            continue
    if len(draws) < 2:
        return np.array(float("nan"))
    with np.errstate(invalid="ignore"):
        return np.nanstd(np.stack(draws), axis=0, ddof=1)


# ==============================================================================
# Sign autocorrelation
# ==============================================================================


def _autocorr_curve(
    label: str,
    q_range: Tuple[float, float],
    per_day: List[Tuple[np.ndarray, np.ndarray]],
    n_events: int,
    lags: np.ndarray,
    fit_range: Tuple[float, float],
    min_events: int,
    n_boot: int,
    rng: np.random.Generator,
    day_counts: Optional[np.ndarray] = None,
) -> AutocorrCurve:
    if n_events < min_events:
        logger.warning("sign autocorrelation bin %s has %d events; reported empty", label, n_events)
        return AutocorrCurve(label, q_range, n_events, lags, np.full(len(lags), np.nan))
    sums = np.stack([s for s, _ in per_day])
    counts = np.stack([c for _, c in per_day])
    if day_counts is not None:
        # lags beyond a tenth of a typical day's bin sequence are dominated by day edges
        typical = float(np.median(day_counts))
        fit_range = (fit_range[0], min(fit_range[1], max(fit_range[0], typical / MAX_LAG_FRACTION)))

    def estimate(day_idx: np.ndarray) -> np.ndarray:
        total = counts[day_idx].sum(axis=0)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(total > 0, sums[day_idx].sum(axis=0) / np.maximum(total, 1), np.nan)

    all_days = np.arange(len(per_day))
    values = estimate(all_days)

    def gamma_fit(corr: np.ndarray) -> ScalingFit:
        positive = np.isfinite(corr) & (corr > 0)
        return fit_power_law(lags[positive], corr[positive], fit_range)

    try:
        fit = gamma_fit(values)
    except FitError:
        logger.warning("sign autocorrelation bin %s: too few positive lags to fit", label)
        return AutocorrCurve(label, q_range, n_events, lags, values)
    if len(per_day) > 1 and n_boot > 0:
        stderr = float(_bootstrap_std(
            lambda g: gamma_fit(estimate(g.integers(0, len(per_day), len(per_day)))).exponent, n_boot, rng
        ))
        fit = ScalingFit(fit.exponent, fit.prefactor, fit.fit_range, stderr, fit.model, 0.0, fit.n_points)
    return AutocorrCurve(label, q_range, n_events, lags, values, fit)


def sign_autocorr_by_volume(
    days: Sequence[EventFlow],
    n_bins: int = 4,
    lags: Optional[np.ndarray] = None,
    fit_range: Tuple[float, float] = (10.0, 1_000.0),
    min_events: int = 1_000,
    n_boot: int = N_BOOT,
    seed: int = 0,
    volume_scale: str = "pooled",
) -> SignAutocorrResult:
    """Sign autocorrelation within logarithmic bins of rescaled volume ``q / V_D``.

    Lags count events inside a bin. ``C(tau)`` is the raw mean product of signs and the
    decay exponent ``gamma`` comes from a log-log fit on positive values over ``fit_range``,
    capped per bin at a tenth of the bin's median daily event count.

    With ``volume_scale="pooled"`` (default) ``V_D`` is the mean daily volume over all days;
    ``"day"`` divides by each day's own volume. A day holding a very long metaorder has a
    large volume, so per-day scaling shifts that metaorder's children into lower bins and
    couples the bin to the memory of the flow.
    """
    if volume_scale not in ("pooled", "day"):
        raise NumericalError(f"Unknown volume_scale: {volume_scale}. Available: ['day', 'pooled']")
    lags = AUTOCORR_LAGS if lags is None else np.asarray(lags, dtype=np.int64)
    rng = np.random.default_rng(seed)
    days = [ev for ev in days if len(ev)]
    if not days:
        raise NumericalError("no events to analyze")
    day_volumes = np.array([ev.volume.sum() for ev in days])
    if volume_scale == "pooled":
        rescaled = [ev.volume / day_volumes.mean() for ev in days]
    else:
        rescaled = [ev.volume / v for ev, v in zip(days, day_volumes)]
    pooled = np.concatenate(rescaled)
    if len(pooled) < 100_000:
        logger.warning("sign autocorrelation on %d events; estimates will be noisy", len(pooled))
    lo, hi = np.quantile(pooled, [0.005, 0.995])
    edges = np.geomspace(lo, hi, n_bins + 1) if hi > lo else np.array([lo] * (n_bins + 1))

    curves = []
    for b in range(n_bins):
        per_day = []
        day_counts = np.zeros(len(days), dtype=np.int64)
        for d, (ev, qt) in enumerate(zip(days, rescaled)):
            idx = np.clip(np.searchsorted(edges, qt, side="right") - 1, 0, n_bins - 1)
            signs = ev.sign[idx == b].astype(np.float64)
            day_counts[d] = len(signs)
            per_day.append(_lagged_products(signs, lags))
        curves.append(_autocorr_curve(
            f"bin{b + 1}", (float(edges[b]), float(edges[b + 1])), per_day, int(day_counts.sum()),
            lags, fit_range, min_events, n_boot, rng, day_counts,
        ))
    per_day = [_lagged_products(ev.sign.astype(np.float64), lags) for ev in days]
    unconditional = _autocorr_curve(
        "all", (float(pooled.min()), float(pooled.max())), per_day, len(pooled),
        lags, fit_range, min_events, n_boot, rng, np.array([len(ev) for ev in days]),
    )
    return SignAutocorrResult(edges=edges, bins=curves, unconditional=unconditional)


# ==============================================================================
# Generalized imbalance
# ==============================================================================


def imbalance_windows(events: EventFlow, a: float, T: int) -> np.ndarray:
    """Sum of ``sign * volume ** a`` over consecutive non-overlapping windows of ``T`` trades."""
    if T < 1:
        raise NumericalError("window length T must be >= 1")
    if not math.isfinite(a):
        raise NumericalError("exponent a must be finite")
    weights = events.sign.astype(np.float64) * events.volume.astype(np.float64) ** a
    return _window_sums(weights, int(T))


def build_imbalance_grid(
    days: Sequence[Tuple[EventFlow, PriceSeries]],
    a_values: Sequence[float] = A_GRID,
    T_values: Sequence[int] = T_GRID,
) -> ImbalanceGrid:
    """Window imbalances and price changes for every (a, T), pooled over days in day order.

    The price change of a window runs from just before its first trade to just after its last.
    """
    a_values = tuple(float(a) for a in a_values)
    T_values = tuple(int(T) for T in T_values)
    parts_I: Dict[Tuple[float, int], List[np.ndarray]] = {(a, T): [] for a in a_values for T in T_values}
    parts_D: Dict[int, List[np.ndarray]] = {T: [] for T in T_values}
    for events, prices in days:
        if len(events) != len(prices):
            raise NumericalError(f"day {events.day_id}: {len(events)} events but {len(prices)} prices")
        for T in T_values:
            parts_D[T].append(_window_deltas(prices.prices, prices.after, T))
        for a in a_values:
            weights = events.sign.astype(np.float64) * events.volume.astype(np.float64) ** a
            for T in T_values:
                parts_I[(a, T)].append(_window_sums(weights, T))
    I = {key: np.concatenate(val) if val else np.empty(0) for key, val in parts_I.items()}
    Delta = {T: np.concatenate(val) if val else np.empty(0) for T, val in parts_D.items()}
    return ImbalanceGrid(a_values=a_values, T_values=T_values, I=I, Delta=Delta)


def imbalance_moments(grid: ImbalanceGrid, n: int = 1, n_boot: int = N_BOOT, seed: int = 0) -> Surface:
    """``E[(I^a_T) ** (2n)]`` for every grid cell."""

    def moment(I_stack: np.ndarray, D: np.ndarray) -> np.ndarray:
        return np.mean(I_stack ** (2 * n), axis=1)

    values = np.full((len(grid.a_values), len(grid.T_values)), np.nan)
    for j, T in enumerate(grid.T_values):
        if grid.n_windows(T):
            values[:, j] = moment(np.stack([grid.imbalance(a, T) for a in grid.a_values]), grid.delta(T))
    return Surface(grid.a_values, grid.T_values, values, _grid_bootstrap(grid, moment, n_boot, seed))


def _check_scaling_support(T: np.ndarray) -> None:
    if len(T) < 4 or T.max() / T.min() < 10 ** 1.5:
        raise NumericalError("moment scaling needs at least 4 window lengths spanning 1.5 decades")


def moment_scaling(
    values_per_T: Mapping[int, np.ndarray],
    n: int = 1,
    fit_range: Optional[Tuple[float, float]] = None,
    n_boot: int = N_BOOT,
    seed: int = 0,
) -> ScalingFit:
    """Log-log fit of the empirical moment ``E[x ** (2n)]`` against the window length."""
    T = np.array(sorted(values_per_T), dtype=np.float64)
    samples = [np.asarray(values_per_T[int(t)], dtype=np.float64) for t in T]
    keep = np.array([len(s) > 0 for s in samples])
    T = T[keep]
    samples = [s for s, k in zip(samples, keep) if k]
    _check_scaling_support(T)

    def moments(draw: Optional[np.random.Generator]) -> np.ndarray:
        out = np.empty(len(samples))
        for i, s in enumerate(samples):
            picked = s if draw is None else s[draw.integers(0, len(s), len(s))]
            out[i] = np.mean(picked ** (2 * n))
        return out

    observed = moments(None)
    if np.any(observed <= 0):
        raise FitError(f"non-positive moment of order {2 * n}; cannot fit a power law")
    fit = fit_power_law(T, observed, fit_range)
    if n_boot > 0:
        stderr = float(_bootstrap_std(
            lambda g: fit_power_law(T, moments(g), fit_range).exponent, n_boot, np.random.default_rng(seed)
        ))
        fit = ScalingFit(fit.exponent, fit.prefactor, fit.fit_range, stderr, "power", 0.0, fit.n_points)
    return fit


def theory_exponents(cfg: SimulationConfig, a: float, n: int = 1) -> TheoryExponents:
    """Predicted exponents of the 2n-th imbalance moment and of the price-imbalance covariance."""
    lam_s2 = cfg.lam * cfg.sigma_l ** 2
    lam_p_s2 = cfg.lam_p * cfg.sigma_l ** 2
    mu_hat = cfg.mu_m + (a + 0.5) * lam_s2
    beta_hat = cfg.beta_m - (a + 0.5) * lam_p_s2
    if lam_s2 <= 0:
        return TheoryExponents(
            a=a, n=n,
            imbalance=2 * n + 1 - cfg.mu_m,
            covariance=max(2.5 - mu_hat, 1.0 - beta_hat),
            a_c=float("inf"), a_c_prime=None, mu_hat=mu_hat, beta_hat=beta_hat,
        )
    a_c = (1.0 - cfg.mu_m / (2 * n)) / lam_s2
    imbalance = 2 * n + 1 - cfg.mu_m - 2 * n * a * lam_s2 if a < a_c else 1.0
    a_c_prime = critical_covariance_exponent(cfg)
    if a_c_prime is None:
        covariance = max(2.5 - mu_hat, 1.0 - beta_hat)
    elif a < a_c_prime:
        covariance = 2.5 - mu_hat
    else:
        covariance = 1.0 - beta_hat
    return TheoryExponents(a, n, imbalance, covariance, a_c, a_c_prime, mu_hat, beta_hat)


def critical_covariance_exponent(cfg: SimulationConfig, log_q_max: float = 50.0) -> Optional[float]:
    """Value of a where the covariance switches branch, or None when the branches never cross.

    The crossing volume solves ``5/2 - mu_q = 1 - beta_q`` on the clamped exponent laws.
    """
    lam_s2 = cfg.lam * cfg.sigma_l ** 2
    if lam_s2 <= 0:
        return None
    mu_1, beta_1 = calibrate_base_exponents(cfg)

    def gap(log_q: float) -> float:
        q = math.exp(log_q)
        mu_q = mu_of_q(q, mu_1, cfg.lam, cfg.eps_mu)
        beta_q = beta_of_q(q, beta_1, cfg.lam_p, cfg.eps_beta)
        return (2.5 - mu_q) - (1.0 - beta_q)

    if gap(0.0) * gap(log_q_max) > 0:
        logger.info("covariance branches do not cross for ln q in [0, %g]", log_q_max)
        return None
    log_q_c = bisect(gap, 0.0, log_q_max, xtol=1e-10)
    mu_c = mu_of_q(math.exp(log_q_c), mu_1, cfg.lam, cfg.eps_mu)
    return float((mu_c - cfg.mu_m) / lam_s2 - 0.5)


# ==============================================================================
# Price diagnostics
# ==============================================================================


def _pooled_increment_moments(prices: Sequence[PriceSeries], lags: np.ndarray, powers: np.ndarray):
    sums, counts = [], []
    for series in prices:
        s, c = _increment_moments(series.prices, lags, powers)
        sums.append(s)
        counts.append(c)
    return np.stack(sums), np.stack(counts)


def signature_plot(
    prices: Sequence[PriceSeries],
    lags: Optional[Sequence[int]] = None,
    n_boot: int = N_BOOT,
    seed: int = 0,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Mean squared price change at each trade lag divided by the lag, pooled over days.

    Returns ``(lags, values, stderr)``; the standard error resamples days.
    """
    lags = AUTOCORR_LAGS if lags is None else np.asarray(lags, dtype=np.int64)
    sums, counts = _pooled_increment_moments(prices, lags, np.array([2.0]))
    sums = sums[:, 0, :]

    def estimate(day_idx: np.ndarray) -> np.ndarray:
        total = counts[day_idx].sum(axis=0)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(total > 0, sums[day_idx].sum(axis=0) / np.maximum(total, 1) / lags, np.nan)

    values = estimate(np.arange(len(prices)))
    if len(prices) > 1 and n_boot > 0:
        stderr = _bootstrap_std(
            lambda g: estimate(g.integers(0, len(prices), len(prices))), n_boot, np.random.default_rng(seed)
        )
    else:
        stderr = np.zeros(len(lags))
    return lags, values, np.broadcast_to(stderr, values.shape).copy()


def price_moment_scaling(
    prices: Sequence[PriceSeries],
    n_list: Sequence[int] = (1, 2, 3),
    lags: Optional[Sequence[int]] = None,
    fit_range: Optional[Tuple[float, float]] = None,
    n_boot: int = N_BOOT,
    seed: int = 0,
) -> Dict[int, ScalingFit]:
    """Fit ``offset + prefactor * T ** zeta_n`` to price-change moments of order 2n.

    Moments are normalized to 1 at the shortest lag (T = 1 by default). A fit that fails for
    one n is logged and left out of the result.
    """
    lags = np.array([2 ** k for k in range(0, 11)] if lags is None else lags, dtype=np.int64)
    powers = np.array([2.0 * n for n in n_list])
    sums, counts = _pooled_increment_moments(prices, lags, powers)

    def moments(day_idx: np.ndarray) -> np.ndarray:
        total = counts[day_idx].sum(axis=0)
        if np.any(total == 0):
            raise NumericalError("a lag exceeds every day's length")
        raw = sums[day_idx].sum(axis=0) / total
        if np.any(raw[:, 0] <= 0):
            raise NumericalError("price path is constant")
        return raw / raw[:, :1]

    rng = np.random.default_rng(seed)
    observed = moments(np.arange(len(prices)))
    fits: Dict[int, ScalingFit] = {}
    for r, n in enumerate(n_list):
        try:
            fit = fit_power_law(lags, observed[r], fit_range, model="offset")
        except FitError as exc:
            logger.warning("price moment of order %d: %s", 2 * n, exc)
            continue
        if len(prices) > 1 and n_boot > 0:
            stderr = float(_bootstrap_std(
                lambda g: fit_power_law(
                    lags, moments(g.integers(0, len(prices), len(prices)))[r], fit_range, model="offset"
                ).exponent,
                n_boot, rng,
            ))
            fit = ScalingFit(fit.exponent, fit.prefactor, fit.fit_range, stderr, "offset", fit.offset, fit.n_points)
        fits[n] = fit
    return fits


# ==============================================================================
# Aggregated impact
# ==============================================================================


def _initial_slope(I: np.ndarray, D: np.ndarray) -> float:
    core = np.abs(I) <= np.median(np.abs(I))
    denom = np.sum(I[core] ** 2)
    if denom <= 0:
        return float("nan")
    return float(np.sum(D[core] * I[core]) / denom)


def _bin_counts(x: np.ndarray, edges: np.ndarray) -> np.ndarray:
    n_bins = len(edges) - 1
    idx = np.searchsorted(edges, x, side="right") - 1
    return np.bincount(idx[(idx >= 0) & (idx < n_bins)], minlength=n_bins)


def _binned_means(x: np.ndarray, y: np.ndarray, edges: np.ndarray, min_count: int) -> np.ndarray:
    n_bins = len(edges) - 1
    idx = np.searchsorted(edges, x, side="right") - 1
    inside = (idx >= 0) & (idx < n_bins)
    counts = np.bincount(idx[inside], minlength=n_bins)
    sums = np.bincount(idx[inside], weights=y[inside], minlength=n_bins)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(counts >= min_count, sums / np.maximum(counts, 1), np.nan)


_QUANTILE_LEVELS = np.array([0.25, 0.5, 0.75, 0.9])


def _collapse(
    samples: Dict[int, Tuple[np.ndarray, np.ndarray]],
    chi_grid: np.ndarray,
    n_bins: int,
    min_count: int,
):
    T_values = sorted(samples)
    slopes = {T: _initial_slope(*samples[T]) for T in T_values}
    valid = [T for T in T_values if np.isfinite(slopes[T]) and slopes[T] > 0]
    if len(valid) < 2:
        raise FitError("initial impact slope is non-positive for all but one window length")
    omega = -fit_power_law(valid, [slopes[T] for T in valid]).exponent
    log_T = np.log(np.array(T_values, dtype=np.float64))
    log_quant = np.stack([np.log(np.quantile(np.abs(samples[T][0]), _QUANTILE_LEVELS) + 1e-300) for T in T_values])

    best = None
    for chi in chi_grid:
        xs = {T: samples[T][0] / T ** chi for T in T_values}
        ys = {T: samples[T][1] / T ** (chi - omega) for T in T_values}
        pooled_x = np.concatenate(list(xs.values()))
        pooled_y = np.concatenate(list(ys.values()))
        x_scale = pooled_x.std()
        y_scale = pooled_y.std()
        if x_scale <= 0 or y_scale <= 0:
            raise NumericalError("aggregated impact needs non-degenerate imbalance and price change")
        lo, hi = np.quantile(pooled_x / x_scale, [0.01, 0.99])
        edges = np.linspace(lo, hi, n_bins + 1)
        curves = np.stack([_binned_means(xs[T] / x_scale, ys[T] / y_scale, edges, min_count) for T in T_values])
        populated = np.isfinite(curves).sum(axis=1)
        shared = np.isfinite(curves).sum(axis=0) >= 2
        if not shared.any():
            continue
        mean_spread = float(np.nanmean(np.nanvar(curves[:, shared], axis=0)))
        scale_spread = float(np.mean(np.var(log_quant - chi * log_T[:, None], axis=0)))
        distance = mean_spread + scale_spread
        if best is None or distance < best[1]:
            best = (float(chi), distance, edges, curves, populated, x_scale, y_scale)
    if best is None:
        raise NumericalError("no overlap between rescaled impact curves")
    return omega, slopes, best


def aggregated_impact(
    grid: ImbalanceGrid,
    a: float = 0.0,
    T_values: Sequence[int] = COLLAPSE_T,
    n_bins: int = 40,
    chi_grid: Optional[np.ndarray] = None,
    min_count: int = 5,
    min_populated: int = 20,
    n_boot: int = N_BOOT,
    seed: int = 0,
) -> CollapseResult:
    """Average price change conditional on imbalance, and the exponents that collapse it.

    ``omega`` is the decay of the initial slope ``E[Delta | I] ~ slope_T * I`` with T.
    ``chi`` minimizes the spread between curves of ``Delta / T ** (chi - omega)`` against
    ``I / T ** chi`` plus the spread of the rescaled imbalance quantiles.
    """
    chi_grid = np.round(np.arange(0.3, 1.2 + 1e-9, 0.01), 10) if chi_grid is None else np.asarray(chi_grid)
    samples: Dict[int, Tuple[np.ndarray, np.ndarray]] = {}
    for T in T_values:
        if T not in grid.T_values:
            raise NumericalError(f"window length {T} is not in the imbalance grid")
        I, D = grid.imbalance(a, T), grid.delta(T)
        if len(D) == 0:
            continue
        if np.ptp(D) == 0:
            raise NumericalError(f"price change is constant at T={T}")
        samples[T] = (I, D)
    if len(samples) < 2:
        raise NumericalError("aggregated impact needs at least two populated window lengths")

    omega, slopes, best = _collapse(samples, chi_grid, n_bins, min_count)
    chi, distance, edges, curves, populated, x_scale, y_scale = best
    thin = [T for T, p in zip(sorted(samples), populated) if p < min_populated]
    if thin:
        logger.warning("aggregated impact: dropping T=%s with fewer than %d populated bins", thin, min_populated)
        samples = {T: v for T, v in samples.items() if T not in thin}
        if len(samples) < 2:
            raise NumericalError("fewer than two window lengths have enough populated bins")
        omega, slopes, best = _collapse(samples, chi_grid, n_bins, min_count)
        chi, distance, edges, curves, populated, x_scale, y_scale = best

    centers = 0.5 * (edges[1:] + edges[:-1])
    master = {T: (centers, curves[i]) for i, T in enumerate(sorted(samples))}
    counts = {T: _bin_counts(samples[T][0] / T ** chi / x_scale, edges) for T in sorted(samples)}

    chi_err = omega_err = float("nan")
    if n_boot > 0:
        def replicate(g: np.random.Generator) -> np.ndarray:
            resampled = {}
            for T, (I, D) in samples.items():
                idx = g.integers(0, len(I), len(I))
                resampled[T] = (I[idx], D[idx])
            om, _, bst = _collapse(resampled, chi_grid, n_bins, min_count)
            return np.array([bst[0], om])

        errs = _bootstrap_std(replicate, n_boot, np.random.default_rng(seed))
        if errs.ndim:
            chi_err, omega_err = float(errs[0]), float(errs[1])
    return CollapseResult(
        chi=chi,
        omega=float(omega),
        master_curve=master,
        slopes=slopes,
        bin_edges=edges,
        distance=float(distance),
        chi_stderr=chi_err,
        omega_stderr=omega_err,
        T_values=tuple(sorted(samples)),
        master_counts=counts,
    )


# ==============================================================================
# Covariance and correlation
# ==============================================================================


def _grid_bootstrap(
    grid: ImbalanceGrid,
    statistic: Callable[[np.ndarray, np.ndarray], np.ndarray],
    n_boot: int,
    seed: int,
) -> np.ndarray:
    """Per-cell bootstrap errors of ``statistic(I_stack, Delta)``, resampling windows per T."""
    rng = np.random.default_rng(seed)
    out = np.full((len(grid.a_values), len(grid.T_values)), np.nan)
    for j, T in enumerate(grid.T_values):
        D = grid.delta(T)
        if len(D) < 2 or n_boot <= 0:
            continue
        I_stack = np.stack([grid.imbalance(a, T) for a in grid.a_values])

        def replicate(g: np.random.Generator) -> np.ndarray:
            idx = g.integers(0, len(D), len(D))
            return statistic(I_stack[:, idx], D[idx])

        out[:, j] = _bootstrap_std(replicate, n_boot, rng)
    return out


def _covariance(I_stack: np.ndarray, D: np.ndarray) -> np.ndarray:
    return (I_stack * D).mean(axis=1)


def _correlation(I_stack: np.ndarray, D: np.ndarray) -> np.ndarray:
    sigma_T = math.sqrt(np.mean(D ** 2))
    sigma_I = np.sqrt(np.mean(I_stack ** 2, axis=1))
    with np.errstate(invalid="ignore", divide="ignore"):
        r = (I_stack * D).mean(axis=1) / (sigma_T * sigma_I)
    # Cauchy-Schwarz bound, up to rounding
    return np.clip(r, -1.0, 1.0)


def covariance_surface(
    grid: ImbalanceGrid,
    T_max: float = 1_000.0,
    n_boot: int = N_BOOT,
    seed: int = 0,
) -> CovarianceSurface:
    """``E[Delta_T * I^a_T]`` on the grid and, per a, a power-law fit over ``T < T_max``.

    Cells whose covariance is not positive beyond two standard errors are excluded from the
    fit and listed in ``excluded``.
    """
    values = np.full((len(grid.a_values), len(grid.T_values)), np.nan)
    for j, T in enumerate(grid.T_values):
        if grid.n_windows(T) == 0:
            continue
        values[:, j] = _covariance(np.stack([grid.imbalance(a, T) for a in grid.a_values]), grid.delta(T))
    stderr = _grid_bootstrap(grid, _covariance, n_boot, seed)

    T_arr = np.array(grid.T_values, dtype=np.float64)
    fits: Dict[float, Optional[ScalingFit]] = {}
    excluded: List[Tuple[float, int]] = []
    for i, a in enumerate(grid.a_values):
        in_range = np.isfinite(values[i]) & (T_arr < T_max)
        noise = np.where(np.isfinite(stderr[i]), 2.0 * stderr[i], 0.0)
        usable = in_range & (values[i] > noise)
        for T in T_arr[in_range & ~usable]:
            excluded.append((a, int(T)))
        try:
            fits[a] = fit_power_law(T_arr[usable], values[i][usable])
        except FitError:
            fits[a] = None
    if excluded:
        logger.warning("covariance surface: %d cells excluded as non-positive or within noise", len(excluded))
    return CovarianceSurface(grid.a_values, grid.T_values, values, stderr, fits, excluded)


def correlation_R(grid: ImbalanceGrid, n_boot: int = N_BOOT, seed: int = 0) -> Surface:
    """Correlation ``E[Delta I^a] / (sqrt(E[Delta^2]) sqrt(E[(I^a)^2]))`` on the grid."""
    values = np.full((len(grid.a_values), len(grid.T_values)), np.nan)
    for j, T in enumerate(grid.T_values):
        D = grid.delta(T)
        if len(D) == 0:
            continue
        if not np.any(D):
            logger.warning("correlation at T=%d undefined: price change is identically zero", T)
            continue
        values[:, j] = _correlation(np.stack([grid.imbalance(a, T) for a in grid.a_values]), D)
    stderr = _grid_bootstrap(grid, _correlation, n_boot, seed)
    return Surface(grid.a_values, grid.T_values, values, stderr)


def _ra_model_a(a, sigma2, amp):
    return np.exp(-0.5 * sigma2 * a ** 2) * amp * np.exp(0.5 * sigma2 * a)


def _ra_model_b(log_T):
    def model(a, sigma2, lam, amp):
        return np.exp(-0.5 * sigma2 * a ** 2) * amp * np.exp(lam * sigma2 * a * log_T)

    return model


def fit_Ra(surface: Surface, T: int, mode: str = "B", a_max: float = 1.5) -> RaFit:
    """Fit one T column of the correlation surface with a single-term Gaussian-in-a form.

    Mode ``"A"`` keeps only the volume-independent term (parameters sigma2, A); mode ``"B"``
    keeps only the volume-dependent term (sigma2, lambda, B). Only ``a < a_max`` is used.
    """
    if T not in surface.T_values:
        raise FitError(f"T={T} is not in the correlation surface")
    column = surface.values[:, surface.T_values.index(int(T))]
    a = np.array(surface.a_values)
    keep = (a < a_max) & np.isfinite(column)
    a, r = a[keep], column[keep]
    mode = mode.upper()
    if mode == "A":
        model, p0, names = _ra_model_a, (1.0, float(np.max(np.abs(r), initial=0.1))), ("sigma2", "amplitude")
    elif mode == "B":
        model, p0 = _ra_model_b(math.log(T)), (1.0, 0.1, float(np.max(np.abs(r), initial=0.1)))
        names = ("sigma2", "lam", "amplitude")
    else:
        raise FitError(f"Unknown mode: {mode}. Available: ['A', 'B']")
    if len(a) <= len(p0):
        raise FitError(f"correlation fit at T={T} needs more than {len(p0)} values of a")
    try:
        popt, pcov = curve_fit(model, a, r, p0=p0, maxfev=20_000)
    except (RuntimeError, ValueError) as exc:
        raise FitError(f"correlation fit at T={T} did not converge: {exc}") from exc
    if not np.all(np.isfinite(popt)) or popt[0] <= 0:
        raise FitError(f"correlation fit at T={T} returned sigma2 <= 0")
    residual = float(np.sqrt(np.mean((model(a, *popt) - r) ** 2)))
    errs = np.sqrt(np.clip(np.diag(pcov), 0.0, None)) if np.all(np.isfinite(pcov)) else np.full(len(popt), np.nan)
    params = dict(zip(names, popt))
    return RaFit(
        T=int(T),
        mode=mode,
        sigma2=float(params["sigma2"]),
        lam=float(params.get("lam", float("nan"))),
        amplitude=float(params["amplitude"]),
        residual=residual,
        stderr={k: float(e) for k, e in zip(names, errs)},
        n_points=int(len(a)),
    )
