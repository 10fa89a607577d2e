# src/impact_numba/proxy.py

"""
Proxy metaorders from anonymized flow, and peak-impact curves.

Buy and sell trades are separated, then each stream is greedily chained into proxy
metaorders: a seed trade draws a target size from the size power law and picks up the
first free trade at or after each exponentially spaced target time, until the chain
reaches its size or the next candidate is too far away. Peak impact of a (true or proxy)
metaorder is its sign times the price move from just before its first trade to just after
its last, expressed in units of the day's volatility against ``Q / V_D``.
"""

import dataclasses
import logging
import math
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple, Union

import numpy as np
from numba import njit

from .errors import ConfigError, DomainError, FitError, NumericalError
from .flowgen import EventFlow, sample_metaorder_sizes
from .helpers import _group_extents
from .impact import PriceSeries
from .stats import N_BOOT, ScalingFit, fit_power_law

logger = logging.getLogger(__name__)

THRESHOLD_MODES = ("scaled", "literal")
DEFAULT_EDGES = np.logspace(-6.0, 0.0, 25)


@dataclass(frozen=True)
class ProxyParams:
    """Mapping parameters. ``threshold`` is ``C / phi_hat`` in scaled mode and ``C`` in literal mode.

    ``max_gap`` bounds the realized gap between consecutive trades of a proxy; ``None``
    means the threshold and ``inf`` disables the check.
    """

    phi_hat: float
    mu_hat: float
    s_max: int = 10_000
    C: float = 4.0
    threshold_mode: str = "scaled"
    max_gap: Optional[float] = None

    @property
    def threshold(self) -> float:
        return self.C / self.phi_hat if self.threshold_mode == "scaled" else self.C

    @property
    def gap_limit(self) -> float:
        return self.threshold if self.max_gap is None else float(self.max_gap)

    def validate(self) -> "ProxyParams":
        """Check the parameters, raising ``ConfigError`` on the first violation."""
        checks = [
            (self.phi_hat > 0, "phi_hat must be > 0"),
            (self.mu_hat > 1, "mu_hat must be > 1"),
            (self.s_max >= 1, "s_max must be >= 1"),
            (self.C > 0, "C must be > 0"),
            (self.max_gap is None or self.max_gap > 0, "max_gap must be > 0"),
        ]
        for ok, message in checks:
            if not ok:
                raise ConfigError(message)
        if self.threshold_mode not in THRESHOLD_MODES:
            raise ConfigError(f"Unknown threshold mode: {self.threshold_mode}. Available: {list(THRESHOLD_MODES)}")
        return self


@dataclass(frozen=True, eq=False)
class ProxyAssignment:
    """Proxy metaorder ids (1-based) for one time-sorted single-sign stream."""

    ids: np.ndarray
    params: ProxyParams
    threshold: float

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def n_metaorders(self) -> int:
        return int(self.ids.max()) if len(self.ids) else 0


@dataclass(frozen=True, eq=False)
class MetaorderImpacts:
    """Peak impacts of the metaorders of one day with at least two trades."""

    impact: np.ndarray
    Q: np.ndarray
    n_trades: np.ndarray
    V_D: float
    sigma: float
    n_excluded: int
    day_id: int = 0

    @property
    def Q_over_VD(self) -> np.ndarray:
        return self.Q / self.V_D

    @property
    def impact_over_sigma(self) -> np.ndarray:
        return self.impact / self.sigma


@dataclass(frozen=True, eq=False)
class ImpactCurve:
    """Binned peak impact over volatility against ``Q / V_D``, with square-root-law fits.

    ``fit`` has a free exponent; ``Y`` is the prefactor with the exponent pinned at 1/2.
    """

    label: str
    edges: np.ndarray
    mean_impact: np.ndarray
    stderr: np.ndarray
    counts: np.ndarray
    fit: Optional[ScalingFit]
    Y: float
    Y_stderr: float
    n_excluded: int = 0

    @property
    def centers(self) -> np.ndarray:
        return np.sqrt(self.edges[1:] * self.edges[:-1])

    def local_slope(self, lo: float, hi: float) -> float:
        """Log-log slope of the binned curve over bin centers in ``[lo, hi]``."""
        c = self.centers
        ok = np.isfinite(self.mean_impact) & (self.mean_impact > 0) & (c >= lo) & (c <= hi)
        return fit_power_law(c[ok], self.mean_impact[ok]).exponent


@dataclass(frozen=True, eq=False)
class CurveComparison:
    centers: np.ndarray
    ratio: np.ndarray
    ratio_stderr: np.ndarray
    crossover: Optional[float]


# ==============================================================================
# Proxy generation
# ==============================================================================


def split_by_sign(events: EventFlow) -> Tuple[EventFlow, EventFlow]:
    """Buy and sell sub-flows, each keeping its rows' positions in ``origin``."""
    if not events.is_sorted():
        raise DomainError("event flow must be sorted by timestamp")
    return events.subset(events.sign > 0), events.subset(events.sign < 0)


@njit(nogil=True)
def _chain_ids(t, sizes, gaps, threshold, max_gap):
    n = len(t)
    ids = np.zeros(n, dtype=np.int64)
    seed = 0
    next_id = 0
    g = 0
    while True:
        while seed < n and ids[seed] != 0:
            seed += 1
        if seed >= n:
            break
        size = sizes[next_id] if next_id < len(sizes) else 1
        next_id += 1
        ids[seed] = next_id
        current = t[seed]
        for _ in range(size - 1):
            next_time = current + gaps[g]
            g += 1
            j = np.searchsorted(t, next_time)
            while j < n and ids[j] != 0:
                j += 1
            if j >= n:
                break
            if t[j] - next_time > threshold or t[j] - current > max_gap:
                break
            ids[j] = next_id
            current = t[j]
    return ids


def generate_meta_ids(
    t_execs: np.ndarray,
    phi_hat: float,
    mu_hat: float,
    s_max: int = 10_000,
    C: float = 4.0,
    rng: Optional[np.random.Generator] = None,
    threshold_mode: str = "scaled",
    max_gap: Optional[float] = None,
    sizes: Optional[np.ndarray] = None,
) -> ProxyAssignment:
    """Chain one sign stream's execution times into proxy metaorders.

    Every trade gets exactly one id and ids are used in order of their seed trade. Target
    sizes and gaps are drawn up front so the result depends only on ``rng``. ``sizes``
    overrides the drawn target sizes of the first proxies.
    """
    params = ProxyParams(phi_hat, mu_hat, s_max, C, threshold_mode, max_gap).validate()
    t = np.ascontiguousarray(t_execs, dtype=np.float64)
    if len(t) == 0:
        return ProxyAssignment(np.empty(0, dtype=np.int64), params, params.threshold)
    if np.any(np.diff(t) < 0):
        raise DomainError("execution times must be sorted")
    rng = np.random.default_rng(0) if rng is None else rng
    if sizes is None:
        sizes = sample_metaorder_sizes(rng, mu_hat, s_max, size=len(t))
    else:
        sizes = np.asarray(sizes, dtype=np.int64)
    # one gap per pick plus at most one failed pick per proxy
    gaps = rng.exponential(1.0 / phi_hat, 2 * len(t))
    ids = _chain_ids(t, sizes, gaps, float(params.threshold), float(params.gap_limit))
    return ProxyAssignment(ids, params, params.threshold)


def true_grouping(events: EventFlow) -> np.ndarray:
    """0-based metaorder label of every event, from its parent id."""
    if events.parent_id is None:
        raise DomainError("flow has no parent ids; ground-truth grouping unavailable")
    _, labels = np.unique(events.parent_id, return_inverse=True)
    return labels.astype(np.int64)


def proxy_grouping(events: EventFlow, params: ProxyParams, rng: np.random.Generator) -> np.ndarray:
    """0-based proxy label of every event; buy proxies are numbered before sell proxies."""
    labels = np.empty(len(events), dtype=np.int64)
    offset = 0
    # origins relative to this flow, which may itself be a subset
    for stream in split_by_sign(dataclasses.replace(events, origin=None)):
        assignment = generate_meta_ids(
            stream.timestamp, params.phi_hat, params.mu_hat, params.s_max, params.C,
            rng=rng, threshold_mode=params.threshold_mode, max_gap=params.max_gap,
        )
        labels[stream.origin] = assignment.ids - 1 + offset
        offset += assignment.n_metaorders
    return labels


def linkage_counts(labels: np.ndarray, events: EventFlow) -> Tuple[int, int]:
    """Consecutive trade pairs inside proxy metaorders: those sharing a true parent, and all."""
    if events.parent_id is None:
        raise DomainError("flow has no parent ids; linkage cannot be checked")
    if len(labels) != len(events):
        raise DomainError("labels and events must describe the same day")
    order = np.argsort(labels, kind="stable")
    linked = labels[order][1:] == labels[order][:-1]
    parent = events.parent_id[order]
    same = parent[1:][linked] == parent[:-1][linked]
    return int(same.sum()), int(linked.sum())


# ==============================================================================
# Peak impact
# ==============================================================================


def daily_volatility(prices: PriceSeries) -> float:
    """Root mean square trade-to-trade price change times the square root of the trade count."""
    if len(prices) < 2:
        raise NumericalError("volatility needs at least two trades")
    step = np.diff(prices.prices)
    return float(math.sqrt(np.mean(step ** 2)) * math.sqrt(len(prices)))


def metaorder_impacts(labels: np.ndarray, events: EventFlow, prices: PriceSeries) -> MetaorderImpacts:
    """Peak impact, executed volume and trade count of each labelled metaorder in one day."""
    if len(labels) != len(events) or len(events) != len(prices):
        raise DomainError("labels, events and prices must describe the same day")
    n_groups = int(labels.max()) + 1 if len(labels) else 0
    first, last, count, total = _group_extents(labels.astype(np.int64), events.volume.astype(np.float64), n_groups)
    present = count > 0
    kept = present & (count >= 2)
    n_excluded = int(np.sum(present & ~kept))
    first, last = first[kept], last[kept]
    sign = events.sign[first].astype(np.float64)
    impact = sign * (prices.after[last] - prices.prices[first])
    sigma = daily_volatility(prices)
    if sigma <= 0:
        raise NumericalError(f"day {events.day_id}: price path is constant")
    return MetaorderImpacts(
        impact=impact,
        Q=total[kept],
        n_trades=count[kept],
        V_D=float(events.volume.sum()),
        sigma=sigma,
        n_excluded=n_excluded,
        day_id=events.day_id,
    )


def peak_impact_curve(
    impacts: Union[MetaorderImpacts, Sequence[MetaorderImpacts]],
    edges: Optional[np.ndarray] = None,
    fit_range: Tuple[float, float] = (1e-3, 1e-1),
    min_count: int = 10,
    label: str = "true",
    n_boot: int = N_BOOT,
    seed: int = 0,
) -> ImpactCurve:
    """Mean ``impact / sigma`` in log bins of ``Q / V_D`` and its square-root-law fits."""
    if isinstance(impacts, MetaorderImpacts):
        impacts = [impacts]
    edges = DEFAULT_EDGES if edges is None else np.asarray(edges, dtype=np.float64)
    if np.any(np.diff(edges) <= 0):
        raise DomainError("bin edges must be strictly increasing")
    x = np.concatenate([m.Q_over_VD for m in impacts]) if impacts else np.empty(0)
    y = np.concatenate([m.impact_over_sigma for m in impacts]) if impacts else np.empty(0)
    n_excluded = sum(m.n_excluded for m in impacts)
    if n_excluded:
        logger.info("%s curve: %d single-trade metaorders excluded", label, n_excluded)

    n_bins = len(edges) - 1
    idx = np.searchsorted(edges, x, side="right") - 1
    inside = (idx >= 0) & (idx < n_bins)
    idx, y_in = idx[inside], y[inside]
    counts = np.bincount(idx, minlength=n_bins)

    def bin_means(sel: np.ndarray) -> np.ndarray:
        c = np.bincount(idx[sel], minlength=n_bins)
        s = np.bincount(idx[sel], weights=y_in[sel], minlength=n_bins)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(c > 0, s / np.maximum(c, 1), np.nan)

    mean = bin_means(np.arange(len(idx)))
    mean[counts < min_count] = np.nan
    stderr = np.full(n_bins, np.nan)
    if n_boot > 0 and len(idx) > 1:
        rng = np.random.default_rng(seed)
        draws = np.stack([bin_means(rng.integers(0, len(idx), len(idx))) for _ in range(n_boot)])
        with np.errstate(invalid="ignore"):
            stderr = np.nanstd(draws, axis=0, ddof=1)
        stderr[counts < min_count] = np.nan

    centers = np.sqrt(edges[1:] * edges[:-1])
    ok = np.isfinite(mean) & (mean > 0) & (centers >= fit_range[0]) & (centers <= fit_range[1])
    fit = None
    Y = Y_err = float("nan")
    try:
        fit = fit_power_law(centers[ok], mean[ok])
    except FitError as exc:
        logger.warning("%s curve: square-root-law fit skipped: %s", label, exc)
    if ok.any():
        log_Y = np.log(mean[ok]) - 0.5 * np.log(centers[ok])
        Y = float(np.exp(log_Y.mean()))
        Y_err = float(Y * log_Y.std(ddof=1) / math.sqrt(ok.sum())) if ok.sum() > 1 else 0.0
    return ImpactCurve(label, edges, mean, stderr, counts, fit, Y, Y_err, n_excluded)


def compare_curves(true_curve: ImpactCurve, proxy_curve: ImpactCurve, tolerance: float = 0.15) -> CurveComparison:
    """Per-bin ratio proxy / true and the smallest ``Q / V_D`` beyond which they agree."""
    if not np.array_equal(true_curve.edges, proxy_curve.edges):
        raise NumericalError("curves must share bin edges")
    m_t, m_p = true_curve.mean_impact, proxy_curve.mean_impact
    with np.errstate(invalid="ignore", divide="ignore"):
        ratio = m_p / m_t
        rel = np.sqrt((true_curve.stderr / m_t) ** 2 + (proxy_curve.stderr / m_p) ** 2)
    comparable = np.flatnonzero(np.isfinite(ratio))
    if comparable.size == 0:
        raise NumericalError("true and proxy curves have disjoint supports")
    agree = np.abs(ratio[comparable] - 1.0) < tolerance
    crossover = None
    if agree[-1]:
        # first comparable bin after the last disagreement
        misses = np.flatnonzero(~agree)
        start = comparable[misses[-1] + 1] if misses.size else comparable[0]
        crossover = float(true_curve.centers[start])
    return CurveComparison(
        centers=true_curve.centers,
        ratio=ratio,
        ratio_stderr=np.abs(ratio) * rel,
        crossover=crossover,
    )
