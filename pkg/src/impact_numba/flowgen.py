# src/impact_numba/flowgen.py

"""
Metaorder and child-order flow generation.

A trading day is a Poisson stream of metaorders. Each metaorder carries a constant child
volume ``q``, a power-law distributed number of child orders ``s`` whose tail exponent
depends on ``q``, a sign that may be long-range correlated with the signs of other
metaorders, and a decay exponent ``beta_q`` used later by the propagator. Child orders are
spaced by exponential gaps of rate ``phi`` and merged into one time-sorted event flow.
"""

import dataclasses
import logging
import math
from dataclasses import dataclass
from typing import Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import fft as sp_fft

from .config import SimulationConfig
from .errors import DomainError, SignCorrelationError
from .helpers import _segment_times

logger = logging.getLogger(__name__)

ArrayLike = Union[float, np.ndarray]


# ==============================================================================
# Record types
# ==============================================================================


@dataclass(frozen=True)
class Metaorder:
    """One parent order. Its start time doubles as its identifier."""

    id: float
    t_start: float
    sign: int
    q: float
    s: int
    mu_q: float
    beta_q: float
    child_times: np.ndarray


@dataclass(frozen=True)
class ChildOrderEvent:
    """One executed child order, as stored in the flow table."""

    timestamp: float
    volume: float
    sign: int
    rank: int
    parent_id: Optional[float]
    beta_q: float
    t_start: Optional[float]


def _readonly(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class MetaorderTable:
    """Columnar store of one day's metaorders, sorted by start time.

    ``child_times`` is flat; the children of metaorder ``i`` live in
    ``child_times[offsets[i]:offsets[i] + s[i]]``.
    """

    t_start: np.ndarray
    sign: np.ndarray
    q: np.ndarray
    s: np.ndarray
    mu_q: np.ndarray
    beta_q: np.ndarray
    child_times: np.ndarray
    offsets: np.ndarray

    def __post_init__(self):
        for field in dataclasses.fields(self):
            object.__setattr__(self, field.name, _readonly(getattr(self, field.name)))

    @property
    def id(self) -> np.ndarray:
        return self.t_start

    def __len__(self) -> int:
        return len(self.t_start)

    def __getitem__(self, i: int) -> Metaorder:
        start = self.offsets[i]
        return Metaorder(
            id=float(self.t_start[i]),
            t_start=float(self.t_start[i]),
            sign=int(self.sign[i]),
            q=float(self.q[i]),
            s=int(self.s[i]),
            mu_q=float(self.mu_q[i]),
            beta_q=float(self.beta_q[i]),
            child_times=self.child_times[start:start + self.s[i]],
        )

    def __iter__(self) -> Iterator[Metaorder]:
        for i in range(len(self)):
            yield self[i]

    @classmethod
    def from_records(cls, metaorders: Sequence[Metaorder]) -> "MetaorderTable":
        """Build a table from individual records, e.g. hand-made test scenarios."""
        records = sorted(metaorders, key=lambda mo: mo.t_start)
        sizes = np.array([mo.s for mo in records], dtype=np.int64)
        for mo in records:
            if len(mo.child_times) != mo.s or mo.s < 1:
                raise DomainError(f"Metaorder {mo.id}: expected {mo.s} child times, got {len(mo.child_times)}")
        offsets = np.zeros(len(records), dtype=np.int64)
        if len(records):
            offsets[1:] = np.cumsum(sizes)[:-1]
        return cls(
            t_start=np.array([mo.t_start for mo in records], dtype=np.float64),
            sign=np.array([mo.sign for mo in records], dtype=np.int8),
            q=np.array([mo.q for mo in records], dtype=np.float64),
            s=sizes,
            mu_q=np.array([mo.mu_q for mo in records], dtype=np.float64),
            beta_q=np.array([mo.beta_q for mo in records], dtype=np.float64),
            child_times=np.concatenate([np.asarray(mo.child_times, dtype=np.float64) for mo in records])
            if records else np.empty(0),
            offsets=offsets,
        )


@dataclass(frozen=True, eq=False)
class EventFlow:
    """Columnar, time-sorted child-order flow of a single day.

    ``parent_id`` is ``None`` for anonymized flows. ``origin`` maps each row back to its
    position in the flow it was extracted from (identity for a full day).
    """

    timestamp: np.ndarray
    volume: np.ndarray
    sign: np.ndarray
    rank: np.ndarray
    parent_id: Optional[np.ndarray]
    beta_q: np.ndarray
    day_id: int = 0
    origin: Optional[np.ndarray] = None

    def __post_init__(self):
        n = len(self.timestamp)
        if self.origin is None:
            object.__setattr__(self, "origin", np.arange(n, dtype=np.int64))
        for name in ("timestamp", "volume", "sign", "rank", "parent_id", "beta_q", "origin"):
            value = getattr(self, name)
            if value is None:
                continue
            if len(value) != n:
                raise DomainError(f"Column {name} has {len(value)} rows, expected {n}")
            object.__setattr__(self, name, _readonly(value))

    def __len__(self) -> int:
        return len(self.timestamp)

    def __getitem__(self, k: int) -> ChildOrderEvent:
        parent = None if self.parent_id is None else float(self.parent_id[k])
        return ChildOrderEvent(
            timestamp=float(self.timestamp[k]),
            volume=float(self.volume[k]),
            sign=int(self.sign[k]),
            rank=int(self.rank[k]),
            parent_id=parent,
            beta_q=float(self.beta_q[k]),
            t_start=parent,
        )

    def __iter__(self) -> Iterator[ChildOrderEvent]:
        for k in range(len(self)):
            yield self[k]

    @property
    def t_start(self) -> Optional[np.ndarray]:
        return self.parent_id

    @property
    def has_parents(self) -> bool:
        return self.parent_id is not None

    @property
    def total_volume(self) -> float:
        return float(self.volume.sum())

    def is_sorted(self) -> bool:
        return bool(np.all(np.diff(self.timestamp) >= 0))

    def subset(self, index: np.ndarray) -> "EventFlow":
        """Rows selected by a boolean mask or index array, in their original order."""
        index = np.asarray(index)
        if index.dtype == bool:
            index = np.flatnonzero(index)
        return EventFlow(
            timestamp=self.timestamp[index],
            volume=self.volume[index],
            sign=self.sign[index],
            rank=self.rank[index],
            parent_id=None if self.parent_id is None else self.parent_id[index],
            beta_q=self.beta_q[index],
            day_id=self.day_id,
            origin=self.origin[index],
        )

    def anonymized(self) -> "EventFlow":
        """Same flow without metaorder identifiers."""
        return dataclasses.replace(self, parent_id=None)


@dataclass(frozen=True, eq=False)
class DayFlow:
    """One simulated day: its metaorders and the merged child-order flow."""

    metaorders: MetaorderTable
    events: EventFlow
    day_id: int = 0


# ==============================================================================
# Exponents
# ==============================================================================


def calibrate_base_exponents(cfg: SimulationConfig) -> Tuple[float, float]:
    """Exponents at q = 1 from the exponents at the typical volume q = e^m."""
    mu_1 = cfg.mu_m - cfg.lam * cfg.m
    beta_1 = cfg.beta_m + cfg.lam_p * cfg.m
    return mu_1, beta_1


def _check_volume(q: ArrayLike) -> np.ndarray:
    q_arr = np.asarray(q, dtype=np.float64)
    if np.any(~(q_arr >= 1.0)):
        raise DomainError("child volume q must be >= 1")
    return q_arr


def mu_of_q(q: ArrayLike, mu_1: float, lam: float, eps_mu: float = 0.05) -> ArrayLike:
    """Size-tail exponent mu_1 + lam * ln(q), floored at 1 + eps_mu."""
    q_arr = _check_volume(q)
    out = np.maximum(mu_1 + lam * np.log(q_arr), 1.0 + eps_mu)
    return float(out) if out.ndim == 0 else out


def beta_of_q(q: ArrayLike, beta_1: float, lam_p: float, eps_beta: float = 1e-3) -> ArrayLike:
    """Decay exponent beta_1 - lam_p * ln(q), clamped to [0, 1/2 - eps_beta].

    Zero encodes permanent impact.
    """
    q_arr = _check_volume(q)
    out = np.clip(beta_1 - lam_p * np.log(q_arr), 0.0, 0.5 - eps_beta)
    return float(out) if out.ndim == 0 else out


# ==============================================================================
# Samplers
# ==============================================================================


def sample_child_volumes(rng: np.random.Generator, size: int, m: float, sigma_l: float) -> np.ndarray:
    """Lognormal(m, sigma_l) volumes conditioned on q >= 1, by resampling draws below 1."""
    if sigma_l < 0:
        raise DomainError("sigma_l must be >= 0")
    if sigma_l == 0.0:
        if m < 0:
            raise DomainError("a degenerate volume distribution needs m >= 0")
        return np.full(size, math.exp(m))
    q = rng.lognormal(m, sigma_l, size)
    low = q < 1.0
    while low.any():
        q[low] = rng.lognormal(m, sigma_l, int(low.sum()))
        low = q < 1.0
    return q


def sample_child_volume(rng: np.random.Generator, m: float, sigma_l: float) -> float:
    return float(sample_child_volumes(rng, 1, m, sigma_l)[0])


def _size_acceptance(s: np.ndarray, mu: np.ndarray) -> np.ndarray:
    """Target over proposal mass of integer s, relative to its maximum at s = 1."""
    # proposal mass of s under the continuous Pareto is s^-mu * (1 - (1 + 1/s)^-mu) / mu
    ratio = 1.0 / (s * -np.expm1(-mu * np.log1p(1.0 / s)))
    ratio_at_one = 1.0 / -np.expm1(-mu * math.log(2.0))
    return ratio / ratio_at_one


def sample_metaorder_sizes(rng: np.random.Generator, mu: ArrayLike, s_max: int, size: Optional[int] = None) -> np.ndarray:
    """Integer sizes on [1, s_max] with P(s) proportional to s^(-1-mu).

    Draws a continuous Pareto on [1, s_max + 1), floors it and thins by rejection, which
    keeps one exponent per draw so that volume-dependent exponents need no tables.
    """
    if s_max < 1:
        raise DomainError("s_max must be >= 1")
    mu_arr = np.asarray(mu, dtype=np.float64)
    if size is not None:
        mu_arr = np.broadcast_to(mu_arr, (size,))
    mu_arr = np.atleast_1d(mu_arr)
    if np.any(~(mu_arr > 1.0)):
        raise DomainError("size exponent mu must be > 1")
    out = np.ones(len(mu_arr), dtype=np.int64)
    if s_max == 1:
        return out
    pending = np.arange(len(mu_arr))
    while pending.size:
        mu_p = mu_arr[pending]
        u = rng.random(pending.size)
        v = rng.random(pending.size)
        upper = (s_max + 1.0) ** (-mu_p)
        x = (1.0 - u * (1.0 - upper)) ** (-1.0 / mu_p)
        s = np.minimum(np.floor(x), s_max)
        accept = v < _size_acceptance(s, mu_p)
        out[pending[accept]] = s[accept].astype(np.int64)
        pending = pending[~accept]
    return out


def sample_metaorder_size(rng: np.random.Generator, mu_q: float, s_max: int) -> int:
    return int(sample_metaorder_sizes(rng, mu_q, s_max)[0])


def truncated_power_law_mean(mu: float, s_max: int) -> float:
    """Exact mean of the discrete power law P(s) proportional to s^(-1-mu) on [1, s_max]."""
    s = np.arange(1, s_max + 1, dtype=np.float64)
    w = s ** (-1.0 - mu)
    return float(np.dot(s, w) / w.sum())


def truncated_power_law_ccdf(mu: float, s_max: int) -> np.ndarray:
    """P(S >= s) for s = 1..s_max."""
    s = np.arange(1, s_max + 1, dtype=np.float64)
    w = s ** (-1.0 - mu)
    return np.cumsum(w[::-1])[::-1] / w.sum()


def first_indefinite_lag(rho: np.ndarray) -> Optional[int]:
    """Smallest lag L at which the Toeplitz matrix of ``[1, rho[0], ..., rho[L - 1]]`` stops
    being positive definite, found by Durbin's recursion; ``None`` if it never does.
    """
    rho = np.asarray(rho, dtype=np.float64)
    coef = np.empty(0)
    err = 1.0
    for m in range(1, len(rho) + 1):
        k = (rho[m - 1] - np.dot(coef, rho[m - 2::-1][:m - 1])) / err if m > 1 else rho[0]
        if abs(k) >= 1.0:
            return m
        coef = np.append(coef - k * coef[::-1], k)
        err *= 1.0 - k * k
    return None


def generate_correlated_signs(
    rng: np.random.Generator,
    n: int,
    gamma_meta: float,
    gamma_cross: float,
    t_cut: int = 1_000,
) -> np.ndarray:
    """Stationary ±1 sequence with E[e_t e_(t+tau)] = gamma_meta * tau^(-gamma_cross) up to t_cut.

    A Gaussian sequence with covariance sin(pi/2 * target) is drawn by circulant embedding
    and clipped to its sign; by the arcsine law the signs then carry the target
    correlation exactly. Lags beyond ``t_cut`` are uncorrelated.
    """
    if not 0.0 <= gamma_meta < 1.0:
        raise DomainError("gamma_meta must lie in [0, 1)")
    if gamma_cross <= 0:
        raise DomainError("gamma_cross must be > 0")
    if t_cut < 1:
        raise DomainError("t_cut must be >= 1")
    if n <= 0:
        return np.empty(0, dtype=np.int8)
    if gamma_meta == 0.0:
        return np.where(rng.random(n) < 0.5, -1, 1).astype(np.int8)

    lags = np.arange(1, t_cut + 1, dtype=np.float64)
    rho = np.sin(0.5 * np.pi * gamma_meta * lags ** (-gamma_cross))
    size = 1 << int(math.ceil(math.log2(2 * max(n, t_cut + 1))))
    row = np.zeros(size)
    row[0] = 1.0
    row[1:t_cut + 1] = rho
    row[size - t_cut:] = rho[::-1]
    eig = sp_fft.fft(row).real
    floor = -1e-10 * eig.max()
    if eig.min() < floor:
        k = int(np.argmin(eig))
        lag = first_indefinite_lag(rho) or t_cut
        raise SignCorrelationError(
            f"sign covariance is not positive semidefinite from lag {lag} "
            f"(eigenvalue {eig[k]:.3e} at frequency {k}/{size}); lower gamma_meta or t_cut",
            lag=lag,
            frequency=k,
            min_eigenvalue=float(eig[k]),
        )
    eig = np.clip(eig, 0.0, None)
    z = rng.standard_normal(size) + 1j * rng.standard_normal(size)
    x = sp_fft.fft(np.sqrt(eig / size) * z).real[:n]
    return np.where(x >= 0.0, 1, -1).astype(np.int8)


def sample_start_times(rng: np.random.Generator, nu: float, day_length: float) -> np.ndarray:
    """Poisson start times of rate nu on [0, day_length), strictly increasing."""
    if nu <= 0:
        raise DomainError("nu must be > 0")
    expected = nu * day_length
    chunk = int(expected + 5.0 * math.sqrt(expected) + 16)
    parts: List[np.ndarray] = []
    last = 0.0
    while last < day_length:
        gaps = rng.exponential(1.0 / nu, chunk)
        times = last + np.cumsum(gaps)
        steps = np.diff(times, prepend=last)
        clash = steps <= 0.0
        while clash.any():
            gaps[clash] = rng.exponential(1.0 / nu, int(clash.sum()))
            times = last + np.cumsum(gaps)
            steps = np.diff(times, prepend=last)
            clash = steps <= 0.0
        parts.append(times[times < day_length])
        last = float(times[-1])
    return np.concatenate(parts)


def schedule_children(rng: np.random.Generator, t_start: float, s: int, phi: float) -> np.ndarray:
    """Execution times of s child orders separated by exponential gaps of mean 1/phi."""
    if s < 1:
        raise DomainError("s must be >= 1")
    if phi <= 0:
        raise DomainError("phi must be > 0")
    gaps = rng.exponential(1.0 / phi, s - 1)
    return _segment_times(np.array([t_start], dtype=np.float64), np.array([s], dtype=np.int64), gaps)


# ==============================================================================
# Derived parameters
# ==============================================================================


def derive_tau0(cfg: SimulationConfig, mean_size: float) -> float:
    """Characteristic time 1 / (nu * phi * mean_size)."""
    if mean_size <= 0:
        raise DomainError("mean_size must be > 0")
    return 1.0 / (cfg.nu * cfg.phi * mean_size)


def expected_metaorder_size(cfg: SimulationConfig, n_nodes: int = 64) -> float:
    """Mean child count per metaorder, averaged over the truncated lognormal volume law."""
    mu_1, _ = calibrate_base_exponents(cfg)
    if not cfg.volume_fluctuations:
        return truncated_power_law_mean(mu_of_q(1.0, mu_1, cfg.lam, cfg.eps_mu), cfg.s_max)
    if not cfg.volume_dependent or cfg.sigma_l == 0.0:
        q_typ = max(math.exp(cfg.m), 1.0)
        return truncated_power_law_mean(mu_of_q(q_typ, mu_1, cfg.lam, cfg.eps_mu), cfg.s_max)
    z, w = np.polynomial.hermite_e.hermegauss(n_nodes)
    q = np.exp(cfg.m + cfg.sigma_l * z)
    keep = q >= 1.0
    mus = mu_of_q(q[keep], mu_1, cfg.lam, cfg.eps_mu)
    means = np.array([truncated_power_law_mean(mu, cfg.s_max) for mu in mus])
    return float(np.dot(w[keep], means) / w[keep].sum())


def calibrate_day_length(cfg: SimulationConfig, target_events: Optional[int] = None) -> float:
    """Day length at which the expected number of child orders per day equals the target."""
    target = cfg.target_events if target_events is None else target_events
    return float(target) / (cfg.nu * expected_metaorder_size(cfg))


def participation_rate(cfg: SimulationConfig) -> float:
    """Share of all trades executed by one active metaorder, ``phi / (nu * E[s])``.

    Expressed per trade this rate is dimensionless, so ``derive_tau0`` returns a time.
    """
    return cfg.phi / (cfg.nu * expected_metaorder_size(cfg))


def resolve_config(cfg: SimulationConfig) -> SimulationConfig:
    """Apply scenario flags and fill in ``day_length`` and ``tau0`` when they are unset.

    ``tau0`` takes the participation rate in trade units; with ``phi`` in time units the
    same formula gives a time squared and hundreds of trade spacings.
    """
    cfg = cfg.apply_scenario().validate()
    changes = {}
    if cfg.day_length is None:
        changes["day_length"] = calibrate_day_length(cfg)
    if cfg.tau0 is None:
        per_trade = dataclasses.replace(cfg, phi=participation_rate(cfg))
        changes["tau0"] = derive_tau0(per_trade, truncated_power_law_mean(cfg.mu_m, cfg.s_max))
    if changes:
        cfg = dataclasses.replace(cfg, **changes)
        logger.debug("resolved day_length=%.6g tau0=%.6g", cfg.day_length, cfg.tau0)
    return cfg.validate()


# ==============================================================================
# Day assembly
# ==============================================================================


def merge_child_orders(metaorders: MetaorderTable, day_id: int = 0) -> EventFlow:
    """Flatten metaorders into one flow sorted by (timestamp, parent_id)."""
    sizes = metaorders.s
    parent = np.repeat(np.arange(len(metaorders)), sizes)
    rank = np.arange(len(metaorders.child_times), dtype=np.int64) - np.repeat(metaorders.offsets, sizes) + 1
    parent_id = metaorders.t_start[parent]
    times = metaorders.child_times
    order = np.lexsort((parent_id, times))
    return EventFlow(
        timestamp=times[order],
        volume=metaorders.q[parent][order],
        sign=metaorders.sign[parent][order],
        rank=rank[order],
        parent_id=parent_id[order],
        beta_q=metaorders.beta_q[parent][order],
        day_id=day_id,
    )


def day_seed(seed: int, day: int) -> int:
    """Seed of one day, independent of how days are scheduled."""
    return int(np.random.SeedSequence([seed, day]).generate_state(1, dtype=np.uint64)[0])


def build_day_flow(cfg: SimulationConfig, rng: Optional[np.random.Generator] = None, day_id: int = 0) -> DayFlow:
    """Simulate one trading day of metaorders and their merged child-order flow.

    Metaorders started before ``day_length`` run their full schedule, so child orders may
    fall after the nominal close.
    """
    cfg = cfg if cfg.is_resolved else resolve_config(cfg)
    if rng is None:
        rng = np.random.default_rng(day_seed(cfg.seed, day_id))

    starts = sample_start_times(rng, cfg.nu, cfg.day_length)
    n = len(starts)
    if cfg.volume_fluctuations:
        q = sample_child_volumes(rng, n, cfg.m, cfg.sigma_l)
    else:
        q = np.ones(n)
    mu_1, beta_1 = calibrate_base_exponents(cfg)
    mu_q = np.atleast_1d(mu_of_q(q, mu_1, cfg.lam, cfg.eps_mu))
    beta_q = np.atleast_1d(beta_of_q(q, beta_1, cfg.lam_p, cfg.eps_beta))
    signs = generate_correlated_signs(rng, n, cfg.gamma_meta, cfg.gamma_cross, cfg.t_cut)
    sizes = sample_metaorder_sizes(rng, mu_q, cfg.s_max) if n else np.empty(0, dtype=np.int64)
    gaps = rng.exponential(1.0 / cfg.phi, int(sizes.sum()) - n)
    child_times = _segment_times(starts, sizes, gaps)

    offsets = np.zeros(n, dtype=np.int64)
    if n:
        offsets[1:] = np.cumsum(sizes)[:-1]
    table = MetaorderTable(
        t_start=starts,
        sign=signs,
        q=q,
        s=sizes,
        mu_q=mu_q,
        beta_q=beta_q,
        child_times=child_times,
        offsets=offsets,
    )
    events = merge_child_orders(table, day_id)
    logger.debug("day %d: %d metaorders, %d child orders", day_id, n, len(events))
    return DayFlow(metaorders=table, events=events, day_id=day_id)
