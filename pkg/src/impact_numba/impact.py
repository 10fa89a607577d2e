# src/impact_numba/impact.py

"""
Generalized square-root propagator and exact mid-price reconstruction.

The price just before execution ``k`` is the sum, over every strictly earlier child order
``j``, of ``eps_j * theta * sqrt(q_j) * (phi * (t_j - t_start_j) + n0) ** -(1/2 - beta_j)``
times the decay factor ``(tau0 / (t_k - t_j + tau0)) ** beta_j``. The sum is evaluated
exactly, O(N^2) per day, in a fixed ascending-j order so that the serial and parallel
kernels agree bit for bit.
"""

import logging
import math
from dataclasses import dataclass

import numpy as np
from numba import njit, prange

from ._backend import get_backend
from .config import SimulationConfig
from .errors import DomainError, UnsortedFlowError
from .flowgen import EventFlow

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class PriceSeries:
    """Mid-price of one day sampled at its execution times.

    ``prices[k]`` is the price just before execution ``k``; ``after[k]`` the price just
    after it, including every execution that shares its timestamp.
    """

    times: np.ndarray
    prices: np.ndarray
    after: np.ndarray
    day_id: int = 0

    def __post_init__(self):
        if not len(self.times) == len(self.prices) == len(self.after):
            raise DomainError("times, prices and after must have equal length")
        for name in ("times", "prices", "after"):
            arr = np.ascontiguousarray(getattr(self, name), dtype=np.float64)
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    def __len__(self) -> int:
        return len(self.times)

    def negated(self) -> "PriceSeries":
        return PriceSeries(self.times, -self.prices, -self.after, self.day_id)


# ==============================================================================
# Kernel
# ==============================================================================


def kernel(
    q: float,
    t_start: float,
    t_exec: float,
    t_eval: float,
    phi: float,
    beta_q: float,
    theta: float = 1.0,
    n0: float = 3.0,
    tau0: float = 1.0,
) -> float:
    """Price contribution at ``t_eval`` of one unit-sign child order executed at ``t_exec``."""
    if not t_eval >= t_exec >= t_start:
        raise DomainError("kernel requires t_eval >= t_exec >= t_start")
    if not 0.0 <= beta_q < 0.5:
        raise DomainError("beta_q must lie in [0, 1/2)")
    if n0 <= 0 or tau0 <= 0:
        raise DomainError("n0 and tau0 must be > 0")
    if q < 1:
        raise DomainError("child volume q must be >= 1")
    amplitude = theta * math.sqrt(q) * (phi * (t_exec - t_start) + n0) ** -(0.5 - beta_q)
    return amplitude * (tau0 / (t_eval - t_exec + tau0)) ** beta_q


@njit(nogil=True)
def _amplitudes(
    timestamp: np.ndarray,
    volume: np.ndarray,
    sign: np.ndarray,
    t_start: np.ndarray,
    beta: np.ndarray,
    theta: float,
    phi: float,
    n0: float,
) -> np.ndarray:
    n = len(timestamp)
    out = np.empty(n, dtype=np.float64)
    for j in range(n):
        rank_time = phi * (timestamp[j] - t_start[j]) + n0
        out[j] = sign[j] * theta * np.sqrt(volume[j]) * rank_time ** -(0.5 - beta[j])
    return out


@njit(nogil=True)
def _price_one(t: np.ndarray, amp: np.ndarray, beta: np.ndarray, tau0: float, t_eval: float, lo: int) -> float:
    acc = 0.0
    for j in range(lo):
        acc += amp[j] * (tau0 / (t_eval - t[j] + tau0)) ** beta[j]
    return acc


@njit(nogil=True)
def _price_path_serial(t, amp, beta, tau0, lo, hi):
    n = len(t)
    before = np.empty(n, dtype=np.float64)
    after = np.empty(n, dtype=np.float64)
    for k in range(n):
        before[k] = _price_one(t, amp, beta, tau0, t[k], lo[k])
        tie = 0.0
        for j in range(lo[k], hi[k]):
            tie += amp[j]
        after[k] = before[k] + tie
    return before, after


@njit(parallel=True)
def _price_path_parallel(t, amp, beta, tau0, lo, hi):
    n = len(t)
    before = np.empty(n, dtype=np.float64)
    after = np.empty(n, dtype=np.float64)
    for k in prange(n):
        before[k] = _price_one(t, amp, beta, tau0, t[k], lo[k])
        tie = 0.0
        for j in range(lo[k], hi[k]):
            tie += amp[j]
        after[k] = before[k] + tie
    return before, after


# ==============================================================================
# Price reconstruction
# ==============================================================================


def _flow_amplitudes(events: EventFlow, cfg: SimulationConfig) -> np.ndarray:
    if events.parent_id is None:
        raise DomainError("pricing needs metaorder start times; the flow is anonymized")
    if cfg.tau0 is None:
        raise DomainError("tau0 is unresolved; call flowgen.resolve_config first")
    return _amplitudes(
        events.timestamp,
        events.volume.astype(np.float64),
        events.sign.astype(np.float64),
        events.parent_id,
        events.beta_q,
        float(cfg.theta),
        float(cfg.phi),
        float(cfg.n0),
    )


def reconstruct_prices(events: EventFlow, cfg: SimulationConfig, backend: str = "auto") -> PriceSeries:
    """Exact propagator price path of one day, evaluated at every execution time.

    ``backend`` is 'serial', 'parallel' or 'auto'. Both kernels sum in the same order and
    return identical results.
    """
    if not events.is_sorted():
        raise UnsortedFlowError("event flow must be sorted by timestamp")
    if backend == "auto":
        backend = get_backend()
    if backend not in ("serial", "parallel"):
        raise DomainError(f"Unknown backend: {backend}. Available: ['auto', 'parallel', 'serial']")
    t = events.timestamp
    amp = _flow_amplitudes(events, cfg)
    lo = np.searchsorted(t, t, side="left").astype(np.int64)
    hi = np.searchsorted(t, t, side="right").astype(np.int64)
    path = _price_path_parallel if backend == "parallel" else _price_path_serial
    before, after = path(t, amp, events.beta_q, float(cfg.tau0), lo, hi)
    logger.debug("priced day %d: %d events with the %s kernel", events.day_id, len(t), backend)
    return PriceSeries(times=t, prices=before, after=after, day_id=events.day_id)


def _price_before(events: EventFlow, t_eval: float, cfg: SimulationConfig, side: str) -> float:
    t = events.timestamp
    cut = int(np.searchsorted(t, t_eval, side=side))
    if cut == 0:
        return 0.0
    amp = _flow_amplitudes(events.subset(np.arange(cut)), cfg)
    return float(_price_one(t[:cut], amp, events.beta_q[:cut], float(cfg.tau0), float(t_eval), cut))


def price_at(events: EventFlow, t_eval: float, cfg: SimulationConfig) -> float:
    """Price at ``t_eval`` from every execution strictly before it."""
    if t_eval < 0:
        raise DomainError("t_eval must be >= 0")
    if not events.is_sorted():
        raise UnsortedFlowError("event flow must be sorted by timestamp")
    return _price_before(events, t_eval, cfg, "left")


def price_after(events: EventFlow, t_eval: float, cfg: SimulationConfig) -> float:
    """Price at ``t_eval`` including executions that happen exactly at ``t_eval``."""
    if t_eval < 0:
        raise DomainError("t_eval must be >= 0")
    if not events.is_sorted():
        raise UnsortedFlowError("event flow must be sorted by timestamp")
    return _price_before(events, t_eval, cfg, "right")
