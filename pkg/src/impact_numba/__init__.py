# src/impact_numba/__init__.py

"""
impact-numba
Metaorder order-flow simulation with a volume-dependent square-root propagator,
accelerated with Numba.

Features:
- Synthetic days of interleaved metaorders with long-memory signs and volume-dependent
  size and impact-decay exponents
- Mid-price reconstruction from the generalized propagator
- Diagnostics: sign autocorrelation by volume bin, volume-weighted imbalance moments,
  signature plot, aggregated-impact collapse, covariance and correlation surfaces
- Proxy metaorders from anonymized flow and peak-impact curves

Usage:
    import impact_numba as imp
    cfg = imp.preset("C-VD-VF", {"n_days": 2})
    cfg = imp.resolve_config(cfg)
    day = imp.build_day_flow(cfg, rng, day_id=0)
    prices = imp.reconstruct_prices(day.events, cfg)

    # JIT warmup for faster startup
    import impact_numba.warmup
    impact_numba.warmup.warmup_all()
"""

__version__ = "0.1.0"

from . import analysis, flowgen, impact, io, proxy, stats, warmup
from ._backend import get_backend, is_parallel_available
from .config import SCENARIOS, SimulationConfig, load_config, preset
from .errors import (
    ConfigError,
    DomainError,
    FitError,
    ImpactNumbaError,
    NumericalError,
    SignCorrelationError,
    UnsortedFlowError,
)
from .flowgen import (
    DayFlow,
    EventFlow,
    MetaorderTable,
    build_day_flow,
    day_seed,
    generate_correlated_signs,
    resolve_config,
)
from .impact import PriceSeries, kernel, price_at, reconstruct_prices
from .proxy import (
    ProxyParams,
    compare_curves,
    generate_meta_ids,
    metaorder_impacts,
    peak_impact_curve,
    proxy_grouping,
    true_grouping,
)

__all__ = [
    "analysis",
    "flowgen",
    "impact",
    "io",
    "proxy",
    "stats",
    "warmup",
    "get_backend",
    "is_parallel_available",
    "SCENARIOS",
    "SimulationConfig",
    "load_config",
    "preset",
    "ConfigError",
    "DomainError",
    "FitError",
    "ImpactNumbaError",
    "NumericalError",
    "SignCorrelationError",
    "UnsortedFlowError",
    "DayFlow",
    "EventFlow",
    "MetaorderTable",
    "build_day_flow",
    "day_seed",
    "generate_correlated_signs",
    "resolve_config",
    "PriceSeries",
    "kernel",
    "price_at",
    "reconstruct_prices",
    "ProxyParams",
    "compare_curves",
    "generate_meta_ids",
    "metaorder_impacts",
    "peak_impact_curve",
    "proxy_grouping",
    "true_grouping",
]
