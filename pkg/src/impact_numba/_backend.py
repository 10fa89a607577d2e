"""Pricing backend detection and dispatch helpers."""

import os

_PARALLEL_AVAILABLE = not os.environ.get("IMPACT_NUMBA_DISABLE_PARALLEL")


def get_backend(jobs: int = 1) -> str:
    """Return the pricing backend for a given day-level job count: 'parallel' or 'serial'.

    Day-level threads each run the serial kernel so that numba's threading layer is never
    entered from several Python threads at once.
    """
    if _PARALLEL_AVAILABLE and jobs <= 1:
        return "parallel"
    return "serial"


def is_parallel_available() -> bool:
    """Check if the multi-core pricing kernel is enabled."""
    return _PARALLEL_AVAILABLE
