"""
JIT pre-compilation for impact-numba.

Compiles every numba kernel on tiny inputs so that compile time is paid once per process,
before any timed stage.
"""

import logging
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from typing import Any, Callable, Dict, List, Tuple

import numpy as np

logger = logging.getLogger(__name__)

Job = Tuple[Callable, str, tuple]


class JITWarmupManager:
    """Manages JIT compilation warm-up for impact-numba kernels."""

    def __init__(self):
        self.warmed_functions: Dict[str, bool] = {}
        self.warmup_times: Dict[str, float] = {}
        self.lock = threading.Lock()
        self._warmup_data = None

    def _generate_warmup_data(self, size: int = 64) -> Dict[str, np.ndarray]:
        """Small sorted flow with a tie, for warm-up calls."""
        if self._warmup_data is not None:
            return self._warmup_data
        rng = np.random.default_rng(42)
        t = np.cumsum(rng.exponential(1.0, size))
        t[5] = t[4]
        self._warmup_data = {
            "t": t,
            "volume": np.ones(size),
            "sign": np.where(rng.random(size) < 0.5, -1.0, 1.0),
            "t_start": t.copy(),
            "beta": np.full(size, 0.25),
            "lo": np.searchsorted(t, t, side="left").astype(np.int64),
            "hi": np.searchsorted(t, t, side="right").astype(np.int64),
            "labels": np.arange(size, dtype=np.int64) % 4,
        }
        return self._warmup_data

    def warmup_function(self, func: Callable, func_name: str, args: tuple) -> float:
        """Compile and run a single kernel; returns the elapsed time, 0.0 if already warm."""
        if func_name in self.warmed_functions:
            return 0.0
        start = time.perf_counter()
        func(*args)
        elapsed = time.perf_counter() - start
        with self.lock:
            self.warmed_functions[func_name] = True
            self.warmup_times[func_name] = elapsed
        logger.debug("compiled %s in %.3fs", func_name, elapsed)
        return elapsed

    def _jobs(self, data: Dict[str, np.ndarray]) -> Dict[str, List[Job]]:
        from .helpers import (
            _group_extents,
            _increment_moments,
            _lagged_products,
            _segment_times,
            _window_deltas,
            _window_sums,
        )
        from .impact import _amplitudes, _price_path_parallel, _price_path_serial
        from .proxy import _chain_ids

        t, lags = data["t"], np.array([1, 2, 4], dtype=np.int64)
        price_args = (t, data["sign"], data["beta"], 10.0, data["lo"], data["hi"])
        return {
            "flowgen": [
                (_segment_times, "_segment_times",
                 (t[:2], np.array([2, 3], dtype=np.int64), np.ones(3))),
            ],
            "impact": [
                (_amplitudes, "_amplitudes",
                 (t, data["volume"], data["sign"], data["t_start"], data["beta"], 1.0, 2e-3, 3.0)),
                (_price_path_serial, "_price_path_serial", price_args),
                (_price_path_parallel, "_price_path_parallel", price_args),
            ],
            "stats": [
                (_window_sums, "_window_sums", (data["sign"], 8)),
                (_window_deltas, "_window_deltas", (t, t, 8)),
                (_lagged_products, "_lagged_products", (data["sign"], lags)),
                (_increment_moments, "_increment_moments", (t, lags, np.array([2.0, 4.0]))),
            ],
            "proxy": [
                (_chain_ids, "_chain_ids", (t, np.array([3, 2], dtype=np.int64), np.ones(2 * len(t)), 4.0, 4.0)),
                (_group_extents, "_group_extents", (data["labels"], data["volume"], 4)),
            ],
        }

    def warmup_group(self, jobs: List[Job]) -> Dict[str, float]:
        return {name: self.warmup_function(func, name, args) for func, name, args in jobs}

    def warmup_all(self, parallel: bool = False) -> Dict[str, float]:
        """Warm up every kernel, optionally one thread per module."""
        start = time.perf_counter()
        groups = self._jobs(self._generate_warmup_data())
        results: Dict[str, float] = {}
        if parallel:
            with ThreadPoolExecutor(max_workers=len(groups)) as executor:
                for partial in executor.map(self.warmup_group, groups.values()):
                    results.update(partial)
        else:
            for jobs in groups.values():
                results.update(self.warmup_group(jobs))
        compiled = sum(1 for v in results.values() if v > 0)
        logger.info("warmed up %d kernels in %.3fs", compiled, time.perf_counter() - start)
        return results

    def get_status(self) -> Dict[str, Any]:
        return {
            "warmed_functions": len(self.warmed_functions),
            "total_warmup_time": sum(self.warmup_times.values()),
            "functions": list(self.warmed_functions.keys()),
            "timings": dict(self.warmup_times),
        }


_warmup_manager = JITWarmupManager()


def warmup_all(parallel: bool = False) -> Dict[str, float]:
    """Compile all kernels in this process."""
    return _warmup_manager.warmup_all(parallel)


def get_warmup_status() -> Dict[str, Any]:
    return _warmup_manager.get_status()


def is_warmed_up() -> bool:
    return len(_warmup_manager.warmed_functions) > 0
