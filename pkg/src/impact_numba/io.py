# src/impact_numba/io.py

"""
Persistence of simulated days, cached prices and run manifests.

Every CSV starts with a ``# config_hash=<hash>`` comment line. Flow CSVs use the column
order ``timestamp,volume,sign,rank,parent_id,beta_q`` with timestamps written to six
decimals; the exact arrays live in the per-day ``.npz`` price cache.
"""

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np
import pandas as pd

from .errors import ConfigError, DomainError
from .flowgen import EventFlow
from .impact import PriceSeries

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

FLOW_COLUMNS = ["timestamp", "volume", "sign", "rank", "parent_id", "beta_q"]
PRICE_COLUMNS = ["timestamp", "price"]
TIDY_COLUMNS = ["diagnostic", "scenario", "a", "T", "value", "stderr"]
PROXY_COLUMNS = ["grouping", "Q_over_VD", "impact_over_sigma", "count", "stderr"]
MANIFEST_NAME = "manifest.json"
_HASH_PREFIX = "# config_hash="


def day_name(day: int) -> str:
    return f"day_{day:04d}"


# ==============================================================================
# CSV
# ==============================================================================


def write_csv(frame: pd.DataFrame, path: PathLike, config_hash: str) -> Path:
    """Write ``frame`` under a config-hash comment line; floats use shortest round-trip repr."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(f"{_HASH_PREFIX}{config_hash}\n")
        frame.to_csv(fh, index=False, lineterminator="\n")
    return path


def read_csv(path: PathLike) -> Tuple[pd.DataFrame, Optional[str]]:
    """Read a CSV written by ``write_csv``; returns the frame and its config hash, if any."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"Missing file: {path}")
    with open(path, "r", encoding="utf-8") as fh:
        first = fh.readline().strip()
    config_hash = first[len(_HASH_PREFIX):] if first.startswith(_HASH_PREFIX) else None
    frame = pd.read_csv(path, skiprows=1 if first.startswith("#") else 0)
    return frame, config_hash


def flow_to_frame(events: EventFlow) -> pd.DataFrame:
    columns: Dict[str, Any] = {
        "timestamp": [f"{t:.6f}" for t in events.timestamp],
        "volume": events.volume,
        "sign": events.sign.astype(np.int64),
        "rank": events.rank,
    }
    if events.parent_id is not None:
        columns["parent_id"] = [f"{t:.6f}" for t in events.parent_id]
    columns["beta_q"] = events.beta_q
    return pd.DataFrame(columns)


def flow_from_frame(frame: pd.DataFrame, day_id: int = 0) -> EventFlow:
    """Event flow from a flow CSV frame, with or without the ``parent_id`` column."""
    missing = [c for c in FLOW_COLUMNS if c != "parent_id" and c not in frame.columns]
    if missing:
        raise ConfigError(f"Flow table lacks columns {missing}")
    parent = frame["parent_id"].to_numpy(np.float64) if "parent_id" in frame.columns else None
    return EventFlow(
        timestamp=frame["timestamp"].to_numpy(np.float64),
        volume=frame["volume"].to_numpy(np.float64),
        sign=frame["sign"].to_numpy(np.int8),
        rank=frame["rank"].to_numpy(np.int64),
        parent_id=parent,
        beta_q=frame["beta_q"].to_numpy(np.float64),
        day_id=day_id,
    )


def prices_to_frame(prices: PriceSeries) -> pd.DataFrame:
    return pd.DataFrame({"timestamp": [f"{t:.6f}" for t in prices.times], "price": prices.prices})


def write_flow(events: EventFlow, path: PathLike, config_hash: str) -> Path:
    return write_csv(flow_to_frame(events), path, config_hash)


def read_flow(path: PathLike, day_id: int = 0) -> Tuple[EventFlow, Optional[str]]:
    frame, config_hash = read_csv(path)
    return flow_from_frame(frame, day_id), config_hash


def write_prices(prices: PriceSeries, path: PathLike, config_hash: str) -> Path:
    return write_csv(prices_to_frame(prices), path, config_hash)


# ==============================================================================
# Price cache
# ==============================================================================


def save_day_cache(path: PathLike, events: EventFlow, prices: PriceSeries, config_hash: str) -> Path:
    """Exact event columns and both price arrays of one day."""
    if events.parent_id is None:
        raise DomainError("only full flows with parent ids are cached")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savez(
        path,
        timestamp=events.timestamp,
        volume=events.volume,
        sign=events.sign,
        rank=events.rank,
        parent_id=events.parent_id,
        beta_q=events.beta_q,
        prices=prices.prices,
        after=prices.after,
        day_id=np.int64(events.day_id),
        config_hash=np.array(config_hash),
    )
    return path


def load_day_cache(path: PathLike, config_hash: Optional[str] = None) -> Optional[Tuple[EventFlow, PriceSeries]]:
    """Cached day, or ``None`` when the file is missing or belongs to another config."""
    path = Path(path)
    if not path.exists():
        return None
    with np.load(path) as data:
        if config_hash is not None and str(data["config_hash"]) != config_hash:
            logger.warning("cache %s was written for another config; ignoring it", path)
            return None
        day_id = int(data["day_id"])
        events = EventFlow(
            timestamp=data["timestamp"],
            volume=data["volume"],
            sign=data["sign"],
            rank=data["rank"],
            parent_id=data["parent_id"],
            beta_q=data["beta_q"],
            day_id=day_id,
        )
        prices = PriceSeries(times=data["timestamp"], prices=data["prices"], after=data["after"], day_id=day_id)
    return events, prices


# ==============================================================================
# Manifest
# ==============================================================================


@dataclass
class RunManifest:
    """Everything needed to regenerate a run's outputs."""

    config: Dict[str, Any]
    config_hash: str
    seed: int
    scenario: str
    day_seeds: List[int]
    version: str
    paths: Dict[str, List[str]] = field(default_factory=dict)
    durations: Dict[str, float] = field(default_factory=dict)

    def record(self, stage: str, seconds: float) -> None:
        self.durations[stage] = round(self.durations.get(stage, 0.0) + seconds, 6)

    def add_paths(self, kind: str, paths: List[Path], root: Path) -> None:
        self.paths.setdefault(kind, []).extend(str(Path(p).relative_to(root)) for p in paths)

    def write(self, run_dir: PathLike) -> Path:
        path = Path(run_dir) / MANIFEST_NAME
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(asdict(self), fh, indent=2, sort_keys=True)
            fh.write("\n")
        return path

    @classmethod
    def read(cls, run_dir: PathLike) -> "RunManifest":
        path = Path(run_dir) / MANIFEST_NAME
        if not path.exists():
            raise ConfigError(f"{run_dir} is not a run directory (no {MANIFEST_NAME})")
        try:
            with open(path, "r", encoding="utf-8") as fh:
                payload = json.load(fh)
            return cls(**payload)
        except (json.JSONDecodeError, TypeError) as exc:
            raise ConfigError(f"Malformed manifest {path}: {exc}") from exc
