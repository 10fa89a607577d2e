# src/impact_numba/config.py

"""
Simulation configuration, scenario presets and config-file loading.

A configuration is built in layers: preset defaults, then values from a YAML file, then
``key=value`` overrides. Scenario flags and derived quantities are applied last by
``impact_numba.flowgen.resolve_config``.
"""

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Iterable, Mapping, Optional, Union

import yaml

from .errors import ConfigError

SCENARIOS = ("NC-NVD-NVF", "NC-NVD-VF", "NC-VD-VF", "C-NVD-VF", "C-VD-VF")

# Config-file spellings that are not valid Python identifiers
_ALIASES = {"lambda": "lam", "lambda_p": "lam_p"}


@dataclass(frozen=True)
class SimulationConfig:
    """All parameters of one simulated market.

    ``day_length`` and ``tau0`` may be left as ``None``; they are then derived from the
    other parameters when the config is resolved.
    """

    nu: float = 1.5e-3
    phi: float = 2e-3
    m: float = 3.0
    sigma_l: float = 1.0
    mu_m: float = 1.5
    beta_m: float = 0.25
    lam: float = 0.125
    lam_p: float = 0.25
    gamma_meta: float = 0.1
    gamma_cross: float = 0.5
    theta: float = 1.0
    n0: float = 3.0
    tau0: Optional[float] = None
    s_max: int = 10_000
    day_length: Optional[float] = None
    n_days: int = 1
    seed: int = 0
    scenario: str = "C-VD-VF"
    t_cut: int = 1_000
    eps_mu: float = 0.05
    eps_beta: float = 1e-3
    target_events: int = 50_000

    # --- scenario flags -------------------------------------------------------------

    @property
    def correlated(self) -> bool:
        return self.scenario.startswith("C-")

    @property
    def volume_dependent(self) -> bool:
        return "-VD-" in self.scenario

    @property
    def volume_fluctuations(self) -> bool:
        return self.scenario.endswith("-VF")

    @property
    def is_resolved(self) -> bool:
        return self.day_length is not None and self.tau0 is not None

    # --- construction ---------------------------------------------------------------

    def with_overrides(self, overrides: Optional[Mapping[str, Any]] = None, **kwargs) -> "SimulationConfig":
        """Return a copy with fields replaced; accepts config-file aliases such as ``lambda``."""
        values = dict(overrides or {})
        values.update(kwargs)
        if not values:
            return self
        return dataclasses.replace(self, **_coerce(values))

    def apply_scenario(self) -> "SimulationConfig":
        """Force parameters to agree with the scenario triplet."""
        changes: Dict[str, Any] = {}
        if not self.correlated:
            changes["gamma_meta"] = 0.0
        if not self.volume_dependent:
            changes["lam"] = 0.0
            changes["lam_p"] = 0.0
        return dataclasses.replace(self, **changes) if changes else self

    def validate(self) -> "SimulationConfig":
        """Check parameter invariants, raising ``ConfigError`` on the first violation."""
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"Unknown scenario: {self.scenario}. Available: {list(SCENARIOS)}")
        checks = [
            (self.nu > 0, "nu must be > 0"),
            (self.phi > 0, "phi must be > 0"),
            (self.sigma_l >= 0, "sigma_l must be >= 0"),
            (self.s_max >= 1, "s_max must be >= 1"),
            (1.0 < self.mu_m < 2.0, "mu_m must lie in (1, 2)"),
            (0.0 <= self.gamma_meta < 1.0, "gamma_meta must lie in [0, 1)"),
            (self.gamma_cross > 0, "gamma_cross must be > 0"),
            (self.theta > 0, "theta must be > 0"),
            (self.n0 > 0, "n0 must be > 0"),
            (self.t_cut >= 1, "t_cut must be >= 1"),
            (self.n_days >= 1, "n_days must be >= 1"),
            (self.eps_mu > 0, "eps_mu must be > 0"),
            (0 < self.eps_beta < 0.5, "eps_beta must lie in (0, 1/2)"),
            (self.target_events >= 1, "target_events must be >= 1"),
            (self.day_length is None or self.day_length > 0, "day_length must be > 0"),
            (self.tau0 is None or self.tau0 > 0, "tau0 must be > 0"),
        ]
        for ok, message in checks:
            if not ok:
                raise ConfigError(message)
        if not self.correlated and self.gamma_meta != 0.0:
            raise ConfigError(f"{self.scenario} requires gamma_meta = 0")
        if not self.volume_dependent and (self.lam != 0.0 or self.lam_p != 0.0):
            raise ConfigError(f"{self.scenario} requires lambda = lambda_p = 0")
        return self

    # --- serialization --------------------------------------------------------------

    def to_dict(self) -> Dict[str, Any]:
        return dataclasses.asdict(self)

    def config_hash(self) -> str:
        """Stable 16-hex-digit digest of every field."""
        payload = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]


_FIELD_DEFAULTS = {f.name: f.default for f in dataclasses.fields(SimulationConfig)}
_OPTIONAL_FLOATS = {"tau0", "day_length"}


def _coerce(values: Mapping[str, Any]) -> Dict[str, Any]:
    """Map aliases to field names and cast raw values to each field's type."""
    out: Dict[str, Any] = {}
    for raw_key, value in values.items():
        key = _ALIASES.get(raw_key, raw_key)
        if key not in _FIELD_DEFAULTS:
            raise ConfigError(f"Unknown config field: {raw_key}. Available: {sorted(_FIELD_DEFAULTS)}")
        default = _FIELD_DEFAULTS[key]
        try:
            if key in _OPTIONAL_FLOATS:
                out[key] = None if value in (None, "", "none", "None", "auto") else float(value)
            elif isinstance(default, int):
                as_float = float(value)
                if not math.isfinite(as_float) or as_float != int(as_float):
                    raise ValueError(value)
                out[key] = int(as_float)
            elif isinstance(default, float):
                out[key] = float(value)
            else:
                out[key] = str(value)
        except (TypeError, ValueError):
            raise ConfigError(f"Invalid value for {raw_key}: {value!r}") from None
    return out


def preset(name: str, overrides: Optional[Mapping[str, Any]] = None) -> SimulationConfig:
    """Return the defaults for one of the five scenario triplets, with optional overrides."""
    if name not in SCENARIOS:
        raise ConfigError(f"Unknown scenario: {name}. Available: {list(SCENARIOS)}")
    return SimulationConfig(scenario=name).with_overrides(overrides).apply_scenario()


def parse_overrides(items: Iterable[str]) -> Dict[str, str]:
    """Parse ``key=value`` strings from the command line."""
    parsed: Dict[str, str] = {}
    for item in items:
        key, sep, value = item.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"Expected key=value, got {item!r}")
        parsed[key.strip()] = value.strip()
    return parsed


def load_config(
    path: Optional[Union[str, Path]] = None,
    scenario: Optional[str] = None,
    overrides: Optional[Mapping[str, Any]] = None,
) -> SimulationConfig:
    """Build a config from an optional YAML file, a preset name and overrides.

    The YAML file is a flat mapping whose keys are ``SimulationConfig`` field names. A
    ``scenario`` key in the file selects the preset unless ``scenario`` is passed explicitly.
    """
    file_values: Dict[str, Any] = {}
    if path is not None:
        try:
            with open(path, "r", encoding="utf-8") as fh:
                loaded = yaml.safe_load(fh) or {}
        except OSError as exc:
            raise ConfigError(f"Cannot read config file {path}: {exc}") from exc
        except yaml.YAMLError as exc:
            raise ConfigError(f"Malformed config file {path}: {exc}") from exc
        if not isinstance(loaded, dict):
            raise ConfigError(f"Config file {path} must contain a flat mapping")
        file_values = loaded
    name = scenario or file_values.pop("scenario", None) or SimulationConfig.scenario
    file_values.pop("scenario", None)
    merged = dict(file_values)
    merged.update(overrides or {})
    return preset(str(name), merged)
