"""Pipeline configuration: speed-model constants, thresholds, quorum, exemptions.

Loaded from a TOML file; every key is optional and falls back to the defaults
below. Example::

    [speed]
    v_max = 133241092.44          # m/s, 4/9 of c
    v_min_coeff = 1e7             # m/s
    v_min_offset = 3.0
    distance_unit_for_log = "meters"

    [pipeline]
    metro_threshold_km = 50.0
    route_server_max_rtt_ms = 1.0
    remote_advisory_rtt_ms = 2.0
    baseline_threshold_ms = 10.0
    vote_quorum = 3
    vote_majority = 0.5
    strict_colo = false
    steps = [1, 3, 4, 5]
    distance_method = "karney"

    [step1_exemptions]
    "ixp-7" = [64512, 64513]

    [source_precedence]
    Custom = 1
"""
from __future__ import annotations

import dataclasses
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

SPEED_OF_LIGHT = 299_792_458.0  # m/s


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SpeedModel:
    """Bounds on probe propagation speed.

    The upper bound is a constant; the lower bound grows with the log of
    distance, ``v_min(d) = a * (ln(d) - b)``, with ``d`` expressed in
    ``distance_unit_for_log`` and the result capped at ``v_max``.
    """

    v_max: float = 4.0 / 9.0 * SPEED_OF_LIGHT
    v_min_coeff: float = 1e7
    v_min_offset: float = 3.0
    distance_unit_for_log: str = "meters"

    def __post_init__(self) -> None:
        if self.v_max <= 0:
            raise ConfigError("v_max must be positive")
        if self.distance_unit_for_log not in ("meters", "km"):
            raise ConfigError("distance_unit_for_log must be 'meters' or 'km'")

    @property
    def log_scale(self) -> float:
        """Multiplier turning km into the unit fed to the logarithm."""
        return 1000.0 if self.distance_unit_for_log == "meters" else 1.0

    def v_min(self, d_km: float) -> float:
        if d_km <= 0:
            return -math.inf
        return min(self.v_min_coeff * (math.log(d_km * self.log_scale) - self.v_min_offset), self.v_max)


@dataclass(frozen=True)
class PipelineConfig:
    speed: SpeedModel = field(default_factory=SpeedModel)
    metro_threshold_km: float = 50.0
    route_server_max_rtt_ms: float = 1.0
    # informational marker only: minimum RTTs above this almost always mean a remote peer
    remote_advisory_rtt_ms: float = 2.0
    baseline_threshold_ms: float = 10.0
    vote_quorum: int = 3
    vote_majority: float = 0.5
    strict_colo: bool = False
    steps: tuple[int, ...] = (1, 3, 4, 5)
    distance_method: str = "karney"
    bisect_tol_km: float = 1e-6
    step1_exemptions: Mapping[str, frozenset[int]] = field(default_factory=dict)
    source_precedence: Mapping[str, int] = field(default_factory=dict)

    def exempt(self, ixp_id: str) -> frozenset[int]:
        return frozenset(self.step1_exemptions.get(ixp_id, ()))

    def to_dict(self) -> dict[str, Any]:
        d = dataclasses.asdict(self)
        d["steps"] = list(self.steps)
        d["step1_exemptions"] = {k: sorted(v) for k, v in sorted(self.step1_exemptions.items())}
        d["source_precedence"] = dict(sorted(self.source_precedence.items()))
        return d


_PIPELINE_KEYS = {
    f.name for f in dataclasses.fields(PipelineConfig)
} - {"speed", "step1_exemptions", "source_precedence"}


def config_from_mapping(data: Mapping[str, Any]) -> PipelineConfig:
    unknown = set(data) - {"speed", "pipeline", "step1_exemptions", "source_precedence"}
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    pipe = dict(data.get("pipeline", {}))
    bad = set(pipe) - _PIPELINE_KEYS
    if bad:
        raise ConfigError(f"unknown [pipeline] keys: {sorted(bad)}")
    if "steps" in pipe:
        steps = tuple(int(s) for s in pipe["steps"])
        if not set(steps) <= {1, 3, 4, 5}:
            raise ConfigError("steps must be drawn from {1, 3, 4, 5}")
        pipe["steps"] = steps
    try:
        speed = SpeedModel(**data.get("speed", {}))
        return PipelineConfig(
            speed=speed,
            step1_exemptions={
                str(k): frozenset(int(a) for a in v) for k, v in data.get("step1_exemptions", {}).items()
            },
            source_precedence={str(k): int(v) for k, v in data.get("source_precedence", {}).items()},
            **pipe,
        )
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path: str | Path | None) -> PipelineConfig:
    if path is None:
        return PipelineConfig()
    try:
        with open(path, "rb") as fh:
            return config_from_mapping(tomllib.load(fh))
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
