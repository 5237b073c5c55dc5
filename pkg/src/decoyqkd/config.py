"""Experiment configuration files.

A configuration file is a list of ``dotted.key = value`` lines (the
dotted-key subset of TOML); ``#`` starts a comment. Every key is optional::

    # 50 km link, weak + vacuum decoys
    protocol.pulses_total = 1000000
    protocol.seed = 7
    weak_decoy.mu = 0.05
    channel.distance_km = 50
    sweep.start_km = 0
    sweep.end_km = 150
    sweep.step_km = 5
    output.formats = "csv,json"

``[section]`` headers are accepted too, since the file is parsed as TOML.
Unknown keys are rejected. See ``KEYS`` for the full list and defaults.
"""
from __future__ import annotations

import math
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Optional

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from decoyqkd.core_models import (
    HWANG_DECOY,
    SIGNAL,
    VACUUM_DECOY,
    WEAK_DECOY,
    ChannelDetector,
    IntensityClass,
)
from decoyqkd.decoy_analysis import (
    DEFAULT_ABORT_QBER,
    DEFAULT_CONFIDENCE,
    DEFAULT_F_EC,
    DEFAULT_Z_THRESHOLD,
)
from decoyqkd.errors import ConfigurationError
from decoyqkd.simulation import EveStrategy, ProtocolConfig

REPORT_FORMATS = ("csv", "json")

# key -> (type, default); None default means "absent unless set"
KEYS: dict[str, tuple[type, Any]] = {
    "protocol.pulses_total": (int, 1_000_000),
    "protocol.seed": (int, 42),
    "protocol.basis_match_prob": (float, 0.5),
    "protocol.qber_abort_threshold": (float, DEFAULT_ABORT_QBER),
    "signal.mu": (float, 0.5),
    "signal.prob": (float, None),
    "vacuum_decoy.enabled": (bool, True),
    "vacuum_decoy.prob": (float, 0.1),
    "weak_decoy.enabled": (bool, True),
    "weak_decoy.mu": (float, 0.05),
    "weak_decoy.prob": (float, 0.1),
    "hwang_decoy.enabled": (bool, False),
    "hwang_decoy.mu": (float, 2.0),
    "hwang_decoy.prob": (float, 0.1),
    "channel.distance_km": (float, 50.0),
    "channel.attenuation_db_per_km": (float, 0.2),
    "channel.extra_loss_db": (float, 0.0),
    "channel.detector_efficiency": (float, 0.1),
    "channel.dark_count_prob": (float, 1e-5),
    "channel.misalignment_error": (float, 0.01),
    "eve.kind": (str, "none"),
    "eve.single_block_prob": (float, 1.0),
    "eve.forward_transmittance": (float, None),
    "sweep.start_km": (float, None),
    "sweep.end_km": (float, None),
    "sweep.step_km": (float, None),
    "analysis.confidence": (float, DEFAULT_CONFIDENCE),
    "analysis.z_threshold": (float, DEFAULT_Z_THRESHOLD),
    "analysis.f_ec": (float, DEFAULT_F_EC),
    "analysis.decoy_abort": (bool, False),
    "analysis.bound_gains": (bool, False),
    "output.directory": (str, "reports"),
    "output.formats": (str, "csv"),
}


@dataclass(frozen=True)
class Sweep:
    start_km: float
    end_km: float
    step_km: float

    def __post_init__(self) -> None:
        if not self.step_km > 0:
            raise ConfigurationError(f"sweep.step_km must be > 0, got {self.step_km}")
        if self.start_km > self.end_km:
            raise ConfigurationError(
                f"sweep.start_km ({self.start_km}) must not exceed sweep.end_km ({self.end_km})"
            )

    def distances(self) -> list[float]:
        count = math.floor((self.end_km - self.start_km) / self.step_km + 1e-9) + 1
        return [round(self.start_km + i * self.step_km, 9) for i in range(count)]


@dataclass(frozen=True)
class AnalysisSettings:
    confidence: float = DEFAULT_CONFIDENCE
    z_threshold: float = DEFAULT_Z_THRESHOLD
    f_ec: float = DEFAULT_F_EC
    decoy_abort: bool = False
    bound_gains: bool = False

    def __post_init__(self) -> None:
        if not 0.0 < self.confidence < 1.0:
            raise ConfigurationError(f"analysis.confidence must lie in (0, 1), got {self.confidence}")
        if not self.z_threshold > 0:
            raise ConfigurationError(f"analysis.z_threshold must be > 0, got {self.z_threshold}")
        if not self.f_ec >= 1.0:
            raise ConfigurationError(f"analysis.f_ec must be >= 1, got {self.f_ec}")


@dataclass(frozen=True)
class OutputSettings:
    directory: str = "reports"
    formats: tuple[str, ...] = ("csv",)

    def __post_init__(self) -> None:
        bad = [f for f in self.formats if f not in REPORT_FORMATS]
        if bad or not self.formats:
            raise ConfigurationError(
                f"output.formats must be a non-empty subset of {REPORT_FORMATS}, got {self.formats}"
            )


@dataclass(frozen=True)
class ExperimentSpec:
    protocol: ProtocolConfig
    eve: EveStrategy = EveStrategy()
    sweep: Optional[Sweep] = None
    analysis: AnalysisSettings = AnalysisSettings()
    output: OutputSettings = OutputSettings()
    values: Mapping[str, Any] = field(default_factory=dict, compare=False)

    def resolved(self) -> dict[str, Any]:
        """Every configuration key with its effective value, for provenance."""
        return dict(self.values)


def _flatten(table: Mapping[str, Any], prefix: str = "") -> dict[str, Any]:
    flat: dict[str, Any] = {}
    for key, value in table.items():
        dotted = f"{prefix}{key}"
        if isinstance(value, dict):
            flat.update(_flatten(value, dotted + "."))
        else:
            flat[dotted] = value
    return flat


def _line_of(text: str, key: str) -> Optional[int]:
    leaf = key.rsplit(".", 1)[-1]
    for lineno, line in enumerate(text.splitlines(), 1):
        stripped = line.split("#", 1)[0].strip()
        name = stripped.split("=", 1)[0].strip()
        if "=" in stripped and (name == key or name == leaf):
            return lineno
    return None


def _coerce(key: str, value: Any, text: str = "") -> Any:
    kind = KEYS[key][0]
    where = ""
    line = _line_of(text, key) if text else None
    if line is not None:
        where = f" (line {line})"
    if kind is bool:
        if isinstance(value, bool):
            return value
    elif kind is int:
        if isinstance(value, int) and not isinstance(value, bool):
            return value
        if isinstance(value, float) and value.is_integer():
            return int(value)
    elif kind is float:
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return float(value)
    elif kind is str:
        if key == "output.formats" and isinstance(value, list):
            return ",".join(str(v) for v in value)
        if isinstance(value, str):
            return value
    raise ConfigurationError(f"{key}{where}: expected {kind.__name__}, got {value!r}")


def parse_value(raw: str) -> Any:
    """Interpret a command-line override the way the file parser would, else as a string."""
    try:
        return tomllib.loads(f"v = {raw}")["v"]
    except tomllib.TOMLDecodeError:
        return raw


def parse_config_text(text: str, overrides: Optional[Mapping[str, Any]] = None) -> ExperimentSpec:
    try:
        table = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigurationError(f"config parse error: {exc}") from None
    given = _flatten(table)
    overrides = dict(overrides or {})
    unknown = sorted(k for k in list(given) + list(overrides) if k not in KEYS)
    if unknown:
        raise ConfigurationError(f"unknown config keys: {', '.join(unknown)}")
    values = {k: default for k, (_, default) in KEYS.items()}
    for key, value in given.items():
        values[key] = _coerce(key, value, text)
    for key, value in overrides.items():
        values[key] = _coerce(key, value)
    return build_spec(values)


def load_config(path: str | Path, overrides: Optional[Mapping[str, Any]] = None) -> ExperimentSpec:
    """Read, default and validate an experiment configuration file.

    ``overrides`` maps dotted keys to values and wins over the file.
    """
    text = Path(path).read_text(encoding="utf-8")
    return parse_config_text(text, overrides)


def build_spec(values: Mapping[str, Any]) -> ExperimentSpec:
    v = dict(values)
    decoys = []
    if v["vacuum_decoy.enabled"]:
        decoys.append((VACUUM_DECOY, 0.0, v["vacuum_decoy.prob"]))
    if v["weak_decoy.enabled"]:
        decoys.append((WEAK_DECOY, v["weak_decoy.mu"], v["weak_decoy.prob"]))
    if v["hwang_decoy.enabled"]:
        decoys.append((HWANG_DECOY, v["hwang_decoy.mu"], v["hwang_decoy.prob"]))
    if v["signal.prob"] is None:
        v["signal.prob"] = 1.0 - math.fsum(p for _, _, p in decoys)
    if v["signal.prob"] < 0:
        raise ConfigurationError(
            f"decoy send probabilities exceed 1; signal.prob would be {v['signal.prob']}"
        )
    schedule = [IntensityClass(SIGNAL, v["signal.mu"], v["signal.prob"])]
    schedule += [IntensityClass(label, mu, p) for label, mu, p in decoys]

    channel = ChannelDetector(
        distance_km=v["channel.distance_km"],
        attenuation_db_per_km=v["channel.attenuation_db_per_km"],
        extra_loss_db=v["channel.extra_loss_db"],
        detector_efficiency=v["channel.detector_efficiency"],
        dark_count_prob=v["channel.dark_count_prob"],
        misalignment_error=v["channel.misalignment_error"],
    )
    protocol = ProtocolConfig(
        schedule=tuple(schedule),
        pulses_total=v["protocol.pulses_total"],
        channel=channel,
        basis_match_prob=v["protocol.basis_match_prob"],
        rng_seed=v["protocol.seed"],
        qber_abort_threshold=v["protocol.qber_abort_threshold"],
    )
    eve = EveStrategy(
        kind=v["eve.kind"],
        single_block_prob=v["eve.single_block_prob"],
        forward_transmittance_override=v["eve.forward_transmittance"],
    )
    sweep_keys = ("sweep.start_km", "sweep.end_km", "sweep.step_km")
    sweep = None
    if any(v[k] is not None for k in sweep_keys):
        missing = [k for k in sweep_keys[:2] if v[k] is None]
        if missing:
            raise ConfigurationError(f"incomplete sweep, missing: {', '.join(missing)}")
        if v["sweep.step_km"] is None:
            v["sweep.step_km"] = 5.0
        sweep = Sweep(v["sweep.start_km"], v["sweep.end_km"], v["sweep.step_km"])
    analysis = AnalysisSettings(
        confidence=v["analysis.confidence"],
        z_threshold=v["analysis.z_threshold"],
        f_ec=v["analysis.f_ec"],
        decoy_abort=v["analysis.decoy_abort"],
        bound_gains=v["analysis.bound_gains"],
    )
    formats = tuple(f.strip() for f in v["output.formats"].split(",") if f.strip())
    output = OutputSettings(directory=v["output.directory"], formats=formats)
    return ExperimentSpec(protocol, eve, sweep, analysis, output, values=v)
