#!/usr/bin/env python3
"""
Configuration Module for the Multibeam Precoding Lab

Loads a scenario description from JSON (the reference format) or YAML into a tree
of frozen dataclasses. Every section rejects keys it does not know; missing keys
take the defaults below. A handful of environment variables, optionally read from
a ``.env`` file, override the file:

    PRECODING_LAB_SEED         master seed
    PRECODING_LAB_MAX_WORKERS  worker threads for sweep cells
    PRECODING_LAB_LOG_LEVEL    read by the CLI
"""

import dataclasses
import json
import logging
import os
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Tuple, Union

import numpy as np
import yaml

from precoding_lab.channel import (
    CSI_ERROR_PROFILES,
    CsiErrorModel,
    csi_error_profile,
)
from precoding_lab.errors import ConfigError, IoError
from precoding_lab.linkmetrics import PowerConvention, ReuseKind
from precoding_lab.precoding import NormalizationMode, PrecoderKind
from precoding_lab.superframe import ConstellationKind

# Set up logging
logger = logging.getLogger(__name__)

DEFAULT_SCENARIO = "default_scenario.json"

ENV_SEED = "PRECODING_LAB_SEED"
ENV_MAX_WORKERS = "PRECODING_LAB_MAX_WORKERS"
ENV_LOG_LEVEL = "PRECODING_LAB_LOG_LEVEL"

AUTO_PHI = "auto"


@dataclass(frozen=True)
class GeometryConfig:
    rows: int = 4
    cols: int = 4
    spacing_deg: float = 0.5
    three_db_half_angle_deg: float = 0.25
    peak_gain: float = 0.5


@dataclass(frozen=True)
class ChannelConfig:
    """Where the channel comes from: a generated beam grid or a channel CSV file"""

    geometry: Optional[GeometryConfig] = None
    file: Optional[Path] = None
    coloring: Optional[Tuple[int, ...]] = None


@dataclass(frozen=True)
class SchemeConfig:
    """One curve of the comparison: FFR with a precoder, or a 4FR baseline.

    Attributes:
        name: Label written to the reports
        reuse: FFR or 4FR
        precoder: Precoder for FFR schemes
        normalization: Rescaling applied after the precoder
        phi: MMSE-PAC budget, a number or "auto"
        phi_fraction: Share of the smallest MMSE row power used when phi is "auto"
        tolerance: Solver tolerance (MMSE-PAC or OPTL)
        max_iterations: Solver iteration cap
        snir_target_db: OPTL target, a number or one per user
        power_convention: 4FR power convention
        per_beam_power_scale: 4FR beam power relative to FFR, None for the convention default
    """

    name: str
    reuse: ReuseKind = ReuseKind.FFR
    precoder: Optional[PrecoderKind] = None
    normalization: NormalizationMode = NormalizationMode.UNIT_ROW
    phi: Union[float, str] = AUTO_PHI
    phi_fraction: float = 0.9
    tolerance: Optional[float] = None
    max_iterations: Optional[int] = None
    snir_target_db: Union[float, Tuple[float, ...]] = 10.0
    power_convention: Optional[PowerConvention] = None
    per_beam_power_scale: Optional[float] = None


@dataclass(frozen=True)
class SweepConfig:
    psat_min_dbw: float = -10.0
    psat_max_dbw: float = 10.0
    step_db: float = 0.5
    obo_db: float = 0.0

    def points(self) -> Tuple[float, ...]:
        """Sweep values from min to max inclusive"""
        count = int(np.floor((self.psat_max_dbw - self.psat_min_dbw) / self.step_db + 1e-9)) + 1
        values = self.psat_min_dbw + self.step_db * np.arange(count)
        return tuple(float(v) for v in np.round(values, 10))


@dataclass(frozen=True)
class ClosedLoopConfig:
    superframes: int = 20
    feedback_delay: int = 0
    psat_dbw: float = 4.5
    sosf_length: int = 256
    pilot_length: int = 32
    payload_length: int = 512
    constellation: ConstellationKind = ConstellationKind.QPSK
    precoder: PrecoderKind = PrecoderKind.ZF
    normalization: NormalizationMode = NormalizationMode.UNIT_ROW


@dataclass(frozen=True)
class ScenarioConfig:
    """Complete description of a simulation campaign"""

    channel: ChannelConfig = field(default_factory=lambda: ChannelConfig(geometry=GeometryConfig()))
    noise_variance: float = 0.02
    csi_error: CsiErrorModel = field(default_factory=lambda: CSI_ERROR_PROFILES["ideal"])
    schemes: Tuple[SchemeConfig, ...] = ()
    modcod_table: Optional[Path] = None
    acm_margin_db: float = 0.6
    symbol_rate_msps: float = 20.0
    roll_off: float = 0.2
    polarization_factor: float = 1.0
    sweep: SweepConfig = field(default_factory=SweepConfig)
    trials: int = 1
    seed: int = 2024
    max_workers: int = 1
    closed_loop: ClosedLoopConfig = field(default_factory=ClosedLoopConfig)


def _check_keys(section: Mapping[str, Any], cls, where: str) -> None:
    if not isinstance(section, Mapping):
        raise ConfigError(f"'{where}' must be a mapping, got {type(section).__name__}")
    allowed = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(section) - allowed)
    if unknown:
        raise ConfigError(f"Unknown key(s) in '{where}': {', '.join(unknown)}")


def _enum(enum_cls, value, where: str):
    try:
        return enum_cls(value)
    except ValueError:
        choices = ", ".join(member.value for member in enum_cls)
        raise ConfigError(f"'{where}' must be one of {choices}, got {value!r}") from None


def _resolve(path_value, base_dir: Optional[Path]) -> Path:
    path = Path(path_value)
    if not path.is_absolute() and base_dir is not None:
        path = base_dir / path
    return path


def _parse_channel(section, base_dir: Optional[Path]) -> ChannelConfig:
    _check_keys(section, ChannelConfig, "channel")
    geometry = None
    if section.get("geometry") is not None:
        _check_keys(section["geometry"], GeometryConfig, "channel.geometry")
        geometry = GeometryConfig(**section["geometry"])
    file = _resolve(section["file"], base_dir) if section.get("file") else None
    if (geometry is None) == (file is None):
        raise ConfigError("'channel' needs exactly one of 'geometry' or 'file'")
    coloring = section.get("coloring")
    return ChannelConfig(
        geometry=geometry,
        file=file,
        coloring=tuple(int(c) for c in coloring) if coloring is not None else None,
    )


def _parse_csi_error(value) -> CsiErrorModel:
    if isinstance(value, str):
        try:
            return csi_error_profile(value)
        except ValueError as e:
            raise ConfigError(str(e)) from None
    _check_keys(value, CsiErrorModel, "csi_error")
    try:
        return CsiErrorModel(**{"profile_name": "custom", **value})
    except ValueError as e:
        raise ConfigError(f"Invalid 'csi_error': {e}") from None


def _parse_scheme(section, index: int) -> SchemeConfig:
    where = f"schemes[{index}]"
    _check_keys(section, SchemeConfig, where)
    if not section.get("name"):
        raise ConfigError(f"'{where}' needs a 'name'")
    values = dict(section)
    values["reuse"] = _enum(ReuseKind, values.get("reuse", "FFR"), f"{where}.reuse")

    if values["reuse"] is ReuseKind.FFR:
        if values.get("precoder") is None:
            raise ConfigError(f"'{where}' is an FFR scheme and needs a 'precoder'")
        values["precoder"] = _enum(PrecoderKind, values["precoder"], f"{where}.precoder")
        values["normalization"] = _enum(
            NormalizationMode, values.get("normalization", "UnitRow"), f"{where}.normalization"
        )
        phi = values.get("phi", AUTO_PHI)
        if phi != AUTO_PHI and not (isinstance(phi, (int, float)) and phi > 0):
            raise ConfigError(f"'{where}.phi' must be 'auto' or a number > 0, got {phi!r}")
        if not 0 < values.get("phi_fraction", 0.9) <= 1:
            raise ConfigError(f"'{where}.phi_fraction' must be in (0, 1]")
        target = values.get("snir_target_db", 10.0)
        if isinstance(target, (list, tuple)):
            values["snir_target_db"] = tuple(float(t) for t in target)
    else:
        if values.get("power_convention") is None:
            raise ConfigError(f"'{where}' is a 4FR scheme and needs a 'power_convention'")
        values["power_convention"] = _enum(
            PowerConvention, values["power_convention"], f"{where}.power_convention"
        )
        scale = values.get("per_beam_power_scale")
        if scale is not None and not scale > 0:
            raise ConfigError(f"'{where}.per_beam_power_scale' must be > 0")
    return SchemeConfig(**values)


def _parse_sweep(section) -> SweepConfig:
    _check_keys(section, SweepConfig, "sweep")
    sweep = SweepConfig(**section)
    if sweep.psat_min_dbw > sweep.psat_max_dbw:
        raise ConfigError("'sweep.psat_min_dbw' must not exceed 'sweep.psat_max_dbw'")
    if not sweep.step_db > 0:
        raise ConfigError("'sweep.step_db' must be > 0")
    if sweep.obo_db < 0:
        raise ConfigError("'sweep.obo_db' must be >= 0")
    return sweep


def _parse_closed_loop(section) -> ClosedLoopConfig:
    _check_keys(section, ClosedLoopConfig, "closed_loop")
    values = dict(section)
    for key, enum_cls in (("constellation", ConstellationKind), ("precoder", PrecoderKind),
                          ("normalization", NormalizationMode)):
        if key in values:
            values[key] = _enum(enum_cls, values[key], f"closed_loop.{key}")
    loop = ClosedLoopConfig(**values)
    if loop.superframes < 1:
        raise ConfigError("'closed_loop.superframes' must be >= 1")
    if loop.feedback_delay < 0:
        raise ConfigError("'closed_loop.feedback_delay' must be >= 0")
    return loop


def parse_config(data: Mapping[str, Any], base_dir: Optional[Path] = None) -> ScenarioConfig:
    """Validate a decoded config document and build the ScenarioConfig.

    Args:
        data: Decoded JSON/YAML mapping
        base_dir: Directory that relative file paths are resolved against

    Raises:
        ConfigError: Unknown keys, wrong types or inconsistent values
    """
    _check_keys(data, ScenarioConfig, "scenario")
    values: Dict[str, Any] = {}
    try:
        if "channel" in data:
            values["channel"] = _parse_channel(data["channel"], base_dir)
        if "csi_error" in data:
            values["csi_error"] = _parse_csi_error(data["csi_error"])
        if "schemes" in data:
            values["schemes"] = tuple(_parse_scheme(s, i) for i, s in enumerate(data["schemes"]))
        if data.get("modcod_table"):
            values["modcod_table"] = _resolve(data["modcod_table"], base_dir)
        if "sweep" in data:
            values["sweep"] = _parse_sweep(data["sweep"])
        if "closed_loop" in data:
            values["closed_loop"] = _parse_closed_loop(data["closed_loop"])
        for key in ("noise_variance", "acm_margin_db", "symbol_rate_msps", "roll_off",
                    "polarization_factor"):
            if key in data:
                values[key] = float(data[key])
        for key in ("trials", "seed", "max_workers"):
            if key in data:
                values[key] = int(data[key])
    except ConfigError:
        raise
    except (TypeError, ValueError) as e:
        # Wrongly shaped sections raise TypeError, unparsable scalars ValueError
        raise ConfigError(f"Malformed configuration: {e}") from e

    config = ScenarioConfig(**values)
    _validate(config)
    return config


def _validate(config: ScenarioConfig) -> None:
    if not config.schemes:
        raise ConfigError("At least one scheme is required")
    names = [s.name for s in config.schemes]
    if len(set(names)) != len(names):
        raise ConfigError(f"Scheme names must be unique, got {names}")
    if not config.noise_variance > 0:
        raise ConfigError("'noise_variance' must be > 0")
    if config.trials < 1:
        raise ConfigError("'trials' must be >= 1")
    if config.max_workers < 1:
        raise ConfigError("'max_workers' must be >= 1")
    if not config.symbol_rate_msps > 0:
        raise ConfigError("'symbol_rate_msps' must be > 0")
    if config.polarization_factor < 1:
        raise ConfigError("'polarization_factor' must be >= 1")
    if config.seed < 0:
        raise ConfigError("'seed' must be >= 0")
    uses_four_color = any(s.reuse is ReuseKind.FOUR_COLOR for s in config.schemes)
    if uses_four_color and config.channel.file is not None and config.channel.coloring is None:
        raise ConfigError("4FR schemes on a channel file need 'channel.coloring'")


def _read_document(path: Path) -> Dict[str, Any]:
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError as e:
        raise IoError(f"Config file not found: {path}") from e
    except OSError as e:
        raise IoError(f"Could not read config file {path}: {e}") from e

    try:
        if path.suffix.lower() in (".yaml", ".yml"):
            document = yaml.safe_load(text)
        else:
            document = json.loads(text)
    except (json.JSONDecodeError, yaml.YAMLError) as e:
        raise ConfigError(f"Could not parse config file {path}: {e}") from e
    if not isinstance(document, dict):
        raise ConfigError(f"Config file {path} must contain a mapping at the top level")
    return document


def load_config(path: Union[str, Path, None] = None, environ: Optional[Mapping[str, str]] = None,
                seed: Optional[int] = None) -> ScenarioConfig:
    """Load a scenario config and apply overrides.

    Args:
        path: JSON or YAML file; the bundled default scenario when None
        environ: Environment to read overrides from (os.environ when None)
        seed: Explicit master seed, wins over file and environment

    Returns:
        ScenarioConfig: Validated configuration
    """
    if path is None:
        with resources.as_file(resources.files("precoding_lab") / "data" / DEFAULT_SCENARIO) as default:
            config = parse_config(_read_document(default), base_dir=None)
        logger.info("Using the bundled default scenario")
    else:
        path = Path(path)
        config = parse_config(_read_document(path), base_dir=path.parent)
        logger.info(f"Loaded scenario config from {path}")

    config = apply_environment(config, os.environ if environ is None else environ)
    if seed is not None:
        config = dataclasses.replace(config, seed=int(seed))
    return config


def apply_environment(config: ScenarioConfig, environ: Mapping[str, str]) -> ScenarioConfig:
    """Override the master seed and worker count from environment variables"""
    overrides = {}
    for variable, key in ((ENV_SEED, "seed"), (ENV_MAX_WORKERS, "max_workers")):
        raw = environ.get(variable)
        if raw is None or not raw.strip():
            continue
        try:
            overrides[key] = int(raw)
        except ValueError:
            raise ConfigError(f"{variable} must be an integer, got {raw!r}") from None
        logger.debug(f"{variable} overrides {key} = {overrides[key]}")
    if not overrides:
        return config
    config = dataclasses.replace(config, **overrides)
    _validate(config)
    return config
