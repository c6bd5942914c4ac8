#!/usr/bin/env python3
"""
Link Metrics Module for the Multibeam Precoding Lab

Turns a channel and a precoder into what a user terminal experiences: the
effective channel G = H W, per-user SNIR, per-antenna and per-beam power
profiles, MODCOD-mapped throughput, and the unprecoded four-colour reuse
baseline that full frequency reuse is compared against.
"""

import logging
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from precoding_lab.channel import NoiseModel, as_matrix
from precoding_lab.errors import (
    ColoringError,
    DimensionError,
    IoError,
    ModcodTableError,
    NonFiniteEntries,
)

# Set up logging
logger = logging.getLogger(__name__)

MODCOD_COLUMNS = ["name", "threshold_esn0_db", "spectral_efficiency"]
DEFAULT_MODCOD_TABLE = "modcod_dvbs2x.csv"

# 4FR beam power relative to the FFR beam power
CONST_PSD_POWER_SCALE = 2.0
CONST_TOTAL_POWER_SCALE = 8.0
FOUR_COLOR_BANDWIDTH = 0.25
NUM_COLORS = 4


def to_db(value):
    """Linear power ratio(s) to dB"""
    return 10.0 * np.log10(value)


def from_db(value_db):
    """dB value(s) to linear power ratio"""
    return 10.0 ** (np.asarray(value_db, dtype=float) / 10.0)


@dataclass(frozen=True, eq=False)
class EffectiveChannel:
    """K x K effective channel G = H W; g_kj is the gain of user j's stream at user k"""

    entries: np.ndarray

    def __post_init__(self):
        entries = np.array(self.entries, dtype=np.complex128)
        if entries.ndim != 2 or entries.shape[0] != entries.shape[1]:
            raise DimensionError(f"Effective channel must be square, got shape {entries.shape}")
        if not np.all(np.isfinite(entries)):
            raise NonFiniteEntries("Effective channel contains NaN or Inf")
        entries.setflags(write=False)
        object.__setattr__(self, "entries", entries)

    def __array__(self, dtype=None, copy=None):
        return self.entries if dtype is None else self.entries.astype(dtype)


@dataclass(frozen=True)
class ModcodEntry:
    name: str
    threshold_esn0_db: float
    spectral_efficiency: float


@dataclass(frozen=True)
class ModcodTable:
    """ACM operating points ordered by Es/N0 threshold.

    Attributes:
        entries: ModcodEntry tuple, strictly increasing in threshold and efficiency
    """

    entries: Tuple[ModcodEntry, ...]

    def __post_init__(self):
        entries = tuple(self.entries)
        object.__setattr__(self, "entries", entries)
        if not entries:
            raise ModcodTableError("MODCOD table has no entries")
        thresholds = np.array([e.threshold_esn0_db for e in entries], dtype=float)
        efficiencies = np.array([e.spectral_efficiency for e in entries], dtype=float)
        if not (np.all(np.isfinite(thresholds)) and np.all(np.isfinite(efficiencies))):
            raise ModcodTableError("MODCOD table contains non-finite values")
        if np.any(np.diff(thresholds) <= 0):
            raise ModcodTableError("MODCOD thresholds must be strictly increasing")
        if np.any(np.diff(efficiencies) <= 0):
            raise ModcodTableError("MODCOD spectral efficiencies must be strictly increasing")
        if np.any(efficiencies <= 0):
            raise ModcodTableError("MODCOD spectral efficiencies must be > 0")

    @property
    def thresholds_db(self) -> np.ndarray:
        return np.array([e.threshold_esn0_db for e in self.entries])

    @property
    def efficiencies(self) -> np.ndarray:
        return np.array([e.spectral_efficiency for e in self.entries])

    @classmethod
    def from_frame(cls, frame: pd.DataFrame) -> "ModcodTable":
        missing = [c for c in MODCOD_COLUMNS if c not in frame.columns]
        if missing:
            raise ModcodTableError(f"MODCOD table is missing columns {missing}")
        try:
            entries = tuple(
                ModcodEntry(str(row.name), float(row.threshold_esn0_db), float(row.spectral_efficiency))
                for row in frame[MODCOD_COLUMNS].itertuples(index=False)
            )
        except (TypeError, ValueError) as e:
            raise ModcodTableError(f"MODCOD table has a non-numeric field: {e}") from e
        return cls(entries)

    def select(self, effective_db: float) -> Optional[ModcodEntry]:
        """Highest-threshold entry with threshold <= effective_db, or None"""
        index = int(np.searchsorted(self.thresholds_db, effective_db, side="right")) - 1
        return self.entries[index] if index >= 0 else None


def load_modcod_table(path: Union[str, Path, None] = None) -> ModcodTable:
    """Load a MODCOD CSV (name,threshold_esn0_db,spectral_efficiency).

    Args:
        path: CSV file; the bundled DVB-S2X subset when None

    Raises:
        IoError: The file cannot be read
        ModcodTableError: The table is empty, incomplete or not strictly increasing
    """
    if path is None:
        return _default_modcod_table()
    return _read_modcod_table(Path(path))


@lru_cache(maxsize=1)
def _default_modcod_table() -> ModcodTable:
    with resources.as_file(resources.files("precoding_lab") / "data" / DEFAULT_MODCOD_TABLE) as path:
        return _read_modcod_table(path)


def _read_modcod_table(path: Path) -> ModcodTable:
    try:
        frame = pd.read_csv(path, comment="#", skipinitialspace=True)
    except FileNotFoundError as e:
        raise IoError(f"MODCOD table not found: {path}") from e
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise IoError(f"Could not read MODCOD table {path}: {e}") from e
    table = ModcodTable.from_frame(frame)
    logger.debug(f"Loaded {len(table.entries)} MODCODs from {path}")
    return table


class ReuseKind(str, Enum):
    FFR = "FFR"
    FOUR_COLOR = "4FR"


class PowerConvention(str, Enum):
    CONST_PSD = "ConstPSD"
    CONST_TOTAL_POWER = "ConstTotalPower"


DEFAULT_POWER_SCALES = {
    PowerConvention.CONST_PSD: CONST_PSD_POWER_SCALE,
    PowerConvention.CONST_TOTAL_POWER: CONST_TOTAL_POWER_SCALE,
}


@dataclass(frozen=True)
class ReuseScheme:
    """Frequency reuse plan.

    Attributes:
        kind: FFR or four-colour reuse
        color_of_beam: Colour in [0, 4) of every beam (four-colour only)
        power_convention: How 4FR beam power relates to FFR beam power
        per_beam_power_scale: 4FR beam power / FFR beam power
        bandwidth_fraction: Share of the band each beam occupies
    """

    kind: ReuseKind = ReuseKind.FFR
    color_of_beam: Tuple[int, ...] = ()
    power_convention: Optional[PowerConvention] = None
    per_beam_power_scale: float = 1.0
    bandwidth_fraction: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "kind", ReuseKind(self.kind))
        object.__setattr__(self, "color_of_beam", tuple(int(c) for c in self.color_of_beam))
        if not self.per_beam_power_scale > 0:
            raise ValueError(f"per_beam_power_scale must be > 0, got {self.per_beam_power_scale}")

        if self.kind is ReuseKind.FFR:
            if self.bandwidth_fraction != 1.0:
                raise ValueError("FFR uses the whole band (bandwidth_fraction = 1)")
            return

        if self.power_convention is None:
            raise ValueError("Four-colour reuse needs a power convention")
        object.__setattr__(self, "power_convention", PowerConvention(self.power_convention))
        if self.bandwidth_fraction != FOUR_COLOR_BANDWIDTH:
            raise ValueError(f"Four-colour reuse uses bandwidth_fraction = {FOUR_COLOR_BANDWIDTH}")
        if not self.color_of_beam:
            raise ColoringError("Four-colour reuse needs a colour for every beam")
        if any(not 0 <= c < NUM_COLORS for c in self.color_of_beam):
            raise ColoringError(f"Colours must lie in [0, {NUM_COLORS}), got {self.color_of_beam}")

    @classmethod
    def ffr(cls) -> "ReuseScheme":
        return cls()

    @classmethod
    def four_color(cls, colors: Sequence[int], convention: Union[PowerConvention, str],
                   per_beam_power_scale: Optional[float] = None) -> "ReuseScheme":
        convention = PowerConvention(convention)
        if per_beam_power_scale is None:
            per_beam_power_scale = DEFAULT_POWER_SCALES[convention]
        return cls(
            kind=ReuseKind.FOUR_COLOR,
            color_of_beam=tuple(colors),
            power_convention=convention,
            per_beam_power_scale=per_beam_power_scale,
            bandwidth_fraction=FOUR_COLOR_BANDWIDTH,
        )


@dataclass(frozen=True)
class LinkBudgetPoint:
    """Satellite operating point: P_sat minus output back-off"""

    psat_dbw: float
    obo_db: float = 0.0

    def __post_init__(self):
        if self.obo_db < 0:
            raise ValueError(f"obo_db must be >= 0, got {self.obo_db}")

    @property
    def operating_power_dbw(self) -> float:
        return self.psat_dbw - self.obo_db

    @property
    def per_beam_power_linear(self) -> float:
        return 10.0 ** (self.operating_power_dbw / 10.0)


def effective_channel(H, W) -> EffectiveChannel:
    """G = H W.

    Raises:
        DimensionError: H has N columns but W does not have N rows, or G is not square
    """
    H = as_matrix(H)
    W = as_matrix(W)
    if H.shape[1] != W.shape[0]:
        raise DimensionError(f"Cannot multiply channel {H.shape} by precoder {W.shape}")
    return EffectiveChannel(H @ W)


def snir(G, sigma2: float, power_scale: float = 1.0) -> np.ndarray:
    """Per-user SNIR (linear) of an effective channel.

    SNIR_k = s |g_kk|^2 / (s sum_{j != k} |g_kj|^2 + sigma^2) with s = power_scale.
    """
    if not sigma2 > 0:
        raise ValueError(f"sigma2 must be > 0, got {sigma2}")
    if not power_scale > 0:
        raise ValueError(f"power_scale must be > 0, got {power_scale}")
    gains = np.abs(np.asarray(G)) ** 2
    desired = np.diag(gains)
    interference = gains.sum(axis=1) - desired
    return power_scale * desired / (power_scale * interference + sigma2)


def power_profile(W) -> Tuple[np.ndarray, np.ndarray]:
    """Per-antenna (row) and per-beam (column) transmit powers of a precoder"""
    powers = np.abs(as_matrix(W)) ** 2
    return powers.sum(axis=1), powers.sum(axis=0)


def four_color_snir(H, scheme: ReuseScheme, budget: LinkBudgetPoint,
                    noise: NoiseModel) -> np.ndarray:
    """Per-user SNIR of the unprecoded four-colour reuse baseline.

    User k is served by beam k with power P_b and only beams sharing beam k's colour
    interfere. Noise is collected over the quarter band.

    Raises:
        ColoringError: The colouring does not cover every beam
    """
    if scheme.kind is not ReuseKind.FOUR_COLOR:
        raise ValueError("four_color_snir needs a four-colour reuse scheme")
    H = as_matrix(H)
    num_users, num_beams = H.shape
    colors = np.asarray(scheme.color_of_beam)
    if colors.size != num_beams:
        raise ColoringError(f"Colouring covers {colors.size} beams, channel has {num_beams}")
    if num_users > num_beams:
        raise DimensionError(f"{num_users} users cannot each have their own of {num_beams} beams")

    beam_power = budget.per_beam_power_linear * scheme.per_beam_power_scale
    gains = beam_power * np.abs(H) ** 2
    same_color = colors[:num_users, None] == colors[None, :]
    desired = gains[np.arange(num_users), np.arange(num_users)]
    interference = np.where(same_color, gains, 0.0).sum(axis=1) - desired
    return desired / (interference + noise.variance(scheme.bandwidth_fraction))


def throughput(snir_db: float, table: ModcodTable, acm_margin_db: float = 0.6,
               symbol_rate_msps: float = 20.0, bandwidth_fraction: float = 1.0,
               polarization_factor: float = 1.0) -> float:
    """ACM throughput in Mbps for one user.

    Picks the highest MODCOD whose threshold does not exceed snir_db - acm_margin_db
    and returns efficiency x symbol rate x bandwidth fraction x polarization factor,
    or 0 when no MODCOD closes.
    """
    if not symbol_rate_msps > 0:
        raise ValueError(f"symbol_rate_msps must be > 0, got {symbol_rate_msps}")
    if not 0 < bandwidth_fraction <= 1:
        raise ValueError(f"bandwidth_fraction must be in (0, 1], got {bandwidth_fraction}")
    if polarization_factor < 1:
        raise ValueError(f"polarization_factor must be >= 1, got {polarization_factor}")

    entry = table.select(snir_db - acm_margin_db)
    if entry is None:
        return 0.0
    return entry.spectral_efficiency * symbol_rate_msps * bandwidth_fraction * polarization_factor


def aggregate_report(per_ut_snir_db: Sequence[float],
                     per_ut_throughput_mbps: Sequence[float]) -> Tuple[float, float]:
    """Average SNIR (mean of the dB values) and system throughput (plain sum)"""
    snir_values = np.asarray(per_ut_snir_db, dtype=float)
    rates = np.asarray(per_ut_throughput_mbps, dtype=float)
    if snir_values.size == 0 or rates.size == 0:
        raise ValueError("aggregate_report needs at least one user")
    return float(np.mean(snir_values)), float(np.sum(rates))
