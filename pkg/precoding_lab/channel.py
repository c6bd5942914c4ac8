#!/usr/bin/env python3
"""
Channel Module for the Multibeam Precoding Lab

This module builds the K x N forward-link channel between N satellite feeds and
K user terminals, loads and saves it in the channel CSV format, perturbs it with
CSI estimation errors, and defines the receiver noise model.

Beam pattern
------------
Each feed radiates the tapered-aperture Bessel pattern

    g(u) = J1(u) / (2u) + 36 J3(u) / u^3,   u = u3 * sin(theta) / sin(theta_3dB)

which equals 1 on boresight. ``u3`` is solved once so that g(u3)^2 = 1/2 exactly,
i.e. a user at the 3 dB half-angle receives half of the peak power. Channel
entries are ``peak_gain * |g(u)| * exp(j psi)`` with psi uniform on [0, 2 pi).
Angles are planar offsets in degrees as seen from the satellite.
"""

import hashlib
import logging
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Sequence, Tuple, Union

import numpy as np
from scipy.optimize import brentq
from scipy.special import jv

from precoding_lab.errors import (
    DimensionError,
    InvalidGeometry,
    IoError,
    NonFiniteEntries,
    ParseError,
)

# Set up logging
logger = logging.getLogger(__name__)

# Below this pattern argument the Bessel ratio is replaced by its Taylor series
SMALL_ARGUMENT = 1e-6

Point = Tuple[float, float]


@dataclass(frozen=True, eq=False)
class ChannelMatrix:
    """K x N complex channel between N feeds and K users.

    Row k holds the gains seen by user k, column n the contribution of feed n.
    The array is stored read-only so instances can be shared between threads.
    """

    entries: np.ndarray

    def __post_init__(self):
        entries = np.array(self.entries, dtype=np.complex128, copy=True)
        if entries.ndim != 2:
            raise DimensionError(f"Channel must be a 2-D matrix, got shape {entries.shape}")
        num_users, num_beams = entries.shape
        if num_users < 1 or num_beams < 1:
            raise DimensionError(f"Channel must be at least 1 x 1, got {entries.shape}")
        if num_users > num_beams:
            raise DimensionError(
                f"Channel has more users ({num_users}) than feeds ({num_beams})"
            )
        if not np.all(np.isfinite(entries)):
            raise NonFiniteEntries("Channel matrix contains NaN or Inf entries")
        entries.setflags(write=False)
        object.__setattr__(self, "entries", entries)

    def __array__(self, dtype=None, copy=None):
        if dtype is None:
            return self.entries
        return self.entries.astype(dtype)

    @property
    def num_users(self) -> int:
        return self.entries.shape[0]

    @property
    def num_beams(self) -> int:
        return self.entries.shape[1]

    @property
    def shape(self) -> Tuple[int, int]:
        return self.entries.shape


@dataclass(frozen=True)
class NoiseModel:
    """Receiver noise, expressed over the full transponder bandwidth.

    Attributes:
        noise_variance_fullband (float): sigma^2 in signal-power units
    """

    noise_variance_fullband: float

    def __post_init__(self):
        if not self.noise_variance_fullband > 0:
            raise ValueError(
                f"Noise variance must be > 0, got {self.noise_variance_fullband}"
            )

    @classmethod
    def from_psd(cls, psd: float, bandwidth: float) -> "NoiseModel":
        """Build the model from a noise PSD and the full bandwidth"""
        return cls(noise_variance_fullband=psd * bandwidth)

    def variance(self, bandwidth_fraction: float = 1.0) -> float:
        """Noise power collected over a fraction of the band (constant PSD)"""
        return self.noise_variance_fullband * bandwidth_fraction


@dataclass(frozen=True)
class CsiErrorModel:
    """Statistical model of the gap between the true channel and its estimate.

    Attributes:
        amplitude_error_std (float): Relative amplitude error std (dimensionless)
        phase_error_std (float): Phase error std in radians
        additive_error_std (float): Additive error std relative to |h|
        profile_name (str): Label reported with the results
    """

    amplitude_error_std: float = 0.0
    phase_error_std: float = 0.0
    additive_error_std: float = 0.0
    profile_name: str = "ideal"

    def __post_init__(self):
        for name in ("amplitude_error_std", "phase_error_std", "additive_error_std"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0, got {getattr(self, name)}")
        if self.profile_name == "ideal" and not self.is_ideal:
            raise ValueError("The 'ideal' CSI profile must have all standard deviations = 0")

    @property
    def is_ideal(self) -> bool:
        return (
            self.amplitude_error_std == 0
            and self.phase_error_std == 0
            and self.additive_error_std == 0
        )


# Named CSI profiles. "normal" and "ngw" are placeholders: the lab campaigns they
# stand for never published their error magnitudes.
CSI_ERROR_PROFILES = {
    "ideal": CsiErrorModel(profile_name="ideal"),
    "normal": CsiErrorModel(
        amplitude_error_std=0.05,
        phase_error_std=np.deg2rad(3.0),
        additive_error_std=0.01,
        profile_name="normal",
    ),
    "ngw": CsiErrorModel(
        amplitude_error_std=0.02,
        phase_error_std=np.deg2rad(1.0),
        additive_error_std=0.005,
        profile_name="ngw",
    ),
}


def csi_error_profile(name: str) -> CsiErrorModel:
    """Return one of the named CSI error presets"""
    try:
        return CSI_ERROR_PROFILES[name]
    except KeyError:
        raise ValueError(
            f"Unknown CSI error profile '{name}', expected one of {sorted(CSI_ERROR_PROFILES)}"
        ) from None


@dataclass(frozen=True)
class BeamGeometry:
    """Beam centres and user positions in planar angular coordinates (degrees).

    Attributes:
        beam_centers: N (x, y) points, one per feed
        three_db_half_angle (float): 3 dB half-angle of every beam in degrees
        peak_gain (float): Boresight amplitude gain (linear)
        user_positions: K (x, y) points, one per user terminal
    """

    beam_centers: Tuple[Point, ...]
    three_db_half_angle: float
    peak_gain: float
    user_positions: Tuple[Point, ...] = field(default=())

    def __post_init__(self):
        centers = tuple(tuple(float(c) for c in point) for point in self.beam_centers)
        users = tuple(tuple(float(c) for c in point) for point in self.user_positions)
        if not users:
            users = centers
        object.__setattr__(self, "beam_centers", centers)
        object.__setattr__(self, "user_positions", users)

        if not centers:
            raise InvalidGeometry("Geometry needs at least one beam")
        if any(len(point) != 2 for point in centers + users):
            raise InvalidGeometry("Beam centres and user positions must be (x, y) pairs")
        if not self.three_db_half_angle > 0:
            raise InvalidGeometry(
                f"3 dB half-angle must be > 0, got {self.three_db_half_angle}"
            )
        if not self.peak_gain > 0:
            raise InvalidGeometry(f"Peak gain must be > 0, got {self.peak_gain}")
        if len(set(centers)) != len(centers):
            raise InvalidGeometry("Beam centres must be distinct")

    @property
    def num_beams(self) -> int:
        return len(self.beam_centers)

    @property
    def num_users(self) -> int:
        return len(self.user_positions)


def grid_geometry(rows: int, cols: int, spacing: float, three_db_half_angle: float,
                  peak_gain: float = 1.0) -> BeamGeometry:
    """Build a rows x cols beam grid with one user at every beam centre"""
    centers = tuple(
        (col * spacing, row * spacing) for row in range(rows) for col in range(cols)
    )
    return BeamGeometry(
        beam_centers=centers,
        three_db_half_angle=three_db_half_angle,
        peak_gain=peak_gain,
    )


def grid_four_coloring(rows: int, cols: int) -> Tuple[int, ...]:
    """Four-colour assignment of a beam grid by row/column parity.

    Adjacent beams (horizontal, vertical and diagonal) always get different colours.
    """
    return tuple(2 * (row % 2) + (col % 2) for row in range(rows) for col in range(cols))


@lru_cache(maxsize=1)
def three_db_argument() -> float:
    """Pattern argument u3 where the power pattern drops to exactly one half"""
    return brentq(lambda u: _bessel_pattern(np.array([u]))[0] ** 2 - 0.5, 1.0, 3.0,
                  xtol=1e-15, rtol=4 * np.finfo(float).eps)


def _bessel_pattern(u: np.ndarray) -> np.ndarray:
    u = np.abs(np.asarray(u, dtype=float))
    small = u < SMALL_ARGUMENT
    safe = np.where(small, 1.0, u)
    value = jv(1, safe) / (2.0 * safe) + 36.0 * jv(3, safe) / safe ** 3
    return np.where(small, 1.0 - 0.078125 * u ** 2, value)


def beam_pattern_amplitude(theta_deg, three_db_half_angle: float) -> np.ndarray:
    """Normalized amplitude pattern |g| at off-axis angle(s) theta (degrees)"""
    theta = np.deg2rad(np.asarray(theta_deg, dtype=float))
    half_angle = np.deg2rad(three_db_half_angle)
    u = three_db_argument() * np.sin(theta) / np.sin(half_angle)
    return np.abs(_bessel_pattern(u))


def derive_seed(master_seed: int, *keys: Union[int, str]) -> int:
    """Mix a master seed with stream keys into an independent 64-bit seed.

    Strings are hashed with SHA-256 so the result never depends on the interpreter's
    hash randomization; the integers are then fed through numpy's SeedSequence.
    """
    entropy = [int(master_seed)]
    for key in keys:
        if isinstance(key, str):
            entropy.append(int.from_bytes(hashlib.sha256(key.encode("utf-8")).digest()[:8], "little"))
        else:
            entropy.append(int(key))
    state = np.random.SeedSequence(entropy).generate_state(2, dtype=np.uint32)
    return int(state[0]) | (int(state[1]) << 32)


def generate_multibeam_channel(geometry: BeamGeometry, seed: int) -> ChannelMatrix:
    """Generate the channel for a beam geometry.

    Args:
        geometry: Beam centres, users and pattern parameters
        seed: Seed for the random phases

    Returns:
        ChannelMatrix: K x N matrix, deterministic for a given seed
    """
    users = np.asarray(geometry.user_positions, dtype=float)
    centers = np.asarray(geometry.beam_centers, dtype=float)
    offsets = users[:, None, :] - centers[None, :, :]
    theta = np.hypot(offsets[..., 0], offsets[..., 1])

    magnitude = geometry.peak_gain * beam_pattern_amplitude(theta, geometry.three_db_half_angle)
    rng = np.random.default_rng(seed)
    phase = rng.uniform(0.0, 2.0 * np.pi, size=magnitude.shape)

    logger.debug(f"Generated {magnitude.shape[0]}x{magnitude.shape[1]} multibeam channel (seed={seed})")
    return ChannelMatrix(magnitude * np.exp(1j * phase))


def apply_csi_error(H: ChannelMatrix, model: CsiErrorModel, seed: int) -> ChannelMatrix:
    """Return the gateway's view of the channel under a CSI error model.

    Each entry becomes h * (1 + a) * exp(j phi) + e with Gaussian a and phi and a
    circularly symmetric e whose std is additive_error_std * |h|.
    """
    if model.is_ideal:
        return H

    h = np.asarray(H)
    rng = np.random.default_rng(seed)
    amplitude = rng.normal(0.0, model.amplitude_error_std, size=h.shape)
    phase = rng.normal(0.0, model.phase_error_std, size=h.shape)
    additive = (rng.standard_normal(h.shape) + 1j * rng.standard_normal(h.shape)) / np.sqrt(2.0)
    additive *= model.additive_error_std * np.abs(h)

    return ChannelMatrix(h * (1.0 + amplitude) * np.exp(1j * phase) + additive)


def save_channel(H: ChannelMatrix, path: Union[str, Path]) -> Path:
    """Write a channel to the channel CSV format ("re;im" cells, no header)"""
    path = Path(path)
    h = np.asarray(H)
    lines = [
        ",".join(f"{value.real:.17g};{value.imag:.17g}" for value in row)
        for row in h
    ]
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")
    except OSError as e:
        raise IoError(f"Cannot write channel file {path}: {e}") from e
    logger.info(f"Channel {h.shape[0]}x{h.shape[1]} written to {path}")
    return path


def _parse_cell(cell: str, line_number: int) -> complex:
    parts = cell.strip().split(";")
    if len(parts) != 2:
        raise ParseError(f"Line {line_number}: cell '{cell}' is not of the form re;im")
    try:
        return complex(float(parts[0]), float(parts[1]))
    except ValueError:
        raise ParseError(f"Line {line_number}: non-numeric cell '{cell}'") from None


def load_channel(path: Union[str, Path]) -> ChannelMatrix:
    """Read a channel written in the channel CSV format.

    Raises:
        IoError: The file cannot be read
        ParseError: A cell is malformed or not numeric
        DimensionError: Rows have different lengths
        NonFiniteEntries: A cell holds NaN or Inf
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise IoError(f"Cannot read channel file {path}: {e}") from e

    rows = []
    for line_number, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        rows.append([_parse_cell(cell, line_number) for cell in line.split(",")])

    if not rows:
        raise ParseError(f"Channel file {path} is empty")
    widths = {len(row) for row in rows}
    if len(widths) != 1:
        raise DimensionError(f"Channel file {path} has ragged rows (widths {sorted(widths)})")

    H = ChannelMatrix(np.array(rows, dtype=np.complex128))
    logger.info(f"Loaded {H.num_users}x{H.num_beams} channel from {path}")
    return H


def as_matrix(H: Union[ChannelMatrix, np.ndarray, Sequence]) -> np.ndarray:
    """View any channel-like input as a 2-D complex array"""
    matrix = np.asarray(H, dtype=np.complex128)
    if matrix.ndim != 2:
        raise DimensionError(f"Expected a 2-D matrix, got shape {matrix.shape}")
    return matrix
