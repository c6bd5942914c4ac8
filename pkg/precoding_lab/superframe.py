#!/usr/bin/env python3
"""
Superframe Module for the Multibeam Precoding Lab

Symbol-level model of the closed CSI loop. A superframe is three fields sent on
every feed:

    [ SOSF | pilots | payload ]

The start-of-superframe marker (SOSF) and the pilots are never precoded; only the
payload goes through W. Terminals find the SOSF by correlation, estimate their
channel row from the pilots and report it back to the gateway, which builds the
next precoder from that (possibly delayed) estimate.
"""

import logging
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache
from typing import Callable, Deque, List, Optional, Union

import numpy as np
import scipy.linalg
import scipy.signal

from precoding_lab.channel import ChannelMatrix, NoiseModel, as_matrix, derive_seed
from precoding_lab.errors import DimensionError, InvalidOrder

# Set up logging
logger = logging.getLogger(__name__)

# Fixed chip scrambler applied to the SOSF Hadamard row
SOSF_SCRAMBLER_SEED = 0x50F5

APSK16_RING_RATIO = 2.85


def _is_power_of_two(value: int) -> bool:
    return isinstance(value, (int, np.integer)) and value >= 1 and (value & (value - 1)) == 0


def walsh_hadamard(order: int) -> np.ndarray:
    """Sylvester Hadamard matrix of the given order (entries +1/-1).

    Raises:
        InvalidOrder: order is not a power of two
    """
    if not _is_power_of_two(order):
        raise InvalidOrder(f"Hadamard order must be a power of two, got {order}")
    return scipy.linalg.hadamard(int(order))


@lru_cache(maxsize=8)
def _scrambler(length: int) -> np.ndarray:
    rng = np.random.default_rng(SOSF_SCRAMBLER_SEED)
    return rng.choice(np.array([-1, 1]), size=length)


def sosf_sequence(length: int) -> np.ndarray:
    """SOSF marker: Hadamard row 1 multiplied chip-wise by the fixed scrambler"""
    if length < 2:
        raise InvalidOrder(f"SOSF length must be at least 2, got {length}")
    sequence = walsh_hadamard(length)[1] * _scrambler(length)
    sequence.setflags(write=False)
    return sequence


class ConstellationKind(str, Enum):
    QPSK = "QPSK"
    PSK8 = "PSK8"
    APSK16 = "APSK16"


def _gray(values: np.ndarray) -> np.ndarray:
    return values ^ (values >> 1)


@dataclass(frozen=True, eq=False)
class Constellation:
    """Unit average power constellation with bit labels.

    Attributes:
        kind: Constellation name
        points: Complex points
        labels: Bit label (as an integer) of every point
    """

    kind: ConstellationKind
    points: np.ndarray
    labels: np.ndarray

    @property
    def bits_per_symbol(self) -> int:
        return int(np.log2(self.points.size))

    def random_symbols(self, rng: np.random.Generator, shape) -> np.ndarray:
        return self.points[rng.integers(0, self.points.size, size=shape)]

    def demap(self, samples: np.ndarray) -> np.ndarray:
        """Index of the nearest point for every sample"""
        samples = np.asarray(samples)
        distances = np.abs(samples[..., None] - self.points)
        return np.argmin(distances, axis=-1)


@lru_cache(maxsize=None)
def constellation(kind: Union[ConstellationKind, str]) -> Constellation:
    """Build one of the supported payload constellations"""
    kind = ConstellationKind(kind)
    if kind is ConstellationKind.QPSK:
        labels = np.arange(4)
        points = ((1 - 2 * (labels >> 1)) + 1j * (1 - 2 * (labels & 1))) / np.sqrt(2.0)
    elif kind is ConstellationKind.PSK8:
        index = np.arange(8)
        points = np.exp(1j * (np.pi / 8 + 2 * np.pi * index / 8))
        labels = _gray(index)
    else:
        # 4 + 12 rings, Gray-coded along each ring
        inner = np.exp(1j * (np.pi / 4 + np.pi / 2 * np.arange(4)))
        outer = APSK16_RING_RATIO * np.exp(1j * (np.pi / 12 + np.pi / 6 * np.arange(12)))
        points = np.concatenate([inner, outer])
        points = points / np.sqrt(np.mean(np.abs(points) ** 2))
        labels = np.concatenate([_gray(np.arange(4)) + 12, _outer_labels()])
    points.setflags(write=False)
    labels.setflags(write=False)
    return Constellation(kind, points, labels)


def _outer_labels() -> np.ndarray:
    # Outer ring labels in angular order; neighbours differ in one bit except 4->8 and the wrap
    return np.array([0, 1, 3, 2, 6, 7, 5, 4, 8, 9, 11, 10])


@dataclass(frozen=True)
class SuperframeConfig:
    """Field lengths and payload modulation of a superframe"""

    sosf_length: int = 256
    pilot_length: int = 32
    payload_length: int = 512
    constellation: ConstellationKind = ConstellationKind.QPSK

    def __post_init__(self):
        if not _is_power_of_two(self.sosf_length) or self.sosf_length < 2:
            raise InvalidOrder(f"sosf_length must be a power of two >= 2, got {self.sosf_length}")
        if not _is_power_of_two(self.pilot_length):
            raise InvalidOrder(f"pilot_length must be a power of two, got {self.pilot_length}")
        if self.payload_length < 1:
            raise ValueError(f"payload_length must be >= 1, got {self.payload_length}")
        object.__setattr__(self, "constellation", ConstellationKind(self.constellation))

    @property
    def length(self) -> int:
        return self.sosf_length + self.pilot_length + self.payload_length


@dataclass(frozen=True, eq=False)
class SymbolStreams:
    """Equal-length complex symbol streams, one per feed (transmit) or user (receive).

    Attributes:
        samples: streams x length complex array
        sosf: Index range of the SOSF field
        pilots: Index range of the pilot field
        payload: Index range of the payload field
    """

    samples: np.ndarray
    sosf: slice
    pilots: slice
    payload: slice

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.complex128)
        if samples.ndim != 2:
            raise DimensionError(f"Streams must be 2-D, got shape {samples.shape}")
        if (self.sosf.start, self.sosf.stop, self.pilots.stop, self.payload.stop) != (
            0, self.pilots.start, self.payload.start, samples.shape[1]
        ):
            raise DimensionError("Field ranges must partition the stream")
        object.__setattr__(self, "samples", samples)

    @property
    def num_streams(self) -> int:
        return self.samples.shape[0]

    @property
    def length(self) -> int:
        return self.samples.shape[1]

    def field(self, name: str) -> np.ndarray:
        return self.samples[:, getattr(self, name)]

    def with_samples(self, samples: np.ndarray) -> "SymbolStreams":
        return SymbolStreams(samples, self.sosf, self.pilots, self.payload)


def pilot_matrix(num_beams: int, pilot_length: int) -> np.ndarray:
    """Rows 0..N-1 of the pilot Hadamard matrix, one per feed"""
    if pilot_length < num_beams:
        raise DimensionError(f"pilot_length {pilot_length} is shorter than the {num_beams} feeds")
    return walsh_hadamard(pilot_length)[:num_beams]


def build_superframe(payload_symbols, W, config: SuperframeConfig) -> SymbolStreams:
    """Assemble the per-feed streams of one superframe.

    Args:
        payload_symbols: K x payload_length user symbols
        W: N x K precoder applied to the payload only
        config: Field lengths

    Returns:
        SymbolStreams: N streams [SOSF | pilot row n | (W s_t)_n]
    """
    W = as_matrix(W)
    symbols = as_matrix(payload_symbols)
    num_beams, num_users = W.shape
    if symbols.shape != (num_users, config.payload_length):
        raise DimensionError(
            f"Payload must be {num_users}x{config.payload_length} for a {W.shape} precoder, "
            f"got {symbols.shape}"
        )

    sosf = np.broadcast_to(sosf_sequence(config.sosf_length), (num_beams, config.sosf_length))
    pilots = pilot_matrix(num_beams, config.pilot_length)
    samples = np.concatenate([sosf, pilots, W @ symbols], axis=1)

    pilot_end = config.sosf_length + config.pilot_length
    return SymbolStreams(
        samples,
        sosf=slice(0, config.sosf_length),
        pilots=slice(config.sosf_length, pilot_end),
        payload=slice(pilot_end, config.length),
    )


def transmit(H, streams: SymbolStreams, noise: Union[NoiseModel, float], seed: int) -> SymbolStreams:
    """Pass the feed streams through the channel: r_t = H x_t + z_t.

    Args:
        H: K x N channel
        streams: N transmit streams
        noise: Noise model or a per-user noise variance (0 disables noise)
        seed: Seed for the noise samples

    Returns:
        SymbolStreams: K receive streams with the same field ranges
    """
    H = as_matrix(H)
    if H.shape[1] != streams.num_streams:
        raise DimensionError(
            f"Channel has {H.shape[1]} feeds but {streams.num_streams} streams were sent"
        )
    sigma2 = noise.variance() if isinstance(noise, NoiseModel) else float(noise)
    if sigma2 < 0:
        raise ValueError(f"Noise variance must be >= 0, got {sigma2}")

    received = H @ streams.samples
    if sigma2 > 0:
        rng = np.random.default_rng(seed)
        shape = received.shape
        received = received + np.sqrt(sigma2 / 2.0) * (
            rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
        )
    return streams.with_samples(received)


def detect_sosf(rx_stream, sosf) -> int:
    """Lag that maximizes the normalized correlation between rx and the SOSF"""
    rx = np.asarray(rx_stream, dtype=np.complex128).ravel()
    reference = np.asarray(sosf, dtype=float).ravel()
    if rx.size < reference.size:
        raise DimensionError(f"Received stream ({rx.size}) is shorter than the SOSF ({reference.size})")

    correlation = scipy.signal.correlate(rx, reference, mode="valid")
    window_energy = scipy.signal.correlate(np.abs(rx) ** 2, np.ones(reference.size), mode="valid")
    metric = np.abs(correlation) / np.sqrt(np.maximum(window_energy, np.finfo(float).tiny))
    return int(np.argmax(metric))


def estimate_csi(rx_pilot_field, pilots) -> ChannelMatrix:
    """Correlation estimate h_kn = <rx row k, pilot row n> / pilot_length.

    Args:
        rx_pilot_field: K x pilot_length received pilot samples
        pilots: N x pilot_length orthogonal +1/-1 pilot rows

    Raises:
        DimensionError: Lengths disagree or there are fewer pilot symbols than feeds
    """
    rx = as_matrix(rx_pilot_field)
    pilots = np.asarray(pilots, dtype=float)
    if pilots.ndim != 2:
        raise DimensionError(f"Pilot matrix must be 2-D, got shape {pilots.shape}")
    num_beams, pilot_length = pilots.shape
    if pilot_length < num_beams:
        raise DimensionError(f"pilot_length {pilot_length} is shorter than the {num_beams} feeds")
    if rx.shape[1] != pilot_length:
        raise DimensionError(f"Pilot field has {rx.shape[1]} samples, pilots have {pilot_length}")
    return ChannelMatrix(rx @ pilots.T / pilot_length)


@dataclass(frozen=True)
class SymbolErrorStats:
    """Per-user uncoded error statistics of one payload field"""

    ser: np.ndarray
    evm: np.ndarray
    ber: np.ndarray


def measure_ser(rx_payload, tx_symbols, kind: Union[ConstellationKind, str],
                gains=None) -> SymbolErrorStats:
    """Nearest-neighbour demapping of the received payload.

    Args:
        rx_payload: K x L received symbols
        tx_symbols: K x L transmitted constellation points
        kind: Payload constellation
        gains: Optional K complex gains; rx row k is divided by gains[k] first

    Returns:
        SymbolErrorStats: symbol error rate, EVM and bit error rate per user
    """
    rx = as_matrix(rx_payload)
    tx = as_matrix(tx_symbols)
    if rx.shape != tx.shape:
        raise DimensionError(f"Received {rx.shape} and transmitted {tx.shape} payloads differ")
    if gains is not None:
        gains = np.asarray(gains, dtype=np.complex128)
        if gains.shape != (rx.shape[0],):
            raise DimensionError(f"Expected {rx.shape[0]} gains, got shape {gains.shape}")
        rx = rx / gains[:, None]

    points = constellation(kind)
    sent = points.demap(tx)
    decided = points.demap(rx)

    ser = np.mean(sent != decided, axis=1)
    evm = np.sqrt(np.mean(np.abs(rx - tx) ** 2, axis=1) / np.mean(np.abs(tx) ** 2, axis=1))
    flipped = points.labels[sent] ^ points.labels[decided]
    bit_errors = np.unpackbits(flipped.astype(np.uint8)[..., None], axis=-1).sum(axis=(1, 2))
    ber = bit_errors / (tx.shape[1] * points.bits_per_symbol)
    return SymbolErrorStats(ser=ser, evm=evm, ber=ber)


@dataclass
class SuperframeResult:
    """What the terminals measured in one superframe of a closed loop"""

    index: int
    sosf_offsets: np.ndarray
    csi_mse: np.ndarray
    estimate: ChannelMatrix
    errors: Optional[SymbolErrorStats] = field(default=None)

    @property
    def carries_payload(self) -> bool:
        return self.errors is not None


class ClosedLoopLink:
    """Superframe-by-superframe CSI loop over a static channel.

    Every superframe the terminals estimate H from the pilots and feed the estimate
    back. The gateway precodes the payload with the estimate that is
    ``feedback_delay`` superframes older than the latest one; superframes sent
    before any estimate arrived carry an empty (all-zero) payload.
    """

    def __init__(self, H: ChannelMatrix, config: SuperframeConfig,
                 precoder: Callable[[ChannelMatrix], np.ndarray],
                 noise: Union[NoiseModel, float], seed: int, feedback_delay: int = 0):
        if feedback_delay < 0:
            raise ValueError(f"feedback_delay must be >= 0, got {feedback_delay}")
        self.H = H if isinstance(H, ChannelMatrix) else ChannelMatrix(H)
        self.config = config
        self.precoder = precoder
        self.noise = noise
        self.seed = seed
        self.feedback_delay = feedback_delay
        self._pilots = pilot_matrix(self.H.num_beams, config.pilot_length)
        self._feedback: Deque[ChannelMatrix] = deque()
        self._next_index = 0

    def step(self) -> SuperframeResult:
        """Send one superframe and process it at the terminals"""
        index = self._next_index
        self._next_index += 1
        num_users, num_beams = self.H.shape

        estimate = self._feedback.popleft() if len(self._feedback) > self.feedback_delay else None
        rng = np.random.default_rng(derive_seed(self.seed, "payload", index))
        symbols = constellation(self.config.constellation).random_symbols(
            rng, (num_users, self.config.payload_length)
        )
        if estimate is None:
            W = np.zeros((num_beams, num_users), dtype=np.complex128)
        else:
            W = as_matrix(self.precoder(estimate))

        streams = build_superframe(symbols, W, self.config)
        received = transmit(self.H, streams, self.noise, derive_seed(self.seed, "noise", index))

        sosf = sosf_sequence(self.config.sosf_length)
        offsets = np.array([detect_sosf(row, sosf) for row in received.samples])
        fresh = estimate_csi(received.field("pilots"), self._pilots)
        self._feedback.append(fresh)
        csi_mse = np.mean(np.abs(np.asarray(fresh) - np.asarray(self.H)) ** 2, axis=1)

        errors = None
        if estimate is not None:
            gains = np.diag(np.asarray(self.H) @ W)
            errors = measure_ser(received.field("payload"), symbols, self.config.constellation, gains)
            logger.debug(f"Superframe {index}: mean SER {np.mean(errors.ser):.3e}")
        else:
            logger.debug(f"Superframe {index}: no CSI fed back yet, payload empty")
        return SuperframeResult(index, offsets, csi_mse, fresh, errors)

    def run(self, num_superframes: int) -> List[SuperframeResult]:
        if num_superframes < 1:
            raise ValueError(f"num_superframes must be >= 1, got {num_superframes}")
        return [self.step() for _ in range(num_superframes)]
