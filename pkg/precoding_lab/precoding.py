#!/usr/bin/env python3
"""
Precoding Module for the Multibeam Precoding Lab

Linear precoders for a K-user, N-feed forward link. Every precoder maps the
gateway's channel estimate H_hat (K x N) to a precoding matrix W (N x K) whose
rows belong to feeds and whose columns belong to users:

- zero_forcing: W = H^H (H H^H)^-1
- mmse:         W = H^H (H H^H + sigma^2 I)^-1
- mmse_pac:     W = (H^H H + Lambda)^-1 H^H with one dual variable per feed, tuned
                until every feed transmits exactly phi
- optl:         minimum sum-power precoder meeting per-user SNIR targets, obtained
                from the virtual uplink by alternating beamformer and power updates

normalize() applies the row/matrix rescaling used before transmission.
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence, Tuple

import numpy as np
import scipy.linalg

from precoding_lab.channel import as_matrix
from precoding_lab.errors import (
    DegenerateRow,
    DimensionError,
    DivergenceDetected,
    InfeasibleTargets,
    NonConvergence,
    NumericalBreakdown,
    RankDeficient,
)

# Set up logging
logger = logging.getLogger(__name__)

# Matrices with a larger condition number are treated as singular
CONDITION_LIMIT = 1e12

# Rows shorter than this fraction of the longest row cannot be rescaled
DEGENERATE_ROW_EPS = 1e-15

DEFAULT_POWER_CAP = 1e9


class NormalizationMode(str, Enum):
    """Rescaling applied to a precoder before transmission"""

    UNIT_ROW = "UnitRow"
    PAC = "PAC"
    MPC = "MPC"
    PAR = "PAR"


class PrecoderKind(str, Enum):
    ZF = "ZF"
    MMSE = "MMSE"
    MMSE_PAC = "MMSE-PAC"
    OPTL = "OPTL"


@dataclass(frozen=True)
class PacParams:
    """Parameters of the per-antenna power constrained MMSE solver.

    Attributes:
        phi (float): Per-antenna power budget
        tolerance (float): Allowed relative per-antenna power mismatch
        max_iterations (int): Iteration cap
        initial_dual (float): Starting value of every dual variable
    """

    phi: float
    tolerance: float = 1e-6
    max_iterations: int = 1000
    initial_dual: float = 1.0

    def __post_init__(self):
        if not self.phi > 0:
            raise ValueError(f"phi must be > 0, got {self.phi}")
        if not 0 < self.tolerance < 1:
            raise ValueError(f"tolerance must be in (0, 1), got {self.tolerance}")
        if self.max_iterations < 1:
            raise ValueError(f"max_iterations must be >= 1, got {self.max_iterations}")
        if not self.initial_dual > 0:
            raise ValueError(f"initial_dual must be > 0, got {self.initial_dual}")


@dataclass(frozen=True)
class PacDiagnostics:
    """Outcome of an MMSE-PAC solve"""

    iterations: int
    mismatch: float
    slackness_residual: float
    converged: bool


@dataclass(frozen=True)
class OptlParams:
    """Parameters of the optimal linear precoder.

    Attributes:
        targets: Per-user SNIR targets (linear)
        tolerance (float): Stop when max |mu_i / gamma_i - 1| is below this
        max_iterations (int): Iteration cap of the uplink loop
        power_cap (float): Uplink powers above this value abort the loop
    """

    targets: Tuple[float, ...]
    tolerance: float = 1e-8
    max_iterations: int = 500
    power_cap: float = DEFAULT_POWER_CAP

    def __post_init__(self):
        targets = tuple(float(t) for t in np.atleast_1d(self.targets))
        object.__setattr__(self, "targets", targets)
        if not targets or any(not t > 0 for t in targets):
            raise ValueError(f"SNIR targets must all be > 0, got {targets}")
        if not self.tolerance > 0:
            raise ValueError(f"tolerance must be > 0, got {self.tolerance}")
        if self.max_iterations < 1:
            raise ValueError(f"max_iterations must be >= 1, got {self.max_iterations}")
        if not self.power_cap > 0:
            raise ValueError(f"power_cap must be > 0, got {self.power_cap}")


@dataclass
class OptlState:
    """Virtual uplink state when the OPTL loop stopped.

    Attributes:
        beamformers: N x K matrix of unit-norm columns u_i
        uplink_powers: K uplink powers p_i
        achieved_ratios: K values mu_i from the last beamformer update
        iterations_used: Number of beamformer updates performed
        converged: Whether mu matched the targets within tolerance
        downlink_powers: K downlink powers used to build W
    """

    beamformers: np.ndarray
    uplink_powers: np.ndarray
    achieved_ratios: np.ndarray
    iterations_used: int
    converged: bool
    downlink_powers: Optional[np.ndarray] = field(default=None)


def row_powers(W: np.ndarray) -> np.ndarray:
    """Per-antenna powers, the squared row norms of W"""
    return np.sum(np.abs(W) ** 2, axis=1)


def _check_conditioning(matrix: np.ndarray, what: str) -> None:
    condition = np.linalg.cond(matrix)
    if not np.isfinite(condition) or condition > CONDITION_LIMIT:
        raise RankDeficient(f"{what} is numerically singular (condition number {condition:.3g})")


def zero_forcing(H_hat) -> np.ndarray:
    """Zero-forcing precoder W = H^H (H H^H)^-1, so that H W = I.

    Raises:
        RankDeficient: H H^H has condition number above CONDITION_LIMIT
    """
    H = as_matrix(H_hat)
    gram = H @ H.conj().T
    _check_conditioning(gram, "H H^H")
    return H.conj().T @ scipy.linalg.solve(gram, np.eye(H.shape[0]), assume_a="her")


def mmse(H_hat, sigma2: float) -> np.ndarray:
    """Regularized channel inverse W = H^H (H H^H + sigma^2 I)^-1.

    With sigma2 = 0 this is the zero-forcing precoder and needs full row rank.
    """
    if sigma2 < 0:
        raise ValueError(f"sigma2 must be >= 0, got {sigma2}")
    if sigma2 == 0:
        return zero_forcing(H_hat)
    H = as_matrix(H_hat)
    num_users = H.shape[0]
    regularized = H @ H.conj().T + sigma2 * np.eye(num_users)
    return H.conj().T @ scipy.linalg.solve(regularized, np.eye(num_users), assume_a="her")


def mmse_pac(H_hat, params: PacParams) -> Tuple[np.ndarray, np.ndarray, PacDiagnostics]:
    """MMSE precoder with per-antenna power equality constraints.

    Iterates W = (H^H H + diag(lambda))^-1 H^H with the multiplicative update
    lambda_n <- lambda_n * rho_n / phi, where rho_n is the power of feed n, until
    every rho_n is within phi * tolerance of phi.

    Args:
        H_hat: K x N channel estimate
        params: Budget, tolerance, iteration cap and starting dual value

    Returns:
        tuple: (W, duals, diagnostics) with W of shape N x K and N dual variables

    Raises:
        NonConvergence: The iteration cap was reached
        NumericalBreakdown: A dual variable reached zero while its feed is over budget
    """
    H = as_matrix(H_hat)
    num_beams = H.shape[1]
    H_herm = H.conj().T
    gram = H_herm @ H
    phi = params.phi
    tiny = np.finfo(float).tiny

    duals = np.full(num_beams, float(params.initial_dual))
    mismatch = np.inf
    for iteration in range(1, params.max_iterations + 1):
        try:
            W = scipy.linalg.solve(gram + np.diag(duals), H_herm, assume_a="her")
        except (np.linalg.LinAlgError, scipy.linalg.LinAlgError) as e:
            raise NumericalBreakdown(f"Regularized Gram matrix became singular: {e}") from e

        powers = row_powers(W)
        ratio = powers / phi
        mismatch = float(np.max(np.abs(ratio - 1.0)))
        logger.debug(f"MMSE-PAC iteration {iteration}: mismatch={mismatch:.3e}")

        if mismatch <= params.tolerance:
            residual = float(np.max(duals * np.abs(powers - phi)))
            return W, duals, PacDiagnostics(iteration, mismatch, residual, True)

        stuck = (duals <= tiny) & (powers > phi)
        if np.any(stuck):
            raise NumericalBreakdown(
                f"Dual variables of feeds {np.flatnonzero(stuck).tolist()} underflowed "
                f"while over budget"
            )
        duals = duals * ratio

    raise NonConvergence(
        f"MMSE-PAC did not converge in {params.max_iterations} iterations "
        f"(mismatch {mismatch:.3e})",
        mismatch=mismatch,
        iterations=params.max_iterations,
    )


def beamformer_update(H, uplink_powers, targets=None, *,
                      weight_interference_by_targets: bool = False
                      ) -> Tuple[np.ndarray, np.ndarray]:
    """Virtual uplink beamformer update.

    For each user i the unit-norm u_i maximizing

        p_i |u^H h_i|^2 / (u^H B_i u),  B_i = sum_{j != i} c_j h_j h_j^H + I

    is u_i ~ B_i^-1 h_i with maximum mu_i = p_i h_i^H B_i^-1 h_i. Here h_i is the
    conjugate of row i of H and c_j = p_j. With weight_interference_by_targets the
    literal weighting c_j = p_j gamma_j of the constraint-normalized uplink problem
    is used instead; its fixed point is not the one power_control_update drives to,
    so optl never enables it.

    Args:
        H: K x N channel
        uplink_powers: K uplink powers p_i >= 0
        targets: K SNIR targets, only read when weighting by targets

    Returns:
        tuple: (beamformers N x K with unit-norm columns, achieved ratios mu)
    """
    H = as_matrix(H)
    num_users = H.shape[0]
    powers = np.asarray(uplink_powers, dtype=float)
    if powers.shape != (num_users,):
        raise DimensionError(f"Expected {num_users} uplink powers, got shape {powers.shape}")
    if np.any(powers < 0):
        raise ValueError("Uplink powers must be >= 0")

    weights = powers
    if weight_interference_by_targets:
        gamma = np.asarray(targets, dtype=float)
        if gamma.shape != (num_users,):
            raise DimensionError(f"Expected {num_users} targets, got shape {gamma.shape}")
        weights = powers * gamma

    columns = H.conj().T
    covariance = H.conj().T @ (weights[:, None] * H) + np.eye(H.shape[1])

    beamformers = np.empty((H.shape[1], num_users), dtype=np.complex128)
    ratios = np.empty(num_users)
    for i in range(num_users):
        h_i = columns[:, i]
        interference = covariance - weights[i] * np.outer(h_i, h_i.conj())
        direction = scipy.linalg.solve(interference, h_i, assume_a="pos")
        ratios[i] = powers[i] * np.real(np.vdot(h_i, direction))
        beamformers[:, i] = direction / np.linalg.norm(direction)
    return beamformers, ratios


def power_control_update(uplink_powers, achieved_ratios, targets,
                         power_cap: float = DEFAULT_POWER_CAP) -> np.ndarray:
    """Scale each uplink power by gamma_i / mu_i.

    Raises:
        DivergenceDetected: Any updated power exceeds power_cap
    """
    powers = np.asarray(uplink_powers, dtype=float)
    ratios = np.asarray(achieved_ratios, dtype=float)
    gamma = np.asarray(targets, dtype=float)
    if np.any(ratios <= 0):
        raise ValueError("Achieved ratios must be > 0")

    updated = gamma / ratios * powers
    if np.any(updated > power_cap):
        raise DivergenceDetected(
            f"Uplink power {updated.max():.3g} exceeds cap {power_cap:.3g}; targets are "
            f"likely infeasible"
        )
    return updated


def coupling_gains(H, beamformers) -> np.ndarray:
    """Matrix A with A[i, j] = |h_i^H u_j|^2, the gain of beam j at user i"""
    return np.abs(as_matrix(H) @ np.asarray(beamformers)) ** 2


def downlink_power_alloc(beamformers, H, targets, sigma2: float) -> np.ndarray:
    """Downlink powers that give every user exactly its SNIR target.

    Solves F p = q with q_i = gamma_i sigma^2, F_ii = |h_i^H u_i|^2 and
    F_ij = -gamma_i |h_i^H u_j|^2.

    Raises:
        InfeasibleTargets: F is singular or a solved power is not positive
    """
    gamma = np.asarray(targets, dtype=float)
    if np.any(gamma <= 0):
        raise ValueError("SNIR targets must be > 0")
    gains = coupling_gains(H, beamformers)
    if gains.shape != (gamma.size, gamma.size):
        raise DimensionError(
            f"Beamformers give a {gains.shape} coupling matrix for {gamma.size} targets"
        )

    desired = np.diag(gains)
    F = -gamma[:, None] * gains
    np.fill_diagonal(F, desired)
    q = gamma * sigma2

    condition = np.linalg.cond(F)
    if not np.isfinite(condition) or condition > CONDITION_LIMIT:
        raise InfeasibleTargets(f"Power coupling matrix is singular (condition {condition:.3g})")
    powers = scipy.linalg.solve(F, q)
    if np.any(powers <= 0):
        raise InfeasibleTargets(f"SNIR targets infeasible: solved powers {powers}")
    return powers


def optl(H_hat, sigma2: float, params: OptlParams) -> Tuple[np.ndarray, OptlState]:
    """Optimal linear precoder for the given SNIR targets.

    Starts from unit uplink powers, alternates beamformer_update and
    power_control_update until max |mu_i / gamma_i - 1| <= tolerance, then solves
    the downlink powers and returns W with columns sqrt(p_i) u_i.

    Raises:
        NonConvergence: The uplink loop hit max_iterations
        DivergenceDetected: Uplink powers exceeded the cap
        InfeasibleTargets: No positive downlink power allocation exists
    """
    H = as_matrix(H_hat)
    gamma = np.asarray(params.targets, dtype=float)
    if gamma.size != H.shape[0]:
        raise DimensionError(f"Expected {H.shape[0]} SNIR targets, got {gamma.size}")

    powers = np.ones(H.shape[0])
    mismatch = np.inf
    for iteration in range(1, params.max_iterations + 1):
        beamformers, ratios = beamformer_update(H, powers, gamma)
        mismatch = float(np.max(np.abs(ratios / gamma - 1.0)))
        logger.debug(f"OPTL iteration {iteration}: mismatch={mismatch:.3e}")
        if mismatch <= params.tolerance:
            break
        powers = power_control_update(powers, ratios, gamma, params.power_cap)
    else:
        raise NonConvergence(
            f"OPTL did not converge in {params.max_iterations} iterations "
            f"(mismatch {mismatch:.3e})",
            mismatch=mismatch,
            iterations=params.max_iterations,
        )

    downlink = downlink_power_alloc(beamformers, H, gamma, sigma2)
    W = beamformers * np.sqrt(downlink)[None, :]
    state = OptlState(
        beamformers=beamformers,
        uplink_powers=powers,
        achieved_ratios=ratios,
        iterations_used=iteration,
        converged=True,
        downlink_powers=downlink,
    )
    return W, state


def normalize(W, mode, phi: float = 1.0) -> np.ndarray:
    """Rescale a precoder for transmission.

    UnitRow scales every row to norm 1, PAC and PAR scale every row to norm
    sqrt(phi), MPC scales the whole matrix so the strongest row has norm sqrt(phi).

    Raises:
        DegenerateRow: A row is shorter than DEGENERATE_ROW_EPS times the longest row
    """
    mode = NormalizationMode(mode)
    if not phi > 0:
        raise ValueError(f"phi must be > 0, got {phi}")
    W = np.asarray(W, dtype=np.complex128)
    norms = np.linalg.norm(W, axis=1)
    largest = float(norms.max()) if norms.size else 0.0
    if not largest > 0 or not np.isfinite(largest):
        raise DegenerateRow("Precoder has no usable row to normalize")

    if mode is NormalizationMode.MPC:
        return W * (np.sqrt(phi) / largest)

    if np.any(norms < DEGENERATE_ROW_EPS * largest):
        rows = np.flatnonzero(norms < DEGENERATE_ROW_EPS * largest).tolist()
        raise DegenerateRow(f"Rows {rows} are too small to rescale under {mode.value}")
    target = 1.0 if mode is NormalizationMode.UNIT_ROW else np.sqrt(phi)
    return W * (target / norms)[:, None]
