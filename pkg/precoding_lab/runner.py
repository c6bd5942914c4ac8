#!/usr/bin/env python3
"""
Runner Module for the Multibeam Precoding Lab

Orchestrates experiments: for every P_sat point, CSI-error trial and scheme it
designs the precoder on the estimate, evaluates SNIR and throughput on the true
channel and collects the result in a RunReport. Cells are independent; a failed
cell is recorded in the report and never stops the run.

Precoders are designed against the noise referenced to the per-antenna power at
the sweep point (sigma^2 / s), then normalized to unit per-antenna power; the
SNIR evaluation scales them back up by s.
"""

import dataclasses
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from precoding_lab.channel import (
    ChannelMatrix,
    NoiseModel,
    apply_csi_error,
    derive_seed,
    generate_multibeam_channel,
    grid_four_coloring,
    grid_geometry,
    load_channel,
)
from precoding_lab.config import AUTO_PHI, ScenarioConfig, SchemeConfig
from precoding_lab.errors import ConfigError, PrecodingLabError
from precoding_lab.linkmetrics import (
    LinkBudgetPoint,
    ModcodTable,
    ReuseKind,
    ReuseScheme,
    effective_channel,
    four_color_snir,
    from_db,
    load_modcod_table,
    power_profile,
    snir,
    throughput,
    to_db,
)
from precoding_lab.precoding import (
    NormalizationMode,
    OptlParams,
    PacParams,
    PrecoderKind,
    mmse,
    mmse_pac,
    normalize,
    optl,
    row_powers,
    zero_forcing,
)
from precoding_lab.report import CellResult, RunReport
from precoding_lab.superframe import ClosedLoopLink, SuperframeConfig, SuperframeResult

# Set up logging
logger = logging.getLogger(__name__)

# Solver settings used when a scheme does not set them
PAC_TOLERANCE = 1e-4
PAC_MAX_ITERATIONS = 5000
OPTL_TOLERANCE = 1e-8
OPTL_MAX_ITERATIONS = 500


@dataclass(frozen=True)
class Scenario:
    """Everything a cell needs that does not change across cells"""

    config: ScenarioConfig
    channel: ChannelMatrix
    coloring: Optional[Tuple[int, ...]]
    noise: NoiseModel
    table: ModcodTable


@dataclass
class PrecoderDesign:
    W: np.ndarray
    iterations: Optional[int] = None
    mismatch: Optional[float] = None


def build_channel(config: ScenarioConfig) -> Tuple[ChannelMatrix, Optional[Tuple[int, ...]]]:
    """True channel of the scenario and the four-colouring of its beams"""
    source = config.channel
    if source.file is not None:
        return load_channel(source.file), source.coloring

    geometry = source.geometry
    beams = grid_geometry(
        geometry.rows,
        geometry.cols,
        geometry.spacing_deg,
        geometry.three_db_half_angle_deg,
        geometry.peak_gain,
    )
    H = generate_multibeam_channel(beams, derive_seed(config.seed, "channel"))
    coloring = source.coloring or grid_four_coloring(geometry.rows, geometry.cols)
    return H, coloring


def prepare_scenario(config: ScenarioConfig) -> Scenario:
    """Load the channel, noise model and MODCOD table of a config"""
    H, coloring = build_channel(config)
    table = load_modcod_table(config.modcod_table)
    logger.info(
        f"Scenario ready: {H.num_users} users, {H.num_beams} beams, "
        f"{len(config.schemes)} schemes, CSI profile '{config.csi_error.profile_name}'"
    )
    return Scenario(config, H, coloring, NoiseModel(config.noise_variance), table)


def snir_targets(scheme: SchemeConfig, num_users: int) -> np.ndarray:
    targets = np.atleast_1d(from_db(scheme.snir_target_db))
    if targets.size == 1:
        return np.full(num_users, float(targets[0]))
    if targets.size != num_users:
        raise ConfigError(
            f"Scheme '{scheme.name}' has {targets.size} SNIR targets for {num_users} users"
        )
    return targets


def design_precoder(kind: PrecoderKind, H_hat, sigma2: float,
                    scheme: Optional[SchemeConfig] = None) -> PrecoderDesign:
    """Compute the unnormalized precoder of one FFR scheme.

    Args:
        kind: Precoder family
        H_hat: Channel estimate
        sigma2: Noise referenced to the per-antenna power
        scheme: Solver settings; defaults when None
    """
    kind = PrecoderKind(kind)
    if kind is PrecoderKind.ZF:
        return PrecoderDesign(zero_forcing(H_hat))
    if kind is PrecoderKind.MMSE:
        return PrecoderDesign(mmse(H_hat, sigma2))

    tolerance = scheme.tolerance if scheme and scheme.tolerance else None
    max_iterations = scheme.max_iterations if scheme and scheme.max_iterations else None

    if kind is PrecoderKind.MMSE_PAC:
        phi = scheme.phi if scheme else AUTO_PHI
        if phi == AUTO_PHI:
            fraction = scheme.phi_fraction if scheme else 0.9
            phi = fraction * float(np.min(row_powers(mmse(H_hat, sigma2))))
        params = PacParams(
            phi=float(phi),
            tolerance=tolerance or PAC_TOLERANCE,
            max_iterations=max_iterations or PAC_MAX_ITERATIONS,
            initial_dual=sigma2,
        )
        W, _, diagnostics = mmse_pac(H_hat, params)
        return PrecoderDesign(W, diagnostics.iterations, diagnostics.mismatch)

    num_users = np.asarray(H_hat).shape[0]
    targets = snir_targets(scheme, num_users) if scheme else np.full(num_users, from_db(10.0))
    params = OptlParams(
        targets=tuple(targets),
        tolerance=tolerance or OPTL_TOLERANCE,
        max_iterations=max_iterations or OPTL_MAX_ITERATIONS,
    )
    W, state = optl(H_hat, sigma2, params)
    mismatch = float(np.max(np.abs(state.achieved_ratios / targets - 1.0)))
    return PrecoderDesign(W, state.iterations_used, mismatch)


def _ffr_cell(scenario: Scenario, scheme: SchemeConfig, H_hat: ChannelMatrix,
              budget: LinkBudgetPoint, trial: int) -> CellResult:
    config = scenario.config
    scale = budget.per_beam_power_linear
    sigma2 = scenario.noise.variance()

    design = design_precoder(scheme.precoder, H_hat, sigma2 / scale, scheme)
    W = normalize(design.W, scheme.normalization, phi=1.0)

    actual = snir(effective_channel(scenario.channel, W), sigma2, scale)
    estimated = snir(effective_channel(H_hat, W), sigma2, scale)
    snir_db = to_db(actual)
    rates = [
        throughput(value, scenario.table, config.acm_margin_db, config.symbol_rate_msps,
                   1.0, config.polarization_factor)
        for value in np.round(snir_db, 6)
    ]
    per_antenna, per_beam = power_profile(W)
    return CellResult(
        scheme=scheme.name,
        psat_dbw=budget.psat_dbw,
        trial=trial,
        snir_db=snir_db,
        throughput_mbps=rates,
        estimated_snir_db=to_db(estimated),
        per_antenna_power=per_antenna * scale,
        per_beam_power=per_beam * scale,
        iterations=design.iterations,
        mismatch=design.mismatch,
    )


def _four_color_cell(scenario: Scenario, scheme: SchemeConfig, H_hat: ChannelMatrix,
                     budget: LinkBudgetPoint, trial: int) -> CellResult:
    config = scenario.config
    reuse = ReuseScheme.four_color(
        scenario.coloring or (), scheme.power_convention, scheme.per_beam_power_scale
    )
    actual = four_color_snir(scenario.channel, reuse, budget, scenario.noise)
    estimated = four_color_snir(H_hat, reuse, budget, scenario.noise)
    snir_db = to_db(actual)
    rates = [
        throughput(value, scenario.table, config.acm_margin_db, config.symbol_rate_msps,
                   reuse.bandwidth_fraction, config.polarization_factor)
        for value in np.round(snir_db, 6)
    ]
    beam_power = budget.per_beam_power_linear * reuse.per_beam_power_scale
    return CellResult(
        scheme=scheme.name,
        psat_dbw=budget.psat_dbw,
        trial=trial,
        snir_db=snir_db,
        throughput_mbps=rates,
        estimated_snir_db=to_db(estimated),
        per_antenna_power=np.full(scenario.channel.num_beams, beam_power),
        per_beam_power=np.full(scenario.channel.num_users, beam_power),
    )


def run_cell(scenario: Scenario, scheme: SchemeConfig, H_hat: ChannelMatrix,
             psat_dbw: float, trial: int) -> CellResult:
    """Evaluate one scheme at one P_sat for one CSI trial; errors become failed cells"""
    budget = LinkBudgetPoint(psat_dbw, scenario.config.sweep.obo_db)
    try:
        if scheme.reuse is ReuseKind.FOUR_COLOR:
            return _four_color_cell(scenario, scheme, H_hat, budget, trial)
        return _ffr_cell(scenario, scheme, H_hat, budget, trial)
    except PrecodingLabError as e:
        logger.warning(
            f"Cell '{scheme.name}' at {psat_dbw} dBW, trial {trial} failed: {e.code}: {e}"
        )
        return CellResult(
            scheme=scheme.name,
            psat_dbw=psat_dbw,
            trial=trial,
            iterations=getattr(e, "iterations", None),
            mismatch=getattr(e, "mismatch", None),
            error_code=e.code,
            message=str(e),
        )


def run_scenario(config: ScenarioConfig) -> RunReport:
    """Run every (P_sat, trial, scheme) cell of a scenario.

    The CSI error of a trial is drawn once and shared by all schemes and P_sat
    points, so schemes are compared on the same estimate. Cells may run on a
    thread pool; the report keeps the (P_sat, trial, scheme) order.

    Returns:
        RunReport: All cells, failed ones included
    """
    scenario = prepare_scenario(config)
    estimates = [
        apply_csi_error(scenario.channel, config.csi_error, derive_seed(config.seed, "csi", trial))
        for trial in range(config.trials)
    ]
    tasks = [
        (scheme, estimates[trial], psat, trial)
        for psat in config.sweep.points()
        for trial in range(config.trials)
        for scheme in config.schemes
    ]
    logger.info(f"Running {len(tasks)} cells with {config.max_workers} worker(s)")

    def evaluate(task):
        scheme, H_hat, psat, trial = task
        return run_cell(scenario, scheme, H_hat, psat, trial)

    if config.max_workers > 1:
        with ThreadPoolExecutor(max_workers=config.max_workers) as executor:
            cells = list(executor.map(evaluate, tasks))
    else:
        cells = [evaluate(task) for task in tasks]

    report = RunReport(cells=cells, obo_db=config.sweep.obo_db)
    failures = len(report.failed())
    if failures:
        logger.warning(f"{failures} of {len(cells)} cells failed; see diagnostics.csv")
    logger.info(f"Run finished: {len(cells) - failures} cells succeeded")
    return report


def sweep_psat(config: ScenarioConfig, psat_min_dbw: float, psat_max_dbw: float,
               step_db: float) -> Tuple[RunReport, pd.DataFrame]:
    """Run the scenario over a P_sat range and return the report and its curves"""
    if psat_min_dbw > psat_max_dbw:
        raise ConfigError(f"psat_min ({psat_min_dbw}) exceeds psat_max ({psat_max_dbw})")
    if not step_db > 0:
        raise ConfigError(f"step must be > 0, got {step_db}")
    sweep = dataclasses.replace(
        config.sweep, psat_min_dbw=psat_min_dbw, psat_max_dbw=psat_max_dbw, step_db=step_db
    )
    report = run_scenario(dataclasses.replace(config, sweep=sweep))
    return report, report.curves_frame()


def benchmark_channel(size: int, rng: np.random.Generator) -> np.ndarray:
    """Well-conditioned square channel 0.5 (I + 0.3 G / sqrt(K))"""
    G = (rng.standard_normal((size, size)) + 1j * rng.standard_normal((size, size))) / np.sqrt(2.0)
    return 0.5 * (np.eye(size) + 0.3 * G / np.sqrt(size))


def benchmark_precoders(sizes: Sequence[int], repetitions: int = 5, seed: int = 0,
                        kinds: Sequence[PrecoderKind] = tuple(PrecoderKind),
                        sigma2: float = 0.01) -> Tuple[pd.DataFrame, Dict[str, float]]:
    """Median wall time of every precoder for square K x K channels.

    Returns:
        tuple: (timing table with columns precoder, k, median_seconds, iterations;
                fitted growth exponent per precoder, NaN with fewer than two sizes)
    """
    sizes = [int(k) for k in sizes]
    if not sizes or min(sizes) < 2:
        raise ValueError(f"Benchmark sizes must all be >= 2, got {sizes}")
    if repetitions < 1:
        raise ValueError(f"repetitions must be >= 1, got {repetitions}")

    rows = []
    for kind in kinds:
        kind = PrecoderKind(kind)
        for size in sizes:
            rng = np.random.default_rng(derive_seed(seed, "bench", kind.value, size))
            times = []
            iterations = None
            for _ in range(repetitions):
                H = benchmark_channel(size, rng)
                start = time.perf_counter()
                design = design_precoder(kind, H, sigma2)
                times.append(time.perf_counter() - start)
                iterations = design.iterations
            rows.append((kind.value, size, float(np.median(times)), iterations))
            logger.debug(f"{kind.value} K={size}: median {np.median(times):.3e} s")

    table = pd.DataFrame(rows, columns=["precoder", "k", "median_seconds", "iterations"])
    table["iterations"] = table["iterations"].astype("Int64")

    exponents = {}
    for name, group in table.groupby("precoder", sort=False):
        if group["k"].nunique() < 2:
            exponents[name] = float("nan")
            continue
        slope, _ = np.polyfit(np.log(group["k"]), np.log(group["median_seconds"]), 1)
        exponents[name] = float(slope)
    return table, exponents


def closed_loop_precoder(config: ScenarioConfig, sigma2: float) -> Callable[[ChannelMatrix], np.ndarray]:
    loop = config.closed_loop

    def precoder(estimate: ChannelMatrix) -> np.ndarray:
        design = design_precoder(loop.precoder, estimate, sigma2)
        return normalize(design.W, NormalizationMode(loop.normalization), phi=1.0)

    return precoder


def run_closed_loop(config: ScenarioConfig,
                    superframes: Optional[int] = None) -> List[SuperframeResult]:
    """Run the symbol-level CSI loop on the scenario's true channel.

    Feeds transmit at unit power, so the receiver noise is sigma^2 referenced to
    the per-antenna power at closed_loop.psat_dbw.
    """
    loop = config.closed_loop
    H, _ = build_channel(config)
    budget = LinkBudgetPoint(loop.psat_dbw, config.sweep.obo_db)
    sigma2 = config.noise_variance / budget.per_beam_power_linear

    frame_config = SuperframeConfig(
        sosf_length=loop.sosf_length,
        pilot_length=loop.pilot_length,
        payload_length=loop.payload_length,
        constellation=loop.constellation,
    )
    link = ClosedLoopLink(
        H,
        frame_config,
        closed_loop_precoder(config, sigma2),
        noise=sigma2,
        seed=derive_seed(config.seed, "closed-loop"),
        feedback_delay=loop.feedback_delay,
    )
    count = superframes or loop.superframes
    logger.info(f"Running {count} superframes with feedback delay {loop.feedback_delay}")
    return link.run(count)
