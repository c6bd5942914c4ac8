#!/usr/bin/env python3
"""
Report Module for the Multibeam Precoding Lab

Holds the results of a run and writes them as CSV files:

- per_ut.csv        one row per user of every successful cell
- summary.csv       dB-mean SNIR and system throughput per scheme and P_sat
- power_profile.csv per-antenna and per-beam transmit power of every cell
- diagnostics.csv   solver status of every cell, including failed ones
- curves.csv        summary plus operating power, written by sweeps
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from precoding_lab.errors import IoError
from precoding_lab.linkmetrics import aggregate_report

# Set up logging
logger = logging.getLogger(__name__)

PER_UT_COLUMNS = ["scheme", "psat_dbw", "trial", "ut_id", "snir_db", "throughput_mbps",
                  "estimated_snir_db"]
SUMMARY_COLUMNS = ["scheme", "psat_dbw", "avg_snir_db", "system_throughput_mbps"]
POWER_COLUMNS = ["scheme", "psat_dbw", "trial", "kind", "index", "power"]
DIAGNOSTIC_COLUMNS = ["scheme", "psat_dbw", "trial", "status", "error_code", "iterations",
                      "mismatch", "beam_power_spread_db", "message"]
CURVE_COLUMNS = ["scheme", "psat_dbw", "operating_power_dbw", "avg_snir_db",
                 "system_throughput_mbps"]
CLOSED_LOOP_COLUMNS = ["superframe", "ut_id", "sosf_offset", "ser", "ber", "evm", "csi_mse"]

FLOAT_FORMAT = "%.6f"
DECIMALS = 6


@dataclass
class CellResult:
    """Outcome of one (P_sat, trial, scheme) cell.

    Per-user values are rounded to six decimals so that every aggregate can be
    recomputed exactly from per_ut.csv.
    """

    scheme: str
    psat_dbw: float
    trial: int
    snir_db: np.ndarray = field(default_factory=lambda: np.empty(0))
    throughput_mbps: np.ndarray = field(default_factory=lambda: np.empty(0))
    estimated_snir_db: np.ndarray = field(default_factory=lambda: np.empty(0))
    per_antenna_power: np.ndarray = field(default_factory=lambda: np.empty(0))
    per_beam_power: np.ndarray = field(default_factory=lambda: np.empty(0))
    iterations: Optional[int] = None
    mismatch: Optional[float] = None
    error_code: Optional[str] = None
    message: str = ""

    def __post_init__(self):
        for name in ("snir_db", "throughput_mbps", "estimated_snir_db"):
            setattr(self, name, np.round(np.asarray(getattr(self, name), dtype=float), DECIMALS))
        if self.estimated_snir_db.size == 0 and self.snir_db.size:
            self.estimated_snir_db = self.snir_db.copy()
        self.per_antenna_power = np.asarray(self.per_antenna_power, dtype=float)
        self.per_beam_power = np.asarray(self.per_beam_power, dtype=float)

    @property
    def ok(self) -> bool:
        return self.error_code is None

    @property
    def beam_power_spread_db(self) -> float:
        """Ratio of strongest to weakest beam power in dB"""
        if self.per_beam_power.size == 0 or np.min(self.per_beam_power) <= 0:
            return float("nan")
        return float(10.0 * np.log10(np.max(self.per_beam_power) / np.min(self.per_beam_power)))


@dataclass
class RunReport:
    """Every cell of a run, in the order the runner produced them"""

    cells: List[CellResult] = field(default_factory=list)
    obo_db: float = 0.0

    def successful(self) -> List[CellResult]:
        return [cell for cell in self.cells if cell.ok]

    def failed(self) -> List[CellResult]:
        return [cell for cell in self.cells if not cell.ok]

    def scheme_order(self) -> List[str]:
        return list(dict.fromkeys(cell.scheme for cell in self.cells))

    def aggregates(self) -> Dict[Tuple[str, float], Tuple[float, float]]:
        """(scheme, psat) -> (dB-mean SNIR over all users and trials, mean system throughput)"""
        groups: Dict[Tuple[str, float], List[CellResult]] = {}
        for cell in self.successful():
            groups.setdefault((cell.scheme, cell.psat_dbw), []).append(cell)

        result = {}
        for key, cells in groups.items():
            average, _ = aggregate_report(
                np.concatenate([c.snir_db for c in cells]),
                np.concatenate([c.throughput_mbps for c in cells]),
            )
            systems = [aggregate_report(c.snir_db, c.throughput_mbps)[1] for c in cells]
            result[key] = (average, float(np.mean(systems)))
        return result

    def per_ut_frame(self) -> pd.DataFrame:
        rows = [
            (cell.scheme, cell.psat_dbw, cell.trial, ut + 1, cell.snir_db[ut],
             cell.throughput_mbps[ut], cell.estimated_snir_db[ut])
            for cell in self.successful()
            for ut in range(cell.snir_db.size)
        ]
        return pd.DataFrame(rows, columns=PER_UT_COLUMNS)

    def summary_frame(self) -> pd.DataFrame:
        aggregates = self.aggregates()
        order = {name: i for i, name in enumerate(self.scheme_order())}
        keys = sorted(aggregates, key=lambda k: (order[k[0]], k[1]))
        rows = [(scheme, psat, *aggregates[(scheme, psat)]) for scheme, psat in keys]
        return pd.DataFrame(rows, columns=SUMMARY_COLUMNS)

    def curves_frame(self) -> pd.DataFrame:
        summary = self.summary_frame()
        summary.insert(2, "operating_power_dbw", summary["psat_dbw"] - self.obo_db)
        return summary[CURVE_COLUMNS]

    def power_profile_frame(self) -> pd.DataFrame:
        rows = []
        for cell in self.successful():
            for kind, powers in (("antenna", cell.per_antenna_power), ("beam", cell.per_beam_power)):
                rows.extend(
                    (cell.scheme, cell.psat_dbw, cell.trial, kind, index + 1, power)
                    for index, power in enumerate(powers)
                )
        return pd.DataFrame(rows, columns=POWER_COLUMNS)

    def diagnostics_frame(self) -> pd.DataFrame:
        rows = [
            (cell.scheme, cell.psat_dbw, cell.trial, "ok" if cell.ok else "failed",
             cell.error_code or "", cell.iterations, cell.mismatch,
             cell.beam_power_spread_db, cell.message)
            for cell in self.cells
        ]
        frame = pd.DataFrame(rows, columns=DIAGNOSTIC_COLUMNS)
        frame["iterations"] = frame["iterations"].astype("Int64")
        frame["mismatch"] = frame["mismatch"].astype(float)
        return frame


def write_csv(frame: pd.DataFrame, path: Path) -> Path:
    """Write a frame as UTF-8 CSV with '\\n' line endings and fixed float format"""
    try:
        frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n",
                     encoding="utf-8")
    except OSError as e:
        raise IoError(f"Could not write {path}: {e}") from e
    logger.debug(f"Wrote {len(frame)} rows to {path}")
    return path


def _prepare_dir(out_dir: Union[str, Path]) -> Path:
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise IoError(f"Could not create output directory {out_dir}: {e}") from e
    return out_dir


def emit_report(report: RunReport, out_dir: Union[str, Path], include_curves: bool = False) -> List[Path]:
    """Write the report CSVs into out_dir.

    Args:
        report: Cells of a run
        out_dir: Directory, created if missing
        include_curves: Also write curves.csv

    Returns:
        list: Paths of the written files

    Raises:
        IoError: The directory or a file cannot be written
    """
    out_dir = _prepare_dir(out_dir)
    frames = [
        ("per_ut.csv", report.per_ut_frame()),
        ("summary.csv", report.summary_frame()),
        ("power_profile.csv", report.power_profile_frame()),
        ("diagnostics.csv", report.diagnostics_frame()),
    ]
    if include_curves:
        frames.append(("curves.csv", report.curves_frame()))

    written = [write_csv(frame, out_dir / name) for name, frame in frames]
    logger.info(f"Wrote {len(written)} report files to {out_dir}")
    return written


def closed_loop_frame(results: Sequence) -> pd.DataFrame:
    """Rows of closed_loop.csv from a list of SuperframeResult"""
    rows = []
    for result in results:
        for ut, offset in enumerate(result.sosf_offsets):
            if result.errors is None:
                ser = ber = evm = float("nan")
            else:
                ser, ber, evm = result.errors.ser[ut], result.errors.ber[ut], result.errors.evm[ut]
            rows.append((result.index, ut + 1, int(offset), ser, ber, evm, result.csi_mse[ut]))
    return pd.DataFrame(rows, columns=CLOSED_LOOP_COLUMNS)


def emit_closed_loop(results: Sequence, out_dir: Union[str, Path]) -> Path:
    out_dir = _prepare_dir(out_dir)
    return write_csv(closed_loop_frame(results), out_dir / "closed_loop.csv")
