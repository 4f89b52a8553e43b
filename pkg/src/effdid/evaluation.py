"""
Simulation Evaluation Module

Turns per-replication Monte Carlo records into the summary table reported
for each cell: bias, RMSE, per-cell and joint coverage of the uniform band,
and mean uniform-band length.
"""

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np
import pandas as pd

from .efftreat import Cell

logger = logging.getLogger(__name__)

TABLE_COLUMNS = ["N", "T", "t", "s", "e", "r", "bias", "rmse", "pw_cp", "u_cp", "ci_l",
                 "mean_estimate", "variance", "n_reps", "n_failed"]


@dataclass
class ReplicationRecord:
    """Outcome of one Monte Carlo replication"""
    rep: int
    points: Optional[np.ndarray] = None
    truths: Optional[np.ndarray] = None
    uniform_lower: Optional[np.ndarray] = None
    uniform_upper: Optional[np.ndarray] = None
    error: Optional[str] = None

    @property
    def failed(self) -> bool:
        return self.error is not None


@dataclass
class CellMetrics:
    """Monte Carlo metrics for one cell"""
    N: int
    T: int
    t: int
    s: int
    e: int
    r: Optional[int]
    bias: float
    rmse: float
    pw_cp: float
    u_cp: float
    ci_l: float
    mean_estimate: float
    variance: float
    n_reps: int
    n_failed: int


@dataclass
class SimTable:
    """Per-cell Monte Carlo metrics plus run metadata"""
    rows: List[CellMetrics]
    reps: int
    n_boot: int
    seed: int
    n_failed: int = 0
    failures: List[Dict] = field(default_factory=list)
    config: Dict = field(default_factory=dict)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([asdict(row) for row in self.rows], columns=TABLE_COLUMNS)

    def row(self, cell: Cell) -> CellMetrics:
        for row in self.rows:
            if (row.t, row.s, row.e, row.r) == (cell.t, cell.s, cell.e, cell.r):
                return row
        raise KeyError(cell.label())

    def save(self, path: Union[str, Path], format: str = "csv"):
        """
        Save the table.

        Args:
            path: Output file
            format: "csv" (metric rows) or "json" (rows plus metadata)
        """
        path = Path(path)
        if format == "csv":
            self.to_frame().to_csv(path, index=False, float_format="%.10g", lineterminator="\n")
        elif format == "json":
            payload = {
                "reps": self.reps,
                "bootstrap_reps": self.n_boot,
                "seed": self.seed,
                "n_failed": self.n_failed,
                "failures": self.failures,
                "config": self.config,
                "rows": [asdict(row) for row in self.rows],
            }
            with open(path, "w", encoding="utf-8") as f:
                json.dump(payload, f, indent=2, sort_keys=True)
        else:
            raise ValueError(f"Unsupported format: {format}")
        logger.info(f"Simulation table saved to: {path}")


class SimulationEvaluator:
    """
    Computes coverage and error metrics from replication records.

    Variance is the population variance of the estimation error across
    replications, so rmse**2 == bias**2 + variance up to rounding.
    """

    def __init__(self, cells: Sequence[Cell], n_units: int, n_periods: int):
        self.cells = list(cells)
        self.n_units = n_units
        self.n_periods = n_periods

    def evaluate(self, records: Sequence[ReplicationRecord], n_boot: int, seed: int,
                 config: Optional[Dict] = None) -> SimTable:
        """
        Aggregate replication records into a SimTable.

        Args:
            records: One record per replication (failed ones included)
            n_boot: Bootstrap repetitions used per replication
            seed: Master seed of the run
            config: Resolved simulation settings to embed

        Returns:
            SimTable with one row per cell
        """
        ok = [r for r in sorted(records, key=lambda r: r.rep) if not r.failed]
        failed = [r for r in records if r.failed]
        if not ok:
            raise ValueError("every replication failed; no metrics to compute")

        points = np.vstack([r.points for r in ok])
        truths = np.vstack([r.truths for r in ok])
        errors = points - truths
        lower = np.vstack([r.uniform_lower for r in ok])
        upper = np.vstack([r.uniform_upper for r in ok])
        # PW.CP and CI.L are per-cell coverage and length of the uniform band
        covered = (lower <= truths) & (truths <= upper)
        lengths = upper - lower

        bias = errors.mean(axis=0)
        variance = errors.var(axis=0)
        rmse = np.sqrt(np.mean(errors ** 2, axis=0))
        # joint coverage: every cell covered in the same replication
        u_cp = float(covered.all(axis=1).mean())

        rows = []
        for k, cell in enumerate(self.cells):
            rows.append(CellMetrics(
                N=self.n_units, T=self.n_periods, t=cell.t, s=cell.s, e=cell.e, r=cell.r,
                bias=float(bias[k]),
                rmse=float(rmse[k]),
                pw_cp=float(covered[:, k].mean()),
                u_cp=u_cp,
                ci_l=float(lengths[:, k].mean()),
                mean_estimate=float(points[:, k].mean()),
                variance=float(variance[k]),
                n_reps=len(ok),
                n_failed=len(failed),
            ))

        logger.info(f"Evaluated {len(ok)} replication(s), {len(failed)} failed, U.CP={u_cp:.3f}")
        return SimTable(rows=rows, reps=len(records), n_boot=n_boot, seed=seed, n_failed=len(failed),
                        failures=[{"rep": r.rep, "error": r.error} for r in sorted(failed, key=lambda r: r.rep)],
                        config=config or {})

    def print_report(self, table: SimTable):
        """Print the table to the console."""
        print("\n" + "=" * 70)
        print(f"MONTE CARLO SUMMARY  N={self.n_units}  T={self.n_periods}  reps={table.reps}  B={table.n_boot}")
        print("=" * 70)
        print(f"{'cell':<18}{'bias':>9}{'RMSE':>9}{'PW.CP':>8}{'U.CP':>8}{'CI.L':>8}")
        for row in table.rows:
            label = Cell(row.t, row.s, row.e, row.r).label()
            print(f"{label:<18}{row.bias:>9.3f}{row.rmse:>9.3f}{row.pw_cp:>8.3f}{row.u_cp:>8.3f}{row.ci_l:>8.3f}")
        if table.n_failed:
            print(f"\nFailed replications: {table.n_failed}")
