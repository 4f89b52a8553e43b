"""
Reporting Module

Writes estimation results as CSV, JSON and an SVG band chart. Every file
embeds a RunManifest so an output can be traced to its inputs and settings.
Outputs are deterministic: the same inputs, settings and seed give
byte-identical files.
"""

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Union

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import pandas as pd  # noqa: E402

from .estimator import AggregateEstimate, AtemEstimate  # noqa: E402
from .evaluation import SimTable  # noqa: E402
from .inference import analytic_band  # noqa: E402
from .pipeline import EstimationRun  # noqa: E402

logger = logging.getLogger(__name__)

ESTIMATE_COLUMNS = ["cell", "t", "s", "e", "r", "is_pretrend", "point", "analytic_se", "analytic_lower",
                    "analytic_upper", "bootstrap_se", "lower", "upper", "n_movers", "n_stayers"]


def file_fingerprint(path: Union[str, Path]) -> Dict:
    """Size and SHA-256 of an input file."""
    path = Path(path)
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            digest.update(chunk)
    return {"name": path.name, "size": path.stat().st_size, "sha256": digest.hexdigest()}


@dataclass
class RunManifest:
    """Subcommand, resolved settings, input fingerprint and software version"""
    subcommand: str
    config: Dict
    input: Optional[Dict] = None
    version: str = ""
    cells: List[str] = field(default_factory=list)

    def to_dict(self) -> Dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))


def _estimate_row(estimate: AtemEstimate, alpha: float, se: Optional[float],
                  band: Optional[tuple]) -> Dict:
    cell = estimate.cell
    a_lo, a_hi = analytic_band(estimate, alpha)
    return {
        "cell": cell.label(), "t": cell.t, "s": cell.s, "e": cell.e, "r": cell.r,
        "is_pretrend": cell.is_pretrend,
        "point": estimate.point,
        "analytic_se": estimate.analytic_se,
        "analytic_lower": a_lo,
        "analytic_upper": a_hi,
        "bootstrap_se": se,
        "lower": band[0] if band else None,
        "upper": band[1] if band else None,
        "n_movers": estimate.n_movers,
        "n_stayers": estimate.n_stayers,
    }


def _aggregate_row(estimate: AggregateEstimate, alpha: float, se: Optional[float],
                   band: Optional[tuple]) -> Dict:
    a_lo, a_hi = analytic_band(estimate, alpha)
    return {
        "cell": estimate.label(), "t": estimate.t, "s": None, "e": None, "r": None,
        "is_pretrend": False,
        "point": estimate.point,
        "analytic_se": estimate.analytic_se,
        "analytic_lower": a_lo,
        "analytic_upper": a_hi,
        "bootstrap_se": se,
        "lower": band[0] if band else None,
        "upper": band[1] if band else None,
        "n_movers": None,
        "n_stayers": None,
    }


def result_rows(run: EstimationRun, alpha: float = 0.05, aggregates_only: bool = False) -> List[Dict]:
    """
    One row per reported estimate, bands taken from whichever bootstrap covered it.

    Args:
        run: Completed estimation run
        alpha: Level for the analytic diagnostic interval
        aggregates_only: Report aggregates without their components

    Returns:
        List of row dicts with ESTIMATE_COLUMNS keys
    """
    bands: Dict[str, tuple] = {}
    for boot in (run.bootstrap, run.pretrend_bootstrap):
        if boot is not None:
            for row in boot.rows():
                bands[row.label] = (row.se, (row.lower, row.upper))

    rows = []
    if not aggregates_only:
        for est in run.estimates:
            se, band = bands.get(est.label(), (None, None))
            rows.append(_estimate_row(est, alpha, se, band))
    for agg in run.aggregates:
        se, band = bands.get(agg.label(), (None, None))
        rows.append(_aggregate_row(agg, alpha, se, band))
    return rows


def write_estimates_csv(rows: List[Dict], path: Union[str, Path], manifest: RunManifest) -> Path:
    """CSV with a leading `# manifest:` comment line."""
    path = Path(path)
    frame = pd.DataFrame(rows, columns=ESTIMATE_COLUMNS)
    for col in ("t", "s", "e", "r", "n_movers", "n_stayers"):
        frame[col] = frame[col].astype("Int64")
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write(f"# manifest: {manifest.to_json()}\n")
        frame.to_csv(f, index=False, float_format="%.17g", lineterminator="\n")
    logger.info(f"Estimates saved to: {path}")
    return path


def write_estimates_json(run: EstimationRun, rows: List[Dict], path: Union[str, Path],
                         manifest: RunManifest) -> Path:
    """Rows plus critical values, warnings, pre-trend verdict and manifest."""
    path = Path(path)
    payload = {
        "manifest": manifest.to_dict(),
        "estimates": rows,
        "critical_value": run.bootstrap.critical_value if run.bootstrap else None,
        "pretrend_critical_value": run.pretrend_bootstrap.critical_value if run.pretrend_bootstrap else None,
        "pretrends": None if run.verdict is None else {
            "consistent": run.verdict.consistent,
            "excluding_zero": list(run.verdict.excluding_zero),
            "summary": run.verdict.summary(),
        },
        "warnings": [asdict(w) for w in run.warnings],
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2, sort_keys=True, default=str)
        f.write("\n")
    logger.info(f"Results saved to: {path}")
    return path


def write_simulation_outputs(table: SimTable, out_dir: Union[str, Path], manifest: RunManifest,
                             csv_name: str = "simulation.csv") -> List[Path]:
    """Simulation table as CSV (with manifest comment line) and JSON (with manifest key)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / csv_name
    with open(csv_path, "w", encoding="utf-8", newline="") as f:
        f.write(f"# manifest: {manifest.to_json()}\n")
        table.to_frame().to_csv(f, index=False, float_format="%.10g", lineterminator="\n")
    json_path = csv_path.with_suffix(".json")
    table.config = {**table.config, "manifest": manifest.to_dict()}
    table.save(json_path, "json")
    logger.info(f"Simulation table saved to: {csv_path}")
    return [csv_path, json_path]


def plot_bands(rows: List[Dict], path: Union[str, Path], manifest: RunManifest,
               title: str = "ATEM estimates with uniform bands") -> Path:
    """
    Point-and-band chart. Post cells are circles, pre-trend cells boxes.

    Rows without a bootstrap band are drawn without error bars.
    """
    path = Path(path)
    plt.rcParams["svg.hashsalt"] = "effdid"
    fig, ax = plt.subplots(figsize=(max(4.0, 0.8 * len(rows) + 2.0), 4.0))

    for marker, pretrend, name in (("o", False, "post"), ("s", True, "pre-trend")):
        idx = [k for k, r in enumerate(rows) if bool(r["is_pretrend"]) == pretrend]
        if not idx:
            continue
        points = [rows[k]["point"] for k in idx]
        errs = [[rows[k]["point"] - rows[k]["lower"] if rows[k]["lower"] is not None else 0.0 for k in idx],
                [rows[k]["upper"] - rows[k]["point"] if rows[k]["upper"] is not None else 0.0 for k in idx]]
        ax.errorbar(idx, points, yerr=errs, fmt=marker, capsize=4, label=name,
                    markerfacecolor="white" if pretrend else None)

    ax.axhline(0.0, linestyle="--", linewidth=1, color="grey")
    ax.set_xticks(range(len(rows)))
    ax.set_xticklabels([r["cell"] for r in rows], rotation=45, ha="right", fontsize=8)
    ax.set_ylabel("estimate")
    ax.set_title(title)
    ax.set_xlim(-0.5, len(rows) - 0.5)
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None, "Description": manifest.to_json()})
    plt.close(fig)
    logger.info(f"Plot saved to: {path}")
    return path
