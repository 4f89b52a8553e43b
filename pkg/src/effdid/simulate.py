"""
Monte Carlo Simulation Module

Draws panels from a time-varying binary-treatment design and runs repeated
estimation to measure bias, RMSE and band coverage.

Data generating process (periods t = 1..T, D_i1 = 0):

    D_it     = 1{pi1 + X_i pi2 + alpha_i + lambda_t >= u_it}       for t >= 2
    Y*_it(0) = X_i gamma_t + alpha_i + eta_t + v_it (+ c alpha_i t)
    Y_it     = Y*_it(0) + sum_e tau_{t,e} 1{first treated period by t is e} + xi_it
"""

import concurrent.futures
import logging
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np
from tqdm import tqdm

from .config import BootstrapConfig, EstimateConfig, NuisanceConfig, SimConfig
from .efftreat import (
    Cell,
    EffectivePanel,
    EffectiveTreatmentSpec,
    compute_effective_treatment,
    custom_design,
    mover_stayer_indicators,
)
from .errors import EffDidError, ReplicationFailureError
from .evaluation import ReplicationRecord, SimTable, SimulationEvaluator
from .inference import multiplier_bootstrap
from .panel import PanelDataset
from .pipeline import estimate_cells
from .rng import derived_seed, simulation_stream

logger = logging.getLogger(__name__)

# share of failed replications above which a run is rejected
MAX_FAILED_SHARE = 0.01


@dataclass(frozen=True)
class SimulatedPanel:
    """A drawn panel plus the per-unit effects that generated it"""
    panel: PanelDataset
    effects: np.ndarray
    event_dates: np.ndarray

    def true_atem(self, eff: EffectivePanel, cells: Sequence[Cell]) -> Dict[Cell, float]:
        """
        Realized target of each cell: the mover average of the effect change.

        Pre-trend cells target 0. Cells without movers map to NaN.
        """
        truth: Dict[Cell, float] = {}
        for cell in cells:
            if cell.is_pretrend:
                truth[cell] = 0.0
                continue
            movers, _ = mover_stayer_indicators(eff, cell.t, cell.s, cell.e)
            mask = movers > 0
            if not mask.any():
                truth[cell] = float("nan")
                continue
            change = self.effects[mask, cell.t - 1] - self.effects[mask, cell.s - 1]
            truth[cell] = float(change.mean())
        return truth


def _draw(law: str, rng: np.random.Generator, size) -> np.ndarray:
    if law == "normal":
        return rng.standard_normal(size)
    if law == "logistic":
        return rng.logistic(size=size)
    return np.zeros(size)


def generate_dgp(config: SimConfig, rng: np.random.Generator) -> SimulatedPanel:
    """
    Draw one panel.

    Args:
        config: Design parameters and error laws
        rng: Generator for this replication

    Returns:
        SimulatedPanel with the panel, the (N, T) effect matrix and first
        treated periods (0 = never treated)
    """
    N, T = config.n_units, config.n_periods
    x = _draw(config.x_law, rng, N)
    alpha = _draw(config.alpha_law, rng, N)
    u = _draw(config.u_law, rng, (N, T))
    v = _draw(config.v_law, rng, (N, T))
    xi = _draw(config.xi_law, rng, (N, T))

    lambdas = np.asarray(config.lambdas())
    index = config.pi1 + x[:, None] * config.pi2 + alpha[:, None] + lambdas[None, :]
    treated = index >= u
    treated[:, 0] = False

    periods = np.arange(1, T + 1)
    ever = treated.any(axis=1)
    first = np.where(ever, treated.argmax(axis=1) + 1, 0)
    # first treated period reached by t, 0 before that
    event = np.where((first[:, None] > 0) & (first[:, None] <= periods[None, :]), first[:, None], 0)

    tau = np.array([[config.tau_value(t, e) for e in range(1, T + 1)] for t in range(1, T + 1)])
    effects = np.where(event > 0, tau[periods[None, :] - 1, np.maximum(event, 1) - 1], 0.0)

    y0 = (x[:, None] * np.asarray(config.gamma())[None, :] + alpha[:, None]
          + np.asarray(config.eta())[None, :] + v)
    if config.parallel_trends_violation:
        y0 = y0 + config.parallel_trends_violation * alpha[:, None] * periods[None, :]
    y = y0 + effects + xi

    panel = PanelDataset.from_arrays(outcomes=y, treatments=treated.astype(float), covariates=x[:, None])
    effects.setflags(write=False)
    return SimulatedPanel(panel=panel, effects=effects, event_dates=first)


def nominal_design(kind: str, n_periods: int, include_pretrends: bool = False) -> List[Cell]:
    """
    Cells reported by a simulation, fixed before any data is drawn.

    once -> (t,1,1); event -> (t,e-1,e) for 2 <= e <= t; number -> (t,1,e)
    for 1 <= e <= t-1 (no unit is treated in period 1).
    """
    T = n_periods
    if kind == "once":
        posts = [Cell(t, 1, 1) for t in range(2, T + 1)]
    elif kind == "event":
        posts = [Cell(t, e - 1, e) for e in range(2, T + 1) for t in range(e, T + 1)]
    elif kind == "number":
        posts = sorted((Cell(t, 1, e) for t in range(2, T + 1) for e in range(1, t)), key=lambda c: (c.e, c.t))
    else:
        raise ValueError(f"no nominal design for kind '{kind}'")
    cells: List[Cell] = []
    for cell in posts:
        cells.append(cell)
        if include_pretrends:
            cells.extend(cell.with_pretrend(r) for r in range(2, cell.s + 1))
    return cells


class MonteCarloOrchestrator:
    """
    Runs replications in parallel and collects their records.

    Each replication draws from its own counter-based stream and bootstraps
    with a seed derived from (seed, rep), so the table does not depend on
    the number of worker threads.
    """

    def __init__(
        self,
        sim_config: SimConfig,
        estimate_config: Optional[EstimateConfig] = None,
        nuisance: Optional[NuisanceConfig] = None,
        bootstrap: Optional[BootstrapConfig] = None,
        cells: Optional[Sequence[Cell]] = None,
        threads: int = 1,
        progress: bool = False,
    ):
        """
        Initialize the orchestrator.

        Args:
            sim_config: Data generating process and replication count
            estimate_config: Specification, anticipation, pre-trends and estimand
            nuisance: First-step settings
            bootstrap: Bootstrap settings (its seed is replaced per replication)
            cells: Cells to track; the nominal design of the specification when omitted
            threads: Worker threads across replications
            progress: Show a tqdm progress bar
        """
        self.sim_config = sim_config
        self.estimate_config = estimate_config or EstimateConfig()
        self.nuisance = nuisance or NuisanceConfig()
        self.bootstrap = bootstrap or BootstrapConfig()
        self.spec = EffectiveTreatmentSpec(kind=self.estimate_config.spec,
                                           anticipation_delta=self.estimate_config.delta)
        self.cells = list(cells) if cells is not None else nominal_design(
            self.estimate_config.spec, sim_config.n_periods, self.estimate_config.include_pretrends)
        self.threads = threads
        self.progress = progress
        self.records: List[ReplicationRecord] = []
        self.table: Optional[SimTable] = None

    def run_replication(self, rep: int) -> ReplicationRecord:
        """Draw, estimate and band one replication; estimation failures are recorded, not raised."""
        cfg = self.sim_config
        try:
            sim = generate_dgp(cfg, simulation_stream(cfg.seed, rep))
            eff = compute_effective_treatment(sim.panel, self.spec)
            cells = custom_design(eff, self.cells)
            estimates = estimate_cells(sim.panel, eff, cells, self.nuisance, self.estimate_config.estimand)
            boot_cfg = self.bootstrap.model_copy(update={"seed": derived_seed(cfg.seed, rep), "threads": 1})
            boot = multiplier_bootstrap(estimates, boot_cfg)
        except EffDidError as e:
            logger.debug(f"replication {rep} failed: {e.one_line()}")
            return ReplicationRecord(rep=rep, error=e.one_line())

        truth = sim.true_atem(eff, cells)
        return ReplicationRecord(
            rep=rep,
            points=boot.points,
            truths=np.array([truth[c] for c in cells]),
            uniform_lower=boot.bands[:, 0],
            uniform_upper=boot.bands[:, 1],
        )

    def run(self) -> SimTable:
        """
        Run every replication and evaluate the table.

        Raises:
            ReplicationFailureError: more than 1% of replications failed
        """
        reps = self.sim_config.reps
        logger.info(f"Starting Monte Carlo: N={self.sim_config.n_units}, T={self.sim_config.n_periods}, "
                    f"spec={self.spec.kind}, cells={len(self.cells)}, reps={reps}, B={self.bootstrap.n_reps}")
        records: List[Optional[ReplicationRecord]] = [None] * reps

        with tqdm(total=reps, desc="replications", disable=not self.progress) as bar:
            if self.threads <= 1:
                for rep in range(reps):
                    records[rep] = self.run_replication(rep)
                    bar.update(1)
            else:
                with concurrent.futures.ThreadPoolExecutor(max_workers=self.threads) as executor:
                    future_to_rep = {executor.submit(self.run_replication, rep): rep for rep in range(reps)}
                    for future in concurrent.futures.as_completed(future_to_rep):
                        records[future_to_rep[future]] = future.result()
                        bar.update(1)

        self.records = list(records)
        failed = [r for r in self.records if r.failed]
        if len(failed) > MAX_FAILED_SHARE * reps:
            raise ReplicationFailureError(
                f"{len(failed)} of {reps} replications failed (limit {MAX_FAILED_SHARE:.0%}); first: {failed[0].error}",
                {"failed_reps": [r.rep for r in failed]})
        if failed:
            logger.warning(f"{len(failed)} replication(s) failed and are excluded from the metrics")

        evaluator = SimulationEvaluator(self.cells, self.sim_config.n_units, self.sim_config.n_periods)
        self.table = evaluator.evaluate(self.records, self.bootstrap.n_reps, self.sim_config.seed,
                                        config=self.resolved_config())
        logger.info("Monte Carlo completed")
        return self.table

    def resolved_config(self) -> Dict:
        return {
            "simulation": self.sim_config.model_dump(),
            "estimate": self.estimate_config.model_dump(),
            "nuisance": self.nuisance.model_dump(),
            "bootstrap": self.bootstrap.model_dump(exclude={"seed", "threads"}),
            "cells": [c.label() for c in self.cells],
        }

    def save_results(self, output_dir: Union[str, Path], format: str = "csv") -> Path:
        """
        Save the evaluated table.

        Args:
            output_dir: Directory for the table
            format: "csv" or "json"

        Returns:
            Path of the written file
        """
        if self.table is None:
            raise ValueError("run() must complete before saving results")
        out = Path(output_dir)
        out.mkdir(parents=True, exist_ok=True)
        path = out / f"simulation.{format}"
        self.table.save(path, format)
        return path

    def generate_summary_report(self) -> Dict:
        """Averages of the per-cell metrics."""
        if self.table is None or not self.table.rows:
            logger.warning("No metrics available for summary")
            return {}
        rows = [asdict(r) for r in self.table.rows]
        return {
            "cells": len(rows),
            "reps": self.table.reps,
            "n_failed": self.table.n_failed,
            "avg_abs_bias": round(float(np.mean([abs(r["bias"]) for r in rows])), 4),
            "avg_rmse": round(float(np.mean([r["rmse"] for r in rows])), 4),
            "avg_pw_cp": round(float(np.mean([r["pw_cp"] for r in rows])), 4),
            "u_cp": round(rows[0]["u_cp"], 4),
            "avg_ci_l": round(float(np.mean([r["ci_l"] for r in rows])), 4),
        }


def run_monte_carlo(config: SimConfig, estimate_config: Optional[EstimateConfig] = None,
                    bootstrap: Optional[BootstrapConfig] = None, nuisance: Optional[NuisanceConfig] = None,
                    cells: Optional[Sequence[Cell]] = None, threads: int = 1,
                    progress: bool = False) -> SimTable:
    """Run a Monte Carlo study and return its table (see MonteCarloOrchestrator)."""
    orchestrator = MonteCarloOrchestrator(config, estimate_config, nuisance, bootstrap, cells, threads, progress)
    return orchestrator.run()
