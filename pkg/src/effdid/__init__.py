"""
effdid: doubly robust difference-in-differences with effective treatments.

Estimates average treatment effects on movers (ATEM) for time-varying,
possibly non-binary treatments, with uniform confidence bands from a
multiplier bootstrap.
"""

__version__ = "0.1.0"

from .config import BootstrapConfig, EstimateConfig, NuisanceConfig, SimConfig  # noqa: E402
from .efftreat import (  # noqa: E402
    Cell,
    EffectivePanel,
    EffectiveTreatmentSpec,
    MoverStayerFrame,
    build_cell_frame,
    compute_effective_treatment,
    custom_design,
    default_design,
    mover_stayer_indicators,
)
from .errors import EffDidError, EstimationError, InferenceError, PanelError, SpecificationError  # noqa: E402
from .estimator import (  # noqa: E402
    AggregateEstimate,
    AtemEstimate,
    aggregate_event,
    aggregate_number,
    aggregate_time_average,
    aggregate_weighted,
    atem_dr,
    atem_ipw,
    atem_or,
    atem_pretrend,
)
from .inference import (  # noqa: E402
    BootstrapResult,
    PretrendsVerdict,
    analytic_band,
    mammen_draw,
    multiplier_bootstrap,
    pretrends_report,
)
from .nuisance import GpsFit, OrFit, fit_gps, fit_gps_logit, fit_gps_probit, fit_or_stayers  # noqa: E402
from .panel import PanelDataset, PanelSchema, load_panel_csv, outcome_difference, write_panel_csv  # noqa: E402
from .pipeline import EstimationRun, estimate_cells, run_aggregation, run_estimation  # noqa: E402
from .simulate import MonteCarloOrchestrator, generate_dgp, run_monte_carlo  # noqa: E402

__all__ = [
    "__version__",
    "AggregateEstimate",
    "AtemEstimate",
    "BootstrapConfig",
    "BootstrapResult",
    "Cell",
    "EffDidError",
    "EffectivePanel",
    "EffectiveTreatmentSpec",
    "EstimateConfig",
    "EstimationError",
    "EstimationRun",
    "GpsFit",
    "InferenceError",
    "MonteCarloOrchestrator",
    "MoverStayerFrame",
    "NuisanceConfig",
    "OrFit",
    "PanelDataset",
    "PanelError",
    "PanelSchema",
    "PretrendsVerdict",
    "SimConfig",
    "SpecificationError",
    "aggregate_event",
    "aggregate_number",
    "aggregate_time_average",
    "aggregate_weighted",
    "analytic_band",
    "atem_dr",
    "atem_ipw",
    "atem_or",
    "atem_pretrend",
    "build_cell_frame",
    "compute_effective_treatment",
    "custom_design",
    "default_design",
    "estimate_cells",
    "fit_gps",
    "fit_gps_logit",
    "fit_gps_probit",
    "fit_or_stayers",
    "generate_dgp",
    "load_panel_csv",
    "mammen_draw",
    "mover_stayer_indicators",
    "multiplier_bootstrap",
    "outcome_difference",
    "pretrends_report",
    "run_aggregation",
    "run_estimation",
    "run_monte_carlo",
    "write_panel_csv",
]
