"""
Multiplier Bootstrap Inference Module

Bootstrap standard errors, max-t critical values and uniform confidence
bands from per-unit influence values.

For each repetition b one weight vector V* (mean 0, variance 1) is drawn per
unit and shared by all cells, and R*_b(cell) = E_N[V*_i psi_i(cell)]. The
standard error is the interquartile range of R* rescaled by the normal
interquartile range; the critical value is the (1 - alpha) quantile of
max_cell |R*_b| / SE(cell). Quantiles use linear interpolation between order
statistics.
"""

import concurrent.futures
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.stats import norm

from .config import BootstrapConfig
from .efftreat import Cell
from .errors import BootstrapSizeError, DegenerateInfluenceError, InferenceError, NoPretrendCellsError
from .rng import bootstrap_stream

logger = logging.getLogger(__name__)

KAPPA = (math.sqrt(5.0) + 1.0) / 2.0
MAMMEN_LOW = 1.0 - KAPPA
MAMMEN_HIGH = KAPPA
MAMMEN_P_LOW = KAPPA / math.sqrt(5.0)
Z_IQR = float(norm.ppf(0.75) - norm.ppf(0.25))

StreamFactory = Callable[[int], np.random.Generator]


def mammen_draw(n: int, rng: np.random.Generator) -> np.ndarray:
    """
    IID Mammen two-point weights.

    V = 1 - kappa with probability kappa / sqrt(5), kappa otherwise,
    kappa = (sqrt(5) + 1) / 2.
    """
    if n < 1:
        raise InferenceError(f"need n >= 1 weights, got {n}")
    u = rng.random(n)
    return np.where(u < MAMMEN_P_LOW, MAMMEN_LOW, MAMMEN_HIGH)


def rademacher_draw(n: int, rng: np.random.Generator) -> np.ndarray:
    """IID +/-1 weights with probability 1/2 each."""
    if n < 1:
        raise InferenceError(f"need n >= 1 weights, got {n}")
    return np.where(rng.random(n) < 0.5, -1.0, 1.0)


WEIGHT_DRAWS = {"mammen": mammen_draw, "rademacher": rademacher_draw}


@dataclass(frozen=True)
class BandRow:
    """One estimate with its bootstrap band"""
    label: str
    cell: Optional[Cell]
    point: float
    se: float
    lower: float
    upper: float
    is_pretrend: bool = False

    def contains(self, value: float = 0.0) -> bool:
        return self.lower <= value <= self.upper


@dataclass(frozen=True)
class BootstrapResult:
    """Bootstrap SEs, critical value and uniform bands over a set of estimates"""
    labels: Tuple[str, ...]
    points: np.ndarray
    per_cell_se: np.ndarray
    critical_value: float
    bands: np.ndarray
    q25: np.ndarray
    q75: np.ndarray
    alpha: float
    n_reps: int
    weight_kind: str
    seed: int
    cells: Tuple[Optional[Cell], ...] = ()
    pretrend_flags: Tuple[bool, ...] = ()
    degenerate_cells: Tuple[str, ...] = ()
    draws: Optional[np.ndarray] = field(default=None, repr=False, compare=False)

    def rows(self) -> List[BandRow]:
        cells = self.cells or (None,) * len(self.labels)
        flags = self.pretrend_flags or (False,) * len(self.labels)
        return [BandRow(label=lab, cell=c, point=float(p), se=float(se), lower=float(lo), upper=float(hi),
                        is_pretrend=f)
                for lab, c, p, se, (lo, hi), f in zip(self.labels, cells, self.points, self.per_cell_se,
                                                       self.bands, flags)]


def _influence_matrix(estimates: Sequence) -> np.ndarray:
    sizes = {e.influence.shape[0] for e in estimates}
    if len(sizes) != 1:
        raise InferenceError(f"influence arrays differ in length: {sorted(sizes)}")
    return np.column_stack([e.influence for e in estimates])


def bootstrap_draws(psi: np.ndarray, config: BootstrapConfig,
                    stream_factory: Optional[StreamFactory] = None) -> np.ndarray:
    """
    R*_b = E_N[V*_b psi] for b = 0..B-1, one shared weight vector per repetition.

    Each repetition owns a counter-based substream derived from (seed, b) and
    is evaluated on its own, so the result does not depend on `threads`.

    Returns:
        (B, K) array of bootstrap deviations
    """
    n, _ = psi.shape
    B = config.n_reps
    draw = WEIGHT_DRAWS[config.weight_kind]
    factory = stream_factory or (lambda b: bootstrap_stream(config.seed, b))
    out = np.empty((B, psi.shape[1]))

    def run(reps: range):
        for b in reps:
            out[b] = draw(n, factory(b)) @ psi / n

    threads = max(1, min(config.threads, B))
    if threads == 1:
        run(range(B))
    else:
        bounds = np.linspace(0, B, threads + 1).astype(int)
        with concurrent.futures.ThreadPoolExecutor(max_workers=threads) as executor:
            futures = [executor.submit(run, range(lo, hi)) for lo, hi in zip(bounds[:-1], bounds[1:]) if hi > lo]
            for future in futures:
                future.result()
    return out


def multiplier_bootstrap(estimates: Sequence, config: Optional[BootstrapConfig] = None,
                         stream_factory: Optional[StreamFactory] = None,
                         keep_draws: bool = False) -> BootstrapResult:
    """
    Joint multiplier bootstrap over cell (or aggregate) estimates.

    Args:
        estimates: Objects exposing `point`, `influence`, `label()` and `degenerate`
        config: Bootstrap settings
        stream_factory: Optional rep-index -> Generator override (testing hook)
        keep_draws: Attach the (B, K) draw matrix to the result

    Returns:
        BootstrapResult with SEs, max-t critical value and uniform bands

    Raises:
        DegenerateInfluenceError: a cell has constant influence or zero bootstrap SE
        BootstrapSizeError: B * alpha < 1
    """
    config = config or BootstrapConfig()
    if not estimates:
        raise InferenceError("no estimates to bootstrap")
    if config.n_reps * config.alpha < 1:
        raise BootstrapSizeError(f"B={config.n_reps} is too small for alpha={config.alpha} (need B*alpha >= 1)")

    labels = tuple(e.label() for e in estimates)
    flagged = [lab for lab, e in zip(labels, estimates) if getattr(e, "degenerate", False)]
    if flagged:
        raise DegenerateInfluenceError(flagged)

    psi = _influence_matrix(estimates)
    logger.info(f"Running multiplier bootstrap: B={config.n_reps}, cells={len(labels)}, "
                f"weights={config.weight_kind}, threads={config.threads}")
    draws = bootstrap_draws(psi, config, stream_factory)

    q25, q75 = np.quantile(draws, [0.25, 0.75], axis=0, method="linear")
    se = (q75 - q25) / Z_IQR
    zero = [lab for lab, s in zip(labels, se) if not s > 0]
    if zero:
        raise DegenerateInfluenceError(zero)

    max_t = np.max(np.abs(draws) / se[None, :], axis=1)
    crit = float(np.quantile(max_t, 1.0 - config.alpha, method="linear"))
    points = np.array([e.point for e in estimates], dtype=float)
    bands = np.column_stack([points - crit * se, points + crit * se])

    cells = tuple(getattr(e, "cell", None) for e in estimates)
    flags = tuple(bool(getattr(e, "is_pretrend", False)) for e in estimates)
    return BootstrapResult(labels=labels, points=points, per_cell_se=se, critical_value=crit, bands=bands,
                           q25=q25, q75=q75, alpha=config.alpha, n_reps=config.n_reps,
                           weight_kind=config.weight_kind, seed=config.seed, cells=cells,
                           pretrend_flags=flags, draws=draws if keep_draws else None)


def analytic_band(estimate, alpha: float = 0.05) -> Tuple[float, float]:
    """Pointwise normal interval from the analytic SE (diagnostic)."""
    z = float(norm.ppf(1.0 - alpha / 2.0))
    return estimate.point - z * estimate.analytic_se, estimate.point + z * estimate.analytic_se


@dataclass(frozen=True)
class PretrendsVerdict:
    """Outcome of checking pre-trend bands against zero"""
    consistent: bool
    excluding_zero: Tuple[str, ...]
    n_pretrend: int
    n_post: int
    note: str = "necessary condition only: bands covering zero do not establish parallel trends"

    def summary(self) -> str:
        status = "consistent with" if self.consistent else "inconsistent with"
        detail = f"; bands excluding 0: {', '.join(self.excluding_zero)}" if self.excluding_zero else ""
        return f"pre-trends {status} parallel trends ({self.n_pretrend} pre-trend cells){detail} [{self.note}]"


def pretrends_report(post_bands: Sequence[BandRow], pre_bands: Sequence[BandRow]) -> PretrendsVerdict:
    """
    Flag pre-trend cells whose bands exclude zero.

    Args:
        post_bands: Bands of post cells (banded jointly with the pre-trend cells)
        pre_bands: Bands of pre-trend cells

    Returns:
        PretrendsVerdict
    """
    if not pre_bands:
        raise NoPretrendCellsError("no pre-trend cells supplied")
    excluding = tuple(row.label for row in pre_bands if not row.contains(0.0))
    verdict = PretrendsVerdict(consistent=not excluding, excluding_zero=excluding,
                               n_pretrend=len(pre_bands), n_post=len(post_bands))
    if excluding:
        logger.warning(verdict.summary())
    else:
        logger.info(verdict.summary())
    return verdict
