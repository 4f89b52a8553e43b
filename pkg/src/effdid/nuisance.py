"""
Nuisance Estimation Module

First-step parametric fits for one cell:
- outcome regression: least squares of the outcome change on [1, X] over stayers
- generalized propensity score: logit (or probit) of the mover indicator on
  [1, X] over movers and stayers, fitted by Newton-Raphson with step halving

Each fit returns per-unit influence vectors (standard M-estimator sandwich
forms) used for the first-step correction of the ATEM influence function.
"""

import logging
from dataclasses import dataclass, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import expit, log_ndtr, ndtr

from .config import NuisanceConfig
from .efftreat import MoverStayerFrame
from .errors import (
    CollinearityError,
    ConvergenceError,
    EmptyCellError,
    InsufficientUnitsError,
    SeparationError,
    WarningRecord,
    record_warning,
)

logger = logging.getLogger(__name__)

MAX_HALVINGS = 40
# relative size of a log-likelihood change that rounding cannot resolve
LOGLIK_RESOLUTION = 64 * np.finfo(float).eps


@dataclass(frozen=True)
class OrFit:
    """Outcome-regression fit on stayers"""
    gamma: np.ndarray
    fitted: np.ndarray
    gradient_rows: np.ndarray
    psi_gamma: np.ndarray
    n_stayers: int
    columns: Tuple[int, ...]


@dataclass(frozen=True)
class GpsFit:
    """Generalized propensity score fit on movers and stayers"""
    pi: np.ndarray
    p_hat: np.ndarray
    r_hat: np.ndarray
    p_dot: np.ndarray
    r_dot: np.ndarray
    psi_pi: np.ndarray
    converged: bool
    iterations: int
    link: str
    log_likelihood: float
    loglik_path: Tuple[float, ...]
    subsample: np.ndarray
    columns: Tuple[int, ...]
    warnings: Tuple[WarningRecord, ...] = ()


def design_columns(n_covariates: int, covariates: Optional[Sequence[int]]) -> Tuple[int, ...]:
    """Design-matrix column indices: intercept plus the selected covariates (0-based)."""
    if covariates is None:
        return tuple(range(n_covariates + 1))
    for j in covariates:
        if not 0 <= j < n_covariates:
            raise CollinearityError(f"covariate index {j} out of range for {n_covariates} covariates")
    return (0,) + tuple(1 + int(j) for j in covariates)


def _check_rank(X: np.ndarray, rank_tol: float, what: str, label: str):
    """Raise if the column-equilibrated design is numerically rank deficient."""
    norms = np.linalg.norm(X, axis=0)
    if (norms == 0).any():
        raise CollinearityError(f"{what} design for cell {label} has an all-zero column", {"cell": label})
    sv = np.linalg.svd(X / norms, compute_uv=False)
    if sv[-1] < rank_tol * sv[0]:
        raise CollinearityError(
            f"{what} design for cell {label} is rank deficient (singular value ratio {sv[-1] / sv[0]:.2e}); "
            "reduce the covariate set", {"cell": label})


def fit_or_stayers(frame: MoverStayerFrame, config: Optional[NuisanceConfig] = None) -> OrFit:
    """
    Least-squares outcome regression over stayers.

    Args:
        frame: Mover/stayer frame for the cell
        config: Fitting settings (covariate subset, rank tolerance)

    Returns:
        OrFit with fitted values and design rows for all units
    """
    config = config or NuisanceConfig()
    label = frame.cell.label()
    cols = design_columns(frame.x_design.shape[1] - 1, config.or_covariates)
    X = frame.x_design[:, cols]
    S = frame.stayers
    N, k = X.shape

    stay = S > 0
    n_stayers = int(stay.sum())
    if n_stayers == 0:
        raise EmptyCellError(f"no stayers for cell {label}", {"cell": label})
    if n_stayers < k:
        raise InsufficientUnitsError(f"{n_stayers} stayer(s) cannot identify {k} regression coefficients "
                                     f"for cell {label}", {"cell": label})
    Xs, ys = X[stay], frame.dy[stay]
    _check_rank(Xs, config.rank_tol, "outcome-regression", label)

    gamma, *_ = np.linalg.lstsq(Xs, ys, rcond=None)
    fitted = X @ gamma
    residual = frame.dy - fitted

    # psi_gamma_i = (E_N[S x x'])^-1 S_i x_i (dY_i - x_i'gamma)
    A = (Xs.T @ Xs) / N
    scores = (S * residual)[:, None] * X
    psi_gamma = np.linalg.solve(A, scores.T).T

    return OrFit(gamma=gamma, fitted=fitted, gradient_rows=X, psi_gamma=psi_gamma,
                 n_stayers=n_stayers, columns=cols)


# --- binary-response links ---

def _logit_parts(eta: np.ndarray, y: np.ndarray):
    """Log-likelihood, generalized residual and Hessian weight for logit."""
    p = expit(eta)
    loglik = float(np.sum(y * eta - np.logaddexp(0.0, eta)))
    return loglik, y - p, p * (1.0 - p)


def _probit_parts(eta: np.ndarray, y: np.ndarray):
    """Log-likelihood, generalized residual and observed-information weight for probit."""
    log_cdf = log_ndtr(eta)
    log_sf = log_ndtr(-eta)
    loglik = float(np.sum(y * log_cdf + (1.0 - y) * log_sf))
    log_pdf = -0.5 * eta ** 2 - 0.5 * np.log(2.0 * np.pi)
    mills_pos = np.exp(log_pdf - log_cdf)
    mills_neg = np.exp(log_pdf - log_sf)
    resid = y * mills_pos - (1.0 - y) * mills_neg
    weight = y * mills_pos * (mills_pos + eta) + (1.0 - y) * mills_neg * (mills_neg - eta)
    return loglik, resid, weight


def _link_parts(link: str):
    return _logit_parts if link == "logit" else _probit_parts


def _newton_step(Z: np.ndarray, weight: np.ndarray, grad: np.ndarray, label: str) -> np.ndarray:
    H = (Z * weight[:, None]).T @ Z
    try:
        return np.linalg.solve(H, grad)
    except np.linalg.LinAlgError:
        raise SeparationError(f"propensity Hessian is singular for cell {label}: "
                              "quasi-complete separation; reduce the covariate set", {"cell": label})


def _check_not_separated(weight: np.ndarray, label: str):
    if np.max(weight) < 1e-8:
        # every unit fitted with certainty: the classes are separated
        raise SeparationError(f"propensity fit for cell {label} separates movers from stayers perfectly",
                              {"cell": label})


def _newton(Z: np.ndarray, y: np.ndarray, link: str, config: NuisanceConfig, label: str):
    """
    Maximize the binary log-likelihood on standardized regressors.

    Stops when the mean score falls below `config.tol`, or when the Newton
    decrement (twice the predicted gain) is below what the log-likelihood can
    resolve; in that case the full step is taken once without a line search.
    """
    parts = _link_parts(link)
    n, k = Z.shape
    b = np.zeros(k)
    loglik, resid, weight = parts(Z @ b, y)
    path = [loglik]

    for iteration in range(1, config.max_iter + 1):
        grad = Z.T @ resid
        if np.max(np.abs(grad)) / n <= config.tol:
            _check_not_separated(weight, label)
            return b, True, iteration - 1, path
        step = _newton_step(Z, weight, grad, label)

        if float(grad @ step) <= LOGLIK_RESOLUTION * max(1.0, abs(loglik)):
            _check_not_separated(weight, label)
            polished = b + step
            if np.isfinite(parts(Z @ polished, y)[0]):
                return polished, True, iteration, path
            return b, True, iteration - 1, path

        for _ in range(MAX_HALVINGS):
            candidate = b + step
            new_loglik, new_resid, new_weight = parts(Z @ candidate, y)
            if np.isfinite(new_loglik) and new_loglik >= loglik:
                break
            step = step / 2.0
        else:
            # no ascent possible at machine precision: accept if the score is already negligible
            if np.max(np.abs(grad)) / n <= np.sqrt(config.tol):
                return b, True, iteration - 1, path
            raise ConvergenceError(f"propensity fit for cell {label} cannot improve the likelihood", {"cell": label})

        b, loglik, resid, weight = candidate, new_loglik, new_resid, new_weight
        path.append(loglik)

        if np.linalg.norm(b) > config.separation_bound:
            raise SeparationError(
                f"propensity coefficients diverge for cell {label} (|pi| > {config.separation_bound:g}): "
                "quasi-complete separation; reduce the covariate set", {"cell": label})

    grad = Z.T @ resid
    if np.max(np.abs(grad)) / n <= config.tol:
        return b, True, config.max_iter, path
    raise ConvergenceError(f"propensity fit for cell {label} did not converge in {config.max_iter} iterations",
                           {"cell": label})


def fit_gps(frame: MoverStayerFrame, config: Optional[NuisanceConfig] = None) -> GpsFit:
    """
    Binary-response propensity fit of the mover indicator over movers and stayers.

    Covariates are standardized on the fitting subsample for the Newton
    iterations; coefficients are reported on the original scale.

    Args:
        frame: Mover/stayer frame for the cell
        config: Fitting settings (link, tolerances, covariate subset)

    Returns:
        GpsFit with p, r = p/(1-p), their derivatives and influence vectors
    """
    config = config or NuisanceConfig()
    label = frame.cell.label()
    cols = design_columns(frame.x_design.shape[1] - 1, config.gps_covariates)
    X = frame.x_design[:, cols]
    M, S = frame.movers, frame.stayers
    N, k = X.shape

    sub = (M + S) > 0
    n_sub = int(sub.sum())
    if M.sum() == 0 or S.sum() == 0:
        raise EmptyCellError(f"propensity fit for cell {label} needs both movers and stayers", {"cell": label})
    if n_sub < k + 1:
        raise InsufficientUnitsError(f"{n_sub} movers+stayers are too few for {k} propensity coefficients "
                                     f"in cell {label}", {"cell": label})

    Xsub, y = X[sub], M[sub]
    mu = Xsub[:, 1:].mean(axis=0)
    sd = Xsub[:, 1:].std(axis=0)
    if (sd == 0).any():
        raise CollinearityError(f"constant covariate among movers and stayers of cell {label}", {"cell": label})
    Z = np.column_stack([np.ones(n_sub), (Xsub[:, 1:] - mu) / sd])
    _check_rank(Z, config.rank_tol, "propensity", label)

    b, converged, iterations, path = _newton(Z, y, config.gps, config, label)

    # back to the original covariate scale
    pi = np.empty(k)
    pi[1:] = b[1:] / sd
    pi[0] = b[0] - np.sum(b[1:] * mu / sd)

    eta = X @ pi
    if config.gps == "logit":
        p_hat = expit(eta)
        dens = p_hat * (1.0 - p_hat)
    else:
        p_hat = ndtr(eta)
        dens = np.exp(-0.5 * eta ** 2) / np.sqrt(2.0 * np.pi)
    p_hat = np.clip(p_hat, np.finfo(float).tiny, 1.0 - np.finfo(float).eps)
    r_hat = p_hat / (1.0 - p_hat)
    p_dot = dens[:, None] * X
    r_dot = p_dot / ((1.0 - p_hat) ** 2)[:, None]

    # psi_pi_i = H^-1 (M_i+S_i) x_i * generalized residual, H = E_N[(M+S) w x x']
    loglik, resid, weight = _link_parts(config.gps)(eta[sub], y)
    H = (Xsub * weight[:, None]).T @ Xsub / N
    scores = np.zeros((N, k))
    scores[sub] = Xsub * resid[:, None]
    psi_pi = np.linalg.solve(H, scores.T).T

    records: List[WarningRecord] = []
    eps = config.overlap_eps
    outside = sub & ((p_hat < eps) | (p_hat > 1.0 - eps))
    if outside.any():
        record_warning(records, logger, "overlap",
                       f"cell {label}: {int(outside.sum())} unit(s) with propensity outside [{eps:g}, {1 - eps:g}]",
                       cell=label, n_units=int(outside.sum()))

    logger.debug(f"GPS ({config.gps}) for cell {label} converged in {iterations} iterations, loglik={loglik:.6f}")
    return GpsFit(pi=pi, p_hat=p_hat, r_hat=r_hat, p_dot=p_dot, r_dot=r_dot, psi_pi=psi_pi,
                  converged=converged, iterations=iterations, link=config.gps, log_likelihood=loglik,
                  loglik_path=tuple(path), subsample=sub, columns=cols, warnings=tuple(records))


def fit_gps_logit(frame: MoverStayerFrame, config: Optional[NuisanceConfig] = None) -> GpsFit:
    """Logit propensity fit (see `fit_gps`)."""
    config = config or NuisanceConfig()
    if config.gps != "logit":
        config = config.model_copy(update={"gps": "logit"})
    return fit_gps(frame, config)


def fit_gps_probit(frame: MoverStayerFrame, config: Optional[NuisanceConfig] = None) -> GpsFit:
    """Probit propensity fit (see `fit_gps`)."""
    config = config or NuisanceConfig()
    if config.gps != "probit":
        config = config.model_copy(update={"gps": "probit"})
    return fit_gps(frame, config)


def trim_frame(frame: MoverStayerFrame, gps_fit: GpsFit, eps: float,
               records: Optional[List[WarningRecord]] = None) -> MoverStayerFrame:
    """
    Drop movers/stayers whose fitted propensity lies outside [eps, 1 - eps].

    The returned frame has the flagged units' indicators set to zero; callers
    refit both nuisances on it.
    """
    flagged = gps_fit.subsample & ((gps_fit.p_hat < eps) | (gps_fit.p_hat > 1.0 - eps))
    n_flagged = int(flagged.sum())
    if n_flagged == 0:
        return frame
    msg = f"trimming {n_flagged} unit(s) with propensity outside [{eps:g}, {1 - eps:g}] from cell {frame.cell.label()}"
    if records is not None:
        record_warning(records, logger, "trimmed", msg, cell=frame.cell.label(), n_units=n_flagged)
    else:
        logger.warning(msg)
    keep = (~flagged).astype(float)
    return replace(frame, movers=frame.movers * keep, stayers=frame.stayers * keep)
