"""
Configuration Module

Pydantic models for every tunable stage of the pipeline, plus environment
and YAML run-file overrides.

Precedence is: explicit argument / CLI flag > environment > run file > default.
"""

import os
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Type, TypeVar

import yaml
from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .errors import SpecificationError

ENV_SEED = "EFFDID_SEED"
ENV_THREADS = "EFFDID_THREADS"
ENV_LOG_LEVEL = "EFFDID_LOG_LEVEL"

ErrorLaw = Literal["normal", "logistic", "zero"]

ModelT = TypeVar("ModelT", bound=BaseModel)


class NuisanceConfig(BaseModel):
    """First-step fitting settings"""
    model_config = ConfigDict(frozen=True)

    gps: Literal["logit", "probit"] = "logit"
    max_iter: int = Field(100, ge=1)
    tol: float = Field(1e-10, gt=0)
    separation_bound: float = Field(50.0, gt=0)
    rank_tol: float = Field(1e-10, gt=0)
    overlap_eps: float = Field(0.005, ge=0, lt=0.5)
    trim: Optional[float] = Field(None, gt=0, lt=0.5)
    # covariate column subsets; None = all columns, [] = intercept only
    or_covariates: Optional[List[int]] = None
    gps_covariates: Optional[List[int]] = None


class BootstrapConfig(BaseModel):
    """Multiplier bootstrap settings"""
    model_config = ConfigDict(frozen=True)

    n_reps: int = Field(999, ge=2)
    alpha: float = Field(0.05, gt=0, lt=1)
    weight_kind: Literal["mammen", "rademacher"] = "mammen"
    seed: int = Field(0, ge=0, lt=2 ** 64)
    threads: int = Field(1, ge=1)
    pretrends_in_uniform: bool = True


class EstimateConfig(BaseModel):
    """What to estimate on an observed panel"""
    model_config = ConfigDict(frozen=True)

    spec: Literal["once", "event", "number"] = "once"
    delta: int = Field(0, ge=0)
    include_pretrends: bool = False
    estimand: Literal["DR", "OR", "IPW"] = "DR"
    threads: int = Field(1, ge=1)


class SimConfig(BaseModel):
    """
    Monte Carlo data generating process.

    Defaults reproduce the reference design: pi1 = -1, pi2 = 1, gamma_t = t,
    lambda_t = t / T, eta_t = t, tau_{t,e} = (t + T - e) / T, standard normal
    errors, and no unit treated in the first period.
    """
    model_config = ConfigDict(frozen=True)

    n_units: int = Field(1000, ge=10)
    n_periods: int = Field(4, ge=2)
    pi1: float = -1.0
    pi2: float = 1.0
    gamma_t: Optional[List[float]] = None
    lambda_t: Optional[List[float]] = None
    eta_t: Optional[List[float]] = None
    # tau[t-1][e-1]; None selects the default surface
    tau: Optional[List[List[float]]] = None
    u_law: ErrorLaw = "normal"
    v_law: ErrorLaw = "normal"
    xi_law: ErrorLaw = "normal"
    alpha_law: ErrorLaw = "normal"
    x_law: ErrorLaw = "normal"
    parallel_trends_violation: float = 0.0
    reps: int = Field(1000, ge=1)
    seed: int = Field(0, ge=0, lt=2 ** 64)

    @field_validator("x_law")
    @classmethod
    def _covariate_not_degenerate(cls, value: str) -> str:
        if value == "zero":
            raise ValueError("x_law='zero' makes the covariate collinear with the intercept")
        return value

    @model_validator(mode="after")
    def _check_lengths(self) -> "SimConfig":
        T = self.n_periods
        for name in ("gamma_t", "lambda_t", "eta_t"):
            values = getattr(self, name)
            if values is not None and len(values) != T:
                raise ValueError(f"{name} must have {T} entries, got {len(values)}")
        if self.tau is not None:
            if len(self.tau) != T or any(len(row) != T for row in self.tau):
                raise ValueError(f"tau must be a {T}x{T} matrix indexed [t-1][e-1]")
        return self

    def gamma(self) -> List[float]:
        return list(self.gamma_t) if self.gamma_t is not None else [float(t) for t in range(1, self.n_periods + 1)]

    def lambdas(self) -> List[float]:
        T = self.n_periods
        return list(self.lambda_t) if self.lambda_t is not None else [t / T for t in range(1, T + 1)]

    def eta(self) -> List[float]:
        return list(self.eta_t) if self.eta_t is not None else [float(t) for t in range(1, self.n_periods + 1)]

    def tau_value(self, t: int, e: int) -> float:
        """Effect in period t for units whose first treated period is e (1-based)."""
        if self.tau is not None:
            return float(self.tau[t - 1][e - 1])
        T = self.n_periods
        return (t + T - e) / T


def make_config(model: Type[ModelT], **values: Any) -> ModelT:
    """
    Build a config model, converting validation failures to SpecificationError.

    Args:
        model: Pydantic model class
        values: Field values; None entries fall back to defaults

    Returns:
        Validated model instance
    """
    cleaned = {k: v for k, v in values.items() if v is not None}
    try:
        return model(**cleaned)
    except ValidationError as e:
        raise SpecificationError(f"invalid {model.__name__}: {e.errors()[0]['msg']}",
                                 {"errors": [str(err["loc"]) for err in e.errors()]}) from e


def load_settings(dotenv_path: Optional[str] = None) -> Dict[str, Any]:
    """
    Read environment overrides (after loading a .env file if present).

    Returns:
        Dict with any of `seed`, `threads`, `log_level` that are set
    """
    load_dotenv(dotenv_path=dotenv_path, override=False)
    settings: Dict[str, Any] = {}
    if os.getenv(ENV_SEED):
        settings["seed"] = int(os.environ[ENV_SEED])
    if os.getenv(ENV_THREADS):
        settings["threads"] = int(os.environ[ENV_THREADS])
    if os.getenv(ENV_LOG_LEVEL):
        settings["log_level"] = os.environ[ENV_LOG_LEVEL]
    return settings


def load_run_file(path: Optional[str]) -> Dict[str, Any]:
    """Load a YAML run file whose keys mirror CLI option names (dashes or underscores)."""
    if not path:
        return {}
    with open(Path(path), "r", encoding="utf-8") as f:
        data = yaml.safe_load(f) or {}
    if not isinstance(data, dict):
        raise SpecificationError(f"run file {path} must contain a mapping")
    return {str(k).replace("-", "_"): v for k, v in data.items()}
