"""Experiment config schema (JSON), validation and path resolution."""
from __future__ import annotations

import hashlib
import json
import logging
import os
from pathlib import Path
from typing import Annotated, Any, Dict, List, Literal, Optional, Tuple, Union

import numpy as np
from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    NonNegativeFloat,
    NonNegativeInt,
    PositiveFloat,
    PositiveInt,
    ValidationError,
    model_validator,
)

from .errors import ConfigError, ZohError
from .estimators import CgeConfig, RgeConfig
from .importance import AlphaMode, AlphaPolicy, SmoothingMode, SmoothingParams, theoretical_smoothing
from .objectives import Objective, load_cw_attack, load_logistic, make_quadratic
from .optimize import HgdConfig, OutputRule, SamplingMode, StepMode, StepSchedule

logger = logging.getLogger(__name__)

REPO_ROOT = Path(__file__).resolve().parents[1]
SEED_ENV = "ZOH_SEED"


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True, populate_by_name=True)


class QuadraticSpec(_Strict):
    name: Literal["quadratic"]
    d: PositiveInt
    diag: Optional[List[PositiveFloat]] = None
    diag_value: Optional[PositiveFloat] = None
    noise_zeta: NonNegativeFloat = 0.0
    seed: int = 0

    @model_validator(mode="after")
    def _one_diag(self) -> "QuadraticSpec":
        if (self.diag is None) == (self.diag_value is None):
            raise ValueError("give exactly one of diag and diag_value")
        if self.diag is not None and len(self.diag) != self.d:
            raise ValueError(f"diag must have {self.d} entries")
        return self


class LogisticSpec(_Strict):
    name: Literal["logistic"]
    dataset: str
    l2_reg: NonNegativeFloat = 0.0


class AttackSpec(_Strict):
    name: Literal["cw_attack"]
    classifier: str
    images: str
    lam: PositiveFloat = Field(alias="lambda")
    kappa: NonNegativeFloat = 0.0


ObjectiveSpec = Annotated[Union[QuadraticSpec, LogisticSpec, AttackSpec], Field(discriminator="name")]


class RgeSpec(_Strict):
    n_r: PositiveInt
    mu_r: Optional[PositiveFloat] = None
    batch_size: PositiveInt = 1


class CgeSpec(_Strict):
    mu_c: Optional[Union[PositiveFloat, List[PositiveFloat]]] = None
    batch_size: PositiveInt = 1


class StepSpec(_Strict):
    mode: StepMode = StepMode.CONSTANT
    eta: Optional[NonNegativeFloat] = None
    L: Optional[PositiveFloat] = None
    a: Optional[float] = None
    sigma_bar: Optional[PositiveFloat] = None
    R: Optional[PositiveFloat] = None
    G: Optional[NonNegativeFloat] = None


class AlphaSpec(_Strict):
    mode: AlphaMode = AlphaMode.OPTIMAL
    value: float = 0.0


class MethodSpec(_Strict):
    method: Literal["zo_hgd", "zo_sgd", "zo_scd", "zo_signsgd"]
    label: Optional[str] = None
    T: PositiveInt
    step: StepSpec = StepSpec()
    rge: Optional[RgeSpec] = None
    cge: Optional[CgeSpec] = None
    n_c: Union[NonNegativeInt, List[NonNegativeInt]] = 0
    alpha: AlphaSpec = AlphaSpec()
    output_rule: OutputRule = OutputRule.UNIFORM_RANDOM_ITERATE
    output_a: NonNegativeFloat = 2.0
    sampling: SamplingMode = SamplingMode.IMPORTANCE
    smoothing: Optional[SmoothingMode] = None
    eta_grid: Optional[List[PositiveFloat]] = None

    @property
    def name(self) -> str:
        return self.label or self.method

    @model_validator(mode="after")
    def _eta_source(self) -> "MethodSpec":
        if self.step.mode is StepMode.CONSTANT and self.step.eta is None and not self.eta_grid:
            raise ValueError("constant step needs step.eta or eta_grid")
        return self


class ReportSpec(_Strict):
    stride: PositiveInt = 1
    threshold: Optional[float] = None


class GridSpec(_Strict):
    n_r: List[PositiveInt] = []
    n_c: List[PositiveInt] = []
    mu: List[PositiveFloat] = []
    batch_size: List[PositiveInt] = []


class DiagnosticsSpec(_Strict):
    objectives: Optional[List[ObjectiveSpec]] = None
    trials: PositiveInt = 2000
    grid: GridSpec = GridSpec()
    points: Optional[List[List[float]]] = None
    sampling: SamplingMode = SamplingMode.IMPORTANCE
    lipschitz_scale: PositiveFloat = 1.0


class ExperimentConfig(_Strict):
    objective: Optional[ObjectiveSpec] = None
    x0: Optional[List[float]] = None
    x0_value: float = 0.0
    methods: List[MethodSpec] = []
    trials: PositiveInt = 1
    base_seed: int = 0
    output_dir: str = "out"
    report: ReportSpec = ReportSpec()
    diagnostics: Optional[DiagnosticsSpec] = None

    @model_validator(mode="after")
    def _unique_labels(self) -> "ExperimentConfig":
        names = [m.name for m in self.methods]
        if len(names) != len(set(names)):
            raise ValueError("method labels must be unique")
        return self


def _location(error: Dict[str, Any]) -> str:
    return ".".join(str(part) for part in error["loc"]) or "<root>"


def load_config(path: str | Path) -> Tuple[ExperimentConfig, Path]:
    """Parse and validate a config file; returns the config and its directory."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read config: {e}", location=str(path)) from e
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(e.msg, location=f"{path} line {e.lineno} col {e.colno}") from e
    try:
        cfg = ExperimentConfig.model_validate(payload)
    except ValidationError as e:
        first = e.errors()[0]
        raise ConfigError(first["msg"], location=f"{path} {_location(first)}") from e

    seed = os.environ.get(SEED_ENV)
    if seed:
        try:
            cfg = cfg.model_copy(update={"base_seed": int(seed)})
        except ValueError as e:
            raise ConfigError(f"not an integer: {seed!r}", location=SEED_ENV) from e
        logger.info("base_seed overridden to %s by %s", seed, SEED_ENV)
    return cfg, path.resolve().parent


def config_hash(cfg: ExperimentConfig) -> str:
    canonical = json.dumps(cfg.model_dump(mode="json", by_alias=True), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]


def resolve_path(value: str, base_dir: Path) -> Path:
    """Config-relative first, then repository-relative."""
    candidate = Path(value)
    if candidate.is_absolute():
        return candidate
    for root in (base_dir, REPO_ROOT):
        if (root / candidate).exists():
            return root / candidate
    raise ConfigError(f"file not found: {value}", location=str(base_dir))


def build_objective(spec: ObjectiveSpec, base_dir: Path) -> Objective:
    try:
        if isinstance(spec, QuadraticSpec):
            diag = spec.diag if spec.diag is not None else [spec.diag_value] * spec.d
            return make_quadratic(spec.d, diag, spec.noise_zeta, spec.seed)
        if isinstance(spec, LogisticSpec):
            return load_logistic(resolve_path(spec.dataset, base_dir), spec.l2_reg)
        return load_cw_attack(
            resolve_path(spec.classifier, base_dir),
            resolve_path(spec.images, base_dir),
            spec.lam,
            spec.kappa,
        )
    except ConfigError:
        raise
    except (ZohError, OSError) as e:
        raise ConfigError(str(e), location=f"objective ({spec.name})") from e


def objective_dict(spec: ObjectiveSpec) -> Dict[str, Any]:
    return spec.model_dump(mode="json", by_alias=True)


def initial_point(cfg: ExperimentConfig, d: int) -> np.ndarray:
    if cfg.x0 is None:
        return np.full(d, cfg.x0_value)
    if len(cfg.x0) != d:
        raise ConfigError(f"x0 has {len(cfg.x0)} entries, objective has dimension {d}", location="x0")
    return np.asarray(cfg.x0, dtype=float)


def _step(spec: StepSpec, obj: Objective, eta: Optional[float]) -> StepSchedule:
    meta = obj.metadata
    if spec.mode is StepMode.CONSTANT:
        return StepSchedule.constant(eta if eta is not None else spec.eta)
    if spec.mode is StepMode.THEOREM1_BOUND:
        L = spec.L if spec.L is not None else meta.lipschitz_L
        if L is None:
            raise ValueError("theorem1_bound step needs L (not known for this objective)")
        return StepSchedule.theorem1(L)
    if spec.mode is StepMode.SC_DECAY:
        sigma_bar = spec.sigma_bar if spec.sigma_bar is not None else meta.strong_convexity_sigma_bar
        if spec.a is None or sigma_bar is None:
            raise ValueError("sc_decay step needs a and sigma_bar")
        return StepSchedule.sc_decay(spec.a, sigma_bar)
    R = spec.R if spec.R is not None else meta.domain_diameter_R
    G = spec.G if spec.G is not None else meta.grad_bound_G
    sigma_sq = meta.full_variance_sigma_sq
    if R is None or G is None or sigma_sq is None:
        raise ValueError("convex_bound step needs R, G and a known noise level")
    return StepSchedule.convex_bound(R, G, sigma_sq)


def _smoothing(spec: MethodSpec, obj: Objective) -> Tuple[Optional[float], Optional[float]]:
    if spec.smoothing is None:
        return None, None
    if spec.rge is None:
        raise ValueError("theoretical smoothing needs an rge block (n_r)")
    meta = obj.metadata
    params = SmoothingParams(
        d=obj.dimension,
        T=spec.T,
        n_r=spec.rge.n_r,
        L=meta.lipschitz_L,
        sigma=None if meta.full_variance_sigma_sq is None else float(np.sqrt(meta.full_variance_sigma_sq)),
        sigma_bar=meta.strong_convexity_sigma_bar,
    )
    return theoretical_smoothing(spec.smoothing, params)


def to_hgd_config(spec: MethodSpec, obj: Objective, seed: int, eta: Optional[float] = None) -> HgdConfig:
    """Resolve a method block against an objective. Errors become ``ConfigError``."""
    try:
        mu_c, mu_r = _smoothing(spec, obj)
        rge_cfg = None
        if spec.rge is not None:
            radius = spec.rge.mu_r if spec.rge.mu_r is not None else mu_r
            if radius is None:
                raise ValueError("rge.mu_r missing and no smoothing mode given")
            rge_cfg = RgeConfig(spec.rge.n_r, radius, spec.rge.batch_size)
        cge_cfg = None
        if spec.cge is not None:
            radii = spec.cge.mu_c if spec.cge.mu_c is not None else mu_c
            if radii is None:
                raise ValueError("cge.mu_c missing and no smoothing mode given")
            if isinstance(radii, list):
                cge_cfg = CgeConfig(np.asarray(radii, dtype=float), spec.cge.batch_size)
            else:
                cge_cfg = CgeConfig.uniform(obj.dimension, radii, spec.cge.batch_size)
        alpha = AlphaPolicy(spec.alpha.mode, spec.alpha.value)
        n_c = tuple(spec.n_c) if isinstance(spec.n_c, list) else spec.n_c
        if spec.method in ("zo_sgd", "zo_signsgd"):
            n_c, alpha = 0, AlphaPolicy.constant(1.0)
        elif spec.method == "zo_scd":
            rge_cfg, alpha = None, AlphaPolicy.constant(0.0)
        d = obj.dimension
        budgets = n_c if isinstance(n_c, tuple) else (n_c,)
        if budgets and max(budgets) > d:
            raise ValueError(f"n_c={max(budgets)} exceeds dimension {d}")
        if cge_cfg is not None and cge_cfg.dimension != d:
            raise ValueError(f"cge.mu_c has {cge_cfg.dimension} entries, objective has dimension {d}")
        return HgdConfig(
            T=spec.T,
            step=_step(spec.step, obj, eta),
            rge=rge_cfg,
            cge=cge_cfg,
            n_c=n_c,
            alpha=alpha,
            output_rule=spec.output_rule,
            output_a=spec.output_a,
            seed=seed,
            sampling=SamplingMode.UNIFORM if spec.method == "zo_scd" else spec.sampling,
        )
    except ConfigError:
        raise
    except (ValueError, ZohError) as e:
        raise ConfigError(str(e), location=f"methods[{spec.name}]") from e
