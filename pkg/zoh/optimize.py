"""ZO-HGD and the ZO-SGD / ZO-SCD / ZO-signSGD baselines."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import DivergenceError, OptimizeConfigError, ZohError
from .estimators import CgeConfig, GradientEstimate, RgeConfig, cge_sampled, hge, rge
from .importance import (
    PROBABILITY_FLOOR,
    AlphaMode,
    AlphaPolicy,
    ProbabilityVector,
    convex_step_size,
    sample_coordinate_set,
    sparsification_probabilities,
    theoretical_step_size,
)
from .objectives import Objective, QueryCounter, Vector

logger = logging.getLogger(__name__)

DIVERGENCE_LIMIT = 1e8


class StepMode(str, Enum):
    CONSTANT = "constant"
    THEOREM1_BOUND = "theorem1_bound"
    SC_DECAY = "sc_decay"
    CONVEX_BOUND = "convex_bound"


@dataclass(frozen=True)
class StepSchedule:
    """How η_t is chosen. Only the fields of the selected mode are read."""

    mode: StepMode
    eta: float = 0.0
    L: Optional[float] = None
    a: Optional[float] = None
    sigma_bar: Optional[float] = None
    R: Optional[float] = None
    G: Optional[float] = None
    sigma_sq: Optional[float] = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "mode", StepMode(self.mode))
        if self.mode is StepMode.CONSTANT and not self.eta >= 0:
            raise OptimizeConfigError("constant step size must be nonnegative")
        if self.mode is StepMode.THEOREM1_BOUND and not (self.L is not None and self.L > 0):
            raise OptimizeConfigError("theorem1_bound step needs L > 0")
        if self.mode is StepMode.SC_DECAY:
            if self.a is None or not self.a > 1:
                raise OptimizeConfigError("sc_decay step needs a > 1")
            if self.sigma_bar is None or not self.sigma_bar > 0:
                raise OptimizeConfigError("sc_decay step needs sigma_bar > 0")
        if self.mode is StepMode.CONVEX_BOUND:
            if self.R is None or self.G is None or self.sigma_sq is None:
                raise OptimizeConfigError("convex_bound step needs R, G and sigma_sq")

    @classmethod
    def constant(cls, eta: float) -> "StepSchedule":
        return cls(StepMode.CONSTANT, eta=eta)

    @classmethod
    def theorem1(cls, L: float) -> "StepSchedule":
        return cls(StepMode.THEOREM1_BOUND, L=L)

    @classmethod
    def sc_decay(cls, a: float, sigma_bar: float) -> "StepSchedule":
        return cls(StepMode.SC_DECAY, a=a, sigma_bar=sigma_bar)

    @classmethod
    def convex_bound(cls, R: float, G: float, sigma_sq: float) -> "StepSchedule":
        return cls(StepMode.CONVEX_BOUND, R=R, G=G, sigma_sq=sigma_sq)

    def eta_at(self, t: int, T: int, alpha: float, c: float, d_nr: float) -> float:
        """η_t for the 0-based iteration t; ``c`` is min_i p_t,i (1 without coordinate sampling)."""
        if self.mode is StepMode.CONSTANT:
            return self.eta
        if self.mode is StepMode.THEOREM1_BOUND:
            return theoretical_step_size(self.L, c, d_nr)
        if self.mode is StepMode.SC_DECAY:
            return 8.0 / (self.sigma_bar * (self.a + t))
        return convex_step_size(self.R, T, alpha, self.G, self.sigma_sq, d_nr, c)


class OutputRule(str, Enum):
    UNIFORM_RANDOM_ITERATE = "uniform_random_iterate"
    LAST_ITERATE = "last_iterate"
    WEIGHTED_AVERAGE = "weighted_average"


class SamplingMode(str, Enum):
    IMPORTANCE = "importance"
    UNIFORM = "uniform"


@dataclass(frozen=True)
class HgdConfig:
    T: int
    step: StepSchedule
    rge: Optional[RgeConfig] = None
    cge: Optional[CgeConfig] = None
    n_c: Union[int, Tuple[int, ...]] = 0
    alpha: AlphaPolicy = field(default_factory=AlphaPolicy)
    output_rule: OutputRule = OutputRule.UNIFORM_RANDOM_ITERATE
    output_a: float = 2.0
    seed: int = 0
    sampling: SamplingMode = SamplingMode.IMPORTANCE
    floor: float = PROBABILITY_FLOOR
    divergence_limit: float = DIVERGENCE_LIMIT

    def __post_init__(self) -> None:
        object.__setattr__(self, "output_rule", OutputRule(self.output_rule))
        object.__setattr__(self, "sampling", SamplingMode(self.sampling))
        if isinstance(self.n_c, (list, tuple)):
            object.__setattr__(self, "n_c", tuple(int(n) for n in self.n_c))
        if self.T < 1:
            raise OptimizeConfigError("T must be at least 1")
        budgets = self.budgets
        if len(budgets) != self.T:
            raise OptimizeConfigError(f"n_c schedule has {len(budgets)} entries for T={self.T}")
        if min(budgets) < 0:
            raise OptimizeConfigError("n_c must be nonnegative")

        uses_cge = max(budgets) > 0
        if self.rge is None and not uses_cge:
            raise OptimizeConfigError("config has neither an RGE nor a coordinate budget")
        if uses_cge and self.cge is None:
            raise OptimizeConfigError("n_c > 0 needs a cge config")
        if self.rge is None:
            if self.alpha.mode is AlphaMode.LINEAR_RAMP or (
                self.alpha.mode is AlphaMode.CONSTANT and self.alpha.value != 0.0
            ):
                raise OptimizeConfigError("alpha must resolve to 0 without an rge config")
            if uses_cge and self.sampling is SamplingMode.IMPORTANCE:
                raise OptimizeConfigError("importance sampling needs an rge probe; use uniform sampling")
        if not uses_cge and self.alpha.mode is AlphaMode.CONSTANT and self.alpha.value != 1.0:
            raise OptimizeConfigError("alpha must resolve to 1 when n_c = 0")
        if self.output_rule is OutputRule.WEIGHTED_AVERAGE and self.output_a < 0:
            raise OptimizeConfigError("weighted average needs a >= 0")
        if not self.divergence_limit > 0:
            raise OptimizeConfigError("divergence_limit must be positive")

    @property
    def budgets(self) -> Tuple[int, ...]:
        if isinstance(self.n_c, tuple):
            return self.n_c
        return (int(self.n_c),) * self.T

    def n_c_at(self, t: int) -> int:
        return self.budgets[t]

    def nominal_fqc_at(self, t: int) -> int:
        """2·n_r·|B_r| + 2·n_c,t·|B_c|."""
        total = 0
        if self.rge is not None:
            total += 2 * self.rge.n_r * self.rge.batch_size_r
        n_c = self.n_c_at(t)
        if n_c > 0:
            total += 2 * n_c * self.cge.batch_size_c
        return total


@dataclass(frozen=True)
class TraceRecord:
    """State after iteration t (1-based): statistics of x_t and the quantities used to reach it."""

    t: int
    f_value: float
    grad_norm_sq: Optional[float]
    alpha: float
    eta: float
    realized_I_size: int
    actual_queries: int
    nominal_fqc: int
    uniform_fallback: bool = False


@dataclass
class RunTrace:
    records: List[TraceRecord]
    x_out: Vector
    iterates: np.ndarray
    p_bar_T: Optional[float]
    fallback_count: int
    wall_time: float
    error: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.error is None

    @property
    def final(self) -> Optional[TraceRecord]:
        return self.records[-1] if self.records else None


def _select_output(rule: OutputRule, iterates: np.ndarray, a: float, rng: np.random.Generator) -> Vector:
    """Pick the output among x_0..x_n (``iterates`` rows)."""
    n = iterates.shape[0] - 1
    if n == 0:
        return iterates[0].copy()
    if rule is OutputRule.LAST_ITERATE:
        return iterates[n].copy()
    if rule is OutputRule.UNIFORM_RANDOM_ITERATE:
        return iterates[int(rng.integers(1, n + 1))].copy()
    weights = (a + np.arange(n)) ** 2
    if not weights.sum() > 0:
        return iterates[n].copy()
    return weights @ iterates[:n] / weights.sum()


def _run(obj: Objective, x0: Any, cfg: HgdConfig, sign_update: bool = False) -> RunTrace:
    x = obj.check_point(x0).copy()
    d = obj.dimension
    if max(cfg.budgets) > d:
        raise OptimizeConfigError(f"n_c={max(cfg.budgets)} exceeds dimension {d}")
    if cfg.cge is not None and cfg.cge.dimension != d:
        raise OptimizeConfigError(f"mu_c has {cfg.cge.dimension} entries, objective has dimension {d}")

    rng = np.random.default_rng(cfg.seed)
    counter = QueryCounter()
    records: List[TraceRecord] = []
    iterates = [x.copy()]
    p_bars: List[float] = []
    fallbacks = 0
    n_r = cfg.rge.n_r if cfg.rge is not None else 0
    d_nr = 1.0 + d / n_r if n_r else 1.0
    error: Optional[str] = None
    start = time.perf_counter()

    logger.debug("run start: d=%d T=%d seed=%d", d, cfg.T, cfg.seed)
    try:
        for t in range(cfg.T):
            n_c = cfg.n_c_at(t)
            est_r: Optional[GradientEstimate] = None
            if cfg.rge is not None:
                est_r = rge(obj, x, cfg.rge, rng, counter)

            p: Optional[ProbabilityVector] = None
            realized = 0
            est_c: Optional[GradientEstimate] = None
            if n_c > 0:
                if cfg.sampling is SamplingMode.IMPORTANCE:
                    p = sparsification_probabilities(est_r.vector, n_c, cfg.floor)
                else:
                    p = ProbabilityVector.uniform(d, n_c)
                if p.uniform_fallback:
                    fallbacks += 1
                    logger.warning("iteration %d: all-zero RGE probe, uniform coordinate probabilities", t + 1)
                p_bars.append(p.p_bar)
                coords = sample_coordinate_set(p, rng)
                realized = int(coords.size)
                est_c = cge_sampled(obj, x, cfg.cge, coords, p, rng, counter)

            if est_r is None:
                alpha = 0.0
            elif est_c is None:
                alpha = 1.0
            else:
                alpha = cfg.alpha.resolve(t + 1, cfg.T, p, n_r, d)

            if sign_update:
                direction = np.sign(est_r.vector)
            elif est_c is None:
                direction = est_r.vector
            elif est_r is None:
                direction = est_c.vector
            else:
                direction = hge(est_r, est_c, alpha).vector

            eta = cfg.step.eta_at(t, cfg.T, alpha, p.c_min if p is not None else 1.0, d_nr)
            counter.add_nominal(cfg.nominal_fqc_at(t))
            x = x - eta * direction
            if not np.all(np.isfinite(x)) or np.linalg.norm(x) > cfg.divergence_limit:
                raise DivergenceError(f"iterate norm exceeded {cfg.divergence_limit:g} at iteration {t + 1}")
            iterates.append(x.copy())

            grad_sq = None
            if obj.exact is not None:
                grad = obj.exact.gradient(x)
                grad_sq = float(grad @ grad)
            records.append(
                TraceRecord(
                    t=t + 1,
                    f_value=obj.monitor_value(x),
                    grad_norm_sq=grad_sq,
                    alpha=float(alpha),
                    eta=float(eta),
                    realized_I_size=realized,
                    actual_queries=counter.actual_evaluations,
                    nominal_fqc=counter.nominal_fqc,
                    uniform_fallback=bool(p is not None and p.uniform_fallback),
                )
            )
    except DivergenceError as e:
        logger.warning("run aborted: %s", e)
        error = str(e)
    except ZohError as e:
        logger.warning("run aborted by objective failure: %s", e)
        error = str(e)

    stacked = np.stack(iterates)
    if error is None:
        x_out = _select_output(cfg.output_rule, stacked, cfg.output_a, rng)
    else:
        x_out = stacked[-1].copy()
    return RunTrace(
        records=records,
        x_out=x_out,
        iterates=stacked,
        p_bar_T=float(np.mean(p_bars)) if p_bars else None,
        fallback_count=fallbacks,
        wall_time=time.perf_counter() - start,
        error=error,
    )


def zo_hgd(obj: Objective, x0: Any, cfg: HgdConfig) -> RunTrace:
    """Hybrid RGE/CGE descent with importance-sampled coordinates.

    Configuration mistakes raise ``OptimizeConfigError``. Failures during the run
    (divergence, objective errors) return the partial trace with ``error`` set.
    """
    return _run(obj, x0, cfg)


def zo_sgd(obj: Objective, x0: Any, cfg: HgdConfig) -> RunTrace:
    """ZO-HGD without coordinate estimates: n_c = 0, α = 1."""
    if cfg.rge is None:
        raise OptimizeConfigError("zo_sgd needs an rge config")
    return zo_hgd(obj, x0, replace(cfg, n_c=0, alpha=AlphaPolicy.constant(1.0)))


def zo_scd(obj: Objective, x0: Any, cfg: HgdConfig) -> RunTrace:
    """ZO-HGD without random directions: uniform p_i = n_c/d, α = 0."""
    return zo_hgd(
        obj,
        x0,
        replace(cfg, rge=None, alpha=AlphaPolicy.constant(0.0), sampling=SamplingMode.UNIFORM),
    )


def zo_signsgd(obj: Objective, x0: Any, cfg: HgdConfig) -> RunTrace:
    """x_{t+1} = x_t − η_t·sign(RGE) with sign(0) = 0."""
    if cfg.rge is None:
        raise OptimizeConfigError("zo_signsgd needs an rge config")
    return _run(obj, x0, replace(cfg, n_c=0, alpha=AlphaPolicy.constant(1.0)), sign_update=True)


METHODS = {
    "zo_hgd": zo_hgd,
    "zo_sgd": zo_sgd,
    "zo_scd": zo_scd,
    "zo_signsgd": zo_signsgd,
}


def first_crossing(values: Sequence[Optional[float]], threshold: float) -> Optional[int]:
    """Index of the first value strictly below ``threshold``, or None."""
    for i, v in enumerate(values):
        if v is not None and v < threshold:
            return i
    return None
