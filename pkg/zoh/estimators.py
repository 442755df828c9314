"""Finite-difference gradient estimators: RGE, full and sampled CGE, and their hybrid."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Any, Optional, Sequence, Union

import numpy as np

from .errors import EstimatorError
from .importance import ProbabilityVector
from .objectives import Objective, QueryCounter, Vector

logger = logging.getLogger(__name__)


class EstimatorKind(str, Enum):
    RGE = "rge"
    CGE_FULL = "cge_full"
    CGE_SAMPLED = "cge_sampled"
    HGE = "hge"


@dataclass(frozen=True)
class RgeConfig:
    n_r: int
    mu_r: float
    batch_size_r: int = 1

    def __post_init__(self) -> None:
        if self.n_r < 1:
            raise EstimatorError("n_r must be at least 1")
        if not self.mu_r > 0:
            raise EstimatorError("mu_r must be positive")
        if self.batch_size_r < 1:
            raise EstimatorError("batch_size_r must be at least 1")


@dataclass(frozen=True)
class CgeConfig:
    """Per-coordinate smoothing radii μ_c,i and the CGE mini-batch size."""

    mu_c: Vector
    batch_size_c: int = 1

    def __post_init__(self) -> None:
        mu = np.array(self.mu_c, dtype=float).ravel()
        if mu.size == 0 or not np.all(mu > 0):
            raise EstimatorError("every mu_c entry must be positive")
        if self.batch_size_c < 1:
            raise EstimatorError("batch_size_c must be at least 1")
        mu.setflags(write=False)
        object.__setattr__(self, "mu_c", mu)

    @classmethod
    def uniform(cls, d: int, mu_c: float, batch_size_c: int = 1) -> "CgeConfig":
        return cls(mu_c=np.full(d, float(mu_c)), batch_size_c=batch_size_c)

    @property
    def dimension(self) -> int:
        return int(self.mu_c.size)


@dataclass(frozen=True)
class GradientEstimate:
    vector: Vector
    kind: EstimatorKind
    queries_used: int
    alpha_used: Optional[float] = None

    @property
    def dimension(self) -> int:
        return int(self.vector.size)


def sample_unit_sphere(d: int, rng: np.random.Generator) -> Vector:
    """Uniform direction on the unit sphere via a normalized Gaussian draw."""
    if d < 1:
        raise EstimatorError("sphere dimension must be at least 1")
    while True:
        u = rng.standard_normal(d)
        norm = np.linalg.norm(u)
        if norm > 0:
            return u / norm


def _forward(counter: Optional[QueryCounter], local: QueryCounter) -> None:
    if counter is not None:
        counter.record(local.actual_evaluations)


def rge(
    obj: Objective,
    x: Any,
    cfg: RgeConfig,
    rng: np.random.Generator,
    counter: Optional[QueryCounter] = None,
) -> GradientEstimate:
    """Mini-batch forward-difference RGE; F(x; ξ) is evaluated once per sample and reused."""
    x = obj.check_point(x)
    d = obj.dimension
    local = QueryCounter()
    total = np.zeros(d)
    try:
        for xi in obj.sample_batch(rng, cfg.batch_size_r):
            directions = np.stack([sample_unit_sphere(d, rng) for _ in range(cfg.n_r)])
            base = obj.evaluate(x, xi, local)
            values = obj.evaluate_batch(x + cfg.mu_r * directions, xi, local)
            slopes = (d / cfg.mu_r) * (values - base)
            total += slopes @ directions / cfg.n_r
    finally:
        _forward(counter, local)
    return GradientEstimate(total / cfg.batch_size_r, EstimatorKind.RGE, local.actual_evaluations)


def cge_component(
    obj: Objective,
    x: Any,
    i: int,
    mu_ci: float,
    xi: Any,
    counter: Optional[QueryCounter] = None,
) -> float:
    x = obj.check_point(x)
    if not 0 <= i < obj.dimension:
        raise EstimatorError(f"coordinate {i} out of range for dimension {obj.dimension}")
    if not mu_ci > 0:
        raise EstimatorError("mu_c,i must be positive")
    step = np.zeros(obj.dimension)
    step[i] = mu_ci
    plus, minus = obj.evaluate_batch(np.stack([x + step, x - step]), xi, counter)
    return float((plus - minus) / (2.0 * mu_ci))


def _central_differences(
    obj: Objective,
    x: Vector,
    coords: np.ndarray,
    mu: Vector,
    xi: Any,
    counter: QueryCounter,
) -> Vector:
    """Central differences along ``coords`` for one sample, 2·len(coords) queries."""
    k = coords.size
    steps = np.zeros((k, obj.dimension))
    steps[np.arange(k), coords] = mu[coords]
    values = obj.evaluate_batch(np.concatenate([x + steps, x - steps]), xi, counter)
    return (values[:k] - values[k:]) / (2.0 * mu[coords])


def _check_cge(obj: Objective, cfg: CgeConfig) -> None:
    if cfg.dimension != obj.dimension:
        raise EstimatorError(f"mu_c has {cfg.dimension} entries, objective has dimension {obj.dimension}")


def cge_full(
    obj: Objective,
    x: Any,
    cfg: CgeConfig,
    rng: np.random.Generator,
    counter: Optional[QueryCounter] = None,
) -> GradientEstimate:
    x = obj.check_point(x)
    _check_cge(obj, cfg)
    coords = np.arange(obj.dimension)
    local = QueryCounter()
    total = np.zeros(obj.dimension)
    try:
        for xi in obj.sample_batch(rng, cfg.batch_size_c):
            total += _central_differences(obj, x, coords, cfg.mu_c, xi, local)
    finally:
        _forward(counter, local)
    return GradientEstimate(total / cfg.batch_size_c, EstimatorKind.CGE_FULL, local.actual_evaluations)


def cge_sampled(
    obj: Objective,
    x: Any,
    cfg: CgeConfig,
    coords: Sequence[int],
    p: Union[ProbabilityVector, Vector],
    rng: np.random.Generator,
    counter: Optional[QueryCounter] = None,
) -> GradientEstimate:
    """Σ_{i∈I} CGE_i / p_i; zero outside I. An empty I costs nothing and draws no samples."""
    x = obj.check_point(x)
    _check_cge(obj, cfg)
    probs = p.p if isinstance(p, ProbabilityVector) else np.asarray(p, dtype=float)
    if probs.shape != (obj.dimension,):
        raise EstimatorError("probability vector does not match the objective dimension")
    idx = np.unique(np.asarray(coords, dtype=int))
    vector = np.zeros(obj.dimension)
    if idx.size == 0:
        return GradientEstimate(vector, EstimatorKind.CGE_SAMPLED, 0)
    if idx[0] < 0 or idx[-1] >= obj.dimension:
        raise EstimatorError("selected coordinate out of range")
    if np.any(probs[idx] <= 0):
        raise EstimatorError("selected coordinate has zero probability; check the probability floor")

    local = QueryCounter()
    total = np.zeros(idx.size)
    try:
        for xi in obj.sample_batch(rng, cfg.batch_size_c):
            total += _central_differences(obj, x, idx, cfg.mu_c, xi, local)
    finally:
        _forward(counter, local)
    vector[idx] = total / cfg.batch_size_c / probs[idx]
    return GradientEstimate(vector, EstimatorKind.CGE_SAMPLED, local.actual_evaluations)


def hge(rge_est: GradientEstimate, cge_est: GradientEstimate, alpha: float) -> GradientEstimate:
    if not 0.0 <= alpha <= 1.0:
        raise EstimatorError(f"alpha must lie in [0, 1], got {alpha}")
    if rge_est.dimension != cge_est.dimension:
        raise EstimatorError("RGE and CGE estimates have different dimensions")
    vector = alpha * rge_est.vector + (1.0 - alpha) * cge_est.vector
    return GradientEstimate(
        vector,
        EstimatorKind.HGE,
        rge_est.queries_used + cge_est.queries_used,
        alpha_used=float(alpha),
    )
