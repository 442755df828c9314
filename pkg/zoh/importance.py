"""Importance probabilities for coordinate selection, the unbiased sparsifier, and the
closed-form choices of α, step size and smoothing radii."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Any, Optional, Tuple, Union

import numpy as np
from numpy.typing import NDArray

from .errors import ImportanceError

logger = logging.getLogger(__name__)

Vector = NDArray[np.float64]

PROBABILITY_FLOOR = 1e-6


@dataclass(frozen=True)
class ProbabilityVector:
    """Bernoulli inclusion probabilities p_i for the coordinate set I."""

    p: Vector
    budget_nc: int
    k_star: int = 0
    uniform_fallback: bool = False

    def __post_init__(self) -> None:
        probs = np.array(self.p, dtype=float).ravel()
        if probs.size == 0:
            raise ImportanceError("probability vector is empty")
        if np.any(probs <= 0) or np.any(probs > 1):
            raise ImportanceError("probabilities must lie in (0, 1]")
        probs.setflags(write=False)
        object.__setattr__(self, "p", probs)

    @classmethod
    def uniform(cls, d: int, n_c: int) -> "ProbabilityVector":
        if not 1 <= n_c <= d:
            raise ImportanceError(f"budget n_c={n_c} must lie in [1, {d}]")
        return cls(np.full(d, n_c / d), budget_nc=n_c)

    @property
    def dimension(self) -> int:
        return int(self.p.size)

    @property
    def p_bar(self) -> float:
        """Mean inverse probability (1/d) Σ 1/p_i."""
        return float(np.mean(1.0 / self.p))

    @property
    def c_min(self) -> float:
        return float(self.p.min())

    @property
    def expected_size(self) -> float:
        return float(self.p.sum())


def _probs(p: Union[ProbabilityVector, Any]) -> Vector:
    return p.p if isinstance(p, ProbabilityVector) else np.asarray(p, dtype=float)


def sparsification_probabilities(g: Any, n_c: int, floor: float = PROBABILITY_FLOOR) -> ProbabilityVector:
    """Minimize Σ g_i²/p_i subject to Σ p_i ≤ n_c and 0 < p_i ≤ 1.

    The k largest magnitudes get p_i = 1, with k the smallest index (0-based, over the
    magnitudes sorted descending) satisfying s_k·(n_c − k) ≤ Σ_{j≥k} s_j. The rest are
    proportional to |g_i|. Ties in |g_i| rank the lower index first. If the budget left
    after saturation exceeds the nonzero tail (tail sum 0 at k), the remaining n_c − k is
    spread evenly over the zero entries so Σ p_i = n_c still holds. Otherwise zero entries
    sit at ``floor``. Entries are floored afterwards without renormalizing.
    """
    g = np.asarray(g, dtype=float).ravel()
    d = g.size
    if not 1 <= n_c <= d:
        raise ImportanceError(f"budget n_c={n_c} must lie in [1, {d}]")

    mags = np.abs(g)
    if not np.any(mags > 0):
        logger.debug("all-zero gradient probe, using uniform probabilities")
        return ProbabilityVector(np.full(d, n_c / d), budget_nc=n_c, uniform_fallback=True)

    order = np.argsort(-mags, kind="stable")
    sorted_mags = mags[order]
    tail = np.cumsum(sorted_mags[::-1])[::-1]
    ks = np.arange(n_c)
    feasible = sorted_mags[:n_c] * (n_c - ks) <= tail[:n_c]
    k = int(np.argmax(feasible))

    p = np.empty(d)
    p[order[:k]] = 1.0
    rest = order[k:]
    if tail[k] > 0:
        p[rest] = mags[rest] * (n_c - k) / tail[k]
    else:
        p[rest] = (n_c - k) / (d - k)
    p = np.clip(np.maximum(p, floor), None, 1.0)
    return ProbabilityVector(p, budget_nc=n_c, k_star=k)


def sample_coordinate_set(p: ProbabilityVector, rng: np.random.Generator) -> NDArray[np.int64]:
    """Independent Bernoulli(p_i) inclusion of every coordinate."""
    return np.flatnonzero(rng.random(p.dimension) < p.p)


def sparsify(g: Any, p: ProbabilityVector, rng: np.random.Generator) -> Vector:
    """Q(g)_i = Z_i g_i / p_i with Z_i ~ Bernoulli(p_i)."""
    g = np.asarray(g, dtype=float).ravel()
    if g.size != p.dimension:
        raise ImportanceError("g and p have different dimensions")
    keep = rng.random(p.dimension) < p.p
    return np.where(keep, g / p.p, 0.0)


def optimal_alpha(n_r: int, p: Union[ProbabilityVector, Any], d: int) -> float:
    """α* = [1 + (1 + d/n_r)/P̄]⁻¹; 0 when no random directions are used."""
    if n_r < 0:
        raise ImportanceError("n_r must be nonnegative")
    if n_r == 0:
        return 0.0
    probs = _probs(p)
    if np.any(probs <= 0):
        raise ImportanceError("optimal alpha needs every p_i > 0")
    p_bar = float(np.mean(1.0 / probs))
    return 1.0 / (1.0 + (1.0 + d / n_r) / p_bar)


def convex_alpha(c_bar: float, d_nr: float) -> float:
    """α = [1 + c̄·d_nr]⁻¹, the coefficient of the convex analysis."""
    if not 0 < c_bar <= 1:
        raise ImportanceError("c_bar must lie in (0, 1]")
    if d_nr < 1:
        raise ImportanceError("d_nr must be at least 1")
    return 1.0 / (1.0 + c_bar * d_nr)


class AlphaMode(str, Enum):
    OPTIMAL = "optimal"
    CONSTANT = "constant"
    LINEAR_RAMP = "linear_ramp"
    CONVEX = "convex"


@dataclass(frozen=True)
class AlphaPolicy:
    mode: AlphaMode = AlphaMode.OPTIMAL
    value: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "mode", AlphaMode(self.mode))
        if self.mode is AlphaMode.CONSTANT and not 0.0 <= self.value <= 1.0:
            raise ImportanceError(f"constant alpha must lie in [0, 1], got {self.value}")

    @classmethod
    def constant(cls, value: float) -> "AlphaPolicy":
        return cls(AlphaMode.CONSTANT, value)

    def resolve(self, t: int, T: int, p: Optional[ProbabilityVector], n_r: int, d: int) -> float:
        """α_t for iteration t (1-based). ``p`` is None when no coordinates are sampled."""
        if self.mode is AlphaMode.CONSTANT:
            return float(self.value)
        if self.mode is AlphaMode.LINEAR_RAMP:
            return t / T
        if p is None or n_r == 0:
            return 1.0 if p is None else 0.0
        if self.mode is AlphaMode.OPTIMAL:
            return optimal_alpha(n_r, p, d)
        return convex_alpha(p.c_min, 1.0 + d / n_r)


def theoretical_step_size(L: float, c_min: float, d_nr: float) -> float:
    """η = (1/24L)·min{3·c_min, 1/d_nr}."""
    if not L > 0:
        raise ImportanceError("L must be positive")
    if not 0 < c_min <= 1:
        raise ImportanceError("c_min must lie in (0, 1]")
    if d_nr < 1:
        raise ImportanceError("d_nr must be at least 1")
    return min(3.0 * c_min, 1.0 / d_nr) / (24.0 * L)


def convex_step_size(
    R: float,
    T: int,
    alpha: float,
    G: float,
    sigma_sq: float,
    d_nr: float,
    c_bar: float,
) -> float:
    """Constant step minimizing the convex regret bound: R / √(12·T·K)."""
    if not R > 0 or T < 1:
        raise ImportanceError("R must be positive and T at least 1")
    if not 0 < c_bar <= 1:
        raise ImportanceError("c_bar must lie in (0, 1]")
    scale = G * G + sigma_sq
    k = alpha ** 2 * scale * d_nr + (1.0 - alpha) ** 2 * scale / c_bar
    if not k > 0:
        raise ImportanceError("convex step size needs G² + σ² > 0")
    return R / math.sqrt(12.0 * T * k)


class SmoothingMode(str, Enum):
    NONCONVEX = "nonconvex"
    CONVEX = "convex"
    STRONGLY_CONVEX = "strongly_convex"


@dataclass(frozen=True)
class SmoothingParams:
    d: int
    T: int
    n_r: int
    L: Optional[float] = None
    sigma: Optional[float] = None
    sigma_bar: Optional[float] = None
    p_bar: float = 1.0
    c_bar: float = 1.0

    @property
    def d_nr(self) -> float:
        return 1.0 + self.d / self.n_r


def theoretical_smoothing(mode: Union[SmoothingMode, str], params: SmoothingParams) -> Tuple[float, float]:
    """(μ_c, μ_r) with unit constants."""
    mode = SmoothingMode(mode)
    if params.d < 1 or params.T < 1 or params.n_r < 1:
        raise ImportanceError("smoothing needs d, T and n_r of at least 1")
    d, T, d_nr = params.d, params.T, params.d_nr
    sqrt_d = math.sqrt(d)

    if mode is SmoothingMode.NONCONVEX:
        if params.L is None or params.sigma is None:
            raise ImportanceError("nonconvex smoothing needs L and sigma")
        mu_c = (d_nr / (d * d * T)) ** 0.25 * (1.0 + d_nr / params.p_bar) ** -0.25
        if params.sigma > 0:
            mu_c = min(mu_c, params.sigma / (params.L * sqrt_d))
        return mu_c, 2.0 * mu_c / sqrt_d

    mu_c = math.sqrt(d_nr / (d * T * (1.0 + params.c_bar * d_nr)))
    if mode is SmoothingMode.CONVEX:
        return mu_c, 2.0 * mu_c / sqrt_d
    if params.L is None or not params.sigma_bar:
        raise ImportanceError("strongly convex smoothing needs L and sigma_bar")
    return mu_c, mu_c * math.sqrt(d * params.L / params.sigma_bar)
