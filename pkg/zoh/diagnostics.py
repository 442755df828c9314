"""Closed-form variance, second-moment and inner-product bounds of the estimators,
and the Monte-Carlo moments they are checked against."""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import DiagnosticsError
from .estimators import (
    CgeConfig,
    EstimatorKind,
    GradientEstimate,
    RgeConfig,
    cge_full,
    cge_sampled,
    hge,
    rge,
)
from .importance import ProbabilityVector, sample_coordinate_set
from .objectives import Objective, Vector

logger = logging.getLogger(__name__)

SE_SLACK = 3.0
CHUNK_TRIALS = 1024
_SCALARS = ("variance", "sqnorm", "inner")
LIPSCHITZ_PAIRS = 200
LIPSCHITZ_TOLERANCE = 1e-9


@dataclass(frozen=True)
class BoundInputs:
    L: float
    zeta: float
    d: int
    n_r: int
    batch_r: int
    batch_c: int
    mu_r: float
    mu_c: Vector
    p: Vector
    grad_at_x: Vector

    def __post_init__(self) -> None:
        for name in ("mu_c", "p", "grad_at_x"):
            arr = np.array(getattr(self, name), dtype=float).ravel()
            if arr.size != self.d:
                raise DiagnosticsError(f"{name} has {arr.size} entries, expected {self.d}")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def sigma_sq(self) -> float:
        return self.d * self.zeta ** 2

    @property
    def d_nr(self) -> float:
        if self.n_r < 1:
            raise DiagnosticsError("d_nr needs n_r >= 1")
        return 1.0 + self.d / self.n_r

    @property
    def P_bar(self) -> float:
        return float(np.mean(1.0 / self.p))

    @property
    def grad_sq(self) -> float:
        return float(self.grad_at_x @ self.grad_at_x)

    @classmethod
    def from_objective(
        cls,
        obj: Objective,
        x: Any,
        rge_cfg: RgeConfig,
        cge_cfg: CgeConfig,
        p: ProbabilityVector,
        lipschitz_scale: float = 1.0,
    ) -> "BoundInputs":
        """Bound inputs from the objective's exact metadata; refuses to estimate unknowns."""
        meta = obj.metadata
        if meta.lipschitz_L is None or meta.coord_variance_zeta is None:
            raise DiagnosticsError(f"{obj.name}: bounds need known L and zeta")
        if obj.exact is None:
            raise DiagnosticsError(f"{obj.name}: bounds need an exact gradient oracle")
        x = obj.check_point(x)
        return cls(
            L=meta.lipschitz_L * lipschitz_scale,
            zeta=meta.coord_variance_zeta,
            d=obj.dimension,
            n_r=rge_cfg.n_r,
            batch_r=rge_cfg.batch_size_r,
            batch_c=cge_cfg.batch_size_c,
            mu_r=rge_cfg.mu_r,
            mu_c=cge_cfg.mu_c,
            p=p.p,
            grad_at_x=obj.exact.gradient(x),
        )


def _check_p(inp: BoundInputs) -> None:
    if np.any(inp.p <= 0):
        raise DiagnosticsError("bounds need every p_i > 0")


def _rge_smoothing_factor(inp: BoundInputs) -> float:
    return 1.0 + 2.0 / inp.batch_r + 2.0 / (inp.n_r * inp.batch_r)


def rge_variance_bound(inp: BoundInputs) -> float:
    """E‖∇_r − ∇f‖² bound."""
    noise = (2.0 / inp.batch_r) * inp.d_nr * (inp.grad_sq + inp.sigma_sq)
    smoothing = _rge_smoothing_factor(inp) * (inp.mu_r * inp.L * inp.d) ** 2 / 4.0
    return noise + smoothing


def cge_variance_bound(inp: BoundInputs) -> float:
    """E‖∇_c − ∇f‖² bound for the importance-sampled CGE."""
    _check_p(inp)
    g = inp.grad_at_x
    smooth = inp.L ** 2 * inp.mu_c ** 2 / 2.0
    per_coord = 2.0 * g ** 2 + (3.0 / inp.batch_c) * (inp.zeta ** 2 + smooth) + smooth
    return float(np.sum(per_coord / inp.p) - 2.0 * inp.grad_sq)


def hge_variance_bound(inp: BoundInputs, alpha: float) -> float:
    if not 0.0 <= alpha <= 1.0:
        raise DiagnosticsError("alpha must lie in [0, 1]")
    total = 0.0
    if alpha > 0:
        total += 2.0 * alpha ** 2 * rge_variance_bound(inp)
    if alpha < 1:
        total += 2.0 * (1.0 - alpha) ** 2 * cge_variance_bound(inp)
    return total


def sqnorm_bounds(inp: BoundInputs) -> Tuple[float, float]:
    """Bounds on E‖∇_r‖² and E‖∇_c‖²."""
    _check_p(inp)
    rge_bound = (
        (2.0 + 4.0 / inp.batch_r * inp.d_nr) * inp.grad_sq
        + 4.0 * inp.sigma_sq / inp.batch_r * inp.d_nr
        + _rge_smoothing_factor(inp) * (inp.mu_r * inp.L * inp.d) ** 2 / 2.0
    )
    g = inp.grad_at_x
    smooth = inp.L ** 2 * inp.mu_c ** 2 / 2.0 * (1.0 + 3.0 / inp.batch_c)
    cge_bound = float(np.sum((2.0 * g ** 2 + 3.0 * inp.zeta ** 2 / inp.batch_c + smooth) / inp.p))
    return float(rge_bound), cge_bound


def inner_product_bounds(inp: BoundInputs) -> Tuple[float, float]:
    """Upper bounds on ⟨−∇f, E∇_r⟩ and ⟨−∇f, CGE_full⟩."""
    base = -0.75 * inp.grad_sq
    mu_c = float(np.max(inp.mu_c))
    return (
        base + (inp.mu_r * inp.d * inp.L) ** 2 / 4.0,
        base + inp.L ** 2 * inp.d * mu_c ** 2,
    )


def coarse_sqnorm_bounds(inp: BoundInputs, G: float) -> Tuple[float, float]:
    """Bounded-gradient forms 6(G²+σ²)·d_nr and 6(G²+σ²)/c̄."""
    _check_p(inp)
    scale = 6.0 * (G * G + inp.sigma_sq)
    return scale * inp.d_nr, scale / float(inp.p.min())


@dataclass(frozen=True)
class EstimatorSpec:
    kind: EstimatorKind
    rge: Optional[RgeConfig] = None
    cge: Optional[CgeConfig] = None
    p: Optional[ProbabilityVector] = None
    alpha: float = 0.5

    def __post_init__(self) -> None:
        kind = EstimatorKind(self.kind)
        object.__setattr__(self, "kind", kind)
        if kind in (EstimatorKind.RGE, EstimatorKind.HGE) and self.rge is None:
            raise DiagnosticsError(f"{kind.value} needs an rge config")
        if kind is not EstimatorKind.RGE and self.cge is None:
            raise DiagnosticsError(f"{kind.value} needs a cge config")
        if kind in (EstimatorKind.CGE_SAMPLED, EstimatorKind.HGE) and self.p is None:
            raise DiagnosticsError(f"{kind.value} needs probabilities")

    def draw(self, obj: Objective, x: Vector, rng: np.random.Generator) -> GradientEstimate:
        if self.kind is EstimatorKind.RGE:
            return rge(obj, x, self.rge, rng)
        if self.kind is EstimatorKind.CGE_FULL:
            return cge_full(obj, x, self.cge, rng)
        sampled = cge_sampled(obj, x, self.cge, sample_coordinate_set(self.p, rng), self.p, rng)
        if self.kind is EstimatorKind.CGE_SAMPLED:
            return sampled
        return hge(rge(obj, x, self.rge, rng), sampled, self.alpha)


@dataclass
class _Accumulator:
    """Running sums merged in a fixed order."""

    count: int = 0
    vec_sum: Optional[Vector] = None
    vec_sq: Optional[Vector] = None
    sums: Dict[str, float] = field(default_factory=lambda: {k: 0.0 for k in _SCALARS})
    squares: Dict[str, float] = field(default_factory=lambda: {k: 0.0 for k in _SCALARS})

    def add(self, estimate: Vector, grad: Vector) -> None:
        if self.vec_sum is None:
            self.vec_sum = np.zeros_like(estimate)
            self.vec_sq = np.zeros_like(estimate)
        self.count += 1
        self.vec_sum += estimate
        self.vec_sq += estimate * estimate
        dev = estimate - grad
        values = {"variance": float(dev @ dev), "sqnorm": float(estimate @ estimate), "inner": float(-grad @ estimate)}
        for key, value in values.items():
            self.sums[key] += value
            self.squares[key] += value * value

    def merge(self, other: "_Accumulator") -> None:
        if other.count == 0:
            return
        if self.vec_sum is None:
            self.vec_sum = np.zeros_like(other.vec_sum)
            self.vec_sq = np.zeros_like(other.vec_sq)
        self.count += other.count
        self.vec_sum += other.vec_sum
        self.vec_sq += other.vec_sq
        for key in _SCALARS:
            self.sums[key] += other.sums[key]
            self.squares[key] += other.squares[key]


def _mean_and_se(total: Any, total_sq: Any, n: int) -> Tuple[Any, Any]:
    mean = total / n
    if n < 2:
        return mean, np.zeros_like(mean) if isinstance(mean, np.ndarray) else 0.0
    var = np.maximum(total_sq - n * mean * mean, 0.0) / (n - 1)
    return mean, np.sqrt(var / n)


@dataclass(frozen=True)
class MomentEstimate:
    """Sample statistics of an estimator at one point."""

    trials: int
    mean: Vector
    mean_se: Vector
    variance: float
    variance_se: float
    sqnorm: float
    sqnorm_se: float
    inner: float
    inner_se: float


def empirical_moments(
    obj: Objective,
    x: Any,
    spec: EstimatorSpec,
    trials: int,
    rng: np.random.Generator,
    jobs: int = 1,
) -> MomentEstimate:
    """Monte-Carlo mean, E‖ĝ−∇f‖², E‖ĝ‖² and E⟨−∇f, ĝ⟩ with standard errors.

    Trials are split into fixed-size chunks with spawned seed streams, so the result
    does not depend on ``jobs``.
    """
    if trials < 1:
        raise DiagnosticsError("trials must be at least 1")
    if obj.exact is None:
        raise DiagnosticsError(f"{obj.name}: empirical moments need an exact gradient oracle")
    x = obj.check_point(x)
    grad = obj.exact.gradient(x)

    sizes = [CHUNK_TRIALS] * (trials // CHUNK_TRIALS)
    if trials % CHUNK_TRIALS:
        sizes.append(trials % CHUNK_TRIALS)
    streams = np.random.SeedSequence(int(rng.integers(2 ** 63))).spawn(len(sizes))

    def run_chunk(job: Tuple[int, np.random.SeedSequence]) -> _Accumulator:
        size, seq = job
        chunk_rng = np.random.default_rng(seq)
        acc = _Accumulator()
        for _ in range(size):
            acc.add(spec.draw(obj, x, chunk_rng).vector, grad)
        return acc

    jobs_list = list(zip(sizes, streams))
    if jobs > 1 and len(jobs_list) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            parts = list(pool.map(run_chunk, jobs_list))
    else:
        parts = [run_chunk(job) for job in jobs_list]

    total = _Accumulator()
    for part in parts:
        total.merge(part)

    n = total.count
    mean, mean_se = _mean_and_se(total.vec_sum, total.vec_sq, n)
    stats = {k: _mean_and_se(total.sums[k], total.squares[k], n) for k in _SCALARS}
    return MomentEstimate(
        trials=n,
        mean=mean,
        mean_se=mean_se,
        variance=float(stats["variance"][0]),
        variance_se=float(stats["variance"][1]),
        sqnorm=float(stats["sqnorm"][0]),
        sqnorm_se=float(stats["sqnorm"][1]),
        inner=float(stats["inner"][0]),
        inner_se=float(stats["inner"][1]),
    )


def alpha_sweep(
    obj: Objective,
    x: Any,
    rge_cfg: RgeConfig,
    cge_cfg: CgeConfig,
    p: ProbabilityVector,
    alphas: Sequence[float],
    trials: int,
    rng: np.random.Generator,
) -> List[Tuple[float, float]]:
    """Empirical E‖α∇_r + (1−α)∇_c − ∇f‖² over ``alphas`` from one shared set of draws."""
    if trials < 1:
        raise DiagnosticsError("trials must be at least 1")
    if obj.exact is None:
        raise DiagnosticsError(f"{obj.name}: alpha sweep needs an exact gradient oracle")
    x = obj.check_point(x)
    grad = obj.exact.gradient(x)
    r_dev = np.empty((trials, obj.dimension))
    c_dev = np.empty((trials, obj.dimension))
    for i in range(trials):
        r_dev[i] = rge(obj, x, rge_cfg, rng).vector - grad
        c_dev[i] = cge_sampled(obj, x, cge_cfg, sample_coordinate_set(p, rng), p, rng).vector - grad
    curve = []
    for alpha in alphas:
        dev = alpha * r_dev + (1.0 - alpha) * c_dev
        curve.append((float(alpha), float(np.mean(np.sum(dev * dev, axis=1)))))
    return curve


def lipschitz_certificate(
    obj: Objective,
    x: Any,
    pairs: int = LIPSCHITZ_PAIRS,
    radius: float = 1.0,
    rng: Optional[np.random.Generator] = None,
) -> float:
    """Largest ‖∇f(y) − ∇f(z)‖ / ‖y − z‖ over random pairs in a ball around x."""
    if obj.exact is None:
        raise DiagnosticsError(f"{obj.name}: Lipschitz certificate needs an exact gradient oracle")
    x = obj.check_point(x)
    rng = rng if rng is not None else np.random.default_rng(0)
    worst = 0.0
    for _ in range(pairs):
        y = x + radius * rng.uniform(-1.0, 1.0, obj.dimension)
        z = x + radius * rng.uniform(-1.0, 1.0, obj.dimension)
        gap = np.linalg.norm(y - z)
        if gap == 0:
            continue
        worst = max(worst, float(np.linalg.norm(obj.exact.gradient(y) - obj.exact.gradient(z)) / gap))
    return worst


@dataclass(frozen=True)
class BoundCheck:
    name: str
    bound: float
    empirical: float
    std_error: float

    @property
    def passed(self) -> bool:
        return self.empirical <= self.bound + SE_SLACK * self.std_error

    def to_dict(self) -> Dict[str, Any]:
        return {**asdict(self), "passed": self.passed}


@dataclass
class BoundReport:
    objective: Dict[str, Any]
    point: List[float]
    settings: Dict[str, Any]
    checks: List[BoundCheck]

    @property
    def passed(self) -> bool:
        return all(check.passed for check in self.checks)

    @property
    def failures(self) -> List[str]:
        return [check.name for check in self.checks if not check.passed]

    def check(self, name: str) -> BoundCheck:
        for item in self.checks:
            if item.name == name:
                return item
        raise KeyError(name)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "objective": self.objective,
            "point": self.point,
            "settings": self.settings,
            "passed": self.passed,
            "checks": [check.to_dict() for check in self.checks],
        }


def check_bounds(
    obj: Objective,
    x: Any,
    rge_cfg: RgeConfig,
    cge_cfg: CgeConfig,
    p: ProbabilityVector,
    alpha: float,
    trials: int,
    rng: np.random.Generator,
    lipschitz_scale: float = 1.0,
    jobs: int = 1,
) -> BoundReport:
    """Run every empirical-vs-closed-form comparison for one configuration."""
    x = obj.check_point(x)
    inp = BoundInputs.from_objective(obj, x, rge_cfg, cge_cfg, p, lipschitz_scale)

    def moments(kind: EstimatorKind) -> MomentEstimate:
        spec = EstimatorSpec(kind, rge=rge_cfg, cge=cge_cfg, p=p, alpha=alpha)
        return empirical_moments(obj, x, spec, trials, rng, jobs=jobs)

    m_rge = moments(EstimatorKind.RGE)
    m_cge = moments(EstimatorKind.CGE_SAMPLED)
    m_hge = moments(EstimatorKind.HGE)
    m_full = moments(EstimatorKind.CGE_FULL)
    rge_sq, cge_sq = sqnorm_bounds(inp)
    inner_r, inner_c = inner_product_bounds(inp)
    observed_L = lipschitz_certificate(obj, x, rng=rng)

    checks = [
        BoundCheck("rge_variance", rge_variance_bound(inp), m_rge.variance, m_rge.variance_se),
        BoundCheck("cge_variance", cge_variance_bound(inp), m_cge.variance, m_cge.variance_se),
        BoundCheck("hge_variance", hge_variance_bound(inp, alpha), m_hge.variance, m_hge.variance_se),
        BoundCheck("rge_sqnorm", rge_sq, m_rge.sqnorm, m_rge.sqnorm_se),
        BoundCheck("cge_sqnorm", cge_sq, m_cge.sqnorm, m_cge.sqnorm_se),
        BoundCheck("rge_inner", inner_r, m_rge.inner, m_rge.inner_se),
        BoundCheck("cge_inner", inner_c, m_full.inner, m_full.inner_se),
        BoundCheck("lipschitz", inp.L * (1.0 + LIPSCHITZ_TOLERANCE), observed_L, 0.0),
    ]
    report = BoundReport(
        objective=obj.describe(),
        point=[float(v) for v in x],
        settings={
            "L": inp.L,
            "zeta": inp.zeta,
            "n_r": rge_cfg.n_r,
            "mu_r": rge_cfg.mu_r,
            "mu_c": float(np.max(cge_cfg.mu_c)),
            "batch_r": rge_cfg.batch_size_r,
            "batch_c": cge_cfg.batch_size_c,
            "n_c": p.budget_nc,
            "alpha": alpha,
            "trials": trials,
            "d_nr": inp.d_nr,
            "P_bar": inp.P_bar,
        },
        checks=checks,
    )
    if not report.passed:
        logger.warning("bound check failed for %s: %s", obj.name, ", ".join(report.failures))
    return report

