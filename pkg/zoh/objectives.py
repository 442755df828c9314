"""Black-box stochastic objectives F(x; ξ), built-in test problems and query accounting.

Optimizers only ever see ``sample`` / ``evaluate``. The exact oracles attached to the
built-ins exist for tests, traces and bound diagnostics.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, List, Optional, Sequence, Tuple

import numpy as np
from numpy.typing import NDArray
from scipy.special import expit

from .classifier import ToyClassifier
from .errors import ObjectiveError

logger = logging.getLogger(__name__)

Vector = NDArray[np.float64]
Matrix = NDArray[np.float64]

# Fixed stream for uncounted monitoring estimates of f when no exact oracle exists.
MONITOR_SEED = 20_240_601
MONITOR_SAMPLES = 64


@dataclass(frozen=True)
class ObjectiveMetadata:
    """Problem constants; ``None`` means unknown."""

    dimension: int
    lipschitz_L: Optional[float] = None
    coord_variance_zeta: Optional[float] = None
    strong_convexity_sigma_bar: Optional[float] = None
    grad_bound_G: Optional[float] = None
    domain_diameter_R: Optional[float] = None
    f_star: Optional[float] = None

    @property
    def full_variance_sigma_sq(self) -> Optional[float]:
        if self.coord_variance_zeta is None:
            return None
        return self.dimension * self.coord_variance_zeta ** 2


@dataclass
class QueryCounter:
    """Counts evaluations of one run. Owned and mutated by a single thread."""

    actual_evaluations: int = 0
    nominal_fqc: int = 0

    def record(self, n: int = 1) -> None:
        self.actual_evaluations += n

    def add_nominal(self, n: int) -> None:
        self.nominal_fqc += n


@dataclass(frozen=True)
class ExactOracle:
    value: Callable[[Vector], float]
    gradient: Callable[[Vector], Vector]
    per_sample_gradient: Optional[Callable[[Vector, Any], Vector]] = None


class Objective:
    """Stochastic objective f(x) = E_ξ F(x; ξ). Immutable after construction."""

    name = "objective"

    def __init__(self, metadata: ObjectiveMetadata, exact: Optional[ExactOracle] = None) -> None:
        if metadata.dimension <= 0:
            raise ObjectiveError("dimension must be positive")
        self.metadata = metadata
        self.exact = exact

    @property
    def dimension(self) -> int:
        return self.metadata.dimension

    def check_point(self, x: Any) -> Vector:
        arr = np.asarray(x, dtype=float)
        if arr.shape != (self.dimension,):
            raise ObjectiveError(f"{self.name}: expected a point of shape ({self.dimension},), got {arr.shape}")
        return arr

    def sample(self, rng: np.random.Generator) -> Any:
        raise NotImplementedError

    def sample_batch(self, rng: np.random.Generator, size: int) -> List[Any]:
        """Mini-batch drawn i.i.d. with replacement."""
        return [self.sample(rng) for _ in range(size)]

    def _value(self, x: Vector, xi: Any) -> float:
        raise NotImplementedError

    def _values(self, points: Matrix, xi: Any) -> Vector:
        return np.array([self._value(p, xi) for p in points], dtype=float)

    def evaluate(self, x: Any, xi: Any, counter: Optional[QueryCounter] = None) -> float:
        value = self._value(self.check_point(x), xi)
        if counter is not None:
            counter.record(1)
        return float(value)

    def evaluate_batch(self, points: Any, xi: Any, counter: Optional[QueryCounter] = None) -> Vector:
        """Evaluate every row of ``points`` under the same sample; one query per row."""
        arr = np.asarray(points, dtype=float)
        if arr.ndim != 2 or arr.shape[1] != self.dimension:
            raise ObjectiveError(f"{self.name}: expected points of shape (k, {self.dimension}), got {arr.shape}")
        values = self._values(arr, xi)
        if counter is not None:
            counter.record(arr.shape[0])
        return values

    def monitor_value(self, x: Any) -> float:
        """Uncounted f(x) for traces; never consulted by estimators."""
        x = self.check_point(x)
        if self.exact is not None:
            return float(self.exact.value(x))
        rng = np.random.default_rng(MONITOR_SEED)
        return float(np.mean([self._value(x, xi) for xi in self.sample_batch(rng, MONITOR_SAMPLES)]))

    def describe(self) -> dict:
        return {"name": self.name, "dimension": self.dimension}


class FunctionObjective(Objective):
    """Deterministic f(x) wrapped as an objective whose sample is ignored."""

    name = "function"

    def __init__(
        self,
        fn: Callable[[Vector], float],
        metadata: ObjectiveMetadata,
        gradient: Optional[Callable[[Vector], Vector]] = None,
    ) -> None:
        exact = ExactOracle(value=fn, gradient=gradient) if gradient is not None else None
        super().__init__(metadata, exact=exact)
        self._fn = fn

    def sample(self, rng: np.random.Generator) -> None:
        return None

    def _value(self, x: Vector, xi: Any) -> float:
        return float(self._fn(x))

    def monitor_value(self, x: Any) -> float:
        return float(self._fn(self.check_point(x)))


class QuadraticObjective(Objective):
    """F(x; b) = Σ_i diag_i x_i² + b·x with b uniform in [-ζ√3, ζ√3]^d."""

    name = "quadratic"

    def __init__(self, diag: Vector, noise_zeta: float, seed: int) -> None:
        self.diag = np.asarray(diag, dtype=float)
        self.diag.setflags(write=False)
        self.noise_zeta = float(noise_zeta)
        self._half_width = self.noise_zeta * np.sqrt(3.0)
        metadata = ObjectiveMetadata(
            dimension=self.diag.size,
            lipschitz_L=2.0 * float(self.diag.max()),
            coord_variance_zeta=self.noise_zeta,
            strong_convexity_sigma_bar=2.0 * float(self.diag.min()),
            f_star=0.0,
        )
        exact = ExactOracle(
            value=lambda x: float(self.diag @ (x * x)),
            gradient=lambda x: 2.0 * self.diag * x,
            per_sample_gradient=lambda x, b: 2.0 * self.diag * x + b,
        )
        super().__init__(metadata, exact=exact)
        self.seed = seed

    def sample(self, rng: np.random.Generator) -> Vector:
        if self.noise_zeta == 0.0:
            return np.zeros(self.dimension)
        return rng.uniform(-self._half_width, self._half_width, size=self.dimension)

    def _value(self, x: Vector, xi: Vector) -> float:
        return float(self.diag @ (x * x) + xi @ x)

    def _values(self, points: Matrix, xi: Vector) -> Vector:
        return (points * points) @ self.diag + points @ xi

    def describe(self) -> dict:
        return {
            "name": self.name,
            "dimension": self.dimension,
            "diag": self.diag.tolist(),
            "noise_zeta": self.noise_zeta,
            "seed": self.seed,
        }


class LogisticObjective(Objective):
    """F(x; i) = log(1 + exp(-y_i a_i·x)) + (l2_reg/2)‖x‖², i uniform over rows."""

    name = "logistic"

    def __init__(self, features: Matrix, labels: Vector, l2_reg: float) -> None:
        self.features = np.asarray(features, dtype=float)
        self.labels = np.asarray(labels, dtype=float)
        self.features.setflags(write=False)
        self.labels.setflags(write=False)
        self.l2_reg = float(l2_reg)

        row_sq = np.sum(self.features ** 2, axis=1)
        metadata = ObjectiveMetadata(
            dimension=self.features.shape[1],
            lipschitz_L=float(row_sq.max()) / 4.0 + self.l2_reg,
            coord_variance_zeta=float(np.sqrt(np.max(np.mean(self.features ** 2, axis=0)))),
            strong_convexity_sigma_bar=self.l2_reg if self.l2_reg > 0 else None,
        )
        exact = ExactOracle(
            value=self._full_value,
            gradient=self._full_gradient,
            per_sample_gradient=self._sample_gradient,
        )
        super().__init__(metadata, exact=exact)

    @property
    def n_samples(self) -> int:
        return int(self.features.shape[0])

    def sample(self, rng: np.random.Generator) -> int:
        return int(rng.integers(self.n_samples))

    def _value(self, x: Vector, i: int) -> float:
        margin = self.labels[i] * (self.features[i] @ x)
        return float(np.logaddexp(0.0, -margin) + 0.5 * self.l2_reg * (x @ x))

    def _values(self, points: Matrix, i: int) -> Vector:
        margins = self.labels[i] * (points @ self.features[i])
        return np.logaddexp(0.0, -margins) + 0.5 * self.l2_reg * np.sum(points * points, axis=1)

    def _full_value(self, x: Vector) -> float:
        margins = self.labels * (self.features @ x)
        return float(np.mean(np.logaddexp(0.0, -margins)) + 0.5 * self.l2_reg * (x @ x))

    def _full_gradient(self, x: Vector) -> Vector:
        margins = self.labels * (self.features @ x)
        weights = -self.labels * expit(-margins)
        return self.features.T @ weights / self.n_samples + self.l2_reg * x

    def _sample_gradient(self, x: Vector, i: int) -> Vector:
        margin = self.labels[i] * (self.features[i] @ x)
        return -self.labels[i] * expit(-margin) * self.features[i] + self.l2_reg * x

    def describe(self) -> dict:
        return {"name": self.name, "dimension": self.dimension, "n": self.n_samples, "l2_reg": self.l2_reg}


class CWAttackObjective(Objective):
    """Universal perturbation δ against a frozen classifier.

    F(δ; i) = λ·cwloss(x_i + δ) + ‖δ‖², so E_i F = (λ/M) Σ_i cwloss(x_i + δ) + ‖δ‖².
    """

    name = "cw_attack"

    def __init__(
        self,
        classifier: ToyClassifier,
        images: Matrix,
        labels: NDArray[np.int64],
        lam: float,
        kappa: float = 0.0,
    ) -> None:
        self.classifier = classifier
        self.images = np.asarray(images, dtype=float)
        self.labels = np.asarray(labels, dtype=int)
        self.images.setflags(write=False)
        self.labels.setflags(write=False)
        self.lam = float(lam)
        self.kappa = float(kappa)
        exact = ExactOracle(value=self._full_value, gradient=self._full_gradient)
        super().__init__(ObjectiveMetadata(dimension=classifier.input_dim), exact=exact)

    @property
    def n_images(self) -> int:
        return int(self.images.shape[0])

    def margins(self, delta: Any) -> Vector:
        """logit_true − max other logit for every image under δ."""
        delta = self.check_point(delta)
        return self._margins(self.classifier.logits_batch(self.images + delta), self.labels)

    @staticmethod
    def _margins(logits: Matrix, labels: NDArray[np.int64]) -> Vector:
        rows = np.arange(logits.shape[0])
        true = logits[rows, labels]
        others = logits.copy()
        others[rows, labels] = -np.inf
        return true - others.max(axis=1)

    def cw_loss(self, margins: Vector) -> Vector:
        return np.maximum(margins, -self.kappa)

    def success_mask(self, delta: Any) -> NDArray[np.bool_]:
        """True where δ makes the classifier prefer a wrong label."""
        return self.margins(delta) < 0.0

    def sample(self, rng: np.random.Generator) -> int:
        return int(rng.integers(self.n_images))

    def _value(self, delta: Vector, i: int) -> float:
        logits = self.classifier.logits(self.images[i] + delta)[None, :]
        margin = self._margins(logits, self.labels[i : i + 1])[0]
        return float(self.lam * max(margin, -self.kappa) + delta @ delta)

    def _values(self, points: Matrix, i: int) -> Vector:
        logits = self.classifier.logits_batch(self.images[i] + points)
        labels = np.full(points.shape[0], self.labels[i])
        loss = self.cw_loss(self._margins(logits, labels))
        return self.lam * loss + np.sum(points * points, axis=1)

    def _full_value(self, delta: Vector) -> float:
        margins = self._margins(self.classifier.logits_batch(self.images + delta), self.labels)
        return float(self.lam * np.mean(self.cw_loss(margins)) + delta @ delta)

    def _full_gradient(self, delta: Vector) -> Vector:
        """Gradient away from the clamp and argmax kinks."""
        logits = self.classifier.logits_batch(self.images + delta)
        margins = self._margins(logits, self.labels)
        grad = 2.0 * delta
        for i in np.flatnonzero(margins > -self.kappa):
            row = logits[i].copy()
            row[self.labels[i]] = -np.inf
            coeffs = np.zeros(self.classifier.num_classes)
            coeffs[self.labels[i]] = 1.0
            coeffs[int(np.argmax(row))] -= 1.0
            grad = grad + (self.lam / self.n_images) * self.classifier.input_gradient(self.images[i] + delta, coeffs)
        return grad

    def describe(self) -> dict:
        return {
            "name": self.name,
            "dimension": self.dimension,
            "images": self.n_images,
            "lambda": self.lam,
            "kappa": self.kappa,
        }


def make_function(
    fn: Callable[[Vector], float],
    d: int,
    gradient: Optional[Callable[[Vector], Vector]] = None,
    metadata: Optional[ObjectiveMetadata] = None,
) -> FunctionObjective:
    if d <= 0:
        raise ObjectiveError("dimension must be positive")
    meta = metadata if metadata is not None else ObjectiveMetadata(dimension=d, coord_variance_zeta=0.0)
    if meta.dimension != d:
        raise ObjectiveError("metadata dimension does not match d")
    return FunctionObjective(fn, meta, gradient=gradient)


def make_quadratic(d: int, diag: Sequence[float], noise_zeta: float = 0.0, seed: int = 0) -> QuadraticObjective:
    """Σ_i diag_i x_i² with bounded per-sample linear noise of coordinate variance ζ²."""
    if d <= 0:
        raise ObjectiveError("dimension must be positive")
    diag_arr = np.asarray(diag, dtype=float)
    if diag_arr.shape != (d,):
        raise ObjectiveError(f"diag must have length {d}, got {diag_arr.shape}")
    if np.any(diag_arr <= 0):
        raise ObjectiveError("diag entries must be positive")
    if noise_zeta < 0:
        raise ObjectiveError("noise_zeta must be nonnegative")
    return QuadraticObjective(diag_arr, noise_zeta, seed)


def make_logistic(features: Any, labels: Any, l2_reg: float = 0.0) -> LogisticObjective:
    feats = np.asarray(features, dtype=float)
    labs = np.asarray(labels, dtype=float)
    if feats.ndim != 2 or feats.shape[0] == 0 or feats.shape[1] == 0:
        raise ObjectiveError("logistic objective needs a non-empty (n, d) feature matrix")
    if labs.shape != (feats.shape[0],):
        raise ObjectiveError("labels must have one entry per feature row")
    if not np.all(np.isin(labs, (-1.0, 1.0))):
        raise ObjectiveError("labels must be -1 or +1")
    if l2_reg < 0:
        raise ObjectiveError("l2_reg must be nonnegative")
    return LogisticObjective(feats, labs, l2_reg)


def make_cw_attack(
    classifier: ToyClassifier,
    images: Any,
    labels: Any,
    lam: float,
    kappa: float = 0.0,
) -> CWAttackObjective:
    imgs = np.atleast_2d(np.asarray(images, dtype=float))
    labs = np.asarray(labels).astype(int).ravel()
    if imgs.shape[0] == 0:
        raise ObjectiveError("attack needs at least one image")
    if imgs.shape[0] != labs.size:
        raise ObjectiveError(f"{imgs.shape[0]} images but {labs.size} labels")
    if imgs.shape[1] != classifier.input_dim:
        raise ObjectiveError(f"images have {imgs.shape[1]} features, classifier expects {classifier.input_dim}")
    if np.any(labs < 0) or np.any(labs >= classifier.num_classes):
        raise ObjectiveError("image label outside the classifier's classes")
    if lam <= 0:
        raise ObjectiveError("lambda must be positive")
    if kappa < 0:
        raise ObjectiveError("kappa must be nonnegative")
    return CWAttackObjective(classifier, imgs, labs, lam, kappa)


def load_dataset_csv(path: str | Path) -> Tuple[Matrix, Vector]:
    """Read a ``label,f0,f1,...`` CSV into (features, labels)."""
    path = Path(path)
    with path.open("r", encoding="utf-8") as f:
        header = f.readline().strip().split(",")
    expected = ["label"] + [f"f{j}" for j in range(len(header) - 1)]
    if len(header) < 2 or header != expected:
        raise ObjectiveError(f"{path}: header must be label,f0,f1,... got {','.join(header)}")
    table = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if table.shape[0] == 0:
        raise ObjectiveError(f"{path}: no data rows")
    logger.debug("loaded %d rows x %d features from %s", table.shape[0], table.shape[1] - 1, path)
    return table[:, 1:], table[:, 0]


def load_cw_attack(classifier_path: str | Path, images_path: str | Path, lam: float, kappa: float = 0.0) -> CWAttackObjective:
    classifier = ToyClassifier.from_json(classifier_path)
    images, labels = load_images_csv(images_path)
    return make_cw_attack(classifier, images, labels, lam, kappa)


def load_logistic(dataset_path: str | Path, l2_reg: float = 0.0) -> LogisticObjective:
    features, labels = load_dataset_csv(dataset_path)
    return make_logistic(features, labels, l2_reg)


def load_images_csv(path: str | Path) -> Tuple[Matrix, NDArray[np.int64]]:
    """Flat image vectors with integer class labels."""
    images, labels = load_dataset_csv(path)
    if not np.all(labels == np.round(labels)):
        raise ObjectiveError(f"{path}: image labels must be integers")
    return images, labels.astype(int)
