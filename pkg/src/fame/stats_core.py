"""Deterministic numerical kernels shared by every pipeline.

All functions here are pure: same inputs (including seeds) give the same
outputs on every platform. Model objects are immutable once constructed.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DataError

__all__ = [
    "SampleStats",
    "RunningStats",
    "CovarianceMatrix",
    "LogisticModel",
    "KMeansResult",
    "SilhouetteResult",
    "TrainResult",
    "EmptyData",
    "DimensionMismatch",
    "SingularMatrix",
    "InsufficientData",
    "TooFewPoints",
    "SingleCluster",
    "DegenerateLabels",
    "quantile",
    "iqr",
    "estimate_covariance",
    "mahalanobis",
    "kmeans",
    "silhouette",
    "logreg_loss_and_grad",
    "logreg_train",
    "logreg_predict",
    "sigmoid",
]


class EmptyData(DataError):
    pass


class DimensionMismatch(DataError):
    pass


class SingularMatrix(DataError):
    pass


class InsufficientData(DataError):
    pass


class TooFewPoints(DataError):
    pass


class SingleCluster(DataError):
    pass


class DegenerateLabels(DataError):
    pass


# ---------------------------------------------------------------------------
# Sample statistics


@dataclass(frozen=True)
class SampleStats:
    """Mean and sample standard deviation (n-1 denominator) of a sample."""

    n: int
    mean: float
    sd: float

    @classmethod
    def from_samples(cls, values: Sequence[float]) -> "SampleStats":
        n = len(values)
        if n < 1:
            raise EmptyData("SampleStats requires at least one value")
        mean = math.fsum(values) / n
        if n == 1:
            return cls(n=1, mean=mean, sd=0.0)
        var = math.fsum((v - mean) ** 2 for v in values) / (n - 1)
        return cls(n=n, mean=mean, sd=math.sqrt(var))


class RunningStats:
    """Welford accumulator: exact recurrence on (n, mean, M2).

    sd uses the n-1 denominator and is 0.0 for a single observation,
    matching SampleStats.from_samples on the same values.
    """

    __slots__ = ("n", "mean", "m2")

    def __init__(self, n: int = 0, mean: float = 0.0, m2: float = 0.0):
        self.n = n
        self.mean = mean
        self.m2 = m2

    def push(self, value: float) -> None:
        self.n += 1
        delta = value - self.mean
        self.mean += delta / self.n
        self.m2 += delta * (value - self.mean)

    @property
    def sd(self) -> float:
        if self.n < 2:
            return 0.0
        return math.sqrt(max(self.m2, 0.0) / (self.n - 1))

    def snapshot(self) -> SampleStats:
        if self.n < 1:
            raise EmptyData("no observations accumulated")
        return SampleStats(n=self.n, mean=self.mean, sd=self.sd)

    def copy(self) -> "RunningStats":
        return RunningStats(self.n, self.mean, self.m2)


# ---------------------------------------------------------------------------
# Quantiles


def quantile(data: Sequence[float], q: float) -> float:
    """Linear-interpolation quantile at position q*(n-1) over the sorted sample."""
    n = len(data)
    if n == 0:
        raise EmptyData("quantile of empty data")
    if not 0.0 <= q <= 1.0:
        raise ValueError(f"q must be in [0, 1], got {q}")
    xs = sorted(data)
    pos = q * (n - 1)
    lo = math.floor(pos)
    hi = math.ceil(pos)
    if lo == hi:
        return float(xs[lo])
    frac = pos - lo
    return float(xs[lo]) * (1.0 - frac) + float(xs[hi]) * frac


def iqr(data: Sequence[float]) -> float:
    """Interquartile range Q3 - Q1 of a sample."""
    return quantile(data, 0.75) - quantile(data, 0.25)


# ---------------------------------------------------------------------------
# Covariance and Mahalanobis distance

RIDGE_SCALE = 1e-6  # ridge lambda = RIDGE_SCALE * trace(S) / dim


@dataclass(frozen=True)
class CovarianceMatrix:
    """Symmetric sample covariance with a diagonal ridge applied at inversion."""

    dim: int
    entries: np.ndarray
    ridge: float

    def regularized(self) -> np.ndarray:
        return self.entries + self.ridge * np.eye(self.dim)


def estimate_covariance(rows: Sequence[Sequence[float]]) -> CovarianceMatrix:
    """Sample covariance (n-1 denominator) of the row vectors."""
    x = np.asarray(rows, dtype=float)
    if x.ndim != 2:
        raise DimensionMismatch(f"expected 2-D rows, got shape {x.shape}")
    n, d = x.shape
    if n < 2:
        raise InsufficientData(f"covariance needs >= 2 rows, got {n}")
    centered = x - x.mean(axis=0)
    s = centered.T @ centered / (n - 1)
    s = (s + s.T) / 2.0  # enforce exact symmetry
    ridge = RIDGE_SCALE * float(np.trace(s)) / d
    return CovarianceMatrix(dim=d, entries=s, ridge=ridge)


def mahalanobis(x: Sequence[float], y: Sequence[float], cov: CovarianceMatrix) -> float:
    """sqrt((x-y)^T (S + ridge*I)^-1 (x-y)); 0 iff x == y."""
    xv = np.asarray(x, dtype=float)
    yv = np.asarray(y, dtype=float)
    if xv.shape != yv.shape or xv.ndim != 1:
        raise DimensionMismatch(f"x and y must be 1-D of equal length, got {xv.shape} vs {yv.shape}")
    if xv.shape[0] != cov.dim:
        raise DimensionMismatch(f"vectors have dim {xv.shape[0]}, covariance has dim {cov.dim}")
    diff = xv - yv
    if not diff.any():
        return 0.0
    m = cov.regularized()
    try:
        solved = np.linalg.solve(m, diff)
    except np.linalg.LinAlgError as exc:
        raise SingularMatrix("covariance not invertible after ridge") from exc
    d2 = float(diff @ solved)
    if not math.isfinite(d2):
        raise SingularMatrix("non-finite quadratic form; degenerate feature set")
    if d2 < 0:
        if d2 < -1e-9 * max(1.0, float(diff @ diff)):
            raise SingularMatrix("covariance not positive definite after ridge")
        d2 = 0.0
    return math.sqrt(d2)


# ---------------------------------------------------------------------------
# k-means with k-means++ seeding


@dataclass(frozen=True)
class KMeansResult:
    assignment: np.ndarray  # shape (n,), int cluster labels 0..k-1
    centroids: np.ndarray  # shape (k, d)
    wcss: float
    iterations: int


def _kmeans_pp_seed(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = points.shape[0]
    centroids = np.empty((k, points.shape[1]), dtype=float)
    first = int(rng.integers(n))
    centroids[0] = points[first]
    d2 = np.sum((points - centroids[0]) ** 2, axis=1)
    for j in range(1, k):
        total = float(d2.sum())
        if total <= 0.0:
            idx = int(rng.integers(n))  # all remaining mass on duplicates
        else:
            idx = int(rng.choice(n, p=d2 / total))
        centroids[j] = points[idx]
        d2 = np.minimum(d2, np.sum((points - centroids[j]) ** 2, axis=1))
    return centroids


def _lloyd(points: np.ndarray, centroids: np.ndarray, max_iter: int) -> tuple[np.ndarray, np.ndarray, float, int]:
    k = centroids.shape[0]
    assignment = np.full(points.shape[0], -1, dtype=int)
    iterations = 0
    for iterations in range(1, max_iter + 1):
        d2 = ((points[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        new_assignment = d2.argmin(axis=1)
        for c in range(k):
            members = points[new_assignment == c]
            if len(members) == 0:
                # re-seed an empty cluster with the point farthest from its centroid
                far = int(d2[np.arange(len(points)), new_assignment].argmax())
                centroids[c] = points[far]
                new_assignment[far] = c
            else:
                centroids[c] = members.mean(axis=0)
        if np.array_equal(new_assignment, assignment):
            break
        assignment = new_assignment
    wcss = float(((points - centroids[assignment]) ** 2).sum())
    return assignment, centroids, wcss, iterations


_EXHAUSTIVE_SEED_LIMIT = 300  # max distinct-point seed subsets to sweep


def kmeans(
    points: Sequence[Sequence[float]],
    k: int,
    seed: int,
    restarts: int = 10,
    max_iter: int = 100,
) -> KMeansResult:
    """Lloyd's iteration from k-means++ seeding; best WCSS over restarts.

    Deterministic for a fixed seed: restart r uses generator seed
    seed*9973 + r. Small inputs (few enough k-subsets) additionally sweep
    every distinct-point seeding so the restarts reliably land in the global
    basin.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts.reshape(-1, 1)
    n = pts.shape[0]
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if k > n:
        raise TooFewPoints(f"k={k} exceeds {n} points")

    seedings: list[np.ndarray] = []
    for r in range(max(restarts, 1)):
        rng = np.random.default_rng(seed * 9973 + r)
        seedings.append(_kmeans_pp_seed(pts, k, rng))
    if math.comb(n, k) <= _EXHAUSTIVE_SEED_LIMIT:
        seedings.extend(pts[list(combo)] for combo in itertools.combinations(range(n), k))

    best: KMeansResult | None = None
    for seeding in seedings:
        assignment, centroids, wcss, iterations = _lloyd(pts, seeding.copy(), max_iter)
        if best is None or wcss < best.wcss - 1e-12:
            best = KMeansResult(assignment=assignment, centroids=centroids, wcss=wcss, iterations=iterations)
    assert best is not None
    return best


# ---------------------------------------------------------------------------
# Silhouette score


@dataclass(frozen=True)
class SilhouetteResult:
    scores: np.ndarray  # per-point s(i) in [-1, 1]
    mean: float
    cluster_means: dict[int, float]

    @property
    def min_cluster_mean(self) -> float:
        return min(self.cluster_means.values())


def silhouette(points: Sequence[Sequence[float]], assignment: Sequence[int]) -> SilhouetteResult:
    """Per-point silhouette s(i) = (b-a)/max(a,b) with Euclidean distance.

    a(i): mean distance to own cluster excluding self; b(i): smallest mean
    distance to any other cluster. Members of singleton clusters score 0.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts.reshape(-1, 1)
    labels = np.asarray(assignment, dtype=int)
    if labels.shape[0] != pts.shape[0]:
        raise DimensionMismatch("assignment length must match number of points")
    uniq = np.unique(labels)
    if len(uniq) < 2:
        raise SingleCluster("silhouette needs at least 2 clusters")
    dists = np.sqrt(np.maximum(((pts[:, None, :] - pts[None, :, :]) ** 2).sum(axis=2), 0.0))
    sizes = {int(c): int((labels == c).sum()) for c in uniq}
    scores = np.zeros(pts.shape[0], dtype=float)
    for i in range(pts.shape[0]):
        own = int(labels[i])
        if sizes[own] == 1:
            scores[i] = 0.0
            continue
        a = dists[i][labels == own].sum() / (sizes[own] - 1)
        b = min(dists[i][labels == c].mean() for c in map(int, uniq) if c != own)
        denom = max(a, b)
        scores[i] = 0.0 if denom == 0.0 else (b - a) / denom
    cluster_means = {int(c): float(scores[labels == c].mean()) for c in uniq}
    return SilhouetteResult(scores=scores, mean=float(scores.mean()), cluster_means=cluster_means)


# ---------------------------------------------------------------------------
# Logistic regression


def sigmoid(z: float) -> float:
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-z))
    ez = math.exp(z)
    return ez / (1.0 + ez)


@dataclass(frozen=True)
class LogisticModel:
    """Immutable logistic model: p(x) = sigmoid(w . x + b)."""

    weights: tuple[float, ...]
    bias: float
    feature_names: tuple[str, ...]
    version: int

    def __post_init__(self):
        if len(self.weights) != len(self.feature_names):
            raise DimensionMismatch("weights and feature_names lengths differ")

    def to_json(self) -> str:
        return json.dumps(
            {
                "version": self.version,
                "feature_names": list(self.feature_names),
                "weights": list(self.weights),
                "bias": self.bias,
            }
        )

    @classmethod
    def from_json(cls, text: str) -> "LogisticModel":
        doc = json.loads(text)
        return cls(
            weights=tuple(float(w) for w in doc["weights"]),
            bias=float(doc["bias"]),
            feature_names=tuple(doc["feature_names"]),
            version=int(doc["version"]),
        )


@dataclass(frozen=True)
class TrainResult:
    model: LogisticModel
    converged: bool
    epochs: int
    grad_norm: float
    losses: tuple[float, ...] = field(repr=False, default=())


def logreg_loss_and_grad(
    weights: np.ndarray,
    bias: float,
    rows: np.ndarray,
    labels: np.ndarray,
    l2: float,
) -> tuple[float, np.ndarray, float]:
    """Mean negative log-likelihood + (l2/2)*||w||^2, with analytic gradient."""
    z = rows @ weights + bias
    # loss_i = log(1 + e^z) - y*z, computed stably
    loss = float(np.mean(np.logaddexp(0.0, z) - labels * z)) + 0.5 * l2 * float(weights @ weights)
    p = 1.0 / (1.0 + np.exp(-np.clip(z, -700, 700)))
    resid = p - labels
    grad_w = rows.T @ resid / len(labels) + l2 * weights
    grad_b = float(resid.mean())
    return loss, grad_w, grad_b


def logreg_train(
    rows: Sequence[Sequence[float]],
    labels: Sequence[int],
    *,
    l2: float = 1e-3,
    lr: float = 0.5,
    max_epochs: int = 2000,
    tolerance: float = 1e-6,
    seed: int = 0,
    feature_names: Sequence[str] | None = None,
    version: int = 1,
) -> TrainResult:
    """Full-batch gradient descent on the L2-regularized logistic loss.

    Step sizes are constant during the run: lr / (1 + l2) for the weights
    (kept stable under large regularization) and lr for the unregularized
    bias. Stops when the gradient norm falls below tolerance or the epoch cap
    is hit; the outcome is reported on the result. Weights start at zero, so
    training is deterministic; seed is accepted for interface stability.
    """
    del seed  # zero init; nothing stochastic to seed
    x = np.asarray(rows, dtype=float)
    if x.ndim == 1:
        x = x.reshape(-1, 1)
    y = np.asarray(labels, dtype=float)
    if y.shape[0] != x.shape[0]:
        raise DimensionMismatch("labels length must match rows")
    classes = set(int(v) for v in y)
    if classes != {0, 1}:
        raise DegenerateLabels(f"need both classes 0 and 1, got {sorted(classes)}")
    d = x.shape[1]
    names = tuple(feature_names) if feature_names is not None else tuple(f"f{i}" for i in range(d))
    if len(names) != d:
        raise DimensionMismatch("feature_names length must match feature count")

    w = np.zeros(d, dtype=float)
    b = 0.0
    step_w = lr / (1.0 + l2)
    step_b = lr
    losses: list[float] = []
    grad_norm = math.inf
    epochs = 0
    for epochs in range(1, max_epochs + 1):
        loss, grad_w, grad_b = logreg_loss_and_grad(w, b, x, y, l2)
        losses.append(loss)
        grad_norm = math.sqrt(float(grad_w @ grad_w) + grad_b * grad_b)
        if grad_norm <= tolerance:
            break
        w -= step_w * grad_w
        b -= step_b * grad_b
    model = LogisticModel(weights=tuple(float(v) for v in w), bias=float(b), feature_names=names, version=version)
    return TrainResult(
        model=model,
        converged=grad_norm <= tolerance,
        epochs=epochs,
        grad_norm=grad_norm,
        losses=tuple(losses),
    )


def logreg_predict(model: LogisticModel, x: Sequence[float]) -> float:
    """Probability in (0, 1) for a feature vector in model feature order."""
    if len(x) != len(model.weights):
        raise DimensionMismatch(f"expected {len(model.weights)} features, got {len(x)}")
    z = sum(w * v for w, v in zip(model.weights, x)) + model.bias
    return sigmoid(z)
