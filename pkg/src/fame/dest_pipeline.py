"""B-number novelty detection.

Hourly aggregation per destination number, IQR fence-distance outliers, and
k-means cluster discovery with silhouette-scored model selection. A number is
flagged if any configured IQR detector fires or it belongs to the fraud
cluster (union semantics).
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .cdr_ingest import CdrRecord
from .errors import DataError
from .stats_core import TooFewPoints, kmeans, quantile, silhouette
from .windows import Window

logger = logging.getLogger(__name__)

DEST_FEATURES = ("calls", "total_minutes", "mean_minutes", "distinct_origins")
_TOTAL_MINUTES_IDX = DEST_FEATURES.index("total_minutes")


@dataclass
class DestFeatureVector:
    """Aggregate traffic received by one destination number in one hour window."""

    dest_number: str
    window: Window
    calls: int
    total_minutes: float
    mean_minutes: float  # per answered call; 0 when nothing answered
    distinct_origins: int
    answered: int

    def features(self) -> tuple[float, ...]:
        return (float(self.calls), self.total_minutes, self.mean_minutes, float(self.distinct_origins))

    def to_dict(self) -> dict:
        return {
            "dest_number": self.dest_number,
            "window": self.window.to_dict(),
            "calls": self.calls,
            "total_minutes": self.total_minutes,
            "mean_minutes": self.mean_minutes,
            "distinct_origins": self.distinct_origins,
            "answered": self.answered,
        }


@dataclass(frozen=True)
class IqrResult:
    feature: str
    threshold: float
    q1: float
    q3: float
    iqr: float
    distances: dict[str, float]  # dest_number -> fence distance (only > 0 entries)
    outliers: list[str]  # dest_numbers with distance > threshold * iqr
    degenerate: bool = False


@dataclass(frozen=True)
class ClusterReport:
    k_best: int
    min_silhouette: float  # minimum per-cluster mean silhouette at k_best
    mean_silhouette: float
    centroids: list[list[float]]  # standardized feature space
    fraud_cluster_id: int
    members: list[str]  # dest_numbers in the fraud cluster
    silhouette_by_k: dict[int, float]
    assignments: dict[str, int]
    points_2d: dict[str, list[float]]  # standardized (calls, total_minutes) per number

    def to_dict(self) -> dict:
        return {
            "k_best": self.k_best,
            "min_silhouette": self.min_silhouette,
            "mean_silhouette": self.mean_silhouette,
            "centroids": self.centroids,
            "fraud_cluster_id": self.fraud_cluster_id,
            "members": self.members,
            "silhouette_by_k": {str(k): v for k, v in self.silhouette_by_k.items()},
            "assignments": self.assignments,
            "points_2d": self.points_2d,
        }


@dataclass
class DestCandidate:
    """A flagged destination number plus which detectors fired."""

    vector: DestFeatureVector
    detectors: list[str] = field(default_factory=list)
    iqr_distance: float = 0.0  # max fence distance over configured features
    iqr_evidence: dict = field(default_factory=dict)
    cluster_id: int | None = None

    def evidence(self) -> dict:
        return {
            "pipeline": "dest",
            "vector": self.vector.to_dict(),
            "detectors": list(self.detectors),
            "iqr_distance": self.iqr_distance,
            "iqr_evidence": self.iqr_evidence,
            "cluster_id": self.cluster_id,
        }


def aggregate_dest_features(records: list[CdrRecord], window: Window) -> list[DestFeatureVector]:
    """One vector per distinct destination number in the window."""
    per_dest: dict[str, list[CdrRecord]] = {}
    for r in records:
        per_dest.setdefault(r.dest_number, []).append(r)
    vectors = []
    for number in sorted(per_dest):
        calls = per_dest[number]
        answered = sum(1 for c in calls if c.answered)
        total_minutes = sum(c.duration_seconds for c in calls) / 60.0
        vectors.append(
            DestFeatureVector(
                dest_number=number,
                window=window,
                calls=len(calls),
                total_minutes=total_minutes,
                mean_minutes=total_minutes / answered if answered else 0.0,
                distinct_origins=len({c.origin_number for c in calls}),
                answered=answered,
            )
        )
    return vectors


def iqr_outliers(vectors: list[DestFeatureVector], feature: str, threshold: float) -> IqrResult:
    """Outliers by fence distance max(0, v - Q3, Q1 - v) > threshold * IQR."""
    if feature not in DEST_FEATURES:
        raise DataError(f"unknown dest feature {feature!r}")
    if len(vectors) < 4:
        raise TooFewPoints(f"IQR screening needs >= 4 vectors, got {len(vectors)}")
    values = {v.dest_number: getattr(v, feature) for v in vectors}
    q1 = quantile(list(values.values()), 0.25)
    q3 = quantile(list(values.values()), 0.75)
    spread = q3 - q1
    if spread == 0.0:
        logger.warning("degenerate IQR on %s; no outliers", feature)
        return IqrResult(feature, threshold, q1, q3, 0.0, {}, [], degenerate=True)
    distances = {}
    outliers = []
    for number, value in values.items():
        distance = max(0.0, value - q3, q1 - value)
        if distance > 0.0:
            distances[number] = distance
        if distance > threshold * spread:
            outliers.append(number)
    return IqrResult(feature, threshold, q1, q3, spread, distances, sorted(outliers))


def discover_clusters(vectors: list[DestFeatureVector], k_max: int = 8, seed: int = 0) -> ClusterReport:
    """Pick k in 2..k_max by mean silhouette (ties to smaller k); the cluster
    whose centroid has the largest total-duration coordinate is the fraud cluster."""
    if k_max < 2:
        raise ValueError(f"k_max must be >= 2, got {k_max}")
    if len(vectors) < k_max + 1:
        raise TooFewPoints(f"need >= {k_max + 1} vectors for k_max={k_max}, got {len(vectors)}")
    matrix = np.array([v.features() for v in vectors], dtype=float)
    means = matrix.mean(axis=0)
    sds = matrix.std(axis=0, ddof=1)
    sds = np.where(sds < 1e-12, 1.0, sds)
    standardized = (matrix - means) / sds

    silhouette_by_k: dict[int, float] = {}
    best_k = None
    best_result = None
    best_scores = None
    for k in range(2, k_max + 1):
        result = kmeans(standardized, k, seed=seed + k)
        scores = silhouette(standardized, result.assignment)
        silhouette_by_k[k] = scores.mean
        if best_k is None or scores.mean > silhouette_by_k[best_k]:
            best_k, best_result, best_scores = k, result, scores
    assert best_result is not None and best_scores is not None and best_k is not None

    fraud_cluster = int(best_result.centroids[:, _TOTAL_MINUTES_IDX].argmax())
    members = sorted(
        vectors[i].dest_number
        for i in range(len(vectors))
        if int(best_result.assignment[i]) == fraud_cluster
    )
    return ClusterReport(
        k_best=best_k,
        min_silhouette=best_scores.min_cluster_mean,
        mean_silhouette=best_scores.mean,
        centroids=[[float(c) for c in row] for row in best_result.centroids],
        fraud_cluster_id=fraud_cluster,
        members=members,
        silhouette_by_k=silhouette_by_k,
        assignments={vectors[i].dest_number: int(best_result.assignment[i]) for i in range(len(vectors))},
        points_2d={
            vectors[i].dest_number: [float(standardized[i, 0]), float(standardized[i, _TOTAL_MINUTES_IDX])]
            for i in range(len(vectors))
        },
    )


def run_dest_pipeline(
    records: list[CdrRecord],
    window: Window,
    k_max: int = 8,
    iqr_threshold: float = 1.5,
    iqr_features: tuple[str, ...] = ("total_minutes",),
    seed: int = 0,
) -> tuple[list[DestCandidate], ClusterReport | None]:
    """Union of IQR outliers (any configured feature) and fraud-cluster members.

    Degenerate sub-detectors (too few points, zero IQR) degrade to the other
    detector; an empty hour yields no candidates and no report.
    """
    vectors = aggregate_dest_features(records, window)
    if not vectors:
        return [], None
    by_number = {v.dest_number: v for v in vectors}
    candidates: dict[str, DestCandidate] = {}

    def candidate(number: str) -> DestCandidate:
        if number not in candidates:
            candidates[number] = DestCandidate(vector=by_number[number])
        return candidates[number]

    for feature in iqr_features:
        try:
            result = iqr_outliers(vectors, feature, iqr_threshold)
        except TooFewPoints:
            logger.warning("skipping IQR detector on %s: too few vectors", feature)
            continue
        for number in result.outliers:
            cand = candidate(number)
            cand.detectors.append(f"iqr:{feature}")
            distance = result.distances.get(number, 0.0)
            cand.iqr_distance = max(cand.iqr_distance, distance)
            cand.iqr_evidence[feature] = {
                "q1": result.q1,
                "q3": result.q3,
                "iqr": result.iqr,
                "distance": distance,
                "threshold": result.threshold,
            }

    report: ClusterReport | None = None
    try:
        report = discover_clusters(vectors, k_max=k_max, seed=seed)
    except TooFewPoints:
        logger.warning("skipping cluster detector: %d vectors < k_max+1", len(vectors))
    if report is not None:
        for number in report.members:
            cand = candidate(number)
            cand.detectors.append("cluster")
            cand.cluster_id = report.fraud_cluster_id

    return [candidates[n] for n in sorted(candidates)], report


def export_boxplot_csv(vectors: list[DestFeatureVector], feature: str, path: Path) -> None:
    """Per-number five-number summary of a feature across windows (plot-ready)."""
    if feature not in DEST_FEATURES:
        raise DataError(f"unknown dest feature {feature!r}")
    series: dict[str, list[float]] = {}
    for v in vectors:
        series.setdefault(v.dest_number, []).append(getattr(v, feature))
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["dest_number", "n", "min", "q1", "median", "q3", "max"])
        for number in sorted(series):
            values = series[number]
            writer.writerow(
                [
                    number,
                    len(values),
                    min(values),
                    quantile(values, 0.25),
                    quantile(values, 0.5),
                    quantile(values, 0.75),
                    max(values),
                ]
            )
