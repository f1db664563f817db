"""A-number novelty detection.

Per (operator, dest_prefix, window) cohort: screen the block against its
profile, aggregate per-caller features, score each caller's Mahalanobis
distance against the cohort, and flag callers whose distance exceeds
phi * IQR of the cohort's distances.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

from .cdr_ingest import CdrRecord
from .errors import DataError
from .profiling import DeviationReport, ProfileStore, UnknownKey
from .stats_core import estimate_covariance, iqr as sample_iqr, mahalanobis
from .windows import Window, block_key_for

logger = logging.getLogger(__name__)

MIN_COHORT = 5  # below this, skip Mahalanobis and hand cohort to threshold rules

ORIGIN_FEATURES = (
    "attempts",
    "total_minutes",
    "mean_call_minutes",
    "answer_ratio",
    "distinct_dests",
)


class InsufficientPopulation(DataError):
    """Cohort too small for covariance estimation."""


@dataclass
class OriginFeatureVector:
    """Aggregate behavior of one caller within one cohort window."""

    origin_number: str
    operator_code: str
    dest_prefix: str
    window: Window
    attempts: int
    total_minutes: float
    mean_call_minutes: float  # per answered call; 0 when nothing answered
    answer_ratio: float
    distinct_dests: int
    m_dist: float | None = None

    def features(self) -> tuple[float, ...]:
        return (
            float(self.attempts),
            self.total_minutes,
            self.mean_call_minutes,
            self.answer_ratio,
            float(self.distinct_dests),
        )

    def to_dict(self) -> dict:
        return {
            "origin_number": self.origin_number,
            "operator_code": self.operator_code,
            "dest_prefix": self.dest_prefix,
            "window": self.window.to_dict(),
            "attempts": self.attempts,
            "total_minutes": self.total_minutes,
            "mean_call_minutes": self.mean_call_minutes,
            "answer_ratio": self.answer_ratio,
            "distinct_dests": self.distinct_dests,
            "m_dist": self.m_dist,
        }


@dataclass(frozen=True)
class FlagResult:
    flagged: list[OriginFeatureVector]
    iqr: float
    phi: float
    cohort_size: int
    degenerate: bool = False


@dataclass
class OriginCandidate:
    """A flagged caller plus the evidence chain that produced it."""

    vector: OriginFeatureVector
    deviation: DeviationReport | None  # None on cold start
    cold_start: bool
    iqr: float | None
    phi: float
    cohort_size: int
    reasons: list[str] = field(default_factory=list)
    low_confidence: bool = False

    def evidence(self) -> dict:
        return {
            "pipeline": "origin",
            "vector": self.vector.to_dict(),
            "deviation": self.deviation.to_dict() if self.deviation else None,
            "cold_start": self.cold_start,
            "iqr": self.iqr,
            "phi": self.phi,
            "cohort_size": self.cohort_size,
            "reasons": list(self.reasons),
            "low_confidence": self.low_confidence,
        }


def aggregate_origin_features(records: list[CdrRecord], window: Window) -> list[OriginFeatureVector]:
    """One vector per distinct caller; records must share (operator, prefix)."""
    if not records:
        return []
    operator = records[0].operator_code
    prefix = records[0].dest_prefix
    per_caller: dict[str, list[CdrRecord]] = {}
    for r in records:
        per_caller.setdefault(r.origin_number, []).append(r)
    vectors = []
    for number in sorted(per_caller):
        calls = per_caller[number]
        attempts = len(calls)
        answered = sum(1 for c in calls if c.answered)
        total_minutes = sum(c.duration_seconds for c in calls) / 60.0
        vectors.append(
            OriginFeatureVector(
                origin_number=number,
                operator_code=operator,
                dest_prefix=prefix,
                window=window,
                attempts=attempts,
                total_minutes=total_minutes,
                mean_call_minutes=total_minutes / answered if answered else 0.0,
                answer_ratio=answered / attempts,
                distinct_dests=len({c.dest_number for c in calls}),
            )
        )
    return vectors


def score_origins(vectors: list[OriginFeatureVector]) -> list[OriginFeatureVector]:
    """Fill m_dist on each vector: Mahalanobis distance to the cohort mean."""
    if len(vectors) < MIN_COHORT:
        raise InsufficientPopulation(f"cohort of {len(vectors)} < {MIN_COHORT}")
    rows = [v.features() for v in vectors]
    cov = estimate_covariance(rows)
    dim = len(rows[0])
    mean = tuple(sum(r[j] for r in rows) / len(rows) for j in range(dim))
    for v in vectors:
        v.m_dist = mahalanobis(v.features(), mean, cov)
    return vectors


def flag_origins(vectors: list[OriginFeatureVector], phi: float) -> FlagResult:
    """Flag vectors with m_dist > phi * IQR of the cohort's distances."""
    if phi <= 0:
        raise ValueError(f"phi must be positive, got {phi}")
    dists = [v.m_dist for v in vectors]
    if any(d is None for d in dists):
        raise DataError("flag_origins requires scored vectors (m_dist filled)")
    cohort_iqr = sample_iqr(dists)
    if cohort_iqr == 0.0:
        logger.warning("degenerate IQR (all cohort distances equal); nothing flagged")
        return FlagResult(flagged=[], iqr=0.0, phi=phi, cohort_size=len(vectors), degenerate=True)
    cutoff = phi * cohort_iqr
    flagged = [v for v in vectors if v.m_dist > cutoff]
    return FlagResult(flagged=flagged, iqr=cohort_iqr, phi=phi, cohort_size=len(vectors))


def run_origin_pipeline(
    records: list[CdrRecord],
    window: Window,
    store: ProfileStore,
    phi: float,
    z_threshold: float,
) -> list[OriginCandidate]:
    """Deviation-gated drill-down over every (operator, prefix) cohort in the window.

    Cohorts whose block profile is missing are processed without the gate
    (cold start, low confidence). Cohorts smaller than MIN_COHORT pass all
    their vectors through for threshold-only detection.
    """
    cohorts: dict[tuple[str, str], list[CdrRecord]] = {}
    for r in records:
        cohorts.setdefault((r.operator_code, r.dest_prefix), []).append(r)

    candidates: list[OriginCandidate] = []
    for (operator, prefix) in sorted(cohorts):
        cohort_records = cohorts[(operator, prefix)]
        observed_x = sum(r.duration_seconds for r in cohort_records) / 60.0
        observed_y = float(sum(1 for r in cohort_records if r.answered))
        key = block_key_for(operator, prefix, window)
        deviation = None
        cold_start = False
        try:
            deviation = store.deviation(key, observed_x, observed_y, z_threshold)
            if not deviation.flagged:
                continue
        except UnknownKey:
            cold_start = True

        vectors = aggregate_origin_features(cohort_records, window)
        low_confidence = cold_start or (deviation.low_confidence if deviation else False)
        if len(vectors) < MIN_COHORT:
            for v in vectors:
                candidates.append(
                    OriginCandidate(
                        vector=v,
                        deviation=deviation,
                        cold_start=cold_start,
                        iqr=None,
                        phi=phi,
                        cohort_size=len(vectors),
                        reasons=["small_cohort"],
                        low_confidence=True,
                    )
                )
            continue
        score_origins(vectors)
        result = flag_origins(vectors, phi)
        for v in result.flagged:
            candidates.append(
                OriginCandidate(
                    vector=v,
                    deviation=deviation,
                    cold_start=cold_start,
                    iqr=result.iqr,
                    phi=phi,
                    cohort_size=result.cohort_size,
                    reasons=["mdist_iqr"],
                    low_confidence=low_confidence,
                )
            )
    return candidates
