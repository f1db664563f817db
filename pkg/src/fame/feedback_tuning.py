"""Analyst feedback loop: verdicts label the corpus and grow the fraud
repository; tuning retunes phi, retrains the logistic models, and promotes a
candidate only when it does not regress on a historical back-test."""

from __future__ import annotations

import json
import logging
import uuid
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .detection import (
    CONFIRMED,
    DEST_DETECT_FEATURES,
    FALSE_POSITIVE,
    OPEN,
    Alert,
    AlertLog,
    FraudBlockEntry,
    FraudRepository,
    MIN_BLOCK_DIGITS,
    ModelState,
    ORIGIN_DETECT_FEATURES,
)
from .errors import DataError
from .stats_core import DegenerateLabels, LogisticModel, logreg_train

logger = logging.getLogger(__name__)

DEFAULT_BLOCK_DIGITS = 8
AUTO_TUNE_EVERY = 50  # verdicts between automatic tuning runs


class VerdictConflict(DataError):
    """Verdict on an already-decided alert without the force flag."""


class InsufficientLabels(DataError):
    pass


@dataclass(frozen=True)
class Verdict:
    alert_id: str
    decision: str  # confirmed_fraud | false_positive
    analyst: str
    decided_at: datetime
    comment: str = ""

    def __post_init__(self):
        if self.decision not in (CONFIRMED, FALSE_POSITIVE):
            raise DataError(f"bad decision {self.decision!r}")

    def to_dict(self) -> dict:
        return {
            "alert_id": self.alert_id,
            "decision": self.decision,
            "analyst": self.analyst,
            "decided_at": self.decided_at.strftime("%Y-%m-%dT%H:%M:%SZ"),
            "comment": self.comment,
        }


# ---------------------------------------------------------------------------
# Training corpus (append-only)


class TrainingCorpus:
    """Labeled feature vectors, each traceable to an alert and model version."""

    def __init__(self, path: Path | None = None):
        self.path = Path(path) if path else None
        self.rows: list[dict] = []
        if self.path and self.path.exists():
            for line in self.path.read_text(encoding="utf-8").splitlines():
                if line.strip():
                    self.rows.append(json.loads(line))

    def append(self, features: dict, label: int, direction: str, alert_id: str, model_version: int) -> None:
        row = {
            "features": features,
            "label": int(label),
            "direction": direction,
            "alert_id": alert_id,
            "model_version": model_version,
        }
        self.rows.append(row)
        if self.path:
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(row) + "\n")

    def __len__(self) -> int:
        return len(self.rows)

    def matrix(self, direction: str) -> tuple[list[list[float]], list[int], tuple[str, ...]]:
        names = ORIGIN_DETECT_FEATURES if direction == "origin" else DEST_DETECT_FEATURES
        rows = []
        labels = []
        for row in self.rows:
            if row["direction"] != direction:
                continue
            rows.append([float(row["features"].get(n, 0.0)) for n in names])
            labels.append(int(row["label"]))
        return rows, labels, names


# ---------------------------------------------------------------------------
# Verdict recording and block growth


def _common_prefix_len(a: str, b: str) -> int:
    n = min(len(a), len(b))
    for i in range(n):
        if a[i] != b[i]:
            return i
    return n


def grow_block(number: str, direction: str, repository: FraudRepository, confirmed_at: datetime) -> FraudBlockEntry:
    """Add or widen a fraud block for a confirmed number.

    Uses the longest prefix (>= 6 digits) shared with an existing entry in the
    same direction; otherwise the number's first 8 digits.
    """
    best_entry: FraudBlockEntry | None = None
    best_lcp = 0
    for entry in repository.entries():
        if entry.direction != direction:
            continue
        lcp = _common_prefix_len(number, entry.prefix)
        if lcp > best_lcp:
            best_lcp, best_entry = lcp, entry
    if best_entry is not None and best_lcp >= MIN_BLOCK_DIGITS:
        if best_lcp == len(best_entry.prefix):
            return best_entry  # number already inside the block
        widened = FraudBlockEntry(
            prefix=number[:best_lcp],
            direction=direction,
            source="analyst",
            confirmed_at=confirmed_at,
            note=f"widened from {best_entry.prefix}",
        )
        repository.remove(best_entry.prefix, direction)
        repository.add(widened)
        return widened
    entry = FraudBlockEntry(
        prefix=number[:DEFAULT_BLOCK_DIGITS] if len(number) >= DEFAULT_BLOCK_DIGITS else number,
        direction=direction,
        source="analyst",
        confirmed_at=confirmed_at,
        note=f"confirmed number {number}",
    )
    repository.add(entry)
    return entry


class VerdictAudit:
    """Append-only verdict history; later verdicts supersede, all are kept."""

    def __init__(self, path: Path | None = None):
        self.path = Path(path) if path else None
        self.history: list[Verdict] = []
        if self.path and self.path.exists():
            for line in self.path.read_text(encoding="utf-8").splitlines():
                if line.strip():
                    doc = json.loads(line)
                    self.history.append(
                        Verdict(
                            alert_id=doc["alert_id"],
                            decision=doc["decision"],
                            analyst=doc["analyst"],
                            decided_at=datetime.strptime(doc["decided_at"], "%Y-%m-%dT%H:%M:%SZ").replace(
                                tzinfo=timezone.utc
                            ),
                            comment=doc.get("comment", ""),
                        )
                    )

    def append(self, verdict: Verdict) -> None:
        self.history.append(verdict)
        if self.path:
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(verdict.to_dict()) + "\n")


def record_verdict(
    verdict: Verdict,
    alert_log: AlertLog,
    repository: FraudRepository,
    corpus: TrainingCorpus,
    audit: VerdictAudit | None = None,
    force: bool = False,
) -> Alert:
    """Apply an analyst verdict: flip alert state, label the corpus, and grow
    the fraud repository on confirmation. Raises VerdictConflict when the
    alert is already decided and force is not set."""
    alert = alert_log.get(verdict.alert_id)  # raises UnknownAlert
    if alert.state != OPEN and not force:
        raise VerdictConflict(f"alert {verdict.alert_id} already {alert.state}")
    alert = alert_log.set_state(verdict.alert_id, verdict.decision, verdict.analyst, verdict.decided_at)
    corpus.append(
        features=alert.features,
        label=1 if verdict.decision == CONFIRMED else 0,
        direction=alert.direction,
        alert_id=alert.alert_id,
        model_version=alert.model_version,
    )
    if verdict.decision == CONFIRMED:
        grow_block(alert.number, alert.direction, repository, verdict.decided_at)
    if audit is not None:
        audit.append(verdict)
    return alert


# ---------------------------------------------------------------------------
# phi retuning


@dataclass(frozen=True)
class PhiExample:
    """One labeled origin alert: its distance, its cohort's IQR, the verdict."""

    m_dist: float
    iqr: float
    label: int  # 1 = confirmed fraud


PHI_GRID = tuple(i / 10.0 for i in range(5, 101))  # 0.5 .. 10.0 step 0.1


def retune_phi(examples: Sequence[PhiExample], grid: Sequence[float] = PHI_GRID) -> float:
    """Grid value maximizing F1 of "m_dist > phi * IQR"; ties go to the larger
    phi (fewer alerts)."""
    if len(examples) < 10:
        raise InsufficientLabels(f"need >= 10 labeled origin alerts, got {len(examples)}")
    best_phi = grid[0]
    best_f1 = -1.0
    for phi in grid:
        tp = fp = fn = 0
        for ex in examples:
            flagged = ex.m_dist > phi * ex.iqr
            if flagged and ex.label:
                tp += 1
            elif flagged:
                fp += 1
            elif ex.label:
                fn += 1
        denom = 2 * tp + fp + fn
        f1 = (2 * tp / denom) if denom else 0.0
        if f1 >= best_f1:
            best_f1, best_phi = f1, phi
    return best_phi


def phi_examples_from_corpus(corpus: TrainingCorpus, alert_log: AlertLog) -> list[PhiExample]:
    """Labeled (m_dist, IQR) pairs for origin alerts whose cohort had an IQR."""
    examples = []
    for row in corpus.rows:
        if row["direction"] != "origin":
            continue
        try:
            alert = alert_log.get(row["alert_id"])
        except DataError:
            continue
        novelty = next((e for e in alert.evidence if e.get("pipeline") == "origin"), None)
        if not novelty or novelty.get("iqr") in (None, 0):
            continue
        m_dist = novelty["vector"].get("m_dist")
        if m_dist is None:
            continue
        examples.append(PhiExample(m_dist=float(m_dist), iqr=float(novelty["iqr"]), label=int(row["label"])))
    return examples


# ---------------------------------------------------------------------------
# Retrain + back-test promotion gate


@dataclass(frozen=True)
class BacktestMetrics:
    tp: int
    fp: int
    fn: int

    @property
    def precision(self) -> float:
        return self.tp / (self.tp + self.fp) if (self.tp + self.fp) else 1.0

    @property
    def recall(self) -> float:
        return self.tp / (self.tp + self.fn) if (self.tp + self.fn) else 1.0

    def to_dict(self) -> dict:
        return {
            "tp": self.tp,
            "fp": self.fp,
            "fn": self.fn,
            "precision": self.precision,
            "recall": self.recall,
        }


@dataclass(frozen=True)
class TuningRun:
    run_id: str
    trigger: str  # manual | auto
    candidate: dict  # serialized candidate ModelState
    candidate_metrics: BacktestMetrics | None
    incumbent_metrics: BacktestMetrics | None
    promoted: bool
    error: str = ""

    def to_dict(self) -> dict:
        return {
            "run_id": self.run_id,
            "trigger": self.trigger,
            "candidate": self.candidate,
            "metrics": {
                "candidate": self.candidate_metrics.to_dict() if self.candidate_metrics else None,
                "incumbent": self.incumbent_metrics.to_dict() if self.incumbent_metrics else None,
            },
            "promoted": self.promoted,
            "error": self.error,
        }


def _standardize_and_train(
    rows: list[list[float]],
    labels: list[int],
    names: tuple[str, ...],
    version: int,
    l2: float = 1e-3,
) -> LogisticModel:
    """Train on standardized features, then unfold the scaler into the weights
    so the stored model applies to raw features."""
    x = np.asarray(rows, dtype=float)
    y = np.asarray(labels, dtype=int)
    means = x.mean(axis=0)
    sds = x.std(axis=0, ddof=1) if len(rows) > 1 else np.ones(x.shape[1])
    sds = np.where(sds < 1e-12, 1.0, sds)
    standardized = (x - means) / sds
    result = logreg_train(standardized, y, l2=l2, feature_names=names, version=version, max_epochs=3000)
    w_std = np.asarray(result.model.weights)
    w_raw = w_std / sds
    b_raw = result.model.bias - float((w_std * means / sds).sum())
    return LogisticModel(
        weights=tuple(float(v) for v in w_raw),
        bias=b_raw,
        feature_names=names,
        version=version,
    )


def train_direction_models(corpus: TrainingCorpus, version: int) -> dict[str, LogisticModel]:
    """One model per direction; raises DegenerateLabels if either direction
    lacks both classes."""
    models = {}
    for direction in ("origin", "destination"):
        rows, labels, names = corpus.matrix(direction)
        if not rows or len(set(labels)) < 2:
            raise DegenerateLabels(f"{direction} corpus lacks both classes")
        models[direction] = _standardize_and_train(rows, labels, names, version)
    return models


class TuningRunLog:
    def __init__(self, path: Path | None = None):
        self.path = Path(path) if path else None
        self.runs: list[dict] = []
        if self.path and self.path.exists():
            for line in self.path.read_text(encoding="utf-8").splitlines():
                if line.strip():
                    self.runs.append(json.loads(line))

    def append(self, run: TuningRun) -> None:
        doc = run.to_dict()
        self.runs.append(doc)
        if self.path:
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(doc) + "\n")


def retrain_and_backtest(
    corpus: TrainingCorpus,
    incumbent: ModelState,
    replay: Callable[[ModelState], BacktestMetrics],
    trigger: str = "manual",
    retuned_phi: float | None = None,
    run_id: str | None = None,
) -> tuple[TuningRun, ModelState]:
    """Train candidate models, replay held-out windows with candidate vs
    incumbent, and promote only if precision does not drop and recall drops by
    at most 5 points. Returns the run record and the state to use afterwards
    (candidate if promoted, else the incumbent)."""
    run_id = run_id or uuid.uuid4().hex[:12]
    try:
        models = train_direction_models(corpus, version=incumbent.version + 1)
    except DegenerateLabels as exc:
        run = TuningRun(
            run_id=run_id,
            trigger=trigger,
            candidate={},
            candidate_metrics=None,
            incumbent_metrics=None,
            promoted=False,
            error=str(exc),
        )
        return run, incumbent

    changes: dict = {
        "logreg_origin": models["origin"],
        "logreg_dest": models["destination"],
    }
    if retuned_phi is not None:
        changes["phi"] = retuned_phi
    candidate = incumbent.with_updates(**changes)
    candidate_metrics = replay(candidate)
    incumbent_metrics = replay(incumbent)
    promoted = (
        candidate_metrics.precision >= incumbent_metrics.precision
        and candidate_metrics.recall >= incumbent_metrics.recall - 0.05
    )
    run = TuningRun(
        run_id=run_id,
        trigger=trigger,
        candidate=candidate.to_dict(),
        candidate_metrics=candidate_metrics,
        incumbent_metrics=incumbent_metrics,
        promoted=promoted,
    )
    return run, (candidate if promoted else incumbent)
