"""Fraud-detection pipeline: history block match, threshold rules, logistic
scores, combined through tunable weights into investigator alerts."""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .dest_pipeline import DEST_FEATURES, DestCandidate
from .errors import ConfigError, DataError
from .origin_pipeline import ORIGIN_FEATURES, OriginCandidate
from .stats_core import LogisticModel, logreg_predict

logger = logging.getLogger(__name__)

MIN_BLOCK_DIGITS = 6

ORIGIN_DETECT_FEATURES = ORIGIN_FEATURES + ("m_dist", "dev_x", "dev_y")
DEST_DETECT_FEATURES = DEST_FEATURES + ("iqr_distance",)
DIRECTIONS = ("origin", "destination")

# Deviation z-features are clamped for model/rule input so the degenerate-sd
# sentinel (1e9) cannot dominate standardization of the training corpus.
DEV_FEATURE_CAP = 100.0


class UnknownFeature(ConfigError):
    """A rule threshold references a feature the direction does not expose."""


class UnknownAlert(DataError):
    pass


# ---------------------------------------------------------------------------
# Fraud-block repository


@dataclass(frozen=True)
class FraudBlockEntry:
    prefix: str
    direction: str  # origin | destination
    source: str  # analyst | seed
    confirmed_at: datetime
    note: str = ""

    def __post_init__(self):
        if not self.prefix.isdigit() or len(self.prefix) < MIN_BLOCK_DIGITS:
            raise DataError(f"block prefix must be >= {MIN_BLOCK_DIGITS} digits, got {self.prefix!r}")
        if self.direction not in DIRECTIONS:
            raise DataError(f"bad direction {self.direction!r}")

    def to_dict(self) -> dict:
        return {
            "prefix": self.prefix,
            "direction": self.direction,
            "source": self.source,
            "confirmed_at": self.confirmed_at.strftime("%Y-%m-%dT%H:%M:%SZ"),
            "note": self.note,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "FraudBlockEntry":
        return cls(
            prefix=doc["prefix"],
            direction=doc["direction"],
            source=doc.get("source", "analyst"),
            confirmed_at=datetime.strptime(doc["confirmed_at"], "%Y-%m-%dT%H:%M:%SZ").replace(tzinfo=timezone.utc),
            note=doc.get("note", ""),
        )


class FraudRepository:
    """Confirmed fraudulent number blocks, unique by (prefix, direction)."""

    def __init__(self, entries: Iterable[FraudBlockEntry] = ()):
        self._entries: dict[tuple[str, str], FraudBlockEntry] = {}
        for e in entries:
            self.add(e)

    def __len__(self) -> int:
        return len(self._entries)

    def entries(self) -> list[FraudBlockEntry]:
        return [self._entries[k] for k in sorted(self._entries)]

    def add(self, entry: FraudBlockEntry) -> None:
        self._entries[(entry.prefix, entry.direction)] = entry

    def remove(self, prefix: str, direction: str) -> None:
        self._entries.pop((prefix, direction), None)

    def match(self, number: str, direction: str) -> FraudBlockEntry | None:
        """Longest entry (same direction, >= 6 digits) that prefixes the number."""
        best: FraudBlockEntry | None = None
        for (prefix, entry_dir), entry in self._entries.items():
            if entry_dir != direction:
                continue
            if number.startswith(prefix) and (best is None or len(prefix) > len(best.prefix)):
                best = entry
        return best

    def save(self, path: Path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for entry in self.entries():
                fh.write(json.dumps(entry.to_dict()) + "\n")

    @classmethod
    def load(cls, path: Path) -> "FraudRepository":
        repo = cls()
        path = Path(path)
        if not path.exists():
            return repo
        for line in path.read_text(encoding="utf-8").splitlines():
            if line.strip():
                repo.add(FraudBlockEntry.from_dict(json.loads(line)))
        return repo


def history_match(number: str, direction: str, repository: FraudRepository) -> tuple[int, FraudBlockEntry | None]:
    entry = repository.match(number, direction)
    return (1 if entry is not None else 0), entry


# ---------------------------------------------------------------------------
# Threshold rules


def validate_rule_thresholds(direction: str, thresholds: Mapping[str, float]) -> None:
    known = ORIGIN_DETECT_FEATURES if direction == "origin" else DEST_DETECT_FEATURES
    for name in thresholds:
        if name not in known:
            raise UnknownFeature(f"{direction} rule on unknown feature {name!r} (known: {known})")


def threshold_rules(features: Mapping[str, float], thresholds: Mapping[str, float]) -> tuple[int, list[str]]:
    """Fires iff any feature strictly exceeds its cap."""
    fired = [
        f"{name}>{cap:g}"
        for name, cap in sorted(thresholds.items())
        if name in features and features[name] > cap
    ]
    return (1 if fired else 0), fired


# ---------------------------------------------------------------------------
# Model state


@dataclass(frozen=True)
class ModelState:
    """Every tunable the detection pipeline consumes, versioned."""

    phi: float = 3.0
    z_threshold: float = 4.0
    rule_thresholds: Mapping[str, Mapping[str, float]] = field(
        default_factory=lambda: {"origin": {}, "destination": {}}
    )
    combiner_weights: tuple[float, float, float] = (0.5, 0.2, 0.3)  # history, threshold, logreg
    alert_cutoff: float = 0.5
    logreg_origin: LogisticModel | None = None
    logreg_dest: LogisticModel | None = None
    version: int = 1

    def __post_init__(self):
        if self.phi <= 0:
            raise ConfigError(f"phi must be positive, got {self.phi}")
        if self.z_threshold <= 0:
            raise ConfigError(f"z_threshold must be positive, got {self.z_threshold}")
        w = self.combiner_weights
        if len(w) != 3 or any(v < 0 for v in w) or abs(sum(w) - 1.0) > 1e-9:
            raise ConfigError(f"combiner weights must be >= 0 and sum to 1, got {w}")
        if not 0.0 < self.alert_cutoff < 1.0:
            raise ConfigError(f"alert_cutoff must be in (0, 1), got {self.alert_cutoff}")
        for direction in DIRECTIONS:
            validate_rule_thresholds(direction, self.rule_thresholds.get(direction, {}))

    def model_for(self, direction: str) -> LogisticModel | None:
        return self.logreg_origin if direction == "origin" else self.logreg_dest

    def with_updates(self, **changes) -> "ModelState":
        """New state with changes applied and the version bumped."""
        changes.setdefault("version", self.version + 1)
        return replace(self, **changes)

    def to_dict(self) -> dict:
        return {
            "phi": self.phi,
            "z_threshold": self.z_threshold,
            "rule_thresholds": {d: dict(self.rule_thresholds.get(d, {})) for d in DIRECTIONS},
            "combiner_weights": list(self.combiner_weights),
            "alert_cutoff": self.alert_cutoff,
            "logreg": {
                "origin": json.loads(self.logreg_origin.to_json()) if self.logreg_origin else None,
                "destination": json.loads(self.logreg_dest.to_json()) if self.logreg_dest else None,
            },
            "version": self.version,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ModelState":
        logreg = doc.get("logreg", {})

        def model(key: str) -> LogisticModel | None:
            raw = logreg.get(key)
            return LogisticModel.from_json(json.dumps(raw)) if raw else None

        return cls(
            phi=float(doc["phi"]),
            z_threshold=float(doc["z_threshold"]),
            rule_thresholds={d: dict(doc.get("rule_thresholds", {}).get(d, {})) for d in DIRECTIONS},
            combiner_weights=tuple(float(v) for v in doc["combiner_weights"]),
            alert_cutoff=float(doc["alert_cutoff"]),
            logreg_origin=model("origin"),
            logreg_dest=model("destination"),
            version=int(doc["version"]),
        )

    def save(self, path: Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: Path) -> "ModelState":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


# ---------------------------------------------------------------------------
# Combiner


def combine(
    history: int,
    threshold_hit: int,
    logreg_p: float | None,
    weights: tuple[float, float, float],
    cutoff: float,
) -> tuple[float, bool]:
    """Convex weighted sum; a history match always alerts.

    A missing logistic model renormalizes its weight over the remaining
    detectors.
    """
    w_h, w_t, w_l = weights
    if logreg_p is None:
        remaining = w_h + w_t
        if remaining <= 0:
            return (0.0, history == 1)
        w_h, w_t, w_l = w_h / remaining, w_t / remaining, 0.0
        logreg_p = 0.0
    combined = w_h * history + w_t * threshold_hit + w_l * logreg_p
    return combined, combined >= cutoff or history == 1


# ---------------------------------------------------------------------------
# Alerts


OPEN = "open"
CONFIRMED = "confirmed_fraud"
FALSE_POSITIVE = "false_positive"
ALERT_STATES = (OPEN, CONFIRMED, FALSE_POSITIVE)


@dataclass
class Alert:
    alert_id: str
    number: str
    direction: str
    window_start: datetime
    window_end: datetime
    scores: dict
    evidence: list
    features: dict
    state: str
    created_at: datetime
    model_version: int

    def to_dict(self) -> dict:
        return {
            "alert_id": self.alert_id,
            "subject": {"number": self.number, "direction": self.direction},
            "window": {
                "start": self.window_start.strftime("%Y-%m-%dT%H:%M:%SZ"),
                "end": self.window_end.strftime("%Y-%m-%dT%H:%M:%SZ"),
            },
            "scores": self.scores,
            "evidence": self.evidence,
            "features": self.features,
            "state": self.state,
            "created_at": self.created_at.strftime("%Y-%m-%dT%H:%M:%SZ"),
            "model_version": self.model_version,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "Alert":
        def ts(raw: str) -> datetime:
            return datetime.strptime(raw, "%Y-%m-%dT%H:%M:%SZ").replace(tzinfo=timezone.utc)

        return cls(
            alert_id=doc["alert_id"],
            number=doc["subject"]["number"],
            direction=doc["subject"]["direction"],
            window_start=ts(doc["window"]["start"]),
            window_end=ts(doc["window"]["end"]),
            scores=doc["scores"],
            evidence=doc["evidence"],
            features=doc.get("features", {}),
            state=doc["state"],
            created_at=ts(doc["created_at"]),
            model_version=int(doc["model_version"]),
        )


def alert_id_for(number: str, direction: str, window_start: datetime, window_end: datetime, model_version: int) -> str:
    """Stable hash of (subject, window, model version)."""
    raw = f"{direction}|{number}|{window_start.isoformat()}|{window_end.isoformat()}|v{model_version}"
    return hashlib.sha1(raw.encode("utf-8")).hexdigest()[:16]


class AlertLog:
    """Append-only JSON-lines event log with a materialized in-memory view."""

    def __init__(self, path: Path | None = None):
        self.path = Path(path) if path else None
        self._alerts: dict[str, Alert] = {}
        self._order: list[str] = []
        if self.path and self.path.exists():
            for line in self.path.read_text(encoding="utf-8").splitlines():
                if line.strip():
                    self._replay(json.loads(line))

    def _replay(self, event: dict) -> None:
        if event.get("event") == "alert":
            alert = Alert.from_dict(event["alert"])
            if alert.alert_id not in self._alerts:
                self._alerts[alert.alert_id] = alert
                self._order.append(alert.alert_id)
        elif event.get("event") == "state_change":
            alert = self._alerts.get(event["alert_id"])
            if alert is not None:
                alert.state = event["state"]

    def _append(self, event: dict) -> None:
        if self.path:
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(event) + "\n")

    def record(self, alert: Alert) -> bool:
        """Idempotent by alert_id; returns True when newly recorded."""
        if alert.alert_id in self._alerts:
            return False
        self._alerts[alert.alert_id] = alert
        self._order.append(alert.alert_id)
        self._append({"event": "alert", "alert": alert.to_dict()})
        return True

    def set_state(self, alert_id: str, state: str, analyst: str = "", at: datetime | None = None) -> Alert:
        if state not in (CONFIRMED, FALSE_POSITIVE):
            raise DataError(f"bad alert state {state!r}")
        alert = self._alerts.get(alert_id)
        if alert is None:
            raise UnknownAlert(alert_id)
        alert.state = state
        self._append(
            {
                "event": "state_change",
                "alert_id": alert_id,
                "state": state,
                "analyst": analyst,
                "at": (at or datetime.now(timezone.utc)).strftime("%Y-%m-%dT%H:%M:%SZ"),
            }
        )
        return alert

    def get(self, alert_id: str) -> Alert:
        alert = self._alerts.get(alert_id)
        if alert is None:
            raise UnknownAlert(alert_id)
        return alert

    def __len__(self) -> int:
        return len(self._alerts)

    def query(
        self,
        state: str | None = None,
        direction: str | None = None,
        limit: int = 100,
        offset: int = 0,
    ) -> list[Alert]:
        """Newest first (by creation order, most recent appended last)."""
        out = []
        for alert_id in reversed(self._order):
            alert = self._alerts[alert_id]
            if state and alert.state != state:
                continue
            if direction and alert.direction != direction:
                continue
            out.append(alert)
        return out[offset : offset + limit]

    def all(self) -> list[Alert]:
        return [self._alerts[a] for a in self._order]


# ---------------------------------------------------------------------------
# Detection


def _cap_dev(value: float) -> float:
    return max(-DEV_FEATURE_CAP, min(DEV_FEATURE_CAP, value))


def origin_detect_features(candidate: OriginCandidate) -> dict[str, float]:
    v = candidate.vector
    dev = candidate.deviation
    return {
        "attempts": float(v.attempts),
        "total_minutes": v.total_minutes,
        "mean_call_minutes": v.mean_call_minutes,
        "answer_ratio": v.answer_ratio,
        "distinct_dests": float(v.distinct_dests),
        "m_dist": v.m_dist if v.m_dist is not None else 0.0,
        "dev_x": _cap_dev(dev.dev_x) if dev else 0.0,
        "dev_y": _cap_dev(dev.dev_y) if dev else 0.0,
    }


def dest_detect_features(candidate: DestCandidate) -> dict[str, float]:
    v = candidate.vector
    return {
        "calls": float(v.calls),
        "total_minutes": v.total_minutes,
        "mean_minutes": v.mean_minutes,
        "distinct_origins": float(v.distinct_origins),
        "iqr_distance": candidate.iqr_distance,
    }


_LOGGED_MISSING_MODEL: set[str] = set()


def _score_candidate(
    number: str,
    direction: str,
    features: dict[str, float],
    novelty_evidence: dict,
    window_start: datetime,
    window_end: datetime,
    state: ModelState,
    repository: FraudRepository,
) -> Alert | None:
    history, entry = history_match(number, direction, repository)
    rule_hit, fired = threshold_rules(features, state.rule_thresholds.get(direction, {}))
    model = state.model_for(direction)
    if model is None:
        if direction not in _LOGGED_MISSING_MODEL:
            logger.warning("no logistic model for %s; renormalizing combiner weights", direction)
            _LOGGED_MISSING_MODEL.add(direction)
        p = None
    else:
        p = logreg_predict(model, [features[name] for name in model.feature_names])
    combined, is_alert = combine(history, rule_hit, p, state.combiner_weights, state.alert_cutoff)
    if not is_alert:
        return None
    evidence = [
        novelty_evidence,
        {"kind": "history", "matched": history == 1, "entry": entry.to_dict() if entry else None},
        {"kind": "threshold", "fired_rules": fired},
        {"kind": "logreg", "probability": p},
    ]
    return Alert(
        alert_id=alert_id_for(number, direction, window_start, window_end, state.version),
        number=number,
        direction=direction,
        window_start=window_start,
        window_end=window_end,
        scores={"history": history, "threshold": rule_hit, "logreg": p, "combined": combined},
        evidence=evidence,
        features=features,
        state=OPEN,
        created_at=window_end,
        model_version=state.version,
    )


def detect(
    origin_candidates: Sequence[OriginCandidate],
    dest_candidates: Sequence[DestCandidate],
    state: ModelState,
    repository: FraudRepository,
) -> list[Alert]:
    """Run all three detectors over every candidate; pure in its inputs.

    Same subject + window + model version always produces the same alert_id,
    so replays are idempotent.
    """
    alerts: list[Alert] = []
    for cand in origin_candidates:
        v = cand.vector
        alert = _score_candidate(
            v.origin_number,
            "origin",
            origin_detect_features(cand),
            cand.evidence(),
            v.window.start,
            v.window.end,
            state,
            repository,
        )
        if alert is not None:
            alerts.append(alert)
    for cand in dest_candidates:
        v = cand.vector
        alert = _score_candidate(
            v.dest_number,
            "destination",
            dest_detect_features(cand),
            cand.evidence(),
            v.window.start,
            v.window.end,
            state,
            repository,
        )
        if alert is not None:
            alerts.append(alert)
    alerts.sort(key=lambda a: (a.window_start, a.direction, a.number))
    return alerts
