"""CDR ingestion: CSV parsing, watched-directory streaming, synthetic scenarios.

Wire format (no header, UTF-8, LF):
    call_id,start_time,origin_number,dest_number,dest_prefix,operator_code,duration_seconds,answered
with start_time as UTC ISO-8601 ending in Z and answered in {0,1}.
"""

from __future__ import annotations

import logging
import math
import os
import random
import time
from dataclasses import dataclass
from datetime import datetime, timedelta, timezone
from pathlib import Path
from typing import Callable, Iterable, Iterator

from .errors import DataError

logger = logging.getLogger(__name__)

UTC = timezone.utc

COLUMNS = (
    "call_id",
    "start_time",
    "origin_number",
    "dest_number",
    "dest_prefix",
    "operator_code",
    "duration_seconds",
    "answered",
)


class MalformedLine(DataError):
    """Wrong column count."""

    def __init__(self, line: str, expected: int, actual: int):
        super().__init__(f"expected {expected} columns, got {actual}")
        self.line = line
        self.code = "MalformedLine"


class InvalidField(DataError):
    """A column failed validation; carries the column name and raw value."""

    def __init__(self, column: str, value: str, reason: str):
        super().__init__(f"{column}={value!r}: {reason}")
        self.column = column
        self.value = value
        self.code = f"InvalidField:{column}"


class InvalidSpec(DataError):
    """Scenario specification violates its invariants."""


@dataclass(slots=True)
class CdrRecord:
    """One call event. origin_number is the A-number, dest_number the B-number."""

    call_id: str
    start_time: datetime
    origin_number: str
    dest_number: str
    dest_prefix: str
    operator_code: str
    duration_seconds: int
    answered: bool


def _parse_timestamp(raw: str) -> datetime:
    # fast path for the canonical layout YYYY-MM-DDTHH:MM:SSZ
    if len(raw) == 20 and raw[19] == "Z" and raw[4] == "-" and raw[10] == "T":
        try:
            return datetime(
                int(raw[0:4]), int(raw[5:7]), int(raw[8:10]),
                int(raw[11:13]), int(raw[14:16]), int(raw[17:19]),
                tzinfo=UTC,
            )
        except ValueError as exc:
            raise InvalidField("start_time", raw, str(exc)) from None
    try:
        dt = datetime.fromisoformat(raw.replace("Z", "+00:00"))
    except ValueError:
        raise InvalidField("start_time", raw, "unparseable timestamp") from None
    if dt.tzinfo is None:
        raise InvalidField("start_time", raw, "naive timestamp; UTC offset required")
    return dt.astimezone(UTC)


def _validate_number(column: str, value: str) -> str:
    if not value.isdigit() or not 6 <= len(value) <= 15:
        raise InvalidField(column, value, "must be 6-15 digits")
    return value


def parse_cdr_line(line: str, schema: tuple[str, ...] = COLUMNS) -> CdrRecord:
    """Parse one CSV record into a validated CdrRecord."""
    parts = line.rstrip("\n").split(",")
    if len(parts) != len(schema):
        raise MalformedLine(line, len(schema), len(parts))
    if schema is not COLUMNS:
        order = {name: i for i, name in enumerate(schema)}
        parts = [parts[order[name]] for name in COLUMNS]
    call_id, ts, origin, dest, prefix, operator, dur_raw, ans_raw = parts
    start_time = _parse_timestamp(ts)
    _validate_number("origin_number", origin)
    _validate_number("dest_number", dest)
    if not dest.startswith(prefix):
        raise InvalidField("dest_prefix", prefix, "not a prefix of dest_number")
    try:
        duration = int(dur_raw)
    except ValueError:
        raise InvalidField("duration_seconds", dur_raw, "not an integer") from None
    if duration < 0:
        raise InvalidField("duration_seconds", dur_raw, "must be non-negative")
    if ans_raw == "1":
        answered = True
    elif ans_raw == "0":
        answered = False
    else:
        raise InvalidField("answered", ans_raw, "must be 0 or 1")
    if not answered and duration != 0:
        raise InvalidField("duration_seconds", dur_raw, "must be 0 when answered=0")
    return CdrRecord(call_id, start_time, origin, dest, prefix, operator, duration, answered)


def render_cdr_line(record: CdrRecord) -> str:
    """Inverse of parse_cdr_line for records with second-precision UTC timestamps."""
    ts = record.start_time.strftime("%Y-%m-%dT%H:%M:%SZ")
    return (
        f"{record.call_id},{ts},{record.origin_number},{record.dest_number},"
        f"{record.dest_prefix},{record.operator_code},{record.duration_seconds},"
        f"{1 if record.answered else 0}"
    )


def write_cdr_file(path: Path, records: Iterable[CdrRecord]) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        for r in records:
            fh.write(render_cdr_line(r))
            fh.write("\n")
    os.replace(tmp, path)  # atomic appearance for watchers


# ---------------------------------------------------------------------------
# Directory streaming with exactly-once ledger and dead-letter quarantine


class DirectoryStream:
    """Streams records from *.csv files in a directory, exactly once per file.

    Files are processed in lexicographic name order. Processed filenames go to
    the ledger so restarts never re-emit. Malformed rows are appended to the
    dead-letter file (raw line, tab, error code) and counted; they never abort
    the stream.
    """

    def __init__(
        self,
        directory: Path,
        poll_interval: float = 1.0,
        ledger_path: Path | None = None,
        deadletter_path: Path | None = None,
    ):
        self.directory = Path(directory)
        if not self.directory.is_dir():
            raise DataError(f"not a directory: {self.directory}")
        self.poll_interval = poll_interval
        self.ledger_path = Path(ledger_path) if ledger_path else self.directory / ".ledger"
        self.deadletter_path = Path(deadletter_path) if deadletter_path else self.directory / ".deadletter"
        self.processed: set[str] = set()
        if self.ledger_path.exists():
            self.processed.update(
                name for name in self.ledger_path.read_text(encoding="utf-8").splitlines() if name
            )
        self.records_emitted = 0
        self.malformed_lines = 0
        self.files_processed = 0

    def _pending_files(self) -> list[Path]:
        names = sorted(
            p.name for p in self.directory.iterdir() if p.is_file() and p.suffix == ".csv"
        )
        return [self.directory / n for n in names if n not in self.processed]

    def _quarantine(self, raw: str, code: str) -> None:
        self.malformed_lines += 1
        logger.debug("dead-lettering line (%s)", code)
        with open(self.deadletter_path, "a", encoding="utf-8") as fh:
            fh.write(f"{raw.rstrip(chr(10))}\t{code}\n")

    def _emit_file(self, path: Path) -> Iterator[CdrRecord]:
        with open(path, "r", encoding="utf-8") as fh:
            for raw in fh:
                if not raw.strip():
                    continue
                try:
                    yield parse_cdr_line(raw)
                except (MalformedLine, InvalidField) as exc:
                    self._quarantine(raw, exc.code)
                    continue
                self.records_emitted += 1

    def _mark_processed(self, path: Path) -> None:
        self.processed.add(path.name)
        self.files_processed += 1
        with open(self.ledger_path, "a", encoding="utf-8") as fh:
            fh.write(path.name + "\n")

    def scan_once(self) -> Iterator[CdrRecord]:
        """Emit all records from files not yet in the ledger, then mark them."""
        for path in self._pending_files():
            yield from self._emit_file(path)
            self._mark_processed(path)

    def watch(self, should_stop: Callable[[], bool]) -> Iterator[CdrRecord]:
        """Poll the directory until should_stop() is true; final scan on exit."""
        while True:
            yield from self.scan_once()
            if should_stop():
                break
            time.sleep(self.poll_interval)
        yield from self.scan_once()


# ---------------------------------------------------------------------------
# Synthetic scenario generation


@dataclass(frozen=True)
class ClassModel:
    """Per-class traffic model: log-normal durations, Poisson call arrivals."""

    mean_duration_min: float
    sd_duration_min: float
    calls_per_hour: float
    answer_prob: float = 0.9


DEFAULT_OPERATORS = ("3201", "3302", "3403", "3504", "3605")
DEFAULT_BACKGROUND_PREFIXES = ("31", "33", "34", "39", "44", "46", "47", "49")


@dataclass(frozen=True)
class ScenarioSpec:
    """Deterministic synthetic CDR workload with injected premium-rate fraud."""

    n_background_callers: int
    n_fraud_callers: int
    fraud_dest_prefixes: tuple[str, ...]
    background: ClassModel
    fraud: ClassModel
    seed: int
    span_start: datetime
    span_end: datetime
    operators: tuple[str, ...] = DEFAULT_OPERATORS
    background_dest_prefixes: tuple[str, ...] = DEFAULT_BACKGROUND_PREFIXES
    dest_pool_per_prefix: int = 400
    fraud_pool_per_prefix: int = 10

    def validate(self) -> None:
        if self.n_background_callers < 0 or self.n_fraud_callers < 0:
            raise InvalidSpec("caller counts must be >= 0")
        if self.n_background_callers + self.n_fraud_callers == 0:
            raise InvalidSpec("scenario needs at least one caller")
        if self.span_start >= self.span_end:
            raise InvalidSpec("span start must precede span end")
        if self.n_fraud_callers > 0 and not self.fraud_dest_prefixes:
            raise InvalidSpec("fraud callers need fraud_dest_prefixes")

    @classmethod
    def from_dict(cls, doc: dict) -> "ScenarioSpec":
        known = {
            "n_background_callers", "n_fraud_callers", "fraud_dest_prefixes",
            "duration_model", "call_rate_model", "answer_prob", "seed", "span",
            "operators", "background_dest_prefixes", "dest_pool_per_prefix",
            "fraud_pool_per_prefix",
        }
        unknown = set(doc) - known
        if unknown:
            raise InvalidSpec(f"unknown scenario keys: {sorted(unknown)}")
        try:
            dur = doc["duration_model"]
            rate = doc["call_rate_model"]
            ans = doc.get("answer_prob", {})
            span = doc["span"]
            spec = cls(
                n_background_callers=int(doc["n_background_callers"]),
                n_fraud_callers=int(doc["n_fraud_callers"]),
                fraud_dest_prefixes=tuple(doc.get("fraud_dest_prefixes", ())),
                background=ClassModel(
                    mean_duration_min=float(dur["background"]["mean"]),
                    sd_duration_min=float(dur["background"]["sd"]),
                    calls_per_hour=float(rate["background"]),
                    answer_prob=float(ans.get("background", 0.9)),
                ),
                fraud=ClassModel(
                    mean_duration_min=float(dur["fraud"]["mean"]),
                    sd_duration_min=float(dur["fraud"]["sd"]),
                    calls_per_hour=float(rate["fraud"]),
                    answer_prob=float(ans.get("fraud", 0.95)),
                ),
                seed=int(doc["seed"]),
                span_start=_parse_timestamp(span["start"]),
                span_end=_parse_timestamp(span["end"]),
                operators=tuple(doc.get("operators", DEFAULT_OPERATORS)),
                background_dest_prefixes=tuple(
                    doc.get("background_dest_prefixes", DEFAULT_BACKGROUND_PREFIXES)
                ),
                dest_pool_per_prefix=int(doc.get("dest_pool_per_prefix", 400)),
                fraud_pool_per_prefix=int(doc.get("fraud_pool_per_prefix", 10)),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise InvalidSpec(f"bad scenario spec: {exc}") from exc
        spec.validate()
        return spec


@dataclass(frozen=True)
class ScenarioLabels:
    """Ground truth: number -> is it fraudulent, per direction."""

    origin: dict[str, bool]
    dest: dict[str, bool]


@dataclass(frozen=True)
class _Caller:
    number: str
    operator: str
    fraud: bool
    child_seed: int


def _caller_pool(spec: ScenarioSpec) -> list[_Caller]:
    assign_rng = random.Random(spec.seed)
    callers = []
    for i in range(spec.n_background_callers):
        callers.append(
            _Caller(
                number=f"4631{700000 + i:07d}",
                operator=assign_rng.choice(spec.operators),
                fraud=False,
                child_seed=spec.seed * 1_000_003 + i,
            )
        )
    for i in range(spec.n_fraud_callers):
        callers.append(
            _Caller(
                number=f"4699{800000 + i:07d}",
                operator=assign_rng.choice(spec.operators),
                fraud=True,
                child_seed=spec.seed * 1_000_003 + spec.n_background_callers + i,
            )
        )
    return callers


def _lognormal_params(mean: float, sd: float) -> tuple[float, float]:
    # mu/sigma of ln X for a log-normal with the given mean and sd
    if mean <= 0:
        raise InvalidSpec("duration mean must be positive")
    sigma2 = math.log(1.0 + (sd / mean) ** 2)
    mu = math.log(mean) - sigma2 / 2.0
    return mu, math.sqrt(sigma2)


def generate_scenario(spec: ScenarioSpec) -> tuple[list[CdrRecord], ScenarioLabels]:
    """Generate a label-complete CDR workload; pure function of the spec."""
    spec.validate()
    callers = _caller_pool(spec)
    span_seconds = (spec.span_end - spec.span_start).total_seconds()
    raw: list[tuple[datetime, str, str, str, str, int, bool]] = []
    origin_labels: dict[str, bool] = {}
    dest_labels: dict[str, bool] = {}

    for caller in callers:
        origin_labels[caller.number] = caller.fraud
        model = spec.fraud if caller.fraud else spec.background
        prefixes = spec.fraud_dest_prefixes if caller.fraud else spec.background_dest_prefixes
        pool = spec.fraud_pool_per_prefix if caller.fraud else spec.dest_pool_per_prefix
        mu, sigma = _lognormal_params(model.mean_duration_min, model.sd_duration_min)
        rng = random.Random(caller.child_seed)
        rate_per_sec = model.calls_per_hour / 3600.0
        if rate_per_sec <= 0:
            continue
        t = 0.0
        while True:
            t += rng.expovariate(rate_per_sec)
            if t >= span_seconds:
                break
            start = spec.span_start + timedelta(seconds=int(t))
            prefix = rng.choice(prefixes)
            dest = f"{prefix}26{rng.randrange(pool) + 110000:06d}"
            answered = rng.random() < model.answer_prob
            duration = max(1, int(round(rng.lognormvariate(mu, sigma) * 60.0))) if answered else 0
            raw.append((start, caller.number, dest, prefix, caller.operator, duration, answered))
            dest_labels[dest] = caller.fraud

    raw.sort(key=lambda item: (item[0], item[1], item[2]))
    records = [
        CdrRecord(
            call_id=f"c{i:07d}",
            start_time=start,
            origin_number=origin,
            dest_number=dest,
            dest_prefix=prefix,
            operator_code=operator,
            duration_seconds=duration,
            answered=answered,
        )
        for i, (start, origin, dest, prefix, operator, duration, answered) in enumerate(raw)
    ]
    return records, ScenarioLabels(origin=origin_labels, dest=dest_labels)
