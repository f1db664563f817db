"""Per-operator traffic profiles over sliding hour blocks, and live deviations.

A block starts at hour h and covers hours h..min(h+block_hours-1, 23) of one
calendar date (day-scoped, so a day's metrics depend only on that day's
records). With stride 1 that is 24 keys per day per (operator, dest_prefix).
Metrics per block: x = total duration in minutes, y = answered-call count,
z = call attempts (carried, never thresholded).
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from datetime import date, timedelta
from pathlib import Path
from typing import Iterable, Sequence

from .cdr_ingest import CdrRecord
from .errors import DataError
from .stats_core import RunningStats, SampleStats

logger = logging.getLogger(__name__)

# Degenerate-sd deviation sentinel: large but finite so evidence stays strict JSON.
SENTINEL_DEV = 1e9

DAY_NAMES = ("Mon", "Tue", "Wed", "Thu", "Fri", "Sat", "Sun")


class UnknownKey(DataError):
    """No profile for the requested block key (cold start)."""


class OutOfOrderDay(DataError):
    """update_profiles received a day at or before the last profiled date."""


@dataclass(frozen=True, order=True)
class BlockKey:
    operator_code: str
    dest_prefix: str
    day_of_week: int  # 0=Mon .. 6=Sun
    block: int  # start hour 0..23

    @property
    def day_name(self) -> str:
        return DAY_NAMES[self.day_of_week]

    def to_dict(self) -> dict:
        return {
            "operator_code": self.operator_code,
            "dest_prefix": self.dest_prefix,
            "day_of_week": self.day_of_week,
            "block": self.block,
        }


@dataclass(frozen=True)
class OperatorProfile:
    key: BlockKey
    stats_x: SampleStats  # total duration minutes per block
    stats_y: SampleStats  # answered calls per block
    stats_z: SampleStats  # call attempts per block
    n_observations: int

    @property
    def low_confidence(self) -> bool:
        return self.n_observations <= 1


@dataclass(frozen=True)
class DeviationReport:
    key: BlockKey
    observed_x: float
    observed_y: float
    dev_x: float
    dev_y: float
    flagged: bool
    low_confidence: bool

    def to_dict(self) -> dict:
        return {
            "key": self.key.to_dict(),
            "observed_x": self.observed_x,
            "observed_y": self.observed_y,
            "dev_x": self.dev_x,
            "dev_y": self.dev_y,
            "flagged": self.flagged,
            "low_confidence": self.low_confidence,
        }


class _Acc:
    __slots__ = ("x", "y", "z")

    def __init__(self, x: RunningStats | None = None, y: RunningStats | None = None, z: RunningStats | None = None):
        self.x = x or RunningStats()
        self.y = y or RunningStats()
        self.z = z or RunningStats()

    def copy(self) -> "_Acc":
        return _Acc(self.x.copy(), self.y.copy(), self.z.copy())


def _zero_acc(n: int) -> _Acc:
    acc = _Acc()
    for stat in (acc.x, acc.y, acc.z):
        stat.n = n  # n zero observations: mean 0, m2 0 exactly
    return acc


_KeyT = tuple[str, str, int, int]


class ProfileStore:
    """Immutable-by-convention snapshot of block profiles.

    Readers share a snapshot; updates go through update_profiles, which
    returns a fresh store.
    """

    def __init__(self, block_hours: int = 6, stride_hours: int = 1):
        if not 1 <= block_hours <= 24:
            raise DataError(f"block_hours must be 1..24, got {block_hours}")
        if not 1 <= stride_hours <= block_hours:
            raise DataError(f"stride_hours must be 1..block_hours, got {stride_hours}")
        self.block_hours = block_hours
        self.stride_hours = stride_hours
        self._acc: dict[_KeyT, _Acc] = {}
        self.pairs: set[tuple[str, str]] = set()
        self.dates: list[date] = []
        self.weekday_counts: list[int] = [0] * 7

    # -- queries ------------------------------------------------------------

    def __len__(self) -> int:
        return len(self._acc)

    def has_key(self, key: BlockKey) -> bool:
        return (key.operator_code, key.dest_prefix, key.day_of_week, key.block) in self._acc

    def profile(self, key: BlockKey) -> OperatorProfile:
        acc = self._acc.get((key.operator_code, key.dest_prefix, key.day_of_week, key.block))
        if acc is None or acc.x.n < 1:
            raise UnknownKey(f"no profile for {key}")
        return OperatorProfile(
            key=key,
            stats_x=acc.x.snapshot(),
            stats_y=acc.y.snapshot(),
            stats_z=acc.z.snapshot(),
            n_observations=acc.x.n,
        )

    def profiles(self) -> list[OperatorProfile]:
        out = []
        for k in sorted(self._acc):
            out.append(self.profile(BlockKey(*k)))
        return out

    def deviation(
        self,
        key: BlockKey,
        observed_x: float,
        observed_y: float,
        z_threshold: float = 4.0,
    ) -> DeviationReport:
        """z-scores of live block metrics against the profile for key."""
        prof = self.profile(key)  # raises UnknownKey on cold start

        def dev(observed: float, stats: SampleStats) -> float:
            if stats.sd == 0.0:
                return 0.0 if observed == stats.mean else SENTINEL_DEV
            return (observed - stats.mean) / stats.sd

        dev_x = dev(observed_x, prof.stats_x)
        dev_y = dev(observed_y, prof.stats_y)
        return DeviationReport(
            key=key,
            observed_x=observed_x,
            observed_y=observed_y,
            dev_x=dev_x,
            dev_y=dev_y,
            flagged=max(abs(dev_x), abs(dev_y)) > z_threshold,
            low_confidence=prof.low_confidence,
        )

    def copy(self) -> "ProfileStore":
        dup = ProfileStore(self.block_hours, self.stride_hours)
        dup._acc = {k: acc.copy() for k, acc in self._acc.items()}
        dup.pairs = set(self.pairs)
        dup.dates = list(self.dates)
        dup.weekday_counts = list(self.weekday_counts)
        return dup

    # -- persistence ----------------------------------------------------------

    def to_jsonl(self, path: Path) -> None:
        path = Path(path)
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            meta = {
                "kind": "meta",
                "block_hours": self.block_hours,
                "stride_hours": self.stride_hours,
                "dates": [d.isoformat() for d in self.dates],
            }
            fh.write(json.dumps(meta) + "\n")
            for k in sorted(self._acc):
                acc = self._acc[k]
                row = {
                    "operator_code": k[0],
                    "dest_prefix": k[1],
                    "day_of_week": k[2],
                    "block": k[3],
                    "n": acc.x.n,
                    "mean_x": acc.x.mean,
                    "m2_x": acc.x.m2,
                    "sd_x": acc.x.sd,
                    "mean_y": acc.y.mean,
                    "m2_y": acc.y.m2,
                    "sd_y": acc.y.sd,
                    "mean_z": acc.z.mean,
                    "m2_z": acc.z.m2,
                    "sd_z": acc.z.sd,
                }
                fh.write(json.dumps(row) + "\n")

    @classmethod
    def from_jsonl(cls, path: Path) -> "ProfileStore":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        if not lines:
            return cls()
        meta = json.loads(lines[0])
        if meta.get("kind") != "meta":
            raise DataError("profile store file missing meta line")
        store = cls(block_hours=int(meta["block_hours"]), stride_hours=int(meta["stride_hours"]))
        store.dates = [date.fromisoformat(d) for d in meta["dates"]]
        for d in store.dates:
            store.weekday_counts[d.weekday()] += 1
        for line in lines[1:]:
            row = json.loads(line)
            key = (row["operator_code"], row["dest_prefix"], int(row["day_of_week"]), int(row["block"]))
            acc = _Acc(
                RunningStats(int(row["n"]), float(row["mean_x"]), float(row["m2_x"])),
                RunningStats(int(row["n"]), float(row["mean_y"]), float(row["m2_y"])),
                RunningStats(int(row["n"]), float(row["mean_z"]), float(row["m2_z"])),
            )
            store._acc[key] = acc
            store.pairs.add((key[0], key[1]))
        return store


# ---------------------------------------------------------------------------
# Aggregation helpers


def _day_cells(records: Iterable[CdrRecord], exclude=None) -> tuple[dict, date | None, date | None]:
    """First pass: per (operator, prefix) per date, hourly (duration_s, answered, attempts)."""
    by_pair: dict[tuple[str, str], dict[date, list[list[float]]]] = {}
    min_d: date | None = None
    max_d: date | None = None
    for r in records:
        if exclude is not None and exclude(r):
            continue
        st = r.start_time
        d = st.date()
        pair = (r.operator_code, r.dest_prefix)
        days = by_pair.get(pair)
        if days is None:
            by_pair[pair] = days = {}
        cell = days.get(d)
        if cell is None:
            days[d] = cell = [[0.0] * 24, [0.0] * 24, [0.0] * 24]
        h = st.hour
        cell[0][h] += r.duration_seconds
        cell[1][h] += r.answered
        cell[2][h] += 1
        if min_d is None or d < min_d:
            min_d = d
        if max_d is None or d > max_d:
            max_d = d
    return by_pair, min_d, max_d


def _cell_block_metrics(cell: list[list[float]] | None, start: int, end: int) -> tuple[float, float, float]:
    if cell is None:
        return 0.0, 0.0, 0.0
    x = sum(cell[0][start:end]) / 60.0
    y = sum(cell[1][start:end])
    z = sum(cell[2][start:end])
    return x, y, z


def _repository_filter(repository):
    if repository is None:
        return None

    def exclude(r: CdrRecord) -> bool:
        return (
            repository.match(r.origin_number, "origin") is not None
            or repository.match(r.dest_number, "destination") is not None
        )

    return exclude


def build_profiles(
    records: Sequence[CdrRecord],
    window_days: int = 30,
    block_hours: int = 6,
    stride_hours: int = 1,
    repository=None,
) -> ProfileStore:
    """Batch profile build: two-pass stats over per-date block metrics.

    Every calendar date in the window counts for every known
    (operator, prefix); blocks with no traffic record a 0 observation.
    """
    store = ProfileStore(block_hours=block_hours, stride_hours=stride_hours)
    by_pair, min_d, max_d = _day_cells(records, _repository_filter(repository))
    if max_d is None:
        return store
    span_start = max(min_d, max_d - timedelta(days=window_days - 1))
    all_dates = [span_start + timedelta(days=i) for i in range((max_d - span_start).days + 1)]
    store.dates = all_dates
    for d in all_dates:
        store.weekday_counts[d.weekday()] += 1
    start_hours = range(0, 24, stride_hours)

    per_key: dict[_KeyT, tuple[list[float], list[float], list[float]]] = {}
    for (op, prefix), days in by_pair.items():
        store.pairs.add((op, prefix))
        for d in all_dates:
            cell = days.get(d)
            dow = d.weekday()
            for h in start_hours:
                x, y, z = _cell_block_metrics(cell, h, min(h + block_hours, 24))
                key = (op, prefix, dow, h)
                bucket = per_key.get(key)
                if bucket is None:
                    per_key[key] = bucket = ([], [], [])
                bucket[0].append(x)
                bucket[1].append(y)
                bucket[2].append(z)

    for key, (xs, ys, zs) in per_key.items():
        sx = SampleStats.from_samples(xs)
        sy = SampleStats.from_samples(ys)
        sz = SampleStats.from_samples(zs)
        acc = _Acc(
            RunningStats(sx.n, sx.mean, sx.sd ** 2 * (sx.n - 1)),
            RunningStats(sy.n, sy.mean, sy.sd ** 2 * (sy.n - 1)),
            RunningStats(sz.n, sz.mean, sz.sd ** 2 * (sz.n - 1)),
        )
        store._acc[key] = acc
    return store


def update_profiles(
    store: ProfileStore,
    new_day: date,
    records: Sequence[CdrRecord],
    repository=None,
) -> ProfileStore:
    """Roll one day into the profiles via the exact (n, mean, M2) recurrence.

    Returns a new snapshot; the input store is untouched. Records whose
    origin or destination matches a confirmed fraud-repository entry are
    excluded so they never contaminate the "normal" profile.
    """
    if store.dates and new_day <= store.dates[-1]:
        raise OutOfOrderDay(f"day {new_day} not after last profiled date {store.dates[-1]}")
    for r in records:
        if r.start_time.date() != new_day:
            raise DataError(f"record {r.call_id} dated {r.start_time.date()}, expected {new_day}")

    by_pair, _, _ = _day_cells(records, _repository_filter(repository))
    new = store.copy()
    dow = new_day.weekday()
    start_hours = range(0, 24, new.stride_hours)

    # New pairs get zero-backfilled keys for every weekday already covered,
    # exactly as a batch rebuild over the same dates would produce.
    for pair in by_pair:
        if pair not in new.pairs:
            new.pairs.add(pair)
            for wd in range(7):
                count = new.weekday_counts[wd]
                if count == 0:
                    continue
                for h in start_hours:
                    new._acc[(pair[0], pair[1], wd, h)] = _zero_acc(count)

    for op, prefix in new.pairs:
        days = by_pair.get((op, prefix))
        cell = days.get(new_day) if days else None
        for h in start_hours:
            x, y, z = _cell_block_metrics(cell, h, min(h + new.block_hours, 24))
            key = (op, prefix, dow, h)
            acc = new._acc.get(key)
            if acc is None:
                new._acc[key] = acc = _Acc()
            acc.x.push(x)
            acc.y.push(y)
            acc.z.push(z)

    new.dates.append(new_day)
    new.weekday_counts[dow] += 1
    return new
