"""Tumbling time windows anchored at UTC midnight."""

from __future__ import annotations

from dataclasses import dataclass
from datetime import datetime, timedelta
from typing import Iterable

from .cdr_ingest import CdrRecord
from .profiling import BlockKey


@dataclass(frozen=True, order=True)
class Window:
    start: datetime
    end: datetime

    def contains(self, ts: datetime) -> bool:
        return self.start <= ts < self.end

    def to_dict(self) -> dict:
        return {
            "start": self.start.strftime("%Y-%m-%dT%H:%M:%SZ"),
            "end": self.end.strftime("%Y-%m-%dT%H:%M:%SZ"),
        }


def window_for(ts: datetime, hours: int) -> Window:
    """The tumbling window of the given width containing ts (widths divide 24)."""
    if 24 % hours != 0:
        raise ValueError(f"window hours must divide 24, got {hours}")
    start = ts.replace(hour=(ts.hour // hours) * hours, minute=0, second=0, microsecond=0)
    return Window(start=start, end=start + timedelta(hours=hours))


def block_key_for(operator_code: str, dest_prefix: str, window: Window) -> BlockKey:
    return BlockKey(
        operator_code=operator_code,
        dest_prefix=dest_prefix,
        day_of_week=window.start.weekday(),
        block=window.start.hour,
    )


def partition_by_window(records: Iterable[CdrRecord], hours: int) -> dict[Window, list[CdrRecord]]:
    """Group records into tumbling windows, keyed in chronological order."""
    buckets: dict[Window, list[CdrRecord]] = {}
    for r in records:
        w = window_for(r.start_time, hours)
        buckets.setdefault(w, []).append(r)
    return dict(sorted(buckets.items()))
