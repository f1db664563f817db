from __future__ import annotations

import sys
from datetime import datetime, timezone
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from fame.cdr_ingest import CdrRecord

UTC = timezone.utc


def ts(raw: str) -> datetime:
    """Shorthand for UTC timestamps in tests, e.g. ts('2015-03-05T01:10:00')."""
    return datetime.fromisoformat(raw).replace(tzinfo=UTC)


_SEQ = {"n": 0}


def record(
    start: datetime,
    origin: str = "4631749882",
    dest: str = "37126110536",
    prefix: str = "371",
    operator: str = "4444",
    duration: int = 180,
    answered: bool = True,
) -> CdrRecord:
    _SEQ["n"] += 1
    return CdrRecord(
        call_id=f"t{_SEQ['n']:07d}",
        start_time=start,
        origin_number=origin,
        dest_number=dest,
        dest_prefix=prefix,
        operator_code=operator,
        duration_seconds=duration if answered else 0,
        answered=answered,
    )


def spread_calls(
    day: datetime,
    total_seconds: int,
    n_calls: int,
    hour: int = 1,
    **kwargs,
) -> list[CdrRecord]:
    """n answered calls inside one hour summing exactly to total_seconds."""
    base = total_seconds // n_calls
    remainder = total_seconds - base * n_calls
    out = []
    for i in range(n_calls):
        dur = base + (1 if i < remainder else 0)
        out.append(
            record(
                day.replace(hour=hour, minute=min(i, 59), second=0),
                duration=dur,
                **kwargs,
            )
        )
    return out


@pytest.fixture
def tmp_data_dir(tmp_path) -> Path:
    d = tmp_path / "data"
    d.mkdir()
    return d
