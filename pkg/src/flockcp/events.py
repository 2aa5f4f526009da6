"""Trajectory events and the newline-delimited event log.

One JSON object per line, keys always in this order::

    {"time": 0.1234, "site": [0, 1], "kind": "EXTERNAL_BIRTH", "new_state": 3, "source": [0, 0]}

``source`` is ``null`` except for external births.  Times are written with
``repr`` so a log round-trips exactly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import IO, Iterable, Iterator, List, Optional, Tuple

INTERNAL_BIRTH = "INTERNAL_BIRTH"
EXTERNAL_BIRTH = "EXTERNAL_BIRTH"
DISASTER = "DISASTER"

KINDS = (INTERNAL_BIRTH, EXTERNAL_BIRTH, DISASTER)
LOG_FIELDS = ("time", "site", "kind", "new_state", "source")


@dataclass(frozen=True)
class TrajectoryEvent:
    time: float
    site: Tuple[int, ...]
    kind: str
    new_state: int
    source: Optional[Tuple[int, ...]] = None

    def to_json(self) -> str:
        return json.dumps(
            {
                "time": self.time,
                "site": list(self.site),
                "kind": self.kind,
                "new_state": self.new_state,
                "source": list(self.source) if self.source is not None else None,
            }
        )

    @classmethod
    def from_json(cls, line: str) -> "TrajectoryEvent":
        rec = json.loads(line)
        src = rec.get("source")
        return cls(
            time=float(rec["time"]),
            site=tuple(rec["site"]),
            kind=rec["kind"],
            new_state=int(rec["new_state"]),
            source=tuple(src) if src is not None else None,
        )


def write_event_log(events: Iterable[TrajectoryEvent], fh: IO[str]) -> int:
    n = 0
    for ev in events:
        fh.write(ev.to_json())
        fh.write("\n")
        n += 1
    return n


def read_event_log(fh: IO[str]) -> List[TrajectoryEvent]:
    return [TrajectoryEvent.from_json(line) for line in fh if line.strip()]


def check_times(events: List[TrajectoryEvent]) -> bool:
    """True when event times are strictly increasing."""
    return all(a.time < b.time for a, b in zip(events, events[1:]))
