"""Call detail record model, CSV ingestion, and windowed access.

A dataset is a CDR CSV (one call or SMS event per line) plus a small
key=value header sidecar declaring the study window. Events are grouped
per subscriber (ego) and held as numpy column arrays so the feature
engine can slice them without touching Python objects per record.

Day arithmetic is timezone-free: day index = (timestamp - window start)
// 86400 with the window start pinned to 00:00 UTC of ``start_day``.
"""

from __future__ import annotations

import calendar
import csv
import datetime
from dataclasses import dataclass, field

import numpy as np

SECONDS_PER_DAY = 86400

KIND_TOKENS = ("CALL", "SMS")
DIRECTION_TOKENS = ("IN", "OUT")
ALTER_CLASS_TOKENS = (
    "ONNET",
    "COMPETITOR",
    "INTERNATIONAL",
    "INFO_PORTAL",
    "MOBILE_MONEY",
    "OTHER",
)

KIND_CALL, KIND_SMS = 0, 1
DIR_IN, DIR_OUT = 0, 1

_KIND_CODE = {t: i for i, t in enumerate(KIND_TOKENS)}
_DIR_CODE = {t: i for i, t in enumerate(DIRECTION_TOKENS)}
_ALTER_CLASS_CODE = {t: i for i, t in enumerate(ALTER_CLASS_TOKENS)}

CSV_HEADER = "ego_id,alter_id,timestamp,kind,direction,duration_s,alter_class"


class CdrFormatError(Exception):
    """Raised when a file or header sidecar is structurally unusable."""


def _month_lengths(n_months: int) -> list[int]:
    # Fixed 31/30 alternation starting at 31; independent of real calendar.
    return [31 if i % 2 == 0 else 30 for i in range(n_months)]


@dataclass(frozen=True)
class StudyWindow:
    """Observation window split into fixed 31/30-day month tiles."""

    start_day: datetime.date
    total_days: int
    train_months: int = 4
    eval_months: int = 2

    def __post_init__(self):
        if self.train_months < 1:
            raise ValueError("train_months must be >= 1")
        if self.eval_months < 1:
            raise ValueError("eval_months must be >= 1")
        lengths = _month_lengths(self.train_months + self.eval_months)
        if sum(lengths) != self.total_days:
            raise ValueError(
                f"total_days={self.total_days} does not tile into "
                f"{self.train_months + self.eval_months} months of {lengths}"
            )

    @property
    def start_epoch(self) -> int:
        return calendar.timegm(self.start_day.timetuple())

    @property
    def month_ranges(self) -> list[tuple[int, int]]:
        """Half-open [start, end) day ranges, one per month tile."""
        ranges = []
        day = 0
        for length in _month_lengths(self.train_months + self.eval_months):
            ranges.append((day, day + length))
            day += length
        return ranges

    @property
    def train_days(self) -> int:
        return self.month_ranges[self.train_months - 1][1]

    def day_of(self, timestamp: int) -> int:
        return (timestamp - self.start_epoch) // SECONDS_PER_DAY

    def contains(self, timestamp: int) -> bool:
        return 0 <= self.day_of(timestamp) < self.total_days


@dataclass(frozen=True)
class CdrRecord:
    """One anonymized call or SMS event as seen from the ego side."""

    ego_id: str
    alter_id: str
    timestamp: int
    kind: str
    direction: str
    duration_s: int
    alter_class: str

    def validate(self, window: StudyWindow) -> str | None:
        """Return a reason string if the record is malformed, else None."""
        if not self.ego_id or not self.alter_id:
            return "empty id"
        if self.ego_id == self.alter_id:
            return "ego_id equals alter_id"
        if self.kind not in _KIND_CODE:
            return f"unknown kind {self.kind!r}"
        if self.direction not in _DIR_CODE:
            return f"unknown direction {self.direction!r}"
        if self.alter_class not in _ALTER_CLASS_CODE:
            return f"unknown alter_class {self.alter_class!r}"
        if self.duration_s < 0:
            return "negative duration_s"
        if self.kind == "SMS" and self.duration_s != 0:
            return "nonzero duration_s for SMS"
        if not window.contains(self.timestamp):
            return "timestamp outside study window"
        return None


class SubscriberEvents:
    """All events of one ego, as parallel column arrays sorted by time.

    ``alter_idx`` points into ``alters`` so degree computations can work
    on small integer codes; the string ids are kept for export.
    """

    __slots__ = ("ego_id", "ts", "kind", "direction", "duration_s",
                 "alter_class", "alter_idx", "alters")

    def __init__(self, ego_id, ts, kind, direction, duration_s,
                 alter_class, alter_idx, alters):
        self.ego_id = ego_id
        self.ts = ts
        self.kind = kind
        self.direction = direction
        self.duration_s = duration_s
        self.alter_class = alter_class
        self.alter_idx = alter_idx
        self.alters = alters

    def __len__(self) -> int:
        return len(self.ts)

    def __eq__(self, other) -> bool:
        if not isinstance(other, SubscriberEvents):
            return NotImplemented
        if self.ego_id != other.ego_id or self.alters != other.alters:
            return False
        return all(
            np.array_equal(getattr(self, f), getattr(other, f))
            for f in ("ts", "kind", "direction", "duration_s",
                      "alter_class", "alter_idx")
        )

    @classmethod
    def from_rows(cls, ego_id: str, rows: list[tuple]) -> "SubscriberEvents":
        """Build from (ts, kind, dir, dur, ac, alter_id, line_no) tuples."""
        rows = sorted(rows, key=lambda r: (r[0], r[6]))
        alters: list[str] = []
        seen: dict[str, int] = {}
        idx = np.empty(len(rows), dtype=np.int32)
        for i, r in enumerate(rows):
            a = r[5]
            if a not in seen:
                seen[a] = len(alters)
                alters.append(a)
            idx[i] = seen[a]
        return cls(
            ego_id=ego_id,
            ts=np.array([r[0] for r in rows], dtype=np.int64),
            kind=np.array([r[1] for r in rows], dtype=np.int8),
            direction=np.array([r[2] for r in rows], dtype=np.int8),
            duration_s=np.array([r[3] for r in rows], dtype=np.int32),
            alter_class=np.array([r[4] for r in rows], dtype=np.int8),
            alter_idx=idx,
            alters=alters,
        )

    def masked(self, mask: np.ndarray) -> "SubscriberEvents":
        """New view with only the masked events; alter table is compacted."""
        kept = self.alter_idx[mask]
        uniq = np.unique(kept)
        remap = np.full(len(self.alters), -1, dtype=np.int32)
        remap[uniq] = np.arange(len(uniq), dtype=np.int32)
        return SubscriberEvents(
            ego_id=self.ego_id,
            ts=self.ts[mask],
            kind=self.kind[mask],
            direction=self.direction[mask],
            duration_s=self.duration_s[mask],
            alter_class=self.alter_class[mask],
            alter_idx=remap[kept],
            alters=[self.alters[i] for i in uniq],
        )


@dataclass(frozen=True)
class RejectedRow:
    line_no: int
    reason: str


@dataclass
class SummaryStats:
    subscribers: int
    days: int
    calls: int
    sms: int
    calls_mean: float
    calls_sd: float
    sms_mean: float
    sms_sd: float


class RecordStore:
    """Immutable per-subscriber event store with deterministic ordering.

    Subscribers iterate in lexicographic ego_id order; within one
    subscriber events are nondecreasing in timestamp (ties keep input
    file order). Safe to share read-only across workers.
    """

    def __init__(self, window: StudyWindow,
                 subscribers: list[SubscriberEvents],
                 rejected: list[RejectedRow] | None = None):
        self.window = window
        self.subscribers = subscribers
        self.rejected = rejected or []

    @property
    def ego_ids(self) -> list[str]:
        return [s.ego_id for s in self.subscribers]

    @property
    def n_records(self) -> int:
        return sum(len(s) for s in self.subscribers)

    def __len__(self) -> int:
        return len(self.subscribers)

    def __eq__(self, other) -> bool:
        if not isinstance(other, RecordStore):
            return NotImplemented
        return (self.window == other.window
                and self.subscribers == other.subscribers)

    def day_indices(self, sub: SubscriberEvents) -> np.ndarray:
        return ((sub.ts - self.window.start_epoch) // SECONDS_PER_DAY).astype(np.int64)

    def slice(self, day_range: tuple[int, int]) -> "RecordStore":
        """View of events whose day index lies in half-open ``day_range``.

        Every subscriber is preserved (possibly with no events) so row
        alignment downstream is stable. An empty range is a valid empty
        view, not an error.
        """
        lo, hi = day_range
        if lo < 0 or hi > self.window.total_days:
            raise ValueError(f"day range {day_range} outside study window")
        out = []
        for sub in self.subscribers:
            days = self.day_indices(sub)
            out.append(sub.masked((days >= lo) & (days < hi)))
        return RecordStore(self.window, out)

    def summary_stats(self) -> SummaryStats:
        per_calls = np.array(
            [int(np.sum(s.kind == KIND_CALL)) for s in self.subscribers], dtype=float)
        per_sms = np.array(
            [int(np.sum(s.kind == KIND_SMS)) for s in self.subscribers], dtype=float)
        if len(self.subscribers) == 0:
            per_calls = per_sms = np.zeros(0)
        return SummaryStats(
            subscribers=len(self.subscribers),
            days=self.window.total_days,
            calls=int(per_calls.sum()),
            sms=int(per_sms.sum()),
            calls_mean=float(per_calls.mean()) if len(per_calls) else 0.0,
            calls_sd=float(per_calls.std()) if len(per_calls) else 0.0,
            sms_mean=float(per_sms.mean()) if len(per_sms) else 0.0,
            sms_sd=float(per_sms.std()) if len(per_sms) else 0.0,
        )


def ingest(path: str, window: StudyWindow) -> RecordStore:
    """Parse a CDR CSV into a RecordStore.

    Well-formed rows are kept; malformed rows (bad enum token, negative
    or non-integer numerics, timestamp outside the window, ego==alter)
    are tallied with their line numbers on ``store.rejected`` instead of
    being silently dropped. A missing or headerless file is fatal.
    """
    try:
        fh = open(path, "r", newline="", encoding="utf-8")
    except OSError as exc:
        raise CdrFormatError(f"cannot read CDR file {path}: {exc}") from exc
    groups: dict[str, list[tuple]] = {}
    rejected: list[RejectedRow] = []
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CdrFormatError(f"{path}: empty file, expected CSV header")
        if [h.strip() for h in header] != CSV_HEADER.split(","):
            raise CdrFormatError(f"{path}: bad header {header!r}")
        lo_ts = window.start_epoch
        hi_ts = window.start_epoch + window.total_days * SECONDS_PER_DAY
        for line_no, row in enumerate(reader, start=2):
            if len(row) != 7:
                rejected.append(RejectedRow(line_no, "wrong field count"))
                continue
            ego, alter, ts_s, kind, direction, dur_s, ac = row
            try:
                ts = int(ts_s)
                dur = int(dur_s)
            except ValueError:
                rejected.append(RejectedRow(line_no, "non-integer numeric field"))
                continue
            reason = _validate_fast(ego, alter, ts, kind, direction, dur, ac,
                                    lo_ts, hi_ts)
            if reason is not None:
                rejected.append(RejectedRow(line_no, reason))
                continue
            groups.setdefault(ego, []).append(
                (ts, _KIND_CODE[kind], _DIR_CODE[direction], dur,
                 _ALTER_CLASS_CODE[ac], alter, line_no))
    subs = [SubscriberEvents.from_rows(e, groups[e]) for e in sorted(groups)]
    return RecordStore(window, subs, rejected)


def _validate_fast(ego, alter, ts, kind, direction, dur, ac, lo_ts, hi_ts):
    if not ego or not alter:
        return "empty id"
    if ego == alter:
        return "ego_id equals alter_id"
    if kind not in _KIND_CODE:
        return f"unknown kind {kind!r}"
    if direction not in _DIR_CODE:
        return f"unknown direction {direction!r}"
    if ac not in _ALTER_CLASS_CODE:
        return f"unknown alter_class {ac!r}"
    if dur < 0:
        return "negative duration_s"
    if kind == "SMS" and dur != 0:
        return "nonzero duration_s for SMS"
    if not (lo_ts <= ts < hi_ts):
        return "timestamp outside study window"
    return None


def export(store: RecordStore, path: str) -> None:
    """Write the store back to CDR CSV; re-ingesting yields an equal store."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(CSV_HEADER + "\n")
        for sub in store.subscribers:
            for i in range(len(sub)):
                fh.write(
                    f"{sub.ego_id},{sub.alters[sub.alter_idx[i]]},"
                    f"{sub.ts[i]},{KIND_TOKENS[sub.kind[i]]},"
                    f"{DIRECTION_TOKENS[sub.direction[i]]},{sub.duration_s[i]},"
                    f"{ALTER_CLASS_TOKENS[sub.alter_class[i]]}\n")


def write_header_sidecar(window: StudyWindow, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"start_day={window.start_day.isoformat()}\n")
        fh.write(f"total_days={window.total_days}\n")
        fh.write(f"train_months={window.train_months}\n")
        fh.write(f"eval_months={window.eval_months}\n")


def read_header_sidecar(path: str) -> StudyWindow:
    kv: dict[str, str] = {}
    try:
        with open(path, "r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                if "=" not in line:
                    raise CdrFormatError(f"{path}: bad header line {line!r}")
                k, v = line.split("=", 1)
                kv[k.strip()] = v.strip()
    except OSError as exc:
        raise CdrFormatError(f"cannot read header sidecar {path}: {exc}") from exc
    try:
        return StudyWindow(
            start_day=datetime.date.fromisoformat(kv["start_day"]),
            total_days=int(kv["total_days"]),
            train_months=int(kv["train_months"]),
            eval_months=int(kv["eval_months"]),
        )
    except (KeyError, ValueError) as exc:
        raise CdrFormatError(f"{path}: invalid header sidecar: {exc}") from exc
