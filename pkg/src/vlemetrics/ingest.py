"""Activity-log ingestion: parsing, cohort filtering, and classification.

The raw input is a delimited text export with six columns (timestamp,
user id, event context, component, event name, description). Records are
attributed to a cohort, a module week, a resource kind, and optionally a
chapter via ordered first-match rules.
"""

from __future__ import annotations

import csv
import io
import re
from dataclasses import dataclass, replace
from datetime import date, datetime
from typing import IO, Iterable, Optional, Sequence

from .errors import (
    BadTimestamp,
    EmptyFile,
    InvalidPattern,
    MissingColumn,
)

# Canonical field -> default export column name.
DEFAULT_COLUMNS = {
    "timestamp": "Time",
    "user_id": "User",
    "event_context": "Event.context",
    "component": "Component",
    "event_name": "Event.name",
    "description": "Description",
}

TIMESTAMP_FORMATS = (
    "%Y-%m-%d %H:%M",
    "%Y-%m-%d %H:%M:%S",
    "%d/%m/%Y %H:%M",
    "%d/%m/%y, %H:%M",
)

CANONICAL_TIMESTAMP = "%Y-%m-%d %H:%M"

RESOURCE_KINDS = ("lecture_note", "video", "quiz", "forum", "url", "zoom", "other")

DELIVERY_CODES = {"online": 1, "hybrid": 2, "in_person": 3}

ACTIVITY_KEY_SEP = "|"


@dataclass(frozen=True)
class LogRecord:
    """One parsed activity-log row, timestamp at minute resolution."""

    timestamp: datetime
    user_id: str
    event_context: str
    component: str
    event_name: str
    description: str


@dataclass(frozen=True)
class CohortConfig:
    """One academic-year cohort and its module calendar."""

    label: str
    delivery_method: int  # 1 online, 2 hybrid, 3 in-person
    term_start: date  # day 0; start of week w_lo
    week_range: tuple[int, int]  # inclusive [w_lo, w_hi]
    video_count: int

    def __post_init__(self):
        w_lo, w_hi = self.week_range
        if w_lo > w_hi:
            raise ValueError(f"cohort {self.label}: week_range {self.week_range} has w_lo > w_hi")
        if self.video_count < 1:
            raise ValueError(f"cohort {self.label}: video_count must be >= 1")
        if self.delivery_method not in (1, 2, 3):
            raise ValueError(f"cohort {self.label}: delivery_method must be 1, 2 or 3")

    @property
    def n_weeks(self) -> int:
        return self.week_range[1] - self.week_range[0] + 1

    @property
    def module_end_day(self) -> int:
        """Last day index of the final module week."""
        return self.n_weeks * 7 - 1

    def day_index(self, ts: datetime) -> int:
        return (ts.date() - self.term_start).days

    def week_of(self, ts: datetime) -> int:
        """Module week of a timestamp; weeks are 7-day blocks from term_start."""
        # Floor division keeps pre-term records in weeks < w_lo.
        return self.week_range[0] + self.day_index(ts) // 7


@dataclass(frozen=True)
class ClassifiedRecord:
    """A LogRecord with its cohort/week/resource attribution."""

    base: LogRecord
    cohort: str
    week: int
    day_index: int
    resource_kind: str
    chapter: Optional[int]
    activity_key: str

    @property
    def timestamp(self) -> datetime:
        return self.base.timestamp

    @property
    def user_id(self) -> str:
        return self.base.user_id


class ClassifierRule:
    """One ordered first-match rule: (field, pattern, kind, chapter group)."""

    FIELDS = ("event_context", "component", "event_name", "description")

    def __init__(self, field: str, pattern: str, kind: str, chapter_group: Optional[int] = None):
        if field not in self.FIELDS:
            raise InvalidPattern(pattern, f"unknown field {field!r}")
        if kind not in RESOURCE_KINDS:
            raise InvalidPattern(pattern, f"unknown resource kind {kind!r}")
        try:
            self.regex = re.compile(pattern)
        except re.error as exc:
            raise InvalidPattern(pattern, str(exc)) from exc
        if chapter_group is not None and chapter_group > self.regex.groups:
            raise InvalidPattern(pattern, f"chapter_group {chapter_group} exceeds group count")
        self.field = field
        self.pattern = pattern
        self.kind = kind
        self.chapter_group = chapter_group

    def match(self, record: LogRecord) -> Optional[tuple[str, Optional[int]]]:
        m = self.regex.search(getattr(record, self.field))
        if m is None:
            return None
        chapter = None
        if self.chapter_group is not None:
            text = m.group(self.chapter_group)
            if text is not None:
                chapter = int(text)
        return self.kind, chapter


def _parse_timestamp(text: str) -> datetime:
    for fmt in TIMESTAMP_FORMATS:
        try:
            ts = datetime.strptime(text.strip(), fmt)
        except ValueError:
            continue
        return ts.replace(second=0, microsecond=0)
    raise ValueError(text)


def parse_log(source: IO | str, schema: Optional[dict[str, str]] = None,
              delimiter: str = ",") -> list[LogRecord]:
    """Parse a delimited activity-log export into LogRecords, in file order.

    ``schema`` remaps canonical field names to actual header names; fields
    not remapped use the default export column names.
    """
    close = False
    if isinstance(source, (str, bytes)) or hasattr(source, "__fspath__"):
        fh = open(source, "r", encoding="utf-8", newline="")
        close = True
    elif isinstance(source, (io.RawIOBase, io.BufferedIOBase)):
        fh = io.TextIOWrapper(source, encoding="utf-8", newline="")
    else:
        fh = source
    try:
        columns = dict(DEFAULT_COLUMNS)
        if schema:
            columns.update(schema)
        reader = csv.reader(fh, delimiter=delimiter)
        try:
            header = next(reader)
        except StopIteration:
            raise EmptyFile("log file has no header row") from None
        index = {}
        for field, column in columns.items():
            if column not in header:
                raise MissingColumn(column)
            index[field] = header.index(column)
        records = []
        for row_no, row in enumerate(reader, start=1):
            if not row:
                continue
            try:
                ts = _parse_timestamp(row[index["timestamp"]])
            except ValueError:
                raise BadTimestamp(row_no, row[index["timestamp"]]) from None
            records.append(LogRecord(
                timestamp=ts,
                user_id=row[index["user_id"]],
                event_context=row[index["event_context"]],
                component=row[index["component"]],
                event_name=row[index["event_name"]],
                description=row[index["description"]],
            ))
        return records
    finally:
        if close:
            fh.close()


def write_log(records: Iterable[LogRecord], fh: IO, delimiter: str = ",") -> None:
    """Serialize records back to the canonical export format."""
    writer = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
    writer.writerow([DEFAULT_COLUMNS[f] for f in DEFAULT_COLUMNS])
    for r in records:
        writer.writerow([
            r.timestamp.strftime(CANONICAL_TIMESTAMP),
            r.user_id,
            r.event_context,
            r.component,
            r.event_name,
            r.description,
        ])


def read_eligible_users(source: IO | str) -> set[str]:
    """One user id per line; blank lines ignored."""
    if isinstance(source, (str, bytes)):
        with open(source, "r", encoding="utf-8") as fh:
            lines = fh.readlines()
    else:
        lines = source.readlines()
    return {line.strip() for line in lines if line.strip()}


def filter_cohort(records: Sequence[LogRecord], cohort: CohortConfig,
                  eligible_users: set[str]) -> list[LogRecord]:
    """Keep eligible users' records inside the cohort's week window, in order."""
    if not eligible_users:
        raise ValueError("eligible_users must be non-empty")
    w_lo, w_hi = cohort.week_range
    out = []
    for r in records:
        if r.user_id not in eligible_users:
            continue
        if w_lo <= cohort.week_of(r.timestamp) <= w_hi:
            out.append(r)
    return out


def activity_key(record: LogRecord) -> str:
    return ACTIVITY_KEY_SEP.join((record.event_context, record.component, record.event_name))


def classify(record: LogRecord, rules: Sequence[ClassifierRule],
             cohort: CohortConfig) -> ClassifiedRecord:
    """Attribute one record; first matching rule wins, default kind is other."""
    kind, chapter = "other", None
    for rule in rules:
        hit = rule.match(record)
        if hit is not None:
            kind, chapter = hit
            break
    return ClassifiedRecord(
        base=record,
        cohort=cohort.label,
        week=cohort.week_of(record.timestamp),
        day_index=cohort.day_index(record.timestamp),
        resource_kind=kind,
        chapter=chapter,
        activity_key=activity_key(record),
    )


def classify_all(records: Sequence[LogRecord], rules: Sequence[ClassifierRule],
                 cohort: CohortConfig) -> list[ClassifiedRecord]:
    return [classify(r, rules, cohort) for r in records]
