"""Study-session construction from classified record streams.

A study session is a maximal run of one student's records in which no
consecutive gap exceeds the inactivity threshold. Sessions touching
several chapters are split into one session per chapter; per student and
chapter the sessions are then reduced to (session count, earliest day,
engaged-activity vector).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from datetime import datetime
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import MixedKeys, NoGaps, UnsortedInput
from .ingest import ClassifiedRecord


@dataclass
class RawSession:
    """A threshold-delimited run of one student's records (all chapters)."""

    user_id: str
    records: list[ClassifiedRecord]

    @property
    def start_time(self) -> datetime:
        return self.records[0].timestamp

    @property
    def end_time(self) -> datetime:
        return self.records[-1].timestamp

    @property
    def start_day(self) -> int:
        return self.records[0].day_index

    def chapters(self) -> list[int]:
        seen = []
        for r in self.records:
            if r.chapter is not None and r.chapter not in seen:
                seen.append(r.chapter)
        return sorted(seen)


@dataclass
class StudySession:
    """One chapter's share of a raw session.

    ``chapter_keys`` are activity keys of records classified to this
    chapter; ``floating_keys`` are keys of the raw session's chapterless
    records, which count toward the activity vector only where they
    belong to the chapter's activity universe.
    """

    user_id: str
    chapter: int
    index: int  # 1-based per (user, chapter), in start-time order
    start_day: int
    start_time: datetime
    end_time: datetime
    chapter_keys: frozenset[str]
    floating_keys: frozenset[str] = field(default_factory=frozenset)

    def engaged_keys(self) -> frozenset[str]:
        return self.chapter_keys | self.floating_keys


@dataclass
class ChapterAggregate:
    """Per student x chapter reduction of all study sessions."""

    user_id: str
    chapter: int
    session_count: int
    earliest_day: Optional[int]
    activity_vector: np.ndarray  # uint8, length = size of chapter universe


def _gap_minutes(a: datetime, b: datetime) -> float:
    return (b - a).total_seconds() / 60.0


def consecutive_gaps(streams: Iterable[Sequence[datetime]], cap_minutes: float) -> list[float]:
    """Positive consecutive same-student gaps no longer than the cap."""
    gaps = []
    for stream in streams:
        for a, b in zip(stream, stream[1:]):
            g = _gap_minutes(a, b)
            if 0 < g <= cap_minutes:
                gaps.append(g)
    return gaps


def percentile_nearest_rank(values: Sequence[float], pct: float) -> float:
    """Smallest value with at least ``pct`` percent of the sample at or below it."""
    ordered = np.sort(np.asarray(values, dtype=float))
    rank = math.ceil(pct / 100.0 * len(ordered))
    return float(ordered[max(rank, 1) - 1])


def round_to_multiple(value: float, multiple: float) -> float:
    """Round to the nearest multiple; exact ties round up."""
    return math.floor(value / multiple + 0.5) * multiple


def inactivity_threshold(streams: Iterable[Sequence[datetime]],
                         cap_minutes: float = 120.0,
                         rounding_minutes: float = 5.0,
                         pct: float = 95.0) -> float:
    """Session cutoff: the 95th percentile of capped same-student gaps, rounded."""
    gaps = consecutive_gaps(streams, cap_minutes)
    if not gaps:
        raise NoGaps(f"no same-student gap in (0, {cap_minutes}] minutes")
    return round_to_multiple(percentile_nearest_rank(gaps, pct), rounding_minutes)


def segment(records: Sequence[ClassifiedRecord], threshold_minutes: float) -> list[RawSession]:
    """Split one student's time-ordered records at gaps strictly above the threshold."""
    if threshold_minutes <= 0:
        raise ValueError("threshold must be positive")
    if not records:
        return []
    sessions: list[RawSession] = []
    current = [records[0]]
    for prev, rec in zip(records, records[1:]):
        gap = _gap_minutes(prev.timestamp, rec.timestamp)
        if gap < 0:
            raise UnsortedInput(f"records of user {rec.user_id!r} are not time-ordered")
        if gap > threshold_minutes:
            sessions.append(RawSession(records[0].user_id, current))
            current = [rec]
        else:
            current.append(rec)
    sessions.append(RawSession(records[0].user_id, current))
    return sessions


def split_by_chapter(session: RawSession) -> list[StudySession]:
    """One StudySession per chapter touched; chapterless-only sessions yield none.

    The start day of every emitted session is the raw session's first
    record day. Chapterless records ride along as floating keys.
    """
    chapters = session.chapters()
    if not chapters:
        return []
    floating = frozenset(r.activity_key for r in session.records if r.chapter is None)
    out = []
    for chapter in chapters:
        recs = [r for r in session.records if r.chapter == chapter]
        times = [r.timestamp for r in recs] + [
            r.timestamp for r in session.records if r.chapter is None]
        out.append(StudySession(
            user_id=session.user_id,
            chapter=chapter,
            index=0,  # assigned when sessions are collected per (user, chapter)
            start_day=session.start_day,
            start_time=min(times),
            end_time=max(times),
            chapter_keys=frozenset(r.activity_key for r in recs),
            floating_keys=floating,
        ))
    return out


def sessionize_student(records: Sequence[ClassifiedRecord],
                       threshold_minutes: float) -> list[StudySession]:
    """Segment one student's stream and split by chapter, indexing sessions."""
    study: list[StudySession] = []
    for raw in segment(records, threshold_minutes):
        study.extend(split_by_chapter(raw))
    counters: dict[int, int] = {}
    for s in sorted(study, key=lambda s: (s.chapter, s.start_time)):
        counters[s.chapter] = counters.get(s.chapter, 0) + 1
        s.index = counters[s.chapter]
    return study


def aggregate(sessions: Sequence[StudySession], activity_universe: Sequence[str],
              user_id: Optional[str] = None, chapter: Optional[int] = None) -> ChapterAggregate:
    """Reduce one student's chapter sessions to (L, earliest day, activity vector).

    ``user_id``/``chapter`` are only required when ``sessions`` is empty.
    """
    if sessions:
        users = {s.user_id for s in sessions}
        chapters = {s.chapter for s in sessions}
        if len(users) > 1 or len(chapters) > 1:
            raise MixedKeys(f"sessions span users {users} and chapters {chapters}")
        user_id = sessions[0].user_id
        chapter = sessions[0].chapter
    elif user_id is None or chapter is None:
        raise ValueError("user_id and chapter are required for an empty session list")

    vector = np.zeros(len(activity_universe), dtype=np.uint8)
    if not sessions:
        return ChapterAggregate(user_id, chapter, 0, None, vector)

    engaged = frozenset().union(*(s.engaged_keys() for s in sessions))
    for j, key in enumerate(activity_universe):
        if key in engaged:
            vector[j] = 1
    return ChapterAggregate(
        user_id=user_id,
        chapter=chapter,
        session_count=len(sessions),
        earliest_day=min(s.start_day for s in sessions),
        activity_vector=vector,
    )


def build_activity_universes(records: Iterable[ClassifiedRecord]) -> dict[int, list[str]]:
    """Per chapter, the sorted distinct activity keys of its classified records."""
    keys: dict[int, set[str]] = {}
    for r in records:
        if r.chapter is not None:
            keys.setdefault(r.chapter, set()).add(r.activity_key)
    return {chapter: sorted(ks) for chapter, ks in keys.items()}
