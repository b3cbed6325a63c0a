"""Deterministic synthetic-cohort generator with planted engagement levels.

Each student carries a latent level e in [0, 1]. Higher e yields more
study sessions per chapter, earlier first access after a chapter's
release, and a broader set of touched activities, so the computed
engagement metric should rank students the way e does. Ground truth is
emitted alongside the logs for end-to-end validation.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from datetime import date, datetime, timedelta
from typing import IO, Optional, Sequence

import numpy as np

from .ingest import CANONICAL_TIMESTAMP, DEFAULT_COLUMNS, LogRecord, write_log

# Same-day sessions sit 5h apart and each session spans at most ~80 min,
# so inter-session gaps always exceed the 2h threshold cap.
SESSION_HOURS = (8, 13, 18)
SESSION_SPAN_MINUTES = 70


@dataclass
class SynthCohort:
    label: str
    delivery_method: int
    term_start: date
    n_students: int
    video_count: int
    engagement_levels: Optional[Sequence[float]] = None


@dataclass
class SynthConfig:
    cohorts: list[SynthCohort]
    chapters: int = 20
    week_range: tuple[int, int] = (5, 35)
    seed: int = 0
    session_rate_base: float = 0.4
    session_rate_span: float = 4.0
    lag_p_lo: float = 0.08
    lag_p_hi: float = 0.9
    breadth_lo: float = 0.15
    breadth_hi: float = 0.95
    floor_click_rate: float = 1.0  # chapterless clicks per week, any student
    release_spacing_days: int = 7
    quiz_from_day: int = 7  # no quiz access before this day index
    session_day_window: int = 28  # later sessions fall within this many days

    @property
    def module_days(self) -> int:
        return (self.week_range[1] - self.week_range[0] + 1) * 7

    def release_day(self, chapter: int) -> int:
        return min((chapter - 1) * self.release_spacing_days, self.module_days - 8)


def _chapter_activities(config: SynthConfig, cohort: SynthCohort) -> dict[int, list[tuple[str, str, str]]]:
    """(event_context, component, event_name) triples per chapter."""
    per_chapter = {}
    base, extra = divmod(cohort.video_count, config.chapters)
    for k in range(1, config.chapters + 1):
        acts = [(f"Chapter {k} lecture notes", "File", "Course module viewed")]
        n_videos = base + (1 if k <= extra else 0)
        for v in range(1, n_videos + 1):
            acts.append((f"Chapter {k} video {v}", "Page", "Course module viewed"))
        acts.append((f"Chapter {k} quiz", "Quiz", "Quiz attempt submitted"))
        per_chapter[k] = acts
    return per_chapter


FLOOR_ACTIVITIES = (
    ("Course home", "System", "Course viewed"),
    ("Course forum", "Forum", "Discussion viewed"),
    ("External resource links", "URL", "Course module viewed"),
    ("Zoom lab room", "Zoom meeting", "Course module viewed"),
)


def _emit_record(records: list, when: datetime, user: str, activity: tuple[str, str, str]):
    context, component, event = activity
    records.append(LogRecord(
        timestamp=when.replace(second=0, microsecond=0),
        user_id=user,
        event_context=context,
        component=component,
        event_name=event,
        description=f"The user with id '{user}' viewed '{context}'.",
    ))


def _generate_student(config: SynthConfig, cohort: SynthCohort, user: str,
                      level: float, activities, rng: np.random.Generator) -> list[LogRecord]:
    records: list[LogRecord] = []
    start = datetime.combine(cohort.term_start, datetime.min.time())
    rate = config.session_rate_base + config.session_rate_span * level
    lag_p = config.lag_p_lo + (config.lag_p_hi - config.lag_p_lo) * level
    breadth = config.breadth_lo + (config.breadth_hi - config.breadth_lo) * level
    used_slots: set[tuple[int, int]] = set()

    for chapter in range(1, config.chapters + 1):
        n_sessions = int(rng.poisson(rate))
        if n_sessions == 0:
            continue
        release = config.release_day(chapter)
        lag = int(rng.geometric(lag_p)) - 1
        first_day = min(release + lag, config.module_days - 1)
        days = [first_day]
        if n_sessions > 1:
            extra = rng.integers(0, config.session_day_window, size=n_sessions - 1)
            days.extend(int(min(first_day + 1 + d, config.module_days - 1)) for d in extra)
        for day in days:
            hour = None
            for h in rng.permutation(SESSION_HOURS):
                if (day, int(h)) not in used_slots:
                    hour = int(h)
                    break
            if hour is None:
                continue  # day fully booked; drop this session
            used_slots.add((day, hour))
            chapter_acts = [
                a for a in activities[chapter]
                if not (a[1] == "Quiz" and day < config.quiz_from_day)]
            chosen = [a for a in chapter_acts if rng.random() < breadth]
            if not chosen:
                chosen = [chapter_acts[0]]
            begin = start + timedelta(days=day, hours=hour, minutes=int(rng.integers(0, 10)))
            offset = 0
            for act in chosen:
                for _ in range(int(rng.integers(1, 3))):
                    if offset > SESSION_SPAN_MINUTES:
                        break
                    _emit_record(records, begin + timedelta(minutes=offset), user, act)
                    offset += int(rng.integers(1, 9))

    for week in range(config.module_days // 7):
        n_floor = int(rng.poisson(config.floor_click_rate))
        for _ in range(n_floor):
            day = week * 7 + int(rng.integers(0, 7))
            when = start + timedelta(days=day, hours=int(rng.integers(8, 22)),
                                     minutes=int(rng.integers(0, 60)))
            act = FLOOR_ACTIVITIES[int(rng.integers(0, len(FLOOR_ACTIVITIES)))]
            _emit_record(records, when, user, act)
    return records


@dataclass
class SynthOutput:
    records_by_cohort: dict[str, list[LogRecord]]
    eligible_by_cohort: dict[str, list[str]]
    ground_truth: list[tuple[str, str, float]]  # (cohort, user, level)


def generate(config: SynthConfig) -> SynthOutput:
    records_by_cohort = {}
    eligible = {}
    truth = []
    for c_idx, cohort in enumerate(config.cohorts):
        rng = np.random.default_rng((config.seed & 0xFFFFFFFFFFFFFFFF, c_idx))
        if cohort.engagement_levels is not None:
            levels = np.asarray(cohort.engagement_levels, dtype=float)
            if len(levels) != cohort.n_students:
                raise ValueError(f"cohort {cohort.label}: engagement_levels length "
                                 f"{len(levels)} != n_students {cohort.n_students}")
        else:
            levels = rng.uniform(size=cohort.n_students)
        activities = _chapter_activities(config, cohort)
        users = [f"{cohort.label}_s{i:04d}" for i in range(cohort.n_students)]
        all_records: list[LogRecord] = []
        for user, level in zip(users, levels):
            all_records.extend(_generate_student(config, cohort, user, float(level),
                                                 activities, rng))
            truth.append((cohort.label, user, float(level)))
        all_records.sort(key=lambda r: (r.timestamp, r.user_id))
        records_by_cohort[cohort.label] = all_records
        eligible[cohort.label] = users
    return SynthOutput(records_by_cohort, eligible, truth)


def write_outputs(output: SynthOutput, log_path_for, eligible_path_for,
                  truth_path: str) -> None:
    """Write per-cohort logs/eligible files and the ground-truth table."""
    for label, records in output.records_by_cohort.items():
        with open(log_path_for(label), "w", encoding="utf-8", newline="") as fh:
            write_log(records, fh)
        with open(eligible_path_for(label), "w", encoding="utf-8") as fh:
            for user in output.eligible_by_cohort[label]:
                fh.write(user + "\n")
    with open(truth_path, "w", encoding="utf-8", newline="") as fh:
        fh.write("cohort,user_id,engagement_level\n")
        for cohort, user, level in output.ground_truth:
            fh.write(f"{cohort},{user},{level!r}\n")
