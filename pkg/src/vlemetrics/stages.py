"""Pipeline stages between ingestion and model evaluation.

Each stage is a pure function over in-memory objects; the CLI wraps
these with file reading/writing so partial reruns work from stage
artifacts.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import pandas as pd

from .engagement import RawScoreTable, raw_scores, release_dates
from .features import FeatureMatrix, proportional_video, weekly_counts
from .ingest import CANONICAL_TIMESTAMP, ClassifiedRecord, CohortConfig
from .pipeline import FoldPipeline, StudentDataset
from .sessions import (
    StudySession,
    build_activity_universes,
    aggregate,
    inactivity_threshold,
    sessionize_student,
)


@dataclass
class CohortData:
    """One cohort's configuration plus its filtered, classified records."""

    config: CohortConfig
    eligible: list[str]
    classified: list[ClassifiedRecord]


@dataclass
class SessionizeResult:
    threshold_minutes: float
    sessions: dict[str, dict[str, list[StudySession]]]  # cohort -> user -> sessions
    universes: dict[str, dict[int, list[str]]]  # cohort -> chapter -> keys


def sessionize(cohorts: Sequence[CohortData],
               threshold_override: Optional[float] = None,
               cap_minutes: float = 120.0,
               rounding_minutes: float = 5.0) -> SessionizeResult:
    """Segment every student's stream; the threshold pools all cohorts."""
    per_user: dict[str, dict[str, list[ClassifiedRecord]]] = {}
    for cohort in cohorts:
        streams: dict[str, list[ClassifiedRecord]] = {}
        for rec in cohort.classified:
            streams.setdefault(rec.user_id, []).append(rec)
        for stream in streams.values():
            stream.sort(key=lambda r: r.timestamp)
        per_user[cohort.config.label] = streams

    if threshold_override is not None:
        threshold = float(threshold_override)
    else:
        all_streams = [[r.timestamp for r in stream]
                       for streams in per_user.values()
                       for stream in streams.values()]
        threshold = inactivity_threshold(all_streams, cap_minutes, rounding_minutes)

    sessions = {}
    universes = {}
    for cohort in cohorts:
        label = cohort.config.label
        universes[label] = build_activity_universes(cohort.classified)
        sessions[label] = {
            user: sessionize_student(stream, threshold)
            for user, stream in per_user[label].items()
        }
    return SessionizeResult(threshold, sessions, universes)


def score_students(cohorts: Sequence[CohortData], result: SessionizeResult,
                   chapters: Sequence[int]) -> tuple[RawScoreTable, dict[str, dict[int, int]]]:
    """Raw immediacy/diversity/frequency per student x chapter, pooled.

    Rows are every eligible student of every cohort in (cohort, user)
    order; releases are computed within each cohort-year.
    """
    rows: list[tuple[str, str]] = []
    for cohort in cohorts:
        for user in sorted(cohort.eligible):
            rows.append((cohort.config.label, user))

    n, K = len(rows), len(chapters)
    imm = np.zeros((n, K), dtype=np.int64)
    div = np.zeros((n, K), dtype=np.int64)
    freq = np.zeros((n, K), dtype=np.int64)
    releases: dict[str, dict[int, int]] = {}

    offset = 0
    for cohort in cohorts:
        label = cohort.config.label
        users = sorted(cohort.eligible)
        universe = result.universes.get(label, {})
        by_user = result.sessions.get(label, {})
        aggs = {}
        for user in users:
            per_chapter: dict[int, list[StudySession]] = {}
            for session in by_user.get(user, []):
                per_chapter.setdefault(session.chapter, []).append(session)
            for j, chapter in enumerate(chapters):
                aggs[(user, chapter)] = aggregate(
                    per_chapter.get(chapter, []), universe.get(chapter, []),
                    user_id=user, chapter=chapter)
        releases[label] = release_dates(aggs.values(), chapters)
        end_day = cohort.config.module_end_day
        for i, user in enumerate(users):
            for j, chapter in enumerate(chapters):
                scores = raw_scores(aggs[(user, chapter)], releases[label][chapter], end_day)
                imm[offset + i, j], div[offset + i, j], freq[offset + i, j] = scores
        offset += len(users)

    table = RawScoreTable(
        user_ids=[u for _, u in rows],
        chapters=list(chapters),
        immediacy=imm, diversity=div, frequency=freq)
    return table, releases


def build_features(cohorts: Sequence[CohortData]) -> FeatureMatrix:
    """Pooled weekly count matrix with proportional video views applied."""
    week_ranges = {c.config.week_range for c in cohorts}
    if len(week_ranges) != 1:
        raise ValueError("cohorts must share one week range to pool features")
    w_lo, w_hi = week_ranges.pop()
    user_ids = []
    cohort_of_user = {}
    delivery_of_user = {}
    for cohort in cohorts:
        for user in sorted(cohort.eligible):
            user_ids.append(user)
            cohort_of_user[user] = cohort.config.label
            delivery_of_user[user] = cohort.config.delivery_method
    records = [rec for cohort in cohorts for rec in cohort.classified]
    matrix = weekly_counts(records, user_ids, cohort_of_user, delivery_of_user,
                           weeks=range(w_lo, w_hi + 1))
    video_counts = {c.config.label: c.config.video_count for c in cohorts}
    return proportional_video(matrix, video_counts)


def build_dataset(scores: RawScoreTable, features: FeatureMatrix,
                  chapter_weights: Sequence[float]) -> StudentDataset:
    if scores.user_ids != features.user_ids:
        raise ValueError("score and feature rows are not aligned")
    return StudentDataset(
        user_ids=list(features.user_ids),
        cohorts=list(features.cohorts),
        delivery=features.delivery.copy(),
        chapters=list(scores.chapters),
        chapter_weights=np.asarray(chapter_weights, dtype=float),
        scores=scores,
        feature_values=features.values.copy(),
        feature_columns=list(features.columns),
    )


# --- tabular views of stage outputs ----------------------------------------

def classified_frame(cohorts: Sequence[CohortData]) -> pd.DataFrame:
    rows = []
    for cohort in cohorts:
        for r in cohort.classified:
            rows.append({
                "cohort": cohort.config.label,
                "user_id": r.user_id,
                "timestamp": r.timestamp.strftime(CANONICAL_TIMESTAMP),
                "day_index": r.day_index,
                "week": r.week,
                "resource_kind": r.resource_kind,
                "chapter": r.chapter if r.chapter is not None else "",
                "activity_key": r.activity_key,
                "event_context": r.base.event_context,
                "component": r.base.component,
                "event_name": r.base.event_name,
                "description": r.base.description,
            })
    return pd.DataFrame(rows)


def sessions_frame(result: SessionizeResult) -> pd.DataFrame:
    import json

    rows = []
    for label, by_user in result.sessions.items():
        for user in sorted(by_user):
            for s in sorted(by_user[user], key=lambda s: (s.chapter, s.index)):
                rows.append({
                    "cohort": label,
                    "user_id": user,
                    "chapter": s.chapter,
                    "session_index": s.index,
                    "start": s.start_time.strftime(CANONICAL_TIMESTAMP),
                    "end": s.end_time.strftime(CANONICAL_TIMESTAMP),
                    "start_day": s.start_day,
                    "chapter_keys": json.dumps(sorted(s.chapter_keys)),
                    "floating_keys": json.dumps(sorted(s.floating_keys)),
                })
    return pd.DataFrame(rows)


def universes_frame(result: SessionizeResult) -> pd.DataFrame:
    rows = [
        {"cohort": label, "chapter": chapter, "activity_key": key}
        for label, per_chapter in result.universes.items()
        for chapter, keys in sorted(per_chapter.items())
        for key in keys
    ]
    return pd.DataFrame(rows)


def metric_frame(dataset: StudentDataset, pipe: FoldPipeline) -> pd.DataFrame:
    """Raw scores plus full-sample scaled scores, metric, and response."""
    all_rows = np.arange(dataset.n)
    state = pipe.fit(all_rows)
    scaled = state.scaler.apply(dataset.scores, all_rows)
    y = pipe.raw_metric(all_rows, state)
    y_bc = pipe.response(all_rows, state)
    data = {"cohort": dataset.cohorts, "user_id": dataset.user_ids}
    for j, chapter in enumerate(dataset.chapters):
        data[f"immediacy_c{chapter}"] = dataset.scores.immediacy[:, j]
        data[f"diversity_c{chapter}"] = dataset.scores.diversity[:, j]
        data[f"frequency_c{chapter}"] = dataset.scores.frequency[:, j]
    for j, chapter in enumerate(dataset.chapters):
        data[f"immediacy_scaled_c{chapter}"] = scaled["immediacy"][:, j]
        data[f"diversity_scaled_c{chapter}"] = scaled["diversity"][:, j]
        data[f"frequency_scaled_c{chapter}"] = scaled["frequency"][:, j]
    data["y"] = y
    data["y_boxcox"] = y_bc
    return pd.DataFrame(data)


def features_frame(features: FeatureMatrix) -> pd.DataFrame:
    data = {"cohort": features.cohorts, "user_id": features.user_ids,
            "delivery": features.delivery}
    for j, col in enumerate(features.columns):
        data[col.name] = features.values[:, j]
    return pd.DataFrame(data)


def scores_from_frame(frame: pd.DataFrame, chapters: Sequence[int]) -> RawScoreTable:
    return RawScoreTable(
        user_ids=frame["user_id"].astype(str).tolist(),
        chapters=list(chapters),
        immediacy=frame[[f"immediacy_c{k}" for k in chapters]].to_numpy(dtype=np.int64),
        diversity=frame[[f"diversity_c{k}" for k in chapters]].to_numpy(dtype=np.int64),
        frequency=frame[[f"frequency_c{k}" for k in chapters]].to_numpy(dtype=np.int64),
    )


def features_from_frame(frame: pd.DataFrame) -> FeatureMatrix:
    from .features import FeatureColumn

    meta = {"cohort", "user_id", "delivery"}
    columns = []
    for name in frame.columns:
        if name in meta:
            continue
        resource, _, week = name.rpartition("_w")
        columns.append(FeatureColumn(resource, int(week)))
    return FeatureMatrix(
        user_ids=frame["user_id"].astype(str).tolist(),
        cohorts=frame["cohort"].astype(str).tolist(),
        delivery=frame["delivery"].to_numpy(dtype=np.int64),
        values=frame[[c.name for c in columns]].to_numpy(dtype=float),
        columns=columns,
    )
