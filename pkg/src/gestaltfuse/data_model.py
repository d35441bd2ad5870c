"""Domain types and CSV ingestion for annotations, captions, tags and predictions.

Every tabular input is a CSV file with a fixed header. Headers must match
exactly: missing or extra columns are rejected rather than ignored. Parsing
never drops a row silently; it either yields a value or raises an error that
carries the offending line number.
"""

from __future__ import annotations

import csv
import math
from collections.abc import Iterable, Iterator, Mapping
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from types import MappingProxyType
from typing import NamedTuple

from .errors import GestaltFuseError

ANNOTATION_HEADER = ("user_id", "video_id", "lag", "is_repeat", "responded", "reaction_time_ms")
PREDICTION_HEADER = ("video_id", "score")
CAPTION_HEADER = ("video_id", "caption")
TAG_HEADER = ("video_id", "tag", "confidence")


class DataError(GestaltFuseError):
    pass


class MalformedRow(DataError):
    def __init__(self, line: int, reason: str):
        super().__init__(f"line {line}: {reason}")
        self.line = line
        self.reason = reason


class InconsistentRecord(DataError):
    def __init__(self, reason: str, line: int | None = None):
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(prefix + reason)
        self.line = line
        self.reason = reason


class EmptyFile(DataError):
    pass


class OutOfRangeScore(DataError):
    def __init__(self, video_id: str, value: float):
        super().__init__(f"score for {video_id!r} outside [0, 1]: {value!r}")
        self.video_id = video_id
        self.value = value


class DuplicateVideo(DataError):
    def __init__(self, video_id: str):
        super().__init__(f"duplicate video_id {video_id!r}")
        self.video_id = video_id


class EmptyCaption(DataError):
    def __init__(self, video_id: str):
        super().__init__(f"empty caption for {video_id!r}")
        self.video_id = video_id


class Term(str, Enum):
    """Memorability horizon: a repeat after minutes or after 24-72 hours."""

    SHORT = "short"
    LONG = "long"


# ---------------------------------------------------------------------------
# annotations


@dataclass(frozen=True)
class AnnotationRecord:
    user_id: str
    video_id: str
    lag: Term
    is_repeat: bool
    responded: bool
    reaction_time_ms: float | None = None

    def __post_init__(self):
        rt = self.reaction_time_ms
        if rt is not None and not self.responded:
            raise InconsistentRecord("reaction time present without responded=true")
        if rt is None and self.responded:
            raise InconsistentRecord("responded=true requires a reaction time")
        if rt is not None and not (math.isfinite(rt) and rt >= 0):
            raise InconsistentRecord(f"reaction time must be finite and >= 0, got {rt!r}")


@dataclass(frozen=True)
class AnnotationLog:
    """Ordered exposure records with the distinct user and video ids they cover.

    Id tuples are in order of first appearance.
    """

    records: tuple[AnnotationRecord, ...]
    video_ids: tuple[str, ...]
    user_ids: tuple[str, ...]

    def __post_init__(self):
        videos, users = set(self.video_ids), set(self.user_ids)
        if len(videos) != len(self.video_ids) or len(users) != len(self.user_ids):
            raise InconsistentRecord("index sets contain duplicates")
        for rec in self.records:
            if rec.video_id not in videos or rec.user_id not in users:
                raise InconsistentRecord(
                    f"record ({rec.user_id!r}, {rec.video_id!r}) not covered by the index sets"
                )

    @classmethod
    def from_records(cls, records: Iterable[AnnotationRecord]) -> AnnotationLog:
        records = tuple(records)
        videos = tuple(dict.fromkeys(r.video_id for r in records))
        users = tuple(dict.fromkeys(r.user_id for r in records))
        return cls(records, videos, users)

    @property
    def unscored_videos(self) -> tuple[str, ...]:
        """Videos with no repeat exposure at any lag; these cannot be scored."""
        repeated = {r.video_id for r in self.records if r.is_repeat}
        return tuple(v for v in self.video_ids if v not in repeated)


def _parse_bool(text: str, line: int, column: str) -> bool:
    if text == "true":
        return True
    if text == "false":
        return False
    raise MalformedRow(line, f"{column} must be 'true' or 'false', got {text!r}")


def _parse_float(text: str, line: int, column: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise MalformedRow(line, f"{column} is not a number: {text!r}") from None


def _rows(path: Path | str, header: tuple[str, ...]) -> Iterator[tuple[int, list[str]]]:
    """Yield ``(line_number, fields)`` for each data row after checking the header."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            first = next(reader)
        except StopIteration:
            raise EmptyFile(f"{path}: no header") from None
        if tuple(first) != header:
            extra = [c for c in first if c not in header]
            missing = [c for c in header if c not in first]
            reason = f"expected header {','.join(header)!r}"
            if extra:
                reason += f"; unknown columns {extra}"
            if missing:
                reason += f"; missing columns {missing}"
            raise MalformedRow(reader.line_num, reason)
        n = 0
        for fields in reader:
            if not fields:
                continue
            if len(fields) != len(header):
                raise MalformedRow(
                    reader.line_num, f"expected {len(header)} fields, got {len(fields)}"
                )
            n += 1
            yield reader.line_num, fields
        if n == 0:
            raise EmptyFile(f"{path}: header but no data rows")


def parse_annotations(path: Path | str) -> AnnotationLog:
    records = []
    for line, (user, video, lag, is_repeat, responded, rt) in _rows(path, ANNOTATION_HEADER):
        if not user or not video:
            raise MalformedRow(line, "user_id and video_id must be non-empty")
        try:
            term = Term(lag)
        except ValueError:
            raise MalformedRow(line, f"lag must be 'short' or 'long', got {lag!r}") from None
        rt_value = _parse_float(rt, line, "reaction_time_ms") if rt != "" else None
        try:
            records.append(
                AnnotationRecord(
                    user_id=user,
                    video_id=video,
                    lag=term,
                    is_repeat=_parse_bool(is_repeat, line, "is_repeat"),
                    responded=_parse_bool(responded, line, "responded"),
                    reaction_time_ms=rt_value,
                )
            )
        except InconsistentRecord as exc:
            raise InconsistentRecord(exc.reason, line) from None
    return AnnotationLog.from_records(records)


def _fmt_bool(value: bool) -> str:
    return "true" if value else "false"


def write_annotations(log: AnnotationLog, path: Path | str) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(ANNOTATION_HEADER)
        for r in log.records:
            writer.writerow(
                [
                    r.user_id,
                    r.video_id,
                    r.lag.value,
                    _fmt_bool(r.is_repeat),
                    _fmt_bool(r.responded),
                    "" if r.reaction_time_ms is None else repr(float(r.reaction_time_ms)),
                ]
            )


# ---------------------------------------------------------------------------
# keyed sets


class _FrozenMap(Mapping):
    """Read-only mapping base for the per-video sets below."""

    _data: Mapping

    def __getitem__(self, key):
        return self._data[key]

    def __iter__(self):
        return iter(self._data)

    def __len__(self):
        return len(self._data)

    def __repr__(self):
        return f"{type(self).__name__}({dict(self._data)!r})"

    def __eq__(self, other):
        if type(other) is not type(self):
            return NotImplemented
        return self._key() == other._key()

    def __hash__(self):
        return hash(tuple(self._data.items()))

    def _key(self):
        return dict(self._data)


class CaptionSet(_FrozenMap):
    def __init__(self, captions: Mapping[str, str]):
        for vid, text in captions.items():
            if not text.strip():
                raise EmptyCaption(vid)
        self._data = MappingProxyType(dict(captions))


class Tag(NamedTuple):
    name: str
    confidence: float


class AudioTagSet(_FrozenMap):
    """video_id -> tags sorted by descending confidence.

    Ties in confidence keep their input order, so sorting is stable.
    """

    def __init__(self, tags: Mapping[str, Iterable[tuple[str, float]]]):
        data = {}
        for vid, entries in tags.items():
            entries = [Tag(str(n), float(c)) for n, c in entries]
            for t in entries:
                if not t.name:
                    raise ValueError(f"empty tag name for {vid!r}")
                if not 0.0 <= t.confidence <= 1.0:
                    raise OutOfRangeScore(vid, t.confidence)
            data[vid] = tuple(sorted(entries, key=lambda t: -t.confidence))
        self._data = MappingProxyType(data)


class PredictionSet(_FrozenMap):
    """One model's per-video predictions for one memorability term."""

    def __init__(self, model_id: str, target: Term, scores: Mapping[str, float]):
        self.model_id = model_id
        self.target = Term(target)
        checked = {}
        for vid, value in scores.items():
            value = float(value)
            if not 0.0 <= value <= 1.0:
                raise OutOfRangeScore(vid, value)
            checked[vid] = value
        self._data = MappingProxyType(checked)

    def _key(self):
        return (self.model_id, self.target, dict(self._data))

    def __repr__(self):
        return f"PredictionSet({self.model_id!r}, {self.target.value!r}, n={len(self)})"


def read_scores_csv(path: Path | str) -> dict[str, float]:
    """Read a ``video_id,score`` file into a dict, rejecting duplicates and out-of-range values."""
    scores: dict[str, float] = {}
    for line, (vid, raw) in _rows(path, PREDICTION_HEADER):
        if not vid:
            raise MalformedRow(line, "video_id must be non-empty")
        value = _parse_float(raw, line, "score")
        if vid in scores:
            raise DuplicateVideo(vid)
        if not 0.0 <= value <= 1.0:
            raise OutOfRangeScore(vid, value)
        scores[vid] = value
    return scores


def load_predictions(path: Path | str, model_id: str, target: Term) -> PredictionSet:
    return PredictionSet(model_id, target, read_scores_csv(path))


def write_scores_csv(scores: Mapping[str, float], path: Path | str) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(PREDICTION_HEADER)
        for vid, value in scores.items():
            writer.writerow([vid, repr(float(value))])


def write_predictions(preds: PredictionSet, path: Path | str) -> None:
    write_scores_csv(preds, path)


def load_captions(path: Path | str) -> CaptionSet:
    captions: dict[str, str] = {}
    for line, (vid, text) in _rows(path, CAPTION_HEADER):
        if not vid:
            raise MalformedRow(line, "video_id must be non-empty")
        if vid in captions:
            raise DuplicateVideo(vid)
        if not text.strip():
            raise EmptyCaption(vid)
        captions[vid] = text
    return CaptionSet(captions)


def write_captions(captions: Mapping[str, str], path: Path | str) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n", quoting=csv.QUOTE_NONNUMERIC)
        writer.writerow(CAPTION_HEADER)
        for vid, text in captions.items():
            writer.writerow([vid, text])


def load_audio_tags(path: Path | str) -> AudioTagSet:
    tags: dict[str, list[tuple[str, float]]] = {}
    seen: set[tuple[str, str]] = set()
    for line, (vid, tag, raw) in _rows(path, TAG_HEADER):
        if not vid or not tag:
            raise MalformedRow(line, "video_id and tag must be non-empty")
        if (vid, tag) in seen:
            raise MalformedRow(line, f"duplicate tag {tag!r} for {vid!r}")
        seen.add((vid, tag))
        confidence = _parse_float(raw, line, "confidence")
        if not 0.0 <= confidence <= 1.0:
            raise OutOfRangeScore(vid, confidence)
        tags.setdefault(vid, []).append((tag, confidence))
    return AudioTagSet(tags)


def write_audio_tags(tags: Mapping[str, Iterable[tuple[str, float]]], path: Path | str) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(TAG_HEADER)
        for vid, entries in tags.items():
            for name, conf in entries:
                writer.writerow([vid, name, repr(float(conf))])
