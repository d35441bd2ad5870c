"""Audio-gestalt scoring and pathway routing.

The gestalt score is a weighted sum of four sub-scores (imageability, human
causal uncertainty, arousal, familiarity). Videos scoring at or above the
threshold take the with-audio pathway.
"""

from __future__ import annotations

import csv
import math
from collections.abc import Iterable, Mapping
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import NamedTuple

from .data_model import MalformedRow, _rows

GESTALT_HEADER = ("video_id", "imageability", "hcu", "arousal", "familiarity", "combined", "pathway")


class Pathway(str, Enum):
    WITH_AUDIO = "with_audio"
    WITHOUT_AUDIO = "without_audio"


class Subscores(NamedTuple):
    imageability: float
    hcu: float
    arousal: float
    familiarity: float

    def validate(self) -> Subscores:
        for name, value in zip(self._fields, self):
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} subscore outside [0, 1]: {value}")
        return self


SUBSCORE_NAMES = Subscores._fields


@dataclass(frozen=True)
class GestaltWeights:
    """Signed sub-score weights and the routing threshold (defaults: equal weights, 0.5)."""

    w_imageability: float = 0.25
    w_hcu: float = 0.25
    w_arousal: float = 0.25
    w_familiarity: float = 0.25
    threshold: float = 0.5

    def __post_init__(self):
        if not sum(abs(w) for w in self.vector) > 0:
            raise ValueError("at least one gestalt weight must be non-zero")
        if not 0.0 <= self.threshold <= 1.0:
            raise ValueError(f"threshold must be in [0, 1], got {self.threshold}")

    @property
    def vector(self) -> tuple[float, float, float, float]:
        return (self.w_imageability, self.w_hcu, self.w_arousal, self.w_familiarity)

    def with_threshold(self, threshold: float) -> GestaltWeights:
        return GestaltWeights(*self.vector, threshold=threshold)


def gestalt_score(subscores: Iterable[float], weights: GestaltWeights) -> float:
    """Weighted sum of the four sub-scores. Not clamped: weights may be negative."""
    s = Subscores(*subscores).validate()
    return math.fsum(w * x for w, x in zip(weights.vector, s))


def route(combined: float, threshold: float) -> Pathway:
    """With-audio iff ``combined >= threshold``; a tie goes to with-audio."""
    return Pathway.WITH_AUDIO if combined >= threshold else Pathway.WITHOUT_AUDIO


@dataclass(frozen=True)
class GestaltScore:
    video_id: str
    subscores: Subscores
    combined: float
    pathway: Pathway


def score_videos(subscores: Mapping[str, Iterable[float]], weights: GestaltWeights) -> list[GestaltScore]:
    out = []
    for vid, s in subscores.items():
        s = Subscores(*s).validate()
        combined = gestalt_score(s, weights)
        out.append(GestaltScore(vid, s, combined, route(combined, weights.threshold)))
    return out


def reroute(scores: Iterable[GestaltScore], threshold: float) -> list[GestaltScore]:
    """Same combined values, routed against a different threshold."""
    return [GestaltScore(g.video_id, g.subscores, g.combined, route(g.combined, threshold)) for g in scores]


def write_gestalt(scores: Iterable[GestaltScore], path: Path | str) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(GESTALT_HEADER)
        for g in scores:
            writer.writerow([g.video_id, *map(repr, map(float, g.subscores)), repr(float(g.combined)), g.pathway.value])


def read_gestalt(path: Path | str) -> list[GestaltScore]:
    out = []
    for line, (vid, *vals, combined, pathway) in _rows(path, GESTALT_HEADER):
        try:
            out.append(GestaltScore(vid, Subscores(*map(float, vals)).validate(), float(combined), Pathway(pathway)))
        except ValueError as exc:
            raise MalformedRow(line, str(exc)) from None
    return out
