"""Pluggable per-video score sources.

A scorer produces one value in [0, 1] per video. Three kinds exist:

``file``
    lookup in a ``video_id,score`` CSV (trained-model outputs exported offline);
``heuristic``
    deterministic stand-ins for the four gestalt sub-scores, computed from the
    clip and its audio tags. These are NOT the neural predictors and are
    labelled as heuristic wherever they are reported;
``remote``
    JSON-over-HTTP model server, see :class:`RemoteClient`.
"""

from __future__ import annotations

import logging
import math
import time
import warnings
from collections.abc import Callable, Iterable, Mapping, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from types import MappingProxyType

import httpx

from .audio_dsp import AudioClip, rms
from .data_model import AudioTagSet, CaptionSet, Tag, Term, read_scores_csv
from .errors import GestaltFuseError
from .gestalt import SUBSCORE_NAMES, Subscores

log = logging.getLogger(__name__)

AROUSAL_RMS_CEILING = 0.3


class ScorerError(GestaltFuseError):
    pass


class MissingVideo(ScorerError):
    def __init__(self, video_id: str, scorer_id: str | None = None):
        where = f" in scorer {scorer_id!r}" if scorer_id else ""
        super().__init__(f"no score for video {video_id!r}{where}")
        self.video_id = video_id
        self.scorer_id = scorer_id


class RemoteUnavailable(ScorerError):
    def __init__(self, endpoint: str, cause: str):
        super().__init__(f"{endpoint}: {cause}")
        self.endpoint = endpoint
        self.cause = cause


class ProtocolViolation(ScorerError):
    pass


class NoTags(UserWarning):
    """A clip has no audio tags; tag-based sub-scores fall back to 0.5."""


class ScorerKind(str, Enum):
    FILE_BACKED = "file"
    HEURISTIC = "heuristic"
    REMOTE = "remote"


class Subscore(str, Enum):
    IMAGEABILITY = "imageability"
    HCU = "hcu"
    AROUSAL = "arousal"
    FAMILIARITY = "familiarity"


class Provenance(str, Enum):
    LOADED = "loaded"
    COMPUTED = "computed"
    FETCHED = "fetched"


def parse_target(value) -> Term | Subscore:
    if isinstance(value, (Term, Subscore)):
        return value
    for enum in (Term, Subscore):
        try:
            return enum(value)
        except ValueError:
            pass
    raise ValueError(f"unknown scorer target {value!r}")


@dataclass(frozen=True)
class ScorerSpec:
    scorer_id: str
    kind: ScorerKind
    target: Term | Subscore
    source: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", ScorerKind(self.kind))
        object.__setattr__(self, "target", parse_target(self.target))
        if not self.scorer_id:
            raise ValueError("scorer_id must be non-empty")
        if self.kind is ScorerKind.HEURISTIC:
            if not isinstance(self.target, Subscore):
                raise ValueError("heuristic scorers only produce gestalt sub-scores")
        elif not self.source:
            raise ValueError(f"{self.kind.value} scorer {self.scorer_id!r} needs a source")
        if self.kind is ScorerKind.REMOTE and not str(self.source).startswith(("http://", "https://")):
            raise ValueError(f"remote scorer source must be an http(s) URL, got {self.source!r}")


@dataclass(frozen=True, eq=False)
class ScoreVector:
    scorer_id: str
    scores: Mapping[str, float]
    provenance: Provenance

    def __post_init__(self):
        checked = {}
        for vid, value in self.scores.items():
            value = float(value)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{self.scorer_id}: score for {vid!r} outside [0, 1]: {value}")
            checked[vid] = value
        object.__setattr__(self, "scores", MappingProxyType(checked))
        object.__setattr__(self, "provenance", Provenance(self.provenance))

    def __getitem__(self, video_id: str) -> float:
        return self.scores[video_id]

    def __contains__(self, video_id) -> bool:
        return video_id in self.scores

    def __iter__(self):
        return iter(self.scores)

    def __len__(self) -> int:
        return len(self.scores)


@dataclass
class ScorerInputs:
    """Per-video artifacts a scorer may consult. ``clips`` may be a mapping or a loader."""

    captions: Mapping[str, str] | None = None
    tags: Mapping[str, Sequence[Tag]] | None = None
    clips: Mapping[str, AudioClip] | Callable[[str], AudioClip | None] | None = None
    features_uri: Mapping[str, str] = field(default_factory=dict)

    def clip(self, video_id: str) -> AudioClip | None:
        if self.clips is None:
            return None
        if callable(self.clips):
            return self.clips(video_id)
        return self.clips.get(video_id)


# ---------------------------------------------------------------------------
# caption augmentation


def augment_caption(caption: str, tags: Iterable[tuple[str, float]], top_k: int = 3) -> str:
    """Append the ``top_k`` most confident tags, lowercased, to the caption."""
    if not caption.strip():
        raise ValueError("caption must be non-empty")
    if top_k < 0:
        raise ValueError("top_k must be >= 0")
    ranked = sorted(tags, key=lambda t: -t[1])[:top_k]
    if not ranked:
        return caption
    return caption + " " + " ".join(name.lower() for name, _ in ranked)


def augment_captions(captions: CaptionSet, tags: AudioTagSet, top_k: int = 3) -> CaptionSet:
    return CaptionSet({vid: augment_caption(text, tags.get(vid, ()), top_k) for vid, text in captions.items()})


# ---------------------------------------------------------------------------
# heuristic sub-scores


def _normalized_entropy(confidences: Sequence[float]) -> float:
    k = len(confidences)
    if k <= 1:
        return 0.0
    total = math.fsum(confidences)
    if total <= 0:
        return 1.0
    h = -math.fsum(c / total * math.log(c / total) for c in confidences if c > 0)
    return min(1.0, max(0.0, h / math.log(k)))


def heuristic_subscores(clip: AudioClip | None, tags: Sequence[tuple[str, float]]) -> Subscores:
    """Cheap proxies for the four gestalt sub-scores.

    arousal       RMS energy mapped linearly from [0, 0.3] onto [0, 1] (0 without a clip)
    familiarity   top tag confidence
    imageability  summed confidence of tags whose name contains "music", capped at 1
    hcu           1 - normalised entropy of the tag confidences, i.e. causal
                  certainty: one dominant tag gives 1, uniform tags give 0
    """
    arousal = 0.0 if clip is None else min(1.0, rms(clip) / AROUSAL_RMS_CEILING)
    tags = list(tags)
    if not tags:
        warnings.warn("no audio tags; familiarity, imageability and hcu default to 0.5", NoTags, stacklevel=2)
        return Subscores(0.5, 0.5, arousal, 0.5)
    confidences = [float(c) for _, c in tags]
    familiarity = max(confidences)
    imageability = min(1.0, math.fsum(c for name, c in tags if "music" in name.lower()))
    hcu = 1.0 - _normalized_entropy(confidences)
    return Subscores(imageability, hcu, arousal, familiarity)


# ---------------------------------------------------------------------------
# remote client


class RemoteClient:
    """Client for ``POST {endpoint}/score``.

    Request::

        {"scorer_id": s, "target": t,
         "videos": [{"video_id": id, "caption": ..., "tags": [...], "features_uri": ...}]}

    Reply::

        {"scores": [{"video_id": id, "score": x}]}

    Videos are sent in batches of ``batch_size`` with at most ``max_concurrency``
    requests in flight. Transport errors are retried ``retries`` times with
    exponential backoff; HTTP errors and malformed replies are not retried.
    """

    def __init__(
        self,
        endpoint: str,
        *,
        batch_size: int = 64,
        max_concurrency: int = 4,
        retries: int = 3,
        backoff_s: float = 0.2,
        timeout_s: float = 30.0,
        transport: httpx.BaseTransport | None = None,
    ):
        if batch_size < 1 or max_concurrency < 1 or retries < 0:
            raise ValueError("batch_size and max_concurrency must be >= 1, retries >= 0")
        self.endpoint = endpoint.rstrip("/")
        self.batch_size = batch_size
        self.max_concurrency = max_concurrency
        self.retries = retries
        self.backoff_s = backoff_s
        self._client = httpx.Client(timeout=timeout_s, transport=transport)

    def close(self):
        self._client.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def _post(self, body: dict) -> httpx.Response:
        url = f"{self.endpoint}/score"
        for attempt in range(self.retries + 1):
            try:
                return self._client.post(url, json=body)
            except httpx.TransportError as exc:
                if attempt == self.retries:
                    raise RemoteUnavailable(self.endpoint, f"{type(exc).__name__}: {exc}") from exc
                delay = self.backoff_s * 2**attempt
                log.warning("transport error from %s (%s), retrying in %.2fs", url, exc, delay)
                time.sleep(delay)
        raise AssertionError("unreachable")

    def _score_batch(self, scorer_id: str, target: str, videos: list[dict]) -> dict[str, float]:
        resp = self._post({"scorer_id": scorer_id, "target": target, "videos": videos})
        if not 200 <= resp.status_code < 300:
            raise RemoteUnavailable(self.endpoint, f"HTTP {resp.status_code}")
        return parse_score_reply(resp, [v["video_id"] for v in videos])

    def score(self, scorer_id: str, target: str, videos: list[dict]) -> dict[str, float]:
        batches = [videos[i : i + self.batch_size] for i in range(0, len(videos), self.batch_size)]
        with ThreadPoolExecutor(max_workers=self.max_concurrency) as pool:
            parts = list(pool.map(lambda b: self._score_batch(scorer_id, target, b), batches))
        merged: dict[str, float] = {}
        for part in parts:
            merged.update(part)
        return {v["video_id"]: merged[v["video_id"]] for v in videos}


def parse_score_reply(resp: httpx.Response, expected: list[str]) -> dict[str, float]:
    try:
        payload = resp.json()
    except ValueError as exc:
        raise ProtocolViolation(f"reply is not JSON: {exc}") from None
    if not isinstance(payload, dict) or not isinstance(payload.get("scores"), list):
        raise ProtocolViolation("reply must be an object with a 'scores' list")
    wanted = set(expected)
    out: dict[str, float] = {}
    for item in payload["scores"]:
        if not isinstance(item, dict) or "video_id" not in item or "score" not in item:
            raise ProtocolViolation(f"malformed score entry {item!r}")
        vid, value = item["video_id"], item["score"]
        if vid not in wanted:
            raise ProtocolViolation(f"reply contains unrequested video {vid!r}")
        if vid in out:
            raise ProtocolViolation(f"reply repeats video {vid!r}")
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ProtocolViolation(f"score for {vid!r} is not a number: {value!r}")
        value = float(value)
        if not 0.0 <= value <= 1.0:
            raise ProtocolViolation(f"score for {vid!r} outside [0, 1]: {value}")
        out[vid] = value
    missing = [v for v in expected if v not in out]
    if missing:
        raise ProtocolViolation(f"reply is missing {len(missing)} videos, e.g. {missing[0]!r}")
    return out


def _remote_payload(video_id: str, inputs: ScorerInputs) -> dict:
    item: dict = {"video_id": video_id}
    if inputs.captions is not None and video_id in inputs.captions:
        item["caption"] = inputs.captions[video_id]
    if inputs.tags is not None and video_id in inputs.tags:
        item["tags"] = [{"tag": n, "confidence": c} for n, c in inputs.tags[video_id]]
    if video_id in inputs.features_uri:
        item["features_uri"] = inputs.features_uri[video_id]
    return item


# ---------------------------------------------------------------------------


def evaluate_scorer(
    spec: ScorerSpec,
    videos: Sequence[str],
    inputs: ScorerInputs | None = None,
    client: RemoteClient | None = None,
) -> ScoreVector:
    inputs = inputs or ScorerInputs()
    if spec.kind is ScorerKind.FILE_BACKED:
        table = read_scores_csv(spec.source)
        for vid in videos:
            if vid not in table:
                raise MissingVideo(vid, spec.scorer_id)
        return ScoreVector(spec.scorer_id, {v: table[v] for v in videos}, Provenance.LOADED)

    if spec.kind is ScorerKind.HEURISTIC:
        index = SUBSCORE_NAMES.index(spec.target.value)
        out = {}
        for vid in videos:
            clip = inputs.clip(vid)
            if clip is None and spec.target is Subscore.AROUSAL:
                raise MissingVideo(vid, spec.scorer_id)
            tags = inputs.tags.get(vid, ()) if inputs.tags is not None else ()
            out[vid] = heuristic_subscores(clip, tags)[index]
        return ScoreVector(spec.scorer_id, out, Provenance.COMPUTED)

    own_client = client is None
    client = client or RemoteClient(spec.source)
    try:
        scores = client.score(spec.scorer_id, spec.target.value, [_remote_payload(v, inputs) for v in videos])
    finally:
        if own_client:
            client.close()
    return ScoreVector(spec.scorer_id, scores, Provenance.FETCHED)
