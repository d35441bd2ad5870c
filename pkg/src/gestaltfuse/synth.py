"""Synthetic memorability experiments with known latent scores.

Reaction-time surface per (user, video)::

    mean_rt = rt_base + rt_spread * s_u * (1 - m_v) + offset_u + nuisance * <a_u, b_v>

``s_u`` is a per-user sensitivity (truncated Pareto on ``[1, sensitivity_max]``,
1 for every user when ``sensitivity_max == 1``), ``offset_u`` a user bias and
the last term a ``latent_rank - 1`` dimensional interaction unrelated to
memorability. Without noise the matrix has rank at most ``latent_rank + 1``.

Heterogeneous sensitivity matters for the global two-sigma rule: with a
purely additive surface only the slowest tail of cells is ever flagged, so
per-video miss counts carry little ranking information.

Non-responses come from :class:`MissModel`: user ``u`` stays silent on a
repeat of ``v`` iff ``rho_u < nonresponse_scale * (1 - m_v)`` with
``rho_u ~ U(0, 1)``. The rule is monotone in ``m_v`` for every user, so hit
rates are non-decreasing in latent memorability.
"""

from __future__ import annotations

import hashlib
import json
import math
from collections.abc import Sequence
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit, logit

from ._rng import make_rng
from .audio_dsp import AudioClip, write_wav
from .data_model import (
    AnnotationLog,
    AnnotationRecord,
    PredictionSet,
    Term,
    write_annotations,
    write_audio_tags,
    write_captions,
    write_predictions,
)
from .gestalt import GestaltScore, GestaltWeights, Pathway, score_videos, write_gestalt
from .gt_scoring import MemorabilityScore, write_scores
from .scorers import heuristic_subscores


@dataclass(frozen=True)
class MissModel:
    nonresponse_scale: float = 0.3
    slow_outlier_prob: float = 0.0
    slow_outlier_ms: float = 1500.0

    def __post_init__(self):
        if not 0.0 <= self.nonresponse_scale <= 1.0:
            raise ValueError("nonresponse_scale must be in [0, 1]")
        if not 0.0 <= self.slow_outlier_prob <= 1.0:
            raise ValueError("slow_outlier_prob must be in [0, 1]")
        if self.slow_outlier_ms <= 0:
            raise ValueError("slow_outlier_ms must be positive")


@dataclass(frozen=True)
class SynthSpec:
    n_users: int = 50
    n_videos: int = 100
    latent_rank: int = 2
    density: float = 0.3
    seed: int = 0
    rt_base_ms: float = 600.0
    rt_spread_ms: float = 150.0
    noise_sd_ms: float = 20.0
    memorability_range: tuple[float, float] = (0.0, 1.0)
    user_offset_sd_ms: float = 20.0
    sensitivity_max: float = 20.0
    nuisance_ms: float = 15.0
    long_term: bool = True
    long_term_ratio: float = 0.85
    long_term_noise: float = 0.05
    miss_model: MissModel | None = field(default_factory=MissModel)

    def __post_init__(self):
        if self.n_users < 1 or self.n_videos < 1 or self.latent_rank < 1:
            raise ValueError("n_users, n_videos and latent_rank must be positive")
        if not 0.0 < self.density <= 1.0:
            raise ValueError(f"density must be in (0, 1], got {self.density}")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")
        if self.rt_base_ms <= 0 or self.rt_spread_ms <= 0:
            raise ValueError("rt_base_ms and rt_spread_ms must be positive")
        for name in ("noise_sd_ms", "user_offset_sd_ms", "nuisance_ms", "long_term_noise"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        lo, hi = self.memorability_range
        if not 0.0 <= lo <= hi <= 1.0:
            raise ValueError("memorability_range must satisfy 0 <= lo <= hi <= 1")
        if self.sensitivity_max < 1:
            raise ValueError("sensitivity_max must be >= 1")

    @property
    def user_ids(self) -> list[str]:
        width = max(3, len(str(self.n_users - 1)))
        return [f"u{i:0{width}d}" for i in range(self.n_users)]

    @property
    def video_ids(self) -> list[str]:
        width = max(4, len(str(self.n_videos - 1)))
        return [f"v{i:0{width}d}" for i in range(self.n_videos)]


@dataclass(frozen=True, eq=False)
class SynthData:
    """Generator output plus the draws behind it, for oracle tests."""

    latent: list[MemorabilityScore]
    log: AnnotationLog
    mean_rt: np.ndarray  # (users, videos) noise-free short-lag surface
    observed: np.ndarray  # (users, videos) short-lag pairs shown twice


def _sensitivities(rng, n: int, smax: float) -> np.ndarray:
    u = rng.uniform(size=n)
    if smax == 1.0:
        return np.ones(n)
    return (1.0 - u * (1.0 - 1.0 / smax)) ** -1.0


def _lag_records(rng, spec, users, videos, lag, m, mean_rt, rho, observed):
    """Records for one lag: a silent first exposure, then the repeat."""
    miss = spec.miss_model
    noise = rng.normal(0.0, 1.0, size=mean_rt.shape) * spec.noise_sd_ms
    slow = rng.uniform(size=mean_rt.shape)
    if lag is Term.SHORT:
        silent_bound = (miss.nonresponse_scale if miss else 0.0) * (1.0 - m)
    else:
        silent_bound = (1.0 - m) if miss and miss.nonresponse_scale > 0 else np.zeros_like(m)
    records = []
    for i, j in zip(*np.nonzero(observed)):
        uid, vid = users[i], videos[j]
        records.append(AnnotationRecord(uid, vid, lag, False, False))
        if rho[i] < silent_bound[j]:
            records.append(AnnotationRecord(uid, vid, lag, True, False))
            continue
        rt = mean_rt[i, j] + noise[i, j]
        if miss and slow[i, j] < miss.slow_outlier_prob * (1.0 - m[j]):
            rt += miss.slow_outlier_ms
        records.append(AnnotationRecord(uid, vid, lag, True, True, max(0.0, float(rt))))
    return records


def generate_data(spec: SynthSpec = SynthSpec()) -> SynthData:
    rng = make_rng(spec.seed)
    users, videos = spec.user_ids, spec.video_ids
    nu, nv = spec.n_users, spec.n_videos
    lo, hi = spec.memorability_range

    m = rng.uniform(lo, hi, size=nv)
    offsets = rng.normal(0.0, 1.0, size=nu) * spec.user_offset_sd_ms
    sens = _sensitivities(rng, nu, spec.sensitivity_max)
    k = spec.latent_rank - 1
    interaction = np.zeros((nu, nv))
    if k > 0:
        a = rng.normal(size=(nu, k))
        b = rng.normal(size=(nv, k))
        interaction = spec.nuisance_ms * (a @ b.T) / math.sqrt(k)

    def surface(mem):
        return spec.rt_base_ms + spec.rt_spread_ms * np.outer(sens, 1.0 - mem) + offsets[:, None] + interaction

    mean_rt = surface(m)
    observed = rng.uniform(size=(nu, nv)) < spec.density
    rho = rng.uniform(size=nu)
    records = _lag_records(rng, spec, users, videos, Term.SHORT, m, mean_rt, rho, observed)

    m_long = None
    if spec.long_term:
        m_long = np.clip(spec.long_term_ratio * m + rng.normal(size=nv) * spec.long_term_noise, 0.0, 1.0)
        observed_long = rng.uniform(size=(nu, nv)) < spec.density
        rho_long = rng.uniform(size=nu)
        records += _lag_records(rng, spec, users, videos, Term.LONG, m_long, surface(m_long), rho_long, observed_long)

    latent = [
        MemorabilityScore(
            vid,
            float(m[j]),
            None if m_long is None else float(m_long[j]),
            nu,
            nu if m_long is not None else 0,
        )
        for j, vid in enumerate(videos)
    ]
    log = AnnotationLog(tuple(records), tuple(videos), tuple(users))
    return SynthData(latent, log, mean_rt, observed)


def generate(spec: SynthSpec = SynthSpec()) -> tuple[list[MemorabilityScore], AnnotationLog]:
    """Latent scores and an annotation log, deterministic given ``spec.seed``."""
    data = generate_data(spec)
    return data.latent, data.log


# ---------------------------------------------------------------------------
# media extension: clips, tags, captions and member-model predictions

MUSIC_TAGS = ("music", "electronic music", "orchestral music", "singing")
OTHER_TAGS = ("speech", "vehicle", "water", "wind", "crowd", "dog", "footsteps", "engine", "birdsong", "applause")
SUBJECTS = ("a dog", "two people", "a car", "a crowd", "a child", "a river", "a band", "a cyclist", "a bird", "a chef")
ACTIONS = ("running", "talking", "driving past", "cheering", "playing", "flowing", "performing", "waiting", "flying", "cooking")
PLACES = ("in a park", "on a street", "at night", "indoors", "near the sea", "on a stage", "in the rain", "at a market")


@dataclass(frozen=True)
class MediaSpec:
    """Audio, tags and member predictions tied to latent memorability.

    Each video gets a latent audio salience ``a_v ~ U(0, 1)``. It sets the clip
    loudness (RMS ``0.3 * a_v``), how dominant and how music-like its top tag
    is, and therefore the heuristic gestalt. Member predictions are
    ``expit(logit(m_v) + noise)``; the audio members (augmented caption and
    spectrogram) use ``audio_sd_high`` where the gestalt reaches
    ``gestalt_threshold`` and ``audio_sd_low`` elsewhere.
    """

    sample_rate_hz: int = 16000
    clip_seconds: float = 0.5
    n_tags: int = 4
    caption_sd: float = 0.8
    frame_sd: float = 1.0
    audio_sd_high: float = 0.2
    audio_sd_low: float = 3.0
    gestalt_threshold: float = 0.4
    gestalt_weights: GestaltWeights = GestaltWeights()

    def __post_init__(self):
        if self.sample_rate_hz < 8000 or self.clip_seconds <= 0 or self.n_tags < 1:
            raise ValueError("invalid media spec")
        if min(self.caption_sd, self.frame_sd, self.audio_sd_high, self.audio_sd_low) < 0:
            raise ValueError("noise levels must be non-negative")


@dataclass(frozen=True, eq=False)
class SynthMedia:
    clips: dict[str, AudioClip]
    tags: dict[str, list[tuple[str, float]]]
    captions: dict[str, str]
    gestalt: list[GestaltScore]
    predictions: dict[tuple[str, Term], PredictionSet]  # (role, term) -> predictions

    def members(self, term: Term) -> dict[str, PredictionSet]:
        return {role: p for (role, t), p in self.predictions.items() if t is Term(term)}


def _tags_for(rng, salience: float, n_tags: int) -> list[tuple[str, float]]:
    top_is_music = rng.uniform() < salience
    top = str(rng.choice(MUSIC_TAGS if top_is_music else OTHER_TAGS))
    others = [str(t) for t in rng.choice(OTHER_TAGS, size=n_tags - 1, replace=False) if t != top][: n_tags - 1]
    top_conf = 0.2 + 0.75 * salience
    rest = (1.0 - salience) * rng.uniform(0.1, 0.3, size=len(others)) + 0.02
    tags = [(top, round(float(top_conf), 4))]
    tags += [(name, round(float(min(c, top_conf)), 4)) for name, c in zip(others, rest)]
    return tags


def _clip_for(rng, salience: float, spec: MediaSpec) -> AudioClip:
    n = int(round(spec.clip_seconds * spec.sample_rate_hz))
    t = np.arange(n) / spec.sample_rate_hz
    freq = rng.uniform(200.0, 2000.0)
    amp = 0.3 * salience * math.sqrt(2.0)
    return AudioClip(amp * np.sin(2.0 * np.pi * freq * t), spec.sample_rate_hz)


def _noisy(rng, m: np.ndarray, sd: np.ndarray | float) -> np.ndarray:
    z = logit(np.clip(m, 1e-3, 1.0 - 1e-3)) + rng.normal(size=m.shape) * sd
    return expit(z)


def generate_media(latent: Sequence[MemorabilityScore], spec: MediaSpec = MediaSpec(), seed: int = 0) -> SynthMedia:
    """Media for the given latent scores, from an RNG stream independent of the log's."""
    rng = make_rng(seed + 1_000_003)
    vids = [s.video_id for s in latent]
    salience = rng.uniform(size=len(vids))
    clips, tags, captions = {}, {}, {}
    for vid, a in zip(vids, salience):
        clips[vid] = _clip_for(rng, float(a), spec)
        tags[vid] = _tags_for(rng, float(a), spec.n_tags)
        captions[vid] = " ".join(
            str(rng.choice(words)) for words in (SUBJECTS, ACTIONS, PLACES)
        ).capitalize()

    subs = {vid: heuristic_subscores(clips[vid], tags[vid]) for vid in vids}
    weights = spec.gestalt_weights.with_threshold(spec.gestalt_threshold)
    gestalt = score_videos(subs, weights)
    high = np.array([g.pathway is Pathway.WITH_AUDIO for g in gestalt])
    audio_sd = np.where(high, spec.audio_sd_high, spec.audio_sd_low)

    sds = {
        "caption": spec.caption_sd,
        "augmented_caption": audio_sd,
        "frame": spec.frame_sd,
        "spectrogram": audio_sd,
    }
    predictions = {}
    for term in (Term.SHORT, Term.LONG):
        values = [s.get(term) for s in latent]
        if any(v is None for v in values):
            continue
        m = np.array(values)
        for role, sd in sds.items():
            p = _noisy(rng, m, sd)
            predictions[(role, term)] = PredictionSet(role, term, dict(zip(vids, map(float, p))))
    return SynthMedia(clips, tags, captions, gestalt, predictions)


# ---------------------------------------------------------------------------
# dataset files


def spec_hash(spec: SynthSpec, media: MediaSpec) -> str:
    body = {"synth": asdict(spec), "media": asdict(media)}
    return hashlib.sha256(json.dumps(body, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


def pipeline_config_for(spec: SynthSpec, train_fraction: float = 0.8) -> dict:
    """A pipeline config pointing at the files written by :func:`write_dataset`."""
    n_train = int(round(train_fraction * spec.n_videos))
    return {
        "seed": spec.seed,
        "paths": {
            "annotations": "annotations.csv",
            "captions": "captions.csv",
            "tags": "audio_tags.csv",
            "audio_dir": "audio",
            "predictions_dir": "predictions",
            "output_dir": "output",
        },
        "split": {"n_train": n_train, "n_test": spec.n_videos - n_train},
    }


def write_dataset(out_dir: Path | str, spec: SynthSpec = SynthSpec(), media: MediaSpec = MediaSpec()) -> list[Path]:
    """Write annotations, latent scores, captions, tags, clips, member predictions and a pipeline config."""
    out = Path(out_dir)
    (out / "audio").mkdir(parents=True, exist_ok=True)
    (out / "predictions").mkdir(parents=True, exist_ok=True)
    latent, log = generate(spec)
    data = generate_media(latent, media, seed=spec.seed)

    written = []
    write_annotations(log, out / "annotations.csv")
    write_scores(latent, out / "latent_scores.csv")
    write_captions(data.captions, out / "captions.csv")
    write_audio_tags(data.tags, out / "audio_tags.csv")
    write_gestalt(data.gestalt, out / "latent_gestalt.csv")
    written += [out / n for n in ("annotations.csv", "latent_scores.csv", "captions.csv", "audio_tags.csv", "latent_gestalt.csv")]
    for vid, clip in data.clips.items():
        write_wav(out / "audio" / f"{vid}.wav", clip)
    for (role, term), preds in sorted(data.predictions.items(), key=lambda kv: (kv[0][0], kv[0][1].value)):
        path = out / "predictions" / f"{role}_{term.value}.csv"
        write_predictions(preds, path)
        written.append(path)
    config = out / "pipeline_config.json"
    config.write_text(json.dumps(pipeline_config_for(spec), indent=2, sort_keys=True) + "\n")
    written.append(config)

    meta = {"command": "synth", "config_sha256": spec_hash(spec, media), "seed": spec.seed,
            "synth_spec": asdict(spec), "media_spec": asdict(media)}
    text = json.dumps(meta, indent=2, sort_keys=True) + "\n"
    for path in [*written, out / "audio"]:
        path.with_name(path.name + ".meta.json").write_text(text)
    return written
