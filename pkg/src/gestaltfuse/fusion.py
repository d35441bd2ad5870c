"""Weighted late fusion of per-model predictions and the run definitions.

Runs (see :class:`RunId`):

run1  audio-only control: augmented-caption and spectrogram models
run2  no-audio control: caption and frame models
run3  everything, regardless of gestalt
run4  gestalt-conditional: the with-audio or without-audio pathway per video
run0  the frame model alone

Runs 1 and 3 use their ``with_audio`` pathway for every video, runs 2 and 0
their ``without_audio`` pathway.
"""

from __future__ import annotations

import json
import math
from collections.abc import Iterable, Iterator, Mapping, Sequence
from dataclasses import asdict, dataclass, field, replace
from enum import Enum
from pathlib import Path
from types import MappingProxyType

import numpy as np

from .data_model import PredictionSet, Term
from .errors import GestaltFuseError
from .evaluation import ConstantInput, midranks, _pearson
from .gestalt import GestaltScore, GestaltWeights, Pathway, gestalt_score, route
from .gt_scoring import MemorabilityScore

WEIGHT_SUM_TOL = 1e-9


class FusionError(GestaltFuseError):
    pass


class MissingPrediction(FusionError):
    def __init__(self, scorer_id: str, video_id: str):
        super().__init__(f"scorer {scorer_id!r} has no prediction for {video_id!r}")
        self.scorer_id = scorer_id
        self.video_id = video_id


class MissingGestalt(FusionError):
    def __init__(self, video_id: str):
        super().__init__(f"no gestalt score for {video_id!r}")
        self.video_id = video_id


class DegenerateValidation(FusionError):
    pass


class RunConfigInvalid(FusionError):
    pass


class RunId(str, Enum):
    RUN1_AUDIO_ONLY = "run1"
    RUN2_NO_AUDIO = "run2"
    RUN3_EVERYTHING = "run3"
    RUN4_GESTALT = "run4"
    RUN0_FRAME_ONLY = "run0"


class ModelRole(str, Enum):
    CAPTION = "caption"
    AUGMENTED_CAPTION = "augmented_caption"
    FRAME = "frame"
    SPECTROGRAM = "spectrogram"


_ALLOWED_ROLES = {
    (RunId.RUN1_AUDIO_ONLY, Pathway.WITH_AUDIO): {ModelRole.AUGMENTED_CAPTION, ModelRole.SPECTROGRAM},
    (RunId.RUN2_NO_AUDIO, Pathway.WITHOUT_AUDIO): {ModelRole.CAPTION, ModelRole.FRAME},
    (RunId.RUN0_FRAME_ONLY, Pathway.WITHOUT_AUDIO): {ModelRole.FRAME},
    (RunId.RUN4_GESTALT, Pathway.WITH_AUDIO): {ModelRole.AUGMENTED_CAPTION, ModelRole.FRAME, ModelRole.SPECTROGRAM},
    (RunId.RUN4_GESTALT, Pathway.WITHOUT_AUDIO): {ModelRole.CAPTION, ModelRole.FRAME},
}


@dataclass(frozen=True)
class PathwayConfig:
    pathway: Pathway
    members: tuple[tuple[str, float], ...]

    def __post_init__(self):
        object.__setattr__(self, "pathway", Pathway(self.pathway))
        members = tuple((str(s), float(w)) for s, w in self.members)
        object.__setattr__(self, "members", members)
        if not members:
            raise RunConfigInvalid("a pathway needs at least one member")
        ids = [s for s, _ in members]
        if len(set(ids)) != len(ids):
            raise RunConfigInvalid(f"duplicate members in {self.pathway.value} pathway")
        if any(w < 0 or not math.isfinite(w) for _, w in members):
            raise RunConfigInvalid("member weights must be finite and >= 0")
        total = math.fsum(w for _, w in members)
        if abs(total - 1.0) > WEIGHT_SUM_TOL:
            raise RunConfigInvalid(f"member weights sum to {total}, expected 1")

    @property
    def scorer_ids(self) -> tuple[str, ...]:
        return tuple(s for s, _ in self.members)

    @property
    def weights(self) -> tuple[float, ...]:
        return tuple(w for _, w in self.members)

    def with_weights(self, weights: Sequence[float]) -> PathwayConfig:
        return PathwayConfig(self.pathway, tuple(zip(self.scorer_ids, weights)))

    @classmethod
    def equal(cls, pathway: Pathway, scorer_ids: Sequence[str]) -> PathwayConfig:
        return cls(pathway, tuple((s, 1.0 / len(scorer_ids)) for s in scorer_ids))


@dataclass(frozen=True)
class RunConfig:
    run_id: RunId
    target: Term
    with_audio: PathwayConfig | None = None
    without_audio: PathwayConfig | None = None
    gestalt_weights: GestaltWeights | None = None
    roles: Mapping[str, ModelRole] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "run_id", RunId(self.run_id))
        object.__setattr__(self, "target", Term(self.target))
        object.__setattr__(self, "roles", MappingProxyType({k: ModelRole(v) for k, v in self.roles.items()}))
        run = self.run_id
        if run is RunId.RUN4_GESTALT:
            if self.with_audio is None or self.without_audio is None or self.gestalt_weights is None:
                raise RunConfigInvalid("run4 needs both pathways and gestalt weights")
        elif run in (RunId.RUN1_AUDIO_ONLY, RunId.RUN3_EVERYTHING):
            if self.with_audio is None:
                raise RunConfigInvalid(f"{run.value} needs a with_audio pathway")
        elif self.without_audio is None:
            raise RunConfigInvalid(f"{run.value} needs a without_audio pathway")
        if run is RunId.RUN0_FRAME_ONLY and len(self.without_audio.members) != 1:
            raise RunConfigInvalid("run0 is a single-model run")
        if self.with_audio is not None and self.with_audio.pathway is not Pathway.WITH_AUDIO:
            raise RunConfigInvalid("with_audio slot holds a without_audio pathway")
        if self.without_audio is not None and self.without_audio.pathway is not Pathway.WITHOUT_AUDIO:
            raise RunConfigInvalid("without_audio slot holds a with_audio pathway")
        self._check_roles()

    def _check_roles(self):
        for pw in self.used_pathways:
            allowed = _ALLOWED_ROLES.get((self.run_id, pw.pathway))
            if allowed is None:
                continue
            for sid in pw.scorer_ids:
                role = self.roles.get(sid)
                if role is not None and role not in allowed:
                    raise RunConfigInvalid(
                        f"{self.run_id.value} {pw.pathway.value} pathway cannot use "
                        f"{role.value} model {sid!r}"
                    )

    @property
    def pathways(self) -> tuple[PathwayConfig | None, PathwayConfig | None]:
        return (self.with_audio, self.without_audio)

    @property
    def fixed_pathway(self) -> PathwayConfig | None:
        """The pathway used for every video, or None for run4."""
        if self.run_id is RunId.RUN4_GESTALT:
            return None
        if self.run_id in (RunId.RUN1_AUDIO_ONLY, RunId.RUN3_EVERYTHING):
            return self.with_audio
        return self.without_audio

    @property
    def used_pathways(self) -> tuple[PathwayConfig, ...]:
        fixed = self.fixed_pathway
        return (fixed,) if fixed is not None else (self.with_audio, self.without_audio)

    @property
    def scorer_ids(self) -> tuple[str, ...]:
        return tuple(dict.fromkeys(s for pw in self.used_pathways for s in pw.scorer_ids))

    @property
    def key(self) -> str:
        return f"{self.run_id.value}_{self.target.value}"

    # -- JSON -------------------------------------------------------------

    def to_dict(self) -> dict:
        def pw(p):
            return None if p is None else {"members": [{"scorer_id": s, "weight": w} for s, w in p.members]}

        out = {
            "run_id": self.run_id.value,
            "target": self.target.value,
            "with_audio": pw(self.with_audio),
            "without_audio": pw(self.without_audio),
            "gestalt": None,
            "roles": {k: v.value for k, v in sorted(self.roles.items())},
        }
        if self.gestalt_weights is not None:
            out["gestalt"] = asdict(self.gestalt_weights)
        return out

    @classmethod
    def from_dict(cls, d: Mapping) -> RunConfig:
        def pw(p, which):
            if not p:
                return None
            return PathwayConfig(which, tuple((m["scorer_id"], m["weight"]) for m in p["members"]))

        g = d.get("gestalt")
        weights = GestaltWeights(**g) if g else None
        return cls(
            run_id=d["run_id"],
            target=d["target"],
            with_audio=pw(d.get("with_audio"), Pathway.WITH_AUDIO),
            without_audio=pw(d.get("without_audio"), Pathway.WITHOUT_AUDIO),
            gestalt_weights=weights,
            roles=d.get("roles", {}),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> RunConfig:
        return cls.from_dict(json.loads(text))


_STANDARD_MEMBERS = {
    RunId.RUN1_AUDIO_ONLY: ((ModelRole.AUGMENTED_CAPTION, ModelRole.SPECTROGRAM), None),
    RunId.RUN2_NO_AUDIO: (None, (ModelRole.CAPTION, ModelRole.FRAME)),
    RunId.RUN3_EVERYTHING: (
        (ModelRole.CAPTION, ModelRole.AUGMENTED_CAPTION, ModelRole.FRAME, ModelRole.SPECTROGRAM),
        None,
    ),
    RunId.RUN4_GESTALT: (
        (ModelRole.AUGMENTED_CAPTION, ModelRole.FRAME, ModelRole.SPECTROGRAM),
        (ModelRole.CAPTION, ModelRole.FRAME),
    ),
    RunId.RUN0_FRAME_ONLY: (None, (ModelRole.FRAME,)),
}


def standard_runs(
    target: Term,
    scorer_ids: Mapping[ModelRole, str],
    gestalt_weights: GestaltWeights = GestaltWeights(),
) -> list[RunConfig]:
    """The five runs with equal member weights, members picked by role."""
    ids = {ModelRole(k): v for k, v in scorer_ids.items()}
    runs = []
    for run_id, (with_roles, without_roles) in _STANDARD_MEMBERS.items():
        def pathway(which, roles):
            return None if roles is None else PathwayConfig.equal(which, [ids[r] for r in roles])

        runs.append(
            RunConfig(
                run_id,
                target,
                with_audio=pathway(Pathway.WITH_AUDIO, with_roles),
                without_audio=pathway(Pathway.WITHOUT_AUDIO, without_roles),
                gestalt_weights=gestalt_weights if run_id is RunId.RUN4_GESTALT else None,
                roles={ids[r]: r for r in ModelRole if r in ids},
            )
        )
    return runs


def write_run_config(run: RunConfig, path: Path | str) -> None:
    Path(path).write_text(run.to_json())


def read_run_config(path: Path | str) -> RunConfig:
    return RunConfig.from_json(Path(path).read_text())


# ---------------------------------------------------------------------------
# fusion

Predictions = Mapping[str, Mapping[str, float]]


def pathway_fuse(config: PathwayConfig, predictions: Predictions, video_id: str) -> float:
    """Convex combination of the members' predictions for one video.

    The sum is exactly rounded (``math.fsum``), so the result does not depend
    on member order.
    """
    terms = []
    for sid, w in config.members:
        preds = predictions.get(sid)
        if preds is None or video_id not in preds:
            raise MissingPrediction(sid, video_id)
        terms.append(w * preds[video_id])
    return min(1.0, max(0.0, math.fsum(terms)))


def _gestalt_index(gestalt) -> Mapping[str, GestaltScore]:
    if gestalt is None:
        return {}
    if isinstance(gestalt, Mapping):
        return gestalt
    return {g.video_id: g for g in gestalt}


def default_videos(run: RunConfig, predictions: Predictions) -> list[str]:
    """Videos every member of the run has a prediction for, sorted."""
    sets = [set(predictions.get(s, ())) for s in run.scorer_ids]
    return sorted(set.intersection(*sets)) if sets else []


def routed_pathway(run: RunConfig, g: GestaltScore) -> Pathway:
    combined = gestalt_score(g.subscores, run.gestalt_weights)
    return route(combined, run.gestalt_weights.threshold)


def run_predict(
    run: RunConfig,
    gestalt: Iterable[GestaltScore] | Mapping[str, GestaltScore] | None,
    predictions: Predictions,
    videos: Iterable[str] | None = None,
) -> PredictionSet:
    """Fused predictions for one run.

    For run4 the combined gestalt is recomputed from each video's sub-scores
    with the run's own weights and threshold, so a calibrated threshold takes
    effect without re-running the gestalt stage.
    """
    videos = default_videos(run, predictions) if videos is None else list(videos)
    out = {}
    fixed = run.fixed_pathway
    if fixed is not None:
        for vid in videos:
            out[vid] = pathway_fuse(fixed, predictions, vid)
    else:
        index = _gestalt_index(gestalt)
        for vid in videos:
            g = index.get(vid)
            if g is None:
                raise MissingGestalt(vid)
            pw = run.with_audio if routed_pathway(run, g) is Pathway.WITH_AUDIO else run.without_audio
            out[vid] = pathway_fuse(pw, predictions, vid)
    return PredictionSet(run.run_id.value, run.target, out)


# ---------------------------------------------------------------------------
# calibration


def grid_points(step: float) -> int:
    """Number of intervals ``1 / step``; the step must divide [0, 1]."""
    if not 0 < step <= 1:
        raise ValueError(f"grid step must be in (0, 1], got {step}")
    n = round(1.0 / step)
    if abs(n * step - 1.0) > 1e-9:
        raise ValueError(f"grid step {step} does not divide [0, 1]")
    return n


def simplex_grid(n_members: int, n_intervals: int) -> Iterator[tuple[float, ...]]:
    """Weight vectors ``k / n_intervals`` summing to one, in ascending lexicographic order."""
    def compositions(parts, total):
        if parts == 1:
            yield (total,)
            return
        for first in range(total + 1):
            for rest in compositions(parts - 1, total - first):
                yield (first, *rest)

    for comp in compositions(n_members, n_intervals):
        yield tuple(k / n_intervals for k in comp)


@dataclass(frozen=True)
class CalibrationResult:
    run: RunConfig
    spearman: float
    n_videos: int
    n_evaluated: int


def _rank_score(fused: np.ndarray, truth_ranks: np.ndarray) -> float:
    if np.all(fused == fused[0]):
        return -math.inf
    try:
        return _pearson(midranks(fused), truth_ranks)
    except ConstantInput:
        return -math.inf


def grid_search(
    run: RunConfig,
    predictions: Predictions,
    gt: Iterable[MemorabilityScore],
    gestalt: Iterable[GestaltScore] | Mapping[str, GestaltScore] | None = None,
    weight_step: float = 0.1,
    theta_step: float = 0.05,
    videos: Iterable[str] | None = None,
) -> CalibrationResult:
    """Exhaustive search over member weights (and the threshold for run4) maximising Spearman.

    Points are visited in ascending lexicographic order of
    ``(with-audio weights, without-audio weights, threshold)`` and replaced only
    on a strictly better score, so ties go to the smallest parameter vector.
    Constant fused vectors score ``-inf``.
    """
    n_w = grid_points(weight_step)
    n_t = grid_points(theta_step)
    truth = {g.video_id: g.get(run.target) for g in gt}
    keep = set(videos) if videos is not None else None
    index = _gestalt_index(gestalt) if run.fixed_pathway is None else {}
    ids = [
        v
        for v in default_videos(run, predictions)
        if truth.get(v) is not None
        and (keep is None or v in keep)
        and (run.fixed_pathway is not None or v in index)
    ]
    if len(ids) < 3:
        raise DegenerateValidation(f"calibration needs at least 3 videos, got {len(ids)}")
    truth_ranks = midranks(np.array([truth[v] for v in ids]))

    def fused_table(pw: PathwayConfig) -> list[tuple[tuple[float, ...], np.ndarray]]:
        table = []
        for weights in simplex_grid(len(pw.members), n_w):
            cfg = pw.with_weights(weights)
            table.append((weights, np.array([pathway_fuse(cfg, predictions, v) for v in ids])))
        return table

    best_score, best_params, evaluated = -math.inf, None, 0
    fixed = run.fixed_pathway
    if fixed is not None:
        for weights, fused in fused_table(fixed):
            evaluated += 1
            score = _rank_score(fused, truth_ranks)
            if score > best_score:
                best_score, best_params = score, (weights,)
    else:
        combined = np.array([gestalt_score(index[v].subscores, run.gestalt_weights) for v in ids])
        with_table = fused_table(run.with_audio)
        without_table = fused_table(run.without_audio)
        thetas = [k / n_t for k in range(n_t + 1)]
        masks = [combined >= theta for theta in thetas]
        for w_with, f_with in with_table:
            for w_without, f_without in without_table:
                for theta, mask in zip(thetas, masks):
                    evaluated += 1
                    score = _rank_score(np.where(mask, f_with, f_without), truth_ranks)
                    if score > best_score:
                        best_score, best_params = score, (w_with, w_without, theta)

    if best_params is None:
        raise DegenerateValidation("every grid point produced a constant prediction")

    if fixed is not None:
        (weights,) = best_params
        new_pw = fixed.with_weights(weights)
        if fixed is run.with_audio:
            calibrated = replace(run, with_audio=new_pw)
        else:
            calibrated = replace(run, without_audio=new_pw)
    else:
        w_with, w_without, theta = best_params
        calibrated = replace(
            run,
            with_audio=run.with_audio.with_weights(w_with),
            without_audio=run.without_audio.with_weights(w_without),
            gestalt_weights=run.gestalt_weights.with_threshold(theta),
        )
    return CalibrationResult(calibrated, best_score, len(ids), evaluated)


def calibrate(
    run: RunConfig,
    predictions: Predictions,
    gt: Iterable[MemorabilityScore],
    gestalt: Iterable[GestaltScore] | Mapping[str, GestaltScore] | None = None,
    weight_step: float = 0.1,
    theta_step: float = 0.05,
    videos: Iterable[str] | None = None,
) -> RunConfig:
    return grid_search(run, predictions, gt, gestalt, weight_step, theta_step, videos).run
