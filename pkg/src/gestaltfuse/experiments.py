"""Synthetic experiments shared by the acceptance tests and ``scripts/``."""

from __future__ import annotations

import time
from dataclasses import dataclass

from .data_model import Term
from .evaluation import SplitSpec, evaluate, spearman, split
from .fusion import ModelRole, RunId, grid_search, run_predict, standard_runs
from .gt_scoring import FactorizationConfig, MissRule, build_rt_matrix, cf_short_term_scores, factorize
from .synth import MediaSpec, SynthSpec, generate, generate_media


@dataclass(frozen=True)
class RecoveryResult:
    seed: int
    spearman: float
    seconds: float


def cf_recovery(
    spec: SynthSpec,
    factorization: FactorizationConfig = FactorizationConfig(),
    rule: MissRule = MissRule(),
) -> RecoveryResult:
    """Spearman between CF-regenerated short-term scores and the latent ones.

    The timer covers matrix assembly, factorization and scoring, not data generation.
    """
    latent, log = generate(spec)
    start = time.perf_counter()
    scores = cf_short_term_scores(factorize(build_rt_matrix(log), factorization), rule)
    seconds = time.perf_counter() - start
    truth = {s.video_id: s.short_term for s in latent}
    rho = spearman([s.short_term for s in scores], [truth[s.video_id] for s in scores])
    return RecoveryResult(spec.seed, rho, seconds)


@dataclass(frozen=True)
class EffectResult:
    seed: int
    target: Term
    run3_validation: float
    run4_validation: float
    run3_test: float
    run4_test: float


def gestalt_effect(
    seed: int,
    n_videos: int = 1000,
    n_train: int = 800,
    media: MediaSpec = MediaSpec(),
    targets: tuple[Term, ...] = (Term.SHORT, Term.LONG),
    weight_step: float = 0.1,
    theta_step: float = 0.05,
) -> list[EffectResult]:
    """Calibrated run3 against calibrated run4 on media whose audio members are sharp only on high-gestalt videos.

    Ground truth is the latent memorability. Calibration uses the first
    ``n_train`` videos of the seeded split (validation scores are the
    calibration optimum) and the rest are held out.
    """
    latent, _ = generate(SynthSpec(n_videos=n_videos, seed=seed))
    synth_media = generate_media(latent, media, seed)
    train, test = split([s.video_id for s in latent], SplitSpec(seed, n_train, n_videos - n_train))
    roles = {r: r.value for r in ModelRole}
    out = []
    for target in targets:
        runs = {r.run_id: r for r in standard_runs(target, roles, media.gestalt_weights)}
        members = synth_media.members(target)
        scores = {}
        for run_id in (RunId.RUN3_EVERYTHING, RunId.RUN4_GESTALT):
            gestalt = synth_media.gestalt if run_id is RunId.RUN4_GESTALT else None
            fit = grid_search(runs[run_id], members, latent, gestalt, weight_step, theta_step, videos=train)
            preds = run_predict(fit.run, gestalt, members, test)
            scores[run_id] = (fit.spearman, evaluate(preds, latent, target, videos=test).spearman)
        out.append(
            EffectResult(
                seed,
                target,
                scores[RunId.RUN3_EVERYTHING][0],
                scores[RunId.RUN4_GESTALT][0],
                scores[RunId.RUN3_EVERYTHING][1],
                scores[RunId.RUN4_GESTALT][1],
            )
        )
    return out


__all__ = ["EffectResult", "RecoveryResult", "cf_recovery", "gestalt_effect"]
