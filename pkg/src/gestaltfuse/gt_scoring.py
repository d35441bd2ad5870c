"""Ground-truth memorability from annotation logs.

Two routes are provided:

* :func:`hit_rate_scores` -- the fraction of repeat exposures that were
  recognised, per video and lag.
* :func:`build_rt_matrix` -> :func:`factorize` -> :func:`cf_short_term_scores`
  -- complete the user x video reaction-time matrix by regularised ALS, then
  count predicted reaction times above ``mean + k * std`` as misses.
"""

from __future__ import annotations

import csv
import math
import warnings
from collections import defaultdict
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from ._rng import make_rng
from .data_model import AnnotationLog, MalformedRow, Term, _rows
from .errors import GestaltFuseError

SCORES_HEADER = ("video_id", "short_term", "long_term", "n_short", "n_long")


class EmptyMatrix(GestaltFuseError):
    pass


class DegenerateMatrix(UserWarning):
    """A user or video has no observed cells and gets a bias-only prediction."""


@dataclass(frozen=True)
class MemorabilityScore:
    video_id: str
    short_term: float | None
    long_term: float | None = None
    n_short: int = 0
    n_long: int = 0

    def __post_init__(self):
        for name, value, count in (
            ("short_term", self.short_term, self.n_short),
            ("long_term", self.long_term, self.n_long),
        ):
            if value is None:
                continue
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} for {self.video_id!r} outside [0, 1]: {value}")
            if count < 1:
                raise ValueError(f"{name} present for {self.video_id!r} with no contributing annotations")

    def get(self, term: Term) -> float | None:
        return self.short_term if Term(term) is Term.SHORT else self.long_term


def hit_rate_scores(log: AnnotationLog) -> list[MemorabilityScore]:
    """Recognised repeat exposures over all repeat exposures, per video and lag.

    Videos with no repeat exposure at all are left out (see
    ``AnnotationLog.unscored_videos``). Output is sorted by video id, so it does
    not depend on record order.
    """
    hits: dict[tuple[str, Term], int] = defaultdict(int)
    totals: dict[tuple[str, Term], int] = defaultdict(int)
    for rec in log.records:
        if not rec.is_repeat:
            continue
        totals[rec.video_id, rec.lag] += 1
        hits[rec.video_id, rec.lag] += rec.responded

    out = []
    for vid in sorted({v for v, _ in totals}):
        n_s, n_l = totals.get((vid, Term.SHORT), 0), totals.get((vid, Term.LONG), 0)
        out.append(
            MemorabilityScore(
                video_id=vid,
                short_term=hits[vid, Term.SHORT] / n_s if n_s else None,
                long_term=hits[vid, Term.LONG] / n_l if n_l else None,
                n_short=n_s,
                n_long=n_l,
            )
        )
    return out


# ---------------------------------------------------------------------------
# reaction-time matrix


@dataclass(frozen=True, eq=False)
class ReactionMatrix:
    """User x video reaction times in ms; NaN marks an unobserved cell."""

    users: tuple[str, ...]
    videos: tuple[str, ...]
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.shape != (len(self.users), len(self.videos)):
            raise ValueError(
                f"values shape {values.shape} does not match "
                f"{len(self.users)} users x {len(self.videos)} videos"
            )
        observed = values[~np.isnan(values)]
        if not np.all(np.isfinite(observed)) or np.any(observed < 0):
            raise ValueError("observed reaction times must be finite and >= 0")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @classmethod
    def from_cells(cls, users, videos, cells: Mapping[tuple[int, int], float]) -> ReactionMatrix:
        values = np.full((len(users), len(videos)), np.nan)
        for (i, j), rt in cells.items():
            values[i, j] = rt
        return cls(tuple(users), tuple(videos), values)

    @property
    def observed(self) -> np.ndarray:
        return ~np.isnan(self.values)

    @property
    def n_observed(self) -> int:
        return int(self.observed.sum())

    @property
    def is_dense(self) -> bool:
        return bool(self.observed.all())

    @property
    def cells(self) -> dict[tuple[int, int], float]:
        rows, cols = np.nonzero(self.observed)
        return {(int(i), int(j)): float(self.values[i, j]) for i, j in zip(rows, cols)}

    def __eq__(self, other):
        if not isinstance(other, ReactionMatrix):
            return NotImplemented
        return (
            self.users == other.users
            and self.videos == other.videos
            and np.array_equal(self.values, other.values, equal_nan=True)
        )


def build_rt_matrix(log: AnnotationLog, lag: Term | None = Term.SHORT) -> ReactionMatrix:
    """One cell per (user, video) with a responded repeat exposure at ``lag``.

    Repeated measurements of the same pair are averaged. Rows and columns cover
    every user and video in the log, so users or videos without any response
    stay in the matrix as empty rows/columns. ``lag=None`` pools both lags.
    """
    sums: dict[tuple[str, str], list[float]] = defaultdict(list)
    for rec in log.records:
        if rec.is_repeat and rec.responded and (lag is None or rec.lag is lag):
            sums[rec.user_id, rec.video_id].append(rec.reaction_time_ms)
    if not sums:
        raise EmptyMatrix("no responded repeat exposures in the log")
    u_index = {u: i for i, u in enumerate(log.user_ids)}
    v_index = {v: j for j, v in enumerate(log.video_ids)}
    cells = {(u_index[u], v_index[v]): math.fsum(rts) / len(rts) for (u, v), rts in sums.items()}
    return ReactionMatrix.from_cells(log.user_ids, log.video_ids, cells)


# ---------------------------------------------------------------------------
# factorization


@dataclass(frozen=True)
class FactorizationConfig:
    rank: int = 8
    regularization: float = 0.1
    iterations: int = 50
    seed: int = 0
    convergence_tol: float = 1e-6

    def __post_init__(self):
        if self.rank < 1 or self.iterations < 1:
            raise ValueError("rank and iterations must be positive")
        if not self.regularization > 0 or not self.convergence_tol > 0:
            raise ValueError("regularization and convergence_tol must be positive")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")


@dataclass(frozen=True, eq=False)
class ALSFit:
    """A fitted biased matrix-factorization model.

    The model is fitted on standardized residuals ``(rt - mean) / scale``
    (``scale`` is the population std of the observed cells), so the
    regularization strength is unit-free. ``objective`` holds the penalised
    loss in those units before the first step and after every half-step.
    """

    users: tuple[str, ...]
    videos: tuple[str, ...]
    global_mean: float
    scale: float
    user_bias: np.ndarray
    video_bias: np.ndarray
    user_factors: np.ndarray
    video_factors: np.ndarray
    objective: list[float]
    rmse: list[float]
    n_iter: int
    converged: bool
    degenerate_users: tuple[str, ...] = ()
    degenerate_videos: tuple[str, ...] = ()

    def predict(self) -> np.ndarray:
        z = (
            self.user_bias[:, None]
            + self.video_bias[None, :]
            + self.user_factors @ self.video_factors.T
        )
        return self.global_mean + self.scale * z

    def completed(self) -> ReactionMatrix:
        # Negative reaction times are not meaningful; the linear model can
        # extrapolate below zero on sparse rows.
        return ReactionMatrix(self.users, self.videos, np.maximum(self.predict(), 0.0))


def _objective(z, obs, bu, bv, P, Q, lam):
    resid = np.where(obs, z - bu[:, None] - bv[None, :] - P @ Q.T, 0.0)
    penalty = np.sum(P * P) + np.sum(Q * Q) + np.sum(bu * bu) + np.sum(bv * bv)
    return float(np.sum(resid * resid) + lam * penalty)


def _half_step(z, obs, other_bias, other_factors, lam):
    """Ridge-solve bias + factors for every row given the other side fixed.

    Rows are independent, so solving them as one batch matches a sequential sweep.
    """
    n_rows = z.shape[0]
    design = np.hstack([np.ones((other_factors.shape[0], 1)), other_factors])
    target = np.where(obs, z - other_bias[None, :], 0.0)
    w = obs.astype(float)
    gram = np.einsum("rc,ci,cj->rij", w, design, design)
    gram += lam * np.eye(design.shape[1])[None, :, :]
    rhs = np.einsum("rc,ci->ri", target, design)
    theta = np.linalg.solve(gram, rhs[:, :, None])[:, :, 0]
    assert theta.shape == (n_rows, design.shape[1])
    return theta[:, 0].copy(), theta[:, 1:].copy()


def fit_als(matrix: ReactionMatrix, cfg: FactorizationConfig = FactorizationConfig()) -> ALSFit:
    """Fit ``mean + user bias + video bias + <p_u, q_v>`` by alternating least squares.

    Each half-step minimises the objective exactly over one side, so the
    objective never increases. Stops after ``cfg.iterations`` full sweeps or
    when the relative change of training RMSE drops below ``cfg.convergence_tol``.
    """
    n_users, n_videos = matrix.values.shape
    if matrix.n_observed == 0:
        raise EmptyMatrix("matrix has no observed cells")
    if cfg.rank > min(n_users, n_videos):
        raise ValueError(f"rank {cfg.rank} exceeds min(#users, #videos) = {min(n_users, n_videos)}")

    obs = matrix.observed
    observed_vals = matrix.values[obs]
    mean = math.fsum(observed_vals) / observed_vals.size
    scale = float(np.std(observed_vals))
    if not scale > 0:
        scale = 1.0
    z = np.where(obs, (matrix.values - mean) / scale, 0.0)

    degenerate_users = tuple(u for u, row in zip(matrix.users, obs) if not row.any())
    degenerate_videos = tuple(v for v, col in zip(matrix.videos, obs.T) if not col.any())
    if degenerate_users or degenerate_videos:
        warnings.warn(
            f"{len(degenerate_users)} users and {len(degenerate_videos)} videos have no "
            "observations; they receive bias-only predictions",
            DegenerateMatrix,
            stacklevel=2,
        )

    rng = make_rng(cfg.seed)
    lam = cfg.regularization
    P = rng.normal(0.0, 0.1, (n_users, cfg.rank))
    Q = rng.normal(0.0, 0.1, (n_videos, cfg.rank))
    bu = np.zeros(n_users)
    bv = np.zeros(n_videos)

    def train_rmse():
        pred = bu[:, None] + bv[None, :] + P @ Q.T
        return scale * float(np.sqrt(np.mean((z[obs] - pred[obs]) ** 2)))

    objective = [_objective(z, obs, bu, bv, P, Q, lam)]
    rmse = [train_rmse()]
    converged = False
    n_iter = 0
    for n_iter in range(1, cfg.iterations + 1):
        bu, P = _half_step(z, obs, bv, Q, lam)
        objective.append(_objective(z, obs, bu, bv, P, Q, lam))
        bv, Q = _half_step(z.T, obs.T, bu, P, lam)
        objective.append(_objective(z, obs, bu, bv, P, Q, lam))
        rmse.append(train_rmse())
        prev = rmse[-2]
        change = abs(prev - rmse[-1]) / prev if prev > 0 else 0.0
        if change < cfg.convergence_tol:
            converged = True
            break

    return ALSFit(
        users=matrix.users,
        videos=matrix.videos,
        global_mean=mean,
        scale=scale,
        user_bias=bu,
        video_bias=bv,
        user_factors=P,
        video_factors=Q,
        objective=objective,
        rmse=rmse,
        n_iter=n_iter,
        converged=converged,
        degenerate_users=degenerate_users,
        degenerate_videos=degenerate_videos,
    )


def factorize(matrix: ReactionMatrix, cfg: FactorizationConfig = FactorizationConfig()) -> ReactionMatrix:
    """Dense matrix of predicted reaction times for every (user, video) cell."""
    return fit_als(matrix, cfg).completed()


# ---------------------------------------------------------------------------
# miss rule


class StatisticScope(str, Enum):
    GLOBAL = "global"


@dataclass(frozen=True)
class MissRule:
    k_sigma: float = 2.0
    statistic_scope: StatisticScope = StatisticScope.GLOBAL

    def __post_init__(self):
        if not self.k_sigma > 0:
            raise ValueError(f"k_sigma must be > 0, got {self.k_sigma}")
        object.__setattr__(self, "statistic_scope", StatisticScope(self.statistic_scope))


def miss_threshold(values: np.ndarray, k_sigma: float) -> float:
    """``mean + k * std`` over all cells (population std); ``inf`` when std is 0."""
    flat = np.asarray(values, dtype=float).ravel()
    mean = math.fsum(flat) / flat.size
    sd = math.sqrt(math.fsum((flat - mean) ** 2) / flat.size)
    if sd == 0.0:
        return math.inf
    return mean + k_sigma * sd


def cf_short_term_scores(completed: ReactionMatrix, rule: MissRule = MissRule()) -> list[MemorabilityScore]:
    """Per-video share of users whose predicted reaction time is not a miss."""
    if not completed.is_dense:
        raise ValueError("cf_short_term_scores needs a completed (dense) matrix")
    values = completed.values
    threshold = miss_threshold(values, rule.k_sigma)
    misses = values > threshold
    n_users = values.shape[0]
    return [
        MemorabilityScore(
            video_id=vid,
            short_term=float(n_users - int(misses[:, j].sum())) / n_users,
            long_term=None,
            n_short=n_users,
            n_long=0,
        )
        for j, vid in enumerate(completed.videos)
    ]


def merge_scores(short: Iterable[MemorabilityScore], long: Iterable[MemorabilityScore]) -> list[MemorabilityScore]:
    """Short-term values from ``short`` and long-term values from ``long``, sorted by video id."""
    short_by = {s.video_id: s for s in short}
    long_by = {s.video_id: s for s in long}
    out = []
    for vid in sorted(short_by.keys() | long_by.keys()):
        s, l = short_by.get(vid), long_by.get(vid)
        out.append(
            MemorabilityScore(
                video_id=vid,
                short_term=s.short_term if s else None,
                long_term=l.long_term if l else None,
                n_short=s.n_short if s and s.short_term is not None else 0,
                n_long=l.n_long if l and l.long_term is not None else 0,
            )
        )
    return out


# ---------------------------------------------------------------------------
# scores.csv


def _fmt_opt(value: float | None) -> str:
    return "" if value is None else repr(float(value))


def write_scores(scores: Iterable[MemorabilityScore], path: Path | str) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(SCORES_HEADER)
        for s in scores:
            writer.writerow(
                [s.video_id, _fmt_opt(s.short_term), _fmt_opt(s.long_term), s.n_short, s.n_long]
            )


def read_scores(path: Path | str) -> list[MemorabilityScore]:
    out = []
    for line, (vid, short, long_, n_s, n_l) in _rows(path, SCORES_HEADER):
        try:
            out.append(
                MemorabilityScore(
                    video_id=vid,
                    short_term=float(short) if short else None,
                    long_term=float(long_) if long_ else None,
                    n_short=int(n_s),
                    n_long=int(n_l),
                )
            )
        except ValueError as exc:
            raise MalformedRow(line, str(exc)) from None
    return out
