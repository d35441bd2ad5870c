"""Train/test splitting, correlation metrics and result tables."""

from __future__ import annotations

import csv
import io
import math
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass
from decimal import ROUND_HALF_EVEN, Decimal
from pathlib import Path

import numpy as np

from ._rng import make_rng
from .data_model import Term, _rows
from .errors import GestaltFuseError
from .gt_scoring import MemorabilityScore

RESULTS_HEADER = ("run_id", "target", "spearman", "pearson", "n")
RUN_ORDER = ("run1", "run2", "run3", "run4", "run0")


class EvalError(GestaltFuseError):
    pass


class NotEnoughVideos(EvalError):
    pass


class LengthMismatch(EvalError):
    pass


class TooFewPoints(EvalError):
    pass


class ConstantInput(EvalError):
    pass


class InsufficientOverlap(EvalError):
    pass


@dataclass(frozen=True)
class SplitSpec:
    seed: int = 0
    n_train: int = 800
    n_test: int = 200

    def __post_init__(self):
        if self.n_train < 0 or self.n_test < 0 or self.seed < 0:
            raise ValueError("split sizes and seed must be non-negative")


def split(video_ids: Iterable[str], spec: SplitSpec = SplitSpec()) -> tuple[list[str], list[str]]:
    """Seeded shuffle of the sorted ids; the first ``n_train`` train, the next ``n_test`` test.

    Sorting first makes the split depend only on the set of ids, not their order.
    """
    ids = sorted(video_ids)
    if len(set(ids)) != len(ids):
        raise ValueError("video ids must be unique")
    need = spec.n_train + spec.n_test
    if need > len(ids):
        raise NotEnoughVideos(f"split needs {need} videos, got {len(ids)}")
    order = make_rng(spec.seed).permutation(len(ids))
    shuffled = [ids[i] for i in order[:need]]
    return shuffled[: spec.n_train], shuffled[spec.n_train :]


# ---------------------------------------------------------------------------
# metrics


def midranks(x: Sequence[float]) -> np.ndarray:
    """1-based ranks; tied values share the mean of the ranks they occupy."""
    a = np.asarray(x, dtype=float)
    if a.ndim != 1:
        raise ValueError("midranks expects a 1-D sequence")
    sorter = np.argsort(a, kind="mergesort")
    inv = np.empty_like(sorter)
    inv[sorter] = np.arange(a.size)
    s = a[sorter]
    new_group = np.r_[True, s[1:] != s[:-1]]
    dense = np.cumsum(new_group)[inv]
    starts = np.r_[np.flatnonzero(new_group), a.size]
    return 0.5 * (starts[dense] + starts[dense - 1] + 1)


def _check_pair(x, y) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(x, dtype=float)
    b = np.asarray(y, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise LengthMismatch(f"lengths differ: {a.shape} vs {b.shape}")
    if a.size < 3:
        raise TooFewPoints(f"need at least 3 points, got {a.size}")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise ValueError("inputs must be finite")
    if np.all(a == a[0]) or np.all(b == b[0]):
        raise ConstantInput("correlation is undefined for a constant input")
    return a, b


def _pearson(a: np.ndarray, b: np.ndarray) -> float:
    da = a - math.fsum(a) / a.size
    db = b - math.fsum(b) / b.size
    num = math.fsum(da * db)
    den = math.sqrt(math.fsum(da * da) * math.fsum(db * db))
    if den == 0.0:
        raise ConstantInput("zero variance after centring")
    return max(-1.0, min(1.0, num / den))


def pearson(x: Sequence[float], y: Sequence[float]) -> float:
    a, b = _check_pair(x, y)
    return _pearson(a, b)


def spearman(x: Sequence[float], y: Sequence[float]) -> float:
    """Pearson correlation of mid-ranks (tie-corrected)."""
    a, b = _check_pair(x, y)
    return _pearson(midranks(a), midranks(b))


# ---------------------------------------------------------------------------
# evaluation


@dataclass(frozen=True)
class EvalResult:
    run_id: str
    target: Term
    spearman: float
    pearson: float
    n: int


def _aligned(preds: Mapping[str, float], gt: Iterable[MemorabilityScore], target: Term, videos=None):
    truth = {g.video_id: g.get(target) for g in gt}
    keep = set(videos) if videos is not None else None
    ids = sorted(
        v for v in preds if truth.get(v) is not None and (keep is None or v in keep)
    )
    return ids, np.array([preds[v] for v in ids]), np.array([truth[v] for v in ids])


def evaluate(
    preds: Mapping[str, float],
    gt: Iterable[MemorabilityScore],
    target: Term,
    run_id: str | None = None,
    videos: Iterable[str] | None = None,
) -> EvalResult:
    """Spearman and Pearson over videos that have both a prediction and ground truth."""
    target = Term(target)
    ids, p, t = _aligned(preds, gt, target, videos)
    if len(ids) < 3:
        raise InsufficientOverlap(f"only {len(ids)} videos have both prediction and {target.value}-term truth")
    if run_id is None:
        run_id = getattr(preds, "model_id", "run")
    return EvalResult(run_id, target, spearman(p, t), pearson(p, t), len(ids))


# ---------------------------------------------------------------------------
# reports


def round3(value: float) -> str:
    """Three decimals, half-to-even on the shortest decimal representation."""
    return str(Decimal(repr(float(value))).quantize(Decimal("0.001"), rounding=ROUND_HALF_EVEN))


def _ordered_runs(results: Sequence[EvalResult]) -> list[str]:
    seen = list(dict.fromkeys(r.run_id for r in results))
    known = [r for r in RUN_ORDER if r in seen]
    return known + [r for r in seen if r not in RUN_ORDER]


def _markdown(results: Sequence[EvalResult], include_pearson: bool) -> str:
    metrics = ("spearman", "pearson") if include_pearson else ("spearman",)
    columns = [(term, m) for term in (Term.SHORT, Term.LONG) for m in metrics]
    cell = {(r.run_id, r.target, m): getattr(r, m) for r in results for m in metrics}
    runs = _ordered_runs(results)

    best = {}
    for col in columns:
        present = [cell[(run, *col)] for run in runs if (run, *col) in cell]
        if len(present) >= 2:
            best[col] = max(present)

    def heading(term, metric):
        return f"{'Short' if term is Term.SHORT else 'Long'}-term {metric.capitalize()}"

    lines = [
        "| Run | " + " | ".join(heading(*c) for c in columns) + " |",
        "|---|" + "---|" * len(columns),
    ]
    for run in runs:
        row = []
        for col in columns:
            value = cell.get((run, *col))
            if value is None:
                row.append("-")
            elif best.get(col) == value:
                row.append(f"**{round3(value)}**")
            else:
                row.append(round3(value))
        lines.append(f"| {run} | " + " | ".join(row) + " |")
    return "\n".join(lines) + "\n"


def results_csv(results: Sequence[EvalResult]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(RESULTS_HEADER)
    for r in results:
        writer.writerow([r.run_id, r.target.value, repr(r.spearman), repr(r.pearson), r.n])
    return buf.getvalue()


def report(results: Sequence[EvalResult], fmt: str = "markdown", include_pearson: bool = True) -> str:
    """Render results as a Markdown table (runs x term/metric) or as results.csv text.

    In Markdown, per-column maxima are bold when a column has two or more
    values, and missing cells show ``-``.
    """
    if not results:
        raise ValueError("report needs at least one result")
    fmt = fmt.lower()
    if fmt == "markdown":
        return _markdown(results, include_pearson)
    if fmt == "csv":
        return results_csv(results)
    raise ValueError(f"unknown report format {fmt!r}")


def read_results(path: Path | str) -> list[EvalResult]:
    return [
        EvalResult(run, Term(target), float(s), float(p), int(n))
        for _, (run, target, s, p, n) in _rows(path, RESULTS_HEADER)
    ]
