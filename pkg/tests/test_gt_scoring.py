import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from gestaltfuse.data_model import AnnotationLog, AnnotationRecord, Term
from gestaltfuse.gt_scoring import (
    DegenerateMatrix,
    EmptyMatrix,
    FactorizationConfig,
    MemorabilityScore,
    MissRule,
    ReactionMatrix,
    build_rt_matrix,
    cf_short_term_scores,
    factorize,
    fit_als,
    hit_rate_scores,
    merge_scores,
    miss_threshold,
    read_scores,
    write_scores,
)

S, L = Term.SHORT, Term.LONG


def rep(u, v, rt=None, lag=S):
    return AnnotationRecord(u, v, lag, True, rt is not None, rt)


def matrix(values, users=None, videos=None):
    values = np.asarray(values, dtype=float)
    users = users or tuple(f"u{i}" for i in range(values.shape[0]))
    videos = videos or tuple(f"v{j}" for j in range(values.shape[1]))
    return ReactionMatrix(tuple(users), tuple(videos), values)


# -- hit rate ----------------------------------------------------------------


def test_hit_rate_eight_of_ten():
    recs = [rep(f"u{i}", "v1", 500.0 if i < 8 else None) for i in range(10)]
    (score,) = hit_rate_scores(AnnotationLog.from_records(recs))
    assert score.short_term == 0.8 and score.n_short == 10
    assert score.long_term is None and score.n_long == 0


def test_hit_rate_all_responded_and_first_exposures_ignored():
    recs = [AnnotationRecord("u1", "v1", S, False, False), rep("u1", "v1", 400.0), rep("u2", "v1", 410.0)]
    (score,) = hit_rate_scores(AnnotationLog.from_records(recs))
    assert score.short_term == 1.0 and score.n_short == 2


def test_hit_rate_separate_lags():
    recs = [rep("u1", "v1", 400.0, S), rep("u1", "v1", None, L), rep("u2", "v1", 450.0, L)]
    (score,) = hit_rate_scores(AnnotationLog.from_records(recs))
    assert (score.short_term, score.long_term) == (1.0, 0.5)


@given(st.lists(st.tuples(st.sampled_from("abc"), st.sampled_from("xyz"), st.booleans(), st.sampled_from([S, L])),
                min_size=1, max_size=40), st.randoms())
def test_hit_rate_permutation_invariant(rows, rnd):
    recs = [rep(u, v, 500.0 if r else None, lag) for u, v, r, lag in rows]
    shuffled = list(recs)
    rnd.shuffle(shuffled)
    assert hit_rate_scores(AnnotationLog.from_records(recs)) == hit_rate_scores(AnnotationLog.from_records(shuffled))


def test_memorability_score_invariants():
    with pytest.raises(ValueError):
        MemorabilityScore("v", 1.2, None, 1)
    with pytest.raises(ValueError):
        MemorabilityScore("v", 0.5, None, 0)


# -- rt matrix ---------------------------------------------------------------


def test_rt_matrix_averages_pairs():
    log = AnnotationLog.from_records([rep("u1", "v1", 400.0), rep("u1", "v1", 600.0), rep("u1", "v2")])
    m = build_rt_matrix(log)
    assert m.cells == {(0, 0): 500.0}
    assert m.videos == ("v1", "v2") and np.isnan(m.values[0, 1])


def test_rt_matrix_lag_filter():
    log = AnnotationLog.from_records([rep("u1", "v1", 400.0, S), rep("u1", "v1", 800.0, L)])
    assert build_rt_matrix(log, S).cells == {(0, 0): 400.0}
    assert build_rt_matrix(log, L).cells == {(0, 0): 800.0}
    assert build_rt_matrix(log, None).cells == {(0, 0): 600.0}


def test_rt_matrix_empty():
    with pytest.raises(EmptyMatrix):
        build_rt_matrix(AnnotationLog.from_records([rep("u1", "v1")]))


def test_reaction_matrix_validation():
    with pytest.raises(ValueError):
        matrix([[-1.0]])
    with pytest.raises(ValueError):
        ReactionMatrix(("a",), ("x", "y"), np.zeros((1, 3)))


# -- factorization -----------------------------------------------------------


def test_rank_one_reconstruction():
    m = matrix(100.0 * np.outer([1, 2], [3, 4, 5]))
    fit = fit_als(m, FactorizationConfig(rank=1, regularization=1e-4))
    rmse = math.sqrt(np.mean((fit.predict() - m.values) ** 2))
    assert rmse < 1e-3 * m.values.mean()


def test_single_observation_fixed_point():
    # Standardized target is identically zero, so every ridge solve returns zero.
    values = np.full((3, 4), np.nan)
    values[1, 2] = 500.0
    fit = fit_als(matrix(values), FactorizationConfig(rank=2))
    np.testing.assert_allclose(fit.predict(), 500.0, atol=1e-9)


def test_factorize_deterministic_and_seed_sensitive():
    rng = np.random.default_rng(1)
    values = rng.uniform(300, 900, (8, 10))
    values[rng.uniform(size=values.shape) < 0.5] = np.nan
    m = matrix(values)
    cfg = FactorizationConfig(rank=3)
    a, b = factorize(m, cfg), factorize(m, cfg)
    assert np.array_equal(a.values, b.values)
    assert a.is_dense
    c = factorize(m, FactorizationConfig(rank=3, seed=1))
    assert not np.array_equal(a.values, c.values)


def test_empty_rows_warn_and_get_bias_only():
    values = np.array([[500.0, 600.0], [np.nan, np.nan], [550.0, 650.0]])
    with pytest.warns(DegenerateMatrix):
        fit = fit_als(matrix(values), FactorizationConfig(rank=1))
    assert fit.degenerate_users == ("u1",)
    assert np.all(fit.user_factors[1] == 0.0) and fit.user_bias[1] == 0.0


def test_rank_must_fit_matrix():
    with pytest.raises(ValueError):
        fit_als(matrix(np.ones((2, 3))), FactorizationConfig(rank=3))


@given(st.integers(0, 10_000))
def test_objective_non_increasing(seed):
    rng = np.random.default_rng(seed)
    nu, nv = rng.integers(3, 12, size=2)
    values = rng.uniform(200, 1200, (nu, nv))
    values[rng.uniform(size=values.shape) < 0.4] = np.nan
    values[0, 0] = 500.0
    fit = fit_als(matrix(values), FactorizationConfig(rank=int(min(nu, nv, 3)), iterations=20))
    obj = np.array(fit.objective)
    assert np.all(obj[1:] <= obj[:-1] * (1 + 1e-12) + 1e-12)


# -- miss rule ---------------------------------------------------------------


def test_two_sigma_worked_example():
    m = matrix([[500, 500], [500, 500], [500, 3000]], videos=("A", "B"))
    a, b = cf_short_term_scores(m)
    assert a.short_term == 1.0 and b.short_term == pytest.approx(2 / 3)
    assert a.n_short == 3 and a.long_term is None


def test_constant_matrix_has_no_misses():
    assert all(s.short_term == 1.0 for s in cf_short_term_scores(matrix(np.full((4, 5), 700.0))))
    assert miss_threshold(np.full(3, 1.0), 2.0) == math.inf


def test_huge_k_sigma():
    m = matrix([[500, 500], [500, 500], [500, 3000]])
    assert all(s.short_term == 1.0 for s in cf_short_term_scores(m, MissRule(k_sigma=1e9)))


def test_strict_threshold():
    # Cells at exactly mean + k*sd are not misses: values {0, 2} have mean 1, sd 1.
    m = matrix([[0.0, 2.0]])
    scores = cf_short_term_scores(m, MissRule(k_sigma=1.0))
    assert [s.short_term for s in scores] == [1.0, 1.0]


def test_cf_scores_need_dense():
    with pytest.raises(ValueError):
        cf_short_term_scores(matrix([[1.0, np.nan]]))


dense = arrays(np.float64, st.tuples(st.integers(1, 8), st.integers(1, 8)),
               elements=st.floats(0, 3000, allow_nan=False))


@given(dense, st.floats(0.5, 3), st.floats(0.01, 2))
def test_scores_monotone_in_k(values, k, dk):
    m = matrix(values)
    lo = cf_short_term_scores(m, MissRule(k))
    hi = cf_short_term_scores(m, MissRule(k + dk))
    assert all(b.short_term >= a.short_term for a, b in zip(lo, hi))


@given(dense, st.randoms())
def test_scores_invariant_under_relabeling(values, rnd):
    m = matrix(values)
    users = list(range(values.shape[0]))
    videos = list(range(values.shape[1]))
    rnd.shuffle(users)
    rnd.shuffle(videos)
    relabelled = ReactionMatrix(
        tuple(f"user{i}" for i in users),
        tuple(f"vid{j}" for j in videos),
        values[np.ix_(users, videos)],
    )
    original = {f"v{j}": s.short_term for j, s in enumerate(cf_short_term_scores(m))}
    permuted = {s.video_id: s.short_term for s in cf_short_term_scores(relabelled)}
    assert {f"v{k[3:]}": v for k, v in permuted.items()} == original


# -- scores.csv --------------------------------------------------------------


def test_merge_and_round_trip(tmp_path):
    short = [MemorabilityScore("v1", 0.5, None, 3), MemorabilityScore("v2", 1.0, None, 3)]
    long = [MemorabilityScore("v2", None, 0.25, 0, 4), MemorabilityScore("v3", None, 0.75, 0, 4)]
    merged = merge_scores(short, long)
    assert [(s.video_id, s.short_term, s.long_term) for s in merged] == [
        ("v1", 0.5, None), ("v2", 1.0, 0.25), ("v3", None, 0.75)
    ]
    write_scores(merged, tmp_path / "scores.csv")
    text = (tmp_path / "scores.csv").read_text()
    assert text.splitlines()[0] == "video_id,short_term,long_term,n_short,n_long"
    assert "v1,0.5,,3,0" in text
    assert read_scores(tmp_path / "scores.csv") == merged
