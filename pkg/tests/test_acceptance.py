"""Acceptance criteria 1-10. Each test prints one PASS/FAIL line."""

import contextlib
import json
import math
import statistics
import time
from fractions import Fraction

import numpy as np
import pytest
from scipy.stats import rankdata

from gestaltfuse.audio_dsp import AudioClip, ClipTooShort, DspConfig, delta, feature_image, mel_edges_hz, mel_energies
from gestaltfuse.cli import main
from gestaltfuse.data_model import Term
from gestaltfuse.evaluation import midranks, pearson, read_results, spearman
from gestaltfuse.experiments import cf_recovery, gestalt_effect
from gestaltfuse.fusion import (
    ModelRole,
    PathwayConfig,
    RunConfig,
    grid_search,
    pathway_fuse,
    run_predict,
    standard_runs,
)
from gestaltfuse.gestalt import GestaltWeights, Pathway, gestalt_score, score_videos
from gestaltfuse.gt_scoring import (
    FactorizationConfig,
    MemorabilityScore,
    ReactionMatrix,
    cf_short_term_scores,
    fit_als,
)
from gestaltfuse.synth import SynthSpec, pipeline_config_for, write_dataset

W, WO = Pathway.WITH_AUDIO, Pathway.WITHOUT_AUDIO


@pytest.fixture
def criterion(capsys):
    @contextlib.contextmanager
    def run(number, title):
        detail = {}
        try:
            yield detail
        except BaseException as exc:
            with capsys.disabled():
                print(f"\nFAIL [{number}] {title}: {type(exc).__name__}: {str(exc).splitlines()[0] if str(exc) else ''}")
            raise
        with capsys.disabled():
            summary = ", ".join(f"{k}={v}" for k, v in detail.items())
            print(f"\nPASS [{number}] {title}: {summary}")

    return run


def dense(values):
    values = np.asarray(values, dtype=float)
    return ReactionMatrix(
        tuple(f"u{i}" for i in range(values.shape[0])),
        tuple(f"v{j}" for j in range(values.shape[1])),
        values,
    )


def random_weights(rng, k):
    w = rng.dirichlet(np.ones(k))
    w[-1] = 1.0 - math.fsum(w[:-1])
    return tuple(float(x) for x in np.clip(w, 0.0, 1.0))


# 1 ---------------------------------------------------------------------------


def test_1_cf_oracle_recovery(criterion):
    with criterion(1, "CF recovery, 100 videos x 50 users, seeds 1-5, Spearman >= 0.9 in < 10 s") as d:
        for seed in range(1, 6):
            start = time.perf_counter()
            result = cf_recovery(SynthSpec(n_users=50, n_videos=100, latent_rank=2, density=0.3, noise_sd_ms=20, seed=seed))
            elapsed = time.perf_counter() - start
            d[f"seed{seed}"] = f"{result.spearman:.3f}/{elapsed:.2f}s"
            assert result.spearman >= 0.9, f"seed {seed}: Spearman {result.spearman}"
            assert elapsed < 10.0, f"seed {seed}: {elapsed:.1f} s"


# 2 ---------------------------------------------------------------------------


def _check_als(values, cfg):
    m = dense(values)
    fit = fit_als(m, cfg)
    obj = fit.objective
    for i in range(1, len(obj)):
        assert obj[i] <= obj[i - 1], f"objective rose at half-step {i}: {obj[i - 1]!r} -> {obj[i]!r}"
    assert fit.n_iter <= 50
    rmse = math.sqrt(float(np.mean((fit.predict() - m.values) ** 2)))
    rel = rmse / float(m.values.mean())
    assert rel < 1e-3, f"relative RMSE {rel}"
    return rel, fit.n_iter


def test_2_als_correctness(criterion):
    with criterion(2, "ALS rank-1 reconstruction RMSE < 0.1% of mean, objective non-increasing") as d:
        rel, n = _check_als(100.0 * np.outer([1, 2], [3, 4, 5]), FactorizationConfig(rank=1, regularization=1e-4))
        d["2x3"] = f"{rel:.2e}@{n}it"
        rng = np.random.default_rng(0)
        big = np.outer(rng.uniform(0.8, 1.2, 50), rng.uniform(400, 800, 100))
        rel, n = _check_als(big, FactorizationConfig())
        d["50x100"] = f"{rel:.2e}@{n}it"


# 3 ---------------------------------------------------------------------------


def brute_force_scores(values):
    cells = [float(x) for row in values for x in row]
    mu = statistics.fmean(cells)
    sigma = statistics.pstdev(cells)
    users = len(values)
    out = []
    for j in range(len(values[0])):
        misses = sum(1 for i in range(users) if sigma > 0 and values[i][j] > mu + 2 * sigma)
        out.append((users - misses) / users)
    return out


def test_3_two_sigma_rule(criterion):
    rng = np.random.default_rng(3)
    with criterion(3, "2-sigma misses match brute force on 100 random matrices up to 20x20") as d:
        total_misses = 0
        for trial in range(100):
            nu, nv = rng.integers(1, 21, size=2)
            values = rng.uniform(300, 900, (nu, nv))
            values[rng.uniform(size=values.shape) < 0.05] += 2000.0
            if trial == 0:
                values[:] = 640.0
            got = [s.short_term for s in cf_short_term_scores(dense(values))]
            want = brute_force_scores(values.tolist())
            assert got == want, f"trial {trial} ({nu}x{nv})"
            total_misses += round(sum((1 - w) * nu for w in want))
        d["matrices"] = 100
        d["misses"] = total_misses
        assert total_misses > 0


# 4 ---------------------------------------------------------------------------


def pearson_oracle(x, y):
    fx = [Fraction(v) for v in x]
    fy = [Fraction(v) for v in y]
    mx, my = sum(fx) / len(fx), sum(fy) / len(fy)
    cov = sum((a - mx) * (b - my) for a, b in zip(fx, fy))
    vx = sum((a - mx) ** 2 for a in fx)
    vy = sum((b - my) ** 2 for b in fy)
    return float(cov) / math.sqrt(float(vx) * float(vy))


def spearman_d2_oracle(x, y):
    n = len(x)
    rx = {v: i + 1 for i, v in enumerate(sorted(x))}
    ry = {v: i + 1 for i, v in enumerate(sorted(y))}
    d2 = sum((rx[a] - ry[b]) ** 2 for a, b in zip(x, y))
    return 1.0 - 6.0 * d2 / (n * (n * n - 1))


def test_4_metric_correctness(criterion):
    rng = np.random.default_rng(4)
    with criterion(4, "Spearman/Pearson vs definition within 1e-12; ties, rank and affine invariance") as d:
        worst = 0.0
        for _ in range(1000):
            n = int(rng.integers(3, 201))
            x = rng.normal(size=n)
            y = rng.normal(size=n) + rng.uniform(-1, 1) * x
            assert len(set(x)) == n and len(set(y)) == n
            worst = max(worst, abs(spearman(x, y) - spearman_d2_oracle(x.tolist(), y.tolist())))
            worst = max(worst, abs(pearson(x, y) - pearson_oracle(x.tolist(), y.tolist())))
        assert worst <= 1e-12, worst
        d["max_err"] = f"{worst:.1e}"

        for _ in range(300):
            n = int(rng.integers(3, 60))
            x = rng.integers(0, 5, n).astype(float)
            y = rng.integers(0, 5, n).astype(float)
            if len(set(x)) < 2 or len(set(y)) < 2:
                continue
            assert spearman(x, y) == pearson(rankdata(x), rankdata(y))
            assert np.array_equal(midranks(x), rankdata(x))
        d["ties"] = "exact"

        for _ in range(300):
            n = int(rng.integers(3, 100))
            x = rng.uniform(-3, 3, n)
            y = rng.uniform(-3, 3, n)
            knots = np.sort(rng.uniform(-3, 3, 4))
            slopes = rng.uniform(0.1, 5.0, 5)

            def monotone(v):
                return v ** 3 + np.exp(v) + sum(s * np.maximum(v - k, 0) for s, k in zip(slopes, knots))

            assert len(set(monotone(x))) == len(set(x))
            assert spearman(monotone(x), y) == spearman(x, y)
            assert spearman(-monotone(x), y) == -spearman(x, y)
            a, b = rng.uniform(0.1, 100.0), rng.uniform(-100, 100)
            assert abs(pearson(a * x + b, y) - pearson(x, y)) <= 1e-12
            assert abs(pearson(-a * x + b, y) + pearson(x, y)) <= 1e-12
        d["invariance"] = "ok"


# 5 ---------------------------------------------------------------------------


def _random_members(rng, vids, names):
    return {n: dict(zip(vids, map(float, rng.uniform(size=len(vids))))) for n in names}


def test_5_routing_exactness(criterion):
    rng = np.random.default_rng(5)
    vids = [f"v{i:03d}" for i in range(500)]
    members = _random_members(rng, vids, ["aug", "frame", "spec", "cap"])
    subs = {v: tuple(map(float, rng.uniform(size=4))) for v in vids}
    with criterion(5, "Run4 routing bitwise exact on 500 videos; run4 at theta=0 equals run3") as d:
        n_with = 0
        for _ in range(50):
            with_pw = PathwayConfig(W, tuple(zip(("aug", "frame", "spec"), random_weights(rng, 3))))
            without_pw = PathwayConfig(WO, tuple(zip(("cap", "frame"), random_weights(rng, 2))))
            gw = GestaltWeights(*map(float, rng.uniform(-1, 1, 4)), threshold=float(rng.uniform()))
            run4 = RunConfig("run4", Term.SHORT, with_pw, without_pw, gw)
            gestalt = score_videos(subs, GestaltWeights())
            out = run_predict(run4, gestalt, members)
            for v in vids:
                high = gestalt_score(subs[v], gw) >= gw.threshold
                n_with += high
                expected = pathway_fuse(with_pw if high else without_pw, members, v)
                assert out[v] == expected, v
            run4_zero = RunConfig("run4", Term.SHORT, with_pw, without_pw, GestaltWeights(*map(float, rng.uniform(0, 1, 4)), threshold=0.0))
            run3 = RunConfig("run3", Term.SHORT, with_audio=with_pw)
            a, b = run_predict(run4_zero, gestalt, members), run_predict(run3, None, members)
            assert all(a[v] == b[v] for v in vids)
        d["configs"] = 50
        d["with_audio_share"] = f"{n_with / (50 * len(vids)):.2f}"


# 6 ---------------------------------------------------------------------------


def test_6_fusion_properties(criterion):
    rng = np.random.default_rng(6)
    with criterion(6, "fusion monotone, permutation invariant on 1000 configs; single member identity") as d:
        for _ in range(1000):
            k = int(rng.integers(1, 6))
            names = [f"m{i}" for i in range(k)]
            weights = random_weights(rng, k)
            cfg = PathwayConfig(W, tuple(zip(names, weights)))
            preds = {n: {"v": float(rng.uniform())} for n in names}
            base = pathway_fuse(cfg, preds, "v")

            perm = rng.permutation(k)
            shuffled = PathwayConfig(W, tuple(cfg.members[i] for i in perm))
            assert pathway_fuse(shuffled, preds, "v") == base

            j = int(rng.integers(k))
            bumped = {**preds, names[j]: {"v": float(rng.uniform(preds[names[j]]["v"], 1.0))}}
            assert pathway_fuse(cfg, bumped, "v") >= base

            p = float(rng.uniform())
            assert pathway_fuse(PathwayConfig(W, (("solo", 1.0),)), {"solo": {"v": p}}, "v") == p
        d["configs"] = 1000


# 7 ---------------------------------------------------------------------------


def test_7_dsp(criterion):
    rng = np.random.default_rng(7)
    rate = 16000
    cfg = DspConfig()
    frame, hop = cfg.frame_length(rate), cfg.hop_length(rate)
    with criterion(7, "DSP shape law, delta zero/linearity, 440 Hz mel argmax, silence -> 0.5") as d:
        for length in rng.integers(frame, 3 * rate, 100):
            img = feature_image(AudioClip(rng.uniform(-0.5, 0.5, int(length)), rate))
            assert img.channels.shape == (3, cfg.n_mfcc, 1 + (int(length) - frame) // hop)
        with pytest.raises(ClipTooShort):
            feature_image(AudioClip(np.zeros(frame - 1), rate))
        d["lengths"] = 100

        worst = 0.0
        for _ in range(200):
            shape = (int(rng.integers(1, 14)), int(rng.integers(1, 120)))
            window = int(rng.integers(1, 5))
            assert np.all(delta(np.full(shape, rng.normal()), window) == 0.0)
            a, b = rng.normal(size=shape), rng.normal(size=shape)
            s, t = rng.normal(size=2)
            worst = max(worst, float(np.max(np.abs(delta(s * a + t * b, window) - (s * delta(a, window) + t * delta(b, window))))))
        assert worst <= 1e-12
        d["delta_lin_err"] = f"{worst:.1e}"

        t = np.arange(rate) / rate
        energies = mel_energies(AudioClip(0.5 * np.sin(2 * np.pi * 440.0 * t), rate), cfg)
        centres = mel_edges_hz(cfg.n_mels, *cfg.band(rate))[1:-1]
        nearest = int(np.argmin(np.abs(centres - 440.0)))
        assert np.all(np.argmax(energies, axis=0) == nearest)
        d["mel_band"] = f"{nearest}@{centres[nearest]:.0f}Hz"

        assert np.all(feature_image(AudioClip(np.zeros(rate), rate)).channels == 0.5)


# 8 ---------------------------------------------------------------------------


@pytest.mark.parametrize("run_id", ["run1", "run2", "run3", "run4", "run0"])
def test_8_calibration_sanity(criterion, run_id):
    rng = np.random.default_rng(8)
    vids = [f"v{i:03d}" for i in range(80)]
    truth = rng.uniform(size=len(vids))
    gt = [MemorabilityScore(v, float(m), None, 10, 0) for v, m in zip(vids, truth)]
    roles = {r: r.value for r in ModelRole}
    run = next(r for r in standard_runs(Term.SHORT, roles) if r.run_id.value == run_id)
    exact = "frame" if run_id in ("run2", "run4", "run0") else "spectrogram"
    members = _random_members(rng, vids, [r.value for r in ModelRole])
    members[exact] = dict(zip(vids, map(float, truth)))
    subs = {v: tuple(map(float, rng.uniform(size=4))) for v in vids}
    gestalt = score_videos(subs, GestaltWeights())
    with criterion(8, f"calibration puts weight 1.0 on the exact member ({run_id})") as d:
        fit = grid_search(run, members, gt, gestalt if run_id == "run4" else None)
        if fit.run.fixed_pathway is None:
            # A pathway no validation video routes to has no effect on the fit.
            routed = {g.pathway for g in score_videos(subs, fit.run.gestalt_weights)}
            active = [pw for pw in fit.run.used_pathways if pw.pathway in routed]
        else:
            active = [fit.run.fixed_pathway]
        d["active"] = "+".join(pw.pathway.value for pw in active)
        for pw in active:
            weights = dict(pw.members)
            if exact in weights:
                assert weights[exact] == 1.0, weights
                assert all(w == 0.0 for s, w in weights.items() if s != exact)
        preds = run_predict(fit.run, gestalt, members, vids)
        rho = spearman([preds[v] for v in vids], truth)
        assert fit.spearman == 1.0 and rho == 1.0
        d["spearman"] = rho


# 9 ---------------------------------------------------------------------------


def _tree(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_9_end_to_end_determinism(criterion, tmp_path):
    spec = SynthSpec(n_users=40, n_videos=80, seed=9)
    data = tmp_path / "data"
    write_dataset(data, spec)
    raw = pipeline_config_for(spec)
    roles = {r: r.value for r in ModelRole}
    runs = [r for t in Term for r in standard_runs(t, roles)]
    raw["runs"] = [r.to_dict() for r in runs if r.key != "run0_long"]
    cfg = data / "config.json"
    cfg.write_text(json.dumps(raw, indent=2))

    with criterion(9, "pipeline twice -> byte-identical trees; report bold maxima and '-' cells") as d:
        assert main(["pipeline", "--config", str(cfg), "--out", str(tmp_path / "a")]) == 0
        assert main(["pipeline", "--config", str(cfg), "--out", str(tmp_path / "b")]) == 0
        a, b = _tree(tmp_path / "a"), _tree(tmp_path / "b")
        assert a.keys() == b.keys()
        differing = [k for k in a if a[k] != b[k]]
        assert not differing, differing
        d["files"] = len(a)

        lines = (tmp_path / "a" / "report.md").read_text().splitlines()
        assert lines[0] == "| Run | Short-term Spearman | Short-term Pearson | Long-term Spearman | Long-term Pearson |"
        assert lines[1] == "|---|---|---|---|---|"
        rows = [[c.strip() for c in ln.strip("|").split("|")] for ln in lines[2:]]
        assert [r[0] for r in rows] == ["run1", "run2", "run3", "run4", "run0"]
        assert rows[-1][3:] == ["-", "-"]
        results = read_results(tmp_path / "a" / "results.csv")
        for col, (term, metric) in enumerate([(t, m) for t in ("short", "long") for m in ("spearman", "pearson")], 1):
            values = {r.run_id: getattr(r, metric) for r in results if r.target.value == term}
            best = max(values.values())
            for row in rows:
                cell = row[col]
                if row[0] in values:
                    assert cell.startswith("**") == (values[row[0]] == best), (row, col)
        d["bold_cols"] = 4


# 10 --------------------------------------------------------------------------


def test_10_gestalt_effect(criterion):
    with criterion(10, "calibrated run4 >= calibrated run3 (1000 videos, 800/200, both terms)") as d:
        for r in gestalt_effect(seed=1, n_videos=1000, n_train=800):
            key = r.target.value
            d[key] = (
                f"val {r.run4_validation:.3f}>={r.run3_validation:.3f}, "
                f"test {r.run4_test:.3f}>={r.run3_test:.3f}"
            )
            assert r.run4_validation >= r.run3_validation, key
            assert r.run4_test >= r.run3_test, key
