"""Pipeline stages behind the CLI commands.

Output tree under ``paths.output_dir``::

    scores.csv                    ground truth (short term CF, long term hit rate by default)
    features/<video>_c{0,1,2}.npy MFCC feature images, plus <video>.json and index.csv
    gestalt.csv                   sub-scores, combined gestalt, pathway
    runs/<run>_<term>/run_config.json
    runs/<run>_<term>/predictions_out.csv
    results.csv, report.md

Every CSV, JSON and Markdown output has a ``<name>.meta.json`` sidecar with
the config hash and seed (feature sidecars carry them inline). Nothing
time-dependent is written, so reruns reproduce the tree byte for byte.
"""

from __future__ import annotations

import csv
import json
import logging
import warnings
from dataclasses import asdict
from pathlib import Path

from . import __version__
from .audio_dsp import feature_image, read_wav, save_feature_image
from .config import ConfigInvalid, PipelineConfig
from .data_model import (
    AudioTagSet,
    Term,
    load_audio_tags,
    load_captions,
    parse_annotations,
    read_scores_csv,
    write_predictions,
)
from .errors import GestaltFuseError
from .evaluation import evaluate, report, results_csv, split
from .fusion import RunConfig, calibrate, read_run_config, run_predict, write_run_config
from .gestalt import read_gestalt, score_videos, write_gestalt
from .gt_scoring import (
    MemorabilityScore,
    build_rt_matrix,
    cf_short_term_scores,
    factorize,
    hit_rate_scores,
    merge_scores,
    read_scores,
    write_scores,
)
from .scorers import ScorerInputs, ScorerSpec, Subscore, evaluate_scorer

log = logging.getLogger(__name__)


class MissingUpstream(GestaltFuseError):
    def __init__(self, path: Path, command: str):
        super().__init__(f"{path} not found ({command} first)")
        self.path = path
        self.command = command


def write_meta(path: Path, cfg: PipelineConfig, command: str, extra: dict | None = None) -> Path:
    meta = {"command": command, "config_sha256": cfg.sha256, "seed": cfg.seed, "version": __version__}
    if extra:
        meta.update(extra)
    side = path.with_name(path.name + ".meta.json")
    side.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return side


def _out(cfg: PipelineConfig) -> Path:
    cfg.paths.output_dir.mkdir(parents=True, exist_ok=True)
    return cfg.paths.output_dir


def _require(path: Path, command: str) -> Path:
    if not path.exists():
        raise MissingUpstream(path, command)
    return path


def _run_dir(cfg: PipelineConfig, run: RunConfig) -> Path:
    d = _out(cfg) / "runs" / run.key
    d.mkdir(parents=True, exist_ok=True)
    return d


# ---------------------------------------------------------------------------


def cmd_score_gt(cfg: PipelineConfig) -> Path:
    ann = parse_annotations(cfg.paths.annotations)
    methods = {Term.SHORT: cfg.ground_truth.short_term, Term.LONG: cfg.ground_truth.long_term}
    per_term = {}
    hit = None
    for term, method in methods.items():
        if method == "hit_rate":
            hit = hit if hit is not None else hit_rate_scores(ann)
            per_term[term] = hit
        else:
            matrix = build_rt_matrix(ann, lag=term)
            scores = cf_short_term_scores(factorize(matrix, cfg.factorization), cfg.miss_rule)
            if term is Term.LONG:
                scores = [MemorabilityScore(s.video_id, None, s.short_term, 0, s.n_short) for s in scores]
            per_term[term] = scores
    merged = merge_scores(per_term[Term.SHORT], per_term[Term.LONG])
    path = _out(cfg) / "scores.csv"
    write_scores(merged, path)
    write_meta(path, cfg, "score-gt", {"methods": {t.value: m for t, m in methods.items()}})
    log.info("wrote %d ground-truth rows to %s", len(merged), path)
    return path


def _wav_paths(cfg: PipelineConfig) -> list[Path]:
    if cfg.paths.audio_dir is None:
        raise ConfigInvalid("paths.audio_dir", "required for audio features")
    return sorted(cfg.paths.audio_dir.glob("*.wav"))


def cmd_extract_audio(cfg: PipelineConfig) -> Path:
    feat_dir = _out(cfg) / "features"
    feat_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    meta = {"config_sha256": cfg.sha256, "seed": cfg.seed}
    for wav in _wav_paths(cfg):
        img = feature_image(read_wav(wav), cfg.dsp)
        save_feature_image(img, feat_dir, wav.stem, cfg.dsp, {**meta, "source": wav.name})
        rows.append((wav.stem, *(f"{wav.stem}_c{i}.npy" for i in range(3)), img.shape[1]))
    index = feat_dir / "index.csv"
    with open(index, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(("video_id", "c0", "c1", "c2", "n_frames"))
        writer.writerows(rows)
    write_meta(index, cfg, "extract-audio", {"dsp_config": asdict(cfg.dsp)})
    log.info("extracted features for %d clips", len(rows))
    return index


def _scorer_inputs(cfg: PipelineConfig) -> ScorerInputs:
    tags = load_audio_tags(cfg.paths.tags) if cfg.paths.tags else AudioTagSet({})
    captions = load_captions(cfg.paths.captions) if cfg.paths.captions else None
    audio_dir = cfg.paths.audio_dir

    def clip(vid):
        if audio_dir is None:
            return None
        p = audio_dir / f"{vid}.wav"
        return read_wav(p) if p.exists() else None

    features = {}
    index = cfg.paths.output_dir / "features" / "index.csv"
    if index.exists():
        with open(index, newline="", encoding="utf-8") as fh:
            for row in csv.DictReader(fh):
                features[row["video_id"]] = f"features/{row['video_id']}.json"
    return ScorerInputs(captions=captions, tags=tags, clips=clip, features_uri=features)


def cmd_gestalt(cfg: PipelineConfig) -> Path:
    videos = list(parse_annotations(cfg.paths.annotations).video_ids)
    inputs = _scorer_inputs(cfg)
    columns = {}
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        for sub in Subscore:
            spec = cfg.gestalt_scorers.get(sub) or ScorerSpec(sub.value, "heuristic", sub)
            columns[sub] = evaluate_scorer(spec, videos, inputs)
    if caught:
        log.warning("%d gestalt warnings, first: %s", len(caught), caught[0].message)
    subscores = {vid: tuple(columns[s][vid] for s in Subscore) for vid in videos}
    scores = score_videos(subscores, cfg.gestalt_weights)
    path = _out(cfg) / "gestalt.csv"
    write_gestalt(scores, path)
    write_meta(path, cfg, "gestalt", {"gestalt_weights": asdict(cfg.gestalt_weights)})
    return path


def _member_predictions(cfg: PipelineConfig, run: RunConfig, videos=None) -> dict:
    out = {}
    for sid in run.scorer_ids:
        spec = cfg.scorer_for(sid, run.target)
        if spec.kind.value == "file":
            _require(Path(spec.source), "export the member predictions")
            table = read_scores_csv(spec.source)
            out[sid] = table if videos is None else {v: table[v] for v in videos if v in table}
        else:
            ids = videos if videos is not None else list(parse_annotations(cfg.paths.annotations).video_ids)
            out[sid] = evaluate_scorer(spec, ids, _scorer_inputs(cfg)).scores
    return out


def _split_ids(cfg: PipelineConfig) -> tuple[list[str], list[str]]:
    scores = read_scores(_require(cfg.paths.output_dir / "scores.csv", "score-gt"))
    return split([s.video_id for s in scores], cfg.split)


def _gestalt_for(cfg: PipelineConfig, run: RunConfig):
    if run.fixed_pathway is not None:
        return None
    return read_gestalt(_require(cfg.paths.output_dir / "gestalt.csv", "gestalt"))


def cmd_calibrate(cfg: PipelineConfig, selector: str | None = None) -> list[Path]:
    gt = read_scores(_require(cfg.paths.output_dir / "scores.csv", "score-gt"))
    train, _ = _split_ids(cfg)
    written = []
    for run in cfg.select_runs(selector):
        preds = _member_predictions(cfg, run)
        calibrated = calibrate(
            run,
            preds,
            gt,
            _gestalt_for(cfg, run),
            cfg.calibration.weight_step,
            cfg.calibration.theta_step,
            videos=train,
        )
        path = _run_dir(cfg, run) / "run_config.json"
        write_run_config(calibrated, path)
        write_meta(path, cfg, "calibrate", {"n_train": len(train), **asdict(cfg.calibration)})
        log.info("calibrated %s", run.key)
        written.append(path)
    return written


def effective_run(cfg: PipelineConfig, run: RunConfig) -> RunConfig:
    """The calibrated run config if ``calibrate`` has written one, else the configured run."""
    path = cfg.paths.output_dir / "runs" / run.key / "run_config.json"
    return read_run_config(path) if path.exists() else run


def cmd_fuse(cfg: PipelineConfig, selector: str | None = None) -> list[Path]:
    written = []
    for configured in cfg.select_runs(selector):
        run = effective_run(cfg, configured)
        preds = run_predict(run, _gestalt_for(cfg, run), _member_predictions(cfg, run))
        path = _run_dir(cfg, run) / "predictions_out.csv"
        write_predictions(preds, path)
        write_meta(path, cfg, "fuse", {"run": run.key, "calibrated": run is not configured})
        written.append(path)
    return written


def cmd_evaluate(cfg: PipelineConfig) -> tuple[Path, Path]:
    gt = read_scores(_require(cfg.paths.output_dir / "scores.csv", "score-gt"))
    _, test = _split_ids(cfg)
    results = []
    for run in cfg.runs:
        path = _require(cfg.paths.output_dir / "runs" / run.key / "predictions_out.csv", "fuse")
        results.append(evaluate(read_scores_csv(path), gt, run.target, run_id=run.run_id.value, videos=test))
    out = _out(cfg)
    csv_path, md_path = out / "results.csv", out / "report.md"
    csv_path.write_text(results_csv(results))
    md_path.write_text(report(results, "markdown"))
    for p in (csv_path, md_path):
        write_meta(p, cfg, "evaluate", {"n_test": len(test)})
    return csv_path, md_path


def cmd_pipeline(cfg: PipelineConfig) -> tuple[Path, Path]:
    """score-gt, extract-audio, gestalt, calibrate, fuse, evaluate."""
    cmd_score_gt(cfg)
    if cfg.paths.audio_dir is not None:
        cmd_extract_audio(cfg)
    needs_gestalt = any(r.fixed_pathway is None for r in cfg.runs)
    if needs_gestalt or cfg.paths.audio_dir is not None or cfg.paths.tags is not None:
        cmd_gestalt(cfg)
    cmd_calibrate(cfg)
    cmd_fuse(cfg)
    return cmd_evaluate(cfg)


__all__ = [
    "MissingUpstream",
    "cmd_calibrate",
    "cmd_evaluate",
    "cmd_extract_audio",
    "cmd_fuse",
    "cmd_gestalt",
    "cmd_pipeline",
    "cmd_score_gt",
    "effective_run",
    "write_meta",
]
