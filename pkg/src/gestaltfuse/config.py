"""JSON pipeline configuration.

Relative paths resolve against the directory holding the config file. The
config hash covers the canonical JSON of the effective config with
``paths.output_dir`` removed, so the same inputs written to another location
hash identically.
"""

from __future__ import annotations

import copy
import dataclasses
import hashlib
import json
from collections.abc import Mapping
from dataclasses import dataclass, field
from pathlib import Path

from .audio_dsp import DspConfig
from .data_model import Term
from .errors import GestaltFuseError
from .evaluation import SplitSpec
from .fusion import ModelRole, RunConfig, standard_runs
from .gestalt import GestaltWeights
from .gt_scoring import FactorizationConfig, MissRule
from .scorers import ScorerSpec, Subscore

GT_METHODS = ("cf", "hit_rate")


class ConfigInvalid(GestaltFuseError):
    def __init__(self, field: str, reason: str):
        super().__init__(f"{field}: {reason}")
        self.field = field
        self.reason = reason


@dataclass(frozen=True)
class Paths:
    annotations: Path
    output_dir: Path
    captions: Path | None = None
    tags: Path | None = None
    audio_dir: Path | None = None
    predictions_dir: Path | None = None


@dataclass(frozen=True)
class GroundTruthConfig:
    short_term: str = "cf"
    long_term: str = "hit_rate"

    def __post_init__(self):
        for name in ("short_term", "long_term"):
            if getattr(self, name) not in GT_METHODS:
                raise ValueError(f"{name} must be one of {GT_METHODS}")


@dataclass(frozen=True)
class CalibrationConfig:
    weight_step: float = 0.1
    theta_step: float = 0.05


@dataclass(frozen=True)
class PipelineConfig:
    paths: Paths
    seed: int = 0
    dsp: DspConfig = DspConfig()
    factorization: FactorizationConfig = FactorizationConfig()
    miss_rule: MissRule = MissRule()
    gestalt_weights: GestaltWeights = GestaltWeights()
    ground_truth: GroundTruthConfig = GroundTruthConfig()
    split: SplitSpec = SplitSpec()
    calibration: CalibrationConfig = CalibrationConfig()
    runs: tuple[RunConfig, ...] = ()
    scorers: tuple[ScorerSpec, ...] = ()
    gestalt_scorers: Mapping[Subscore, ScorerSpec] = field(default_factory=dict)
    raw: Mapping = field(default_factory=dict, compare=False, repr=False)

    @property
    def sha256(self) -> str:
        return config_hash(self.raw)

    def run(self, key: str) -> RunConfig:
        for r in self.runs:
            if r.key == key:
                return r
        raise ConfigInvalid("runs", f"no run {key!r}")

    def select_runs(self, selector: str | None) -> list[RunConfig]:
        """All runs, those with a given run id (``run4``), or one key (``run4_short``)."""
        if selector is None:
            return list(self.runs)
        chosen = [r for r in self.runs if selector in (r.key, r.run_id.value)]
        if not chosen:
            raise ConfigInvalid("--run", f"no run matches {selector!r}")
        return chosen

    def scorer_for(self, scorer_id: str, target: Term) -> ScorerSpec:
        for s in self.scorers:
            if s.scorer_id == scorer_id and s.target is target:
                return s
        if self.paths.predictions_dir is None:
            raise ConfigInvalid("paths.predictions_dir", f"needed for scorer {scorer_id!r}")
        return ScorerSpec(scorer_id, "file", target, str(self.paths.predictions_dir / f"{scorer_id}_{target.value}.csv"))


def config_hash(raw: Mapping) -> str:
    body = copy.deepcopy(dict(raw))
    body.get("paths", {}).pop("output_dir", None)
    text = json.dumps(body, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()


def _section(cls, data, name: str, **forced):
    if data is None:
        data = {}
    if not isinstance(data, Mapping):
        raise ConfigInvalid(name, "must be an object")
    known = {f.name for f in dataclasses.fields(cls)}
    for key in data:
        if key not in known:
            raise ConfigInvalid(f"{name}.{key}", "unknown field")
    values = {**data, **{k: v for k, v in forced.items() if k in known and k not in data}}
    try:
        return cls(**values)
    except (TypeError, ValueError) as exc:
        raise ConfigInvalid(name, str(exc)) from None


def _paths(raw: Mapping, base: Path) -> Paths:
    if not isinstance(raw, Mapping):
        raise ConfigInvalid("paths", "must be an object")
    known = {f.name for f in dataclasses.fields(Paths)}
    for key in raw:
        if key not in known:
            raise ConfigInvalid(f"paths.{key}", "unknown field")
    for required in ("annotations", "output_dir"):
        if not raw.get(required):
            raise ConfigInvalid(f"paths.{required}", "required")
    resolved = {k: (base / v).resolve() for k, v in raw.items() if v}
    for key, path in resolved.items():
        if key != "output_dir" and not path.exists():
            raise ConfigInvalid(f"paths.{key}", f"does not exist: {path}")
    for key in ("audio_dir", "predictions_dir"):
        if key in resolved and not resolved[key].is_dir():
            raise ConfigInvalid(f"paths.{key}", "must be a directory")
    return Paths(**resolved)


def parse_config(raw: Mapping, base_dir: Path | str = ".") -> PipelineConfig:
    base = Path(base_dir)
    known = {f.name for f in dataclasses.fields(PipelineConfig)} - {"raw"}
    for key in raw:
        if key not in known:
            raise ConfigInvalid(key, "unknown field")
    seed = raw.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
        raise ConfigInvalid("seed", "must be a non-negative integer")

    paths = _paths(raw.get("paths", {}), base)
    gestalt_weights = _section(GestaltWeights, raw.get("gestalt_weights"), "gestalt_weights")
    cfg = dict(
        paths=paths,
        seed=seed,
        dsp=_section(DspConfig, raw.get("dsp"), "dsp"),
        factorization=_section(FactorizationConfig, raw.get("factorization"), "factorization", seed=seed),
        miss_rule=_section(MissRule, raw.get("miss_rule"), "miss_rule"),
        gestalt_weights=gestalt_weights,
        ground_truth=_section(GroundTruthConfig, raw.get("ground_truth"), "ground_truth"),
        split=_section(SplitSpec, raw.get("split"), "split", seed=seed),
        calibration=_section(CalibrationConfig, raw.get("calibration"), "calibration"),
    )

    runs_raw = raw.get("runs")
    runs: list[RunConfig] = []
    if runs_raw is None:
        roles = {r: r.value for r in ModelRole}
        runs = [r for t in Term for r in standard_runs(t, roles, gestalt_weights)]
    else:
        for i, entry in enumerate(runs_raw):
            entry = dict(entry)
            if entry.get("run_id") == "run4" and not entry.get("gestalt"):
                entry["gestalt"] = dataclasses.asdict(gestalt_weights)
            try:
                runs.append(RunConfig.from_dict(entry))
            except (KeyError, TypeError, ValueError, GestaltFuseError) as exc:
                raise ConfigInvalid(f"runs[{i}]", str(exc)) from None
    keys = [r.key for r in runs]
    dupes = sorted({k for k in keys if keys.count(k) > 1})
    if dupes:
        raise ConfigInvalid("runs", f"duplicate run ids: {', '.join(dupes)}")

    scorers = []
    for i, entry in enumerate(raw.get("scorers", [])):
        entry = dict(entry)
        if entry.get("kind") == "file" and entry.get("source"):
            entry["source"] = str((base / entry["source"]).resolve())
        try:
            scorers.append(ScorerSpec(**entry))
        except (TypeError, ValueError) as exc:
            raise ConfigInvalid(f"scorers[{i}]", str(exc)) from None

    gestalt_scorers = {}
    for name, entry in (raw.get("gestalt_scorers") or {}).items():
        try:
            sub = Subscore(name)
            entry = dict(entry)
            if entry.get("kind") == "file" and entry.get("source"):
                entry["source"] = str((base / entry["source"]).resolve())
            gestalt_scorers[sub] = ScorerSpec(**{"scorer_id": sub.value, "target": sub.value, **entry})
        except (TypeError, ValueError) as exc:
            raise ConfigInvalid(f"gestalt_scorers.{name}", str(exc)) from None

    return PipelineConfig(
        **cfg,
        runs=tuple(runs),
        scorers=tuple(scorers),
        gestalt_scorers=gestalt_scorers,
        raw=copy.deepcopy(dict(raw)),
    )


def load_config(path: Path | str, seed: int | None = None, out: Path | str | None = None) -> PipelineConfig:
    """Read a config file; ``seed`` and ``out`` override the file's fields.

    A seed override replaces the top-level seed and any seeds set in the
    ``factorization`` and ``split`` sections.
    """
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigInvalid("--config", f"no such file: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigInvalid("--config", f"invalid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigInvalid("--config", "top level must be an object")
    base = path.parent
    if seed is not None:
        raw["seed"] = seed
        for section in ("factorization", "split"):
            if isinstance(raw.get(section), dict):
                raw[section].pop("seed", None)
    if out is not None:
        raw.setdefault("paths", {})
        raw["paths"]["output_dir"] = str(Path(out).resolve())
    return parse_config(raw, base)
