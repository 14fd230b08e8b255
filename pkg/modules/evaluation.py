"""Ball-average ground truth, 80/20 protocol, metrics and the multi-seed experiment runner."""

import hashlib
import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from modules.baselines import RegressorParams, fit_control_model, tlearner_fit
from modules.causal_forest import ForestParams, fit_forest
from modules.causal_tree import TreeParams, fit_tree
from modules.core_model import Cue, featurize_many
from modules.errors import (
    ConfigError,
    DifficultyError,
    ExperimentError,
    UndefinedGroundTruthError,
    UndefinedMetricError,
    ValidationError,
)
from modules.synth import true_tau
from modules.workspace import ball_indices, grid_array

logger = logging.getLogger(__name__)


def derive_seed(seed, *keys):
    """Child seed that depends only on (seed, keys)."""
    return int(np.random.SeedSequence(seed, spawn_key=tuple(keys)).generate_state(1)[0])


def ground_truth_tau(participant_data, control_data, x, radius):
    """Mean participant time minus mean control time inside the closed ball around x."""
    inside_p = ball_indices(participant_data.targets, x, radius)
    inside_c = ball_indices(control_data.targets, x, radius)
    if inside_p.shape[0] == 0 or inside_c.shape[0] == 0:
        raise UndefinedGroundTruthError(
            f"ball of radius {radius} at ({x.x:.4f}, {x.y:.4f}, {x.z:.4f}) holds "
            f"{inside_p.shape[0]} participant and {inside_c.shape[0]} control reaches"
        )
    return float(np.mean(participant_data.times[inside_p]) - np.mean(control_data.times[inside_c]))


def split_train_test(participant_data, train_fraction, seed):
    """Uniform random row split: ⌈fraction·n⌉ train rows, the rest test; dataset order is kept in both."""
    n = len(participant_data)
    if n < 5:
        raise ValidationError(f"need at least 5 rows to split, got {n}")
    if not 0 < train_fraction < 1:
        raise ValidationError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    perm = np.random.default_rng(seed).permutation(n)
    n_train = int(math.ceil(train_fraction * n - 1e-9))
    return participant_data.subset(np.sort(perm[:n_train])), participant_data.subset(np.sort(perm[n_train:]))


def per_subject_mse(predictions, truths):
    """Mean squared error of one participant's test predictions."""
    predictions = np.asarray(predictions, dtype=float)
    truths = np.asarray(truths, dtype=float)
    if predictions.shape != truths.shape:
        raise ValidationError(f"{predictions.shape[0]} predictions but {truths.shape[0]} truths")
    if predictions.shape[0] == 0:
        raise ValidationError("MSE needs at least one value")
    return float(np.mean((predictions - truths) ** 2))


def aggregated_r2(all_predictions, all_truths):
    """1 − SS_res/SS_tot over values pooled across participants."""
    predictions = np.asarray(all_predictions, dtype=float)
    truths = np.asarray(all_truths, dtype=float)
    if predictions.shape != truths.shape or predictions.shape[0] == 0:
        raise ValidationError("r² needs equal, nonzero numbers of predictions and truths")
    ss_tot = float(np.sum((truths - np.mean(truths)) ** 2))
    if ss_tot == 0:
        raise UndefinedMetricError("r² is undefined for constant truths")
    return 1.0 - float(np.sum((truths - predictions) ** 2)) / ss_tot


def recovery_mse(model, field, targets, cue=Cue.MOVE):
    """MSE of a fitted model against the generator's τ* over workspace targets."""
    X = featurize_many(grid_array(targets), [cue] * len(targets))
    truths = [true_tau(field, t) for t in targets]
    return per_subject_mse(model.predict(X), truths)


def standard_error(values):
    """Sample standard error of the mean; 0 for fewer than two values."""
    values = np.asarray(values, dtype=float)
    if values.shape[0] < 2:
        return 0.0
    return float(np.std(values, ddof=1) / math.sqrt(values.shape[0]))


@dataclass(frozen=True)
class ModelSpec:
    name: str
    kind: str
    params: dict = field(default_factory=dict)

    @classmethod
    def from_config(cls, section):
        section = dict(section or {})
        kind = section.get("kind")
        if kind not in MODEL_KINDS:
            raise ConfigError(f"models: unknown kind {kind!r}; expected one of {sorted(MODEL_KINDS)}")
        return cls(str(section.get("name", kind)), kind, dict(section.get("params") or {}))

    @classmethod
    def from_baseline(cls, section):
        """A `baselines` entry {variant, params} as a T-learner model."""
        params = RegressorParams.from_config(section).to_config()
        return cls(f"tlearner_{params['variant']}", "tlearner", params)

    def to_config(self):
        return {"name": self.name, "kind": self.kind, "params": self.params}


def _fit_causal_forest(spec, train, seed, n_jobs=1, control_model=None):
    return fit_forest(train, ForestParams.from_config({**spec.params, "seed": seed}), n_jobs=n_jobs)


def _fit_causal_tree(spec, train, seed, n_jobs=1, control_model=None):
    return fit_tree(train, TreeParams.from_config({**spec.params, "rng_seed": seed}))


def _fit_tlearner(spec, train, seed, n_jobs=1, control_model=None):
    return tlearner_fit(train, RegressorParams.from_config(spec.params), seed=seed,
                        control_model=control_model, n_jobs=n_jobs)


MODEL_KINDS = {
    "causal_forest": _fit_causal_forest,
    "causal_tree": _fit_causal_tree,
    "tlearner": _fit_tlearner,
}


def fit_model(spec, train, seed, n_jobs=1, control_model=None):
    """Fit the model kind named by spec on train through MODEL_KINDS."""
    return MODEL_KINDS[spec.kind](spec, train, seed, n_jobs=n_jobs, control_model=control_model)


def default_models():
    """Causal forest, causal tree and the three T-learner baselines with default params."""
    return (
        ModelSpec("causal_forest", "causal_forest", {"n_trees": 100, "min_samples": 5}),
        ModelSpec("causal_tree", "causal_tree", {"min_samples": 5}),
        ModelSpec.from_baseline({"variant": "forest"}),
        ModelSpec.from_baseline({"variant": "knn"}),
        ModelSpec.from_baseline({"variant": "tree"}),
    )


@dataclass(frozen=True)
class EvalConfig:
    train_fraction: float = 0.8
    ball_radius: float = 0.05
    n_seeds: int = 20
    base_seed: int = 0
    seeds: tuple = ()
    models: tuple = field(default_factory=default_models)
    tuning_holdout: int = 0
    n_jobs: int = 1

    def __post_init__(self):
        if not 0 < self.train_fraction < 1:
            raise ConfigError(f"evaluation.train_fraction must lie in (0, 1), got {self.train_fraction}")
        if not self.ball_radius > 0:
            raise ConfigError(f"evaluation.ball_radius must be > 0, got {self.ball_radius}")
        if self.n_seeds < 1:
            raise ConfigError(f"evaluation.n_seeds must be >= 1, got {self.n_seeds}")
        if self.tuning_holdout < 0:
            raise ConfigError(f"evaluation.tuning_holdout must be >= 0, got {self.tuning_holdout}")
        if not self.models:
            raise ConfigError("at least one model is required")
        names = [m.name for m in self.models]
        if len(set(names)) != len(names):
            raise ConfigError(f"model names must be unique, got {names}")

    @property
    def seed_list(self):
        if self.seeds:
            return [int(s) for s in self.seeds]
        return list(range(self.base_seed, self.base_seed + self.n_seeds))

    @classmethod
    def from_config(cls, section, models=None, baselines=None):
        section = section or {}
        specs = [ModelSpec.from_config(m) for m in (models or [])]
        specs += [ModelSpec.from_baseline(b) for b in (baselines or [])]
        seeds = tuple(int(s) for s in section.get("seeds", ()))
        return cls(
            train_fraction=float(section.get("train_fraction", 0.8)),
            ball_radius=float(section.get("ball_radius", 0.05)),
            n_seeds=len(seeds) if seeds else int(section.get("n_seeds", 20)),
            base_seed=int(section.get("base_seed", 0)),
            seeds=seeds,
            models=tuple(specs) if specs else default_models(),
            tuning_holdout=int(section.get("tuning_holdout", 0)),
            n_jobs=int(section.get("n_jobs", 1)),
        )

    def to_config(self):
        return {
            "train_fraction": self.train_fraction,
            "ball_radius": self.ball_radius,
            "seeds": self.seed_list,
            "tuning_holdout": self.tuning_holdout,
            "models": [m.to_config() for m in self.models],
        }

    def config_hash(self):
        canonical = json.dumps(self.to_config(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class CellResult:
    model: str
    participant: str
    seed: int
    mse: float
    n_test: int
    n_skipped: int
    predictions: tuple
    truths: tuple


@dataclass(frozen=True)
class ModelSummary:
    model: str
    mse_mean: float
    mse_se: float
    r2_mean: float
    r2_se: float
    per_seed_mse: tuple
    per_seed_r2: tuple


@dataclass(frozen=True)
class ExperimentReport:
    summaries: tuple
    cells: tuple
    per_participant: dict
    n_skipped: int
    provenance: dict

    def summary(self, model):
        for s in self.summaries:
            if s.model == model:
                return s
        raise KeyError(model)


def evaluable_test_points(participant_data, control_data, test, radius):
    """(rows of `test` with a defined ground truth, their truths, number skipped)."""
    kept, truths = [], []
    for i, record in enumerate(test.records):
        try:
            truths.append(ground_truth_tau(participant_data, control_data, record.target, radius))
            kept.append(i)
        except UndefinedGroundTruthError:
            continue
    return np.array(kept, dtype=int), np.array(truths, dtype=float), len(test) - len(kept)


def _run_unit(config, seed, participant_index, participant_id, participant_data, control_data, control_models):
    train, test = split_train_test(participant_data, config.train_fraction, derive_seed(seed, participant_index))
    training = train.concat(control_data)
    kept, truths, n_skipped = evaluable_test_points(participant_data, control_data, test, config.ball_radius)
    if n_skipped:
        logger.warning("participant %s seed %d: skipped %d test points with an empty ball", participant_id, seed, n_skipped)
    X_test = test.features[kept]

    cells = []
    for model_index, spec in enumerate(config.models):
        try:
            model = fit_model(spec, training, derive_seed(seed, model_index),
                              control_model=control_models.get(model_index))
            predictions = model.predict(X_test) if kept.shape[0] else np.array([])
        except DifficultyError as e:
            raise ExperimentError(spec.name, participant_id, seed, e) from e
        mse = per_subject_mse(predictions, truths) if kept.shape[0] else math.nan
        cells.append(CellResult(spec.name, participant_id, seed, mse, len(test), n_skipped,
                                tuple(float(p) for p in predictions), tuple(float(t) for t in truths)))
    logger.debug("participant %s seed %d done", participant_id, seed)
    return cells


def _fit_shared_control(config, seed, model_index, control_data):
    spec = config.models[model_index]
    try:
        return fit_control_model(control_data, RegressorParams.from_config(spec.params), derive_seed(seed, model_index))
    except DifficultyError as e:
        raise ExperimentError(spec.name, "control", seed, e) from e


def evaluation_participants(config, cohort):
    """Post-stroke participants left after the tuning hold-out."""
    participants = cohort.participants(condition=1)
    if config.tuning_holdout:
        if config.tuning_holdout >= len(participants):
            raise ConfigError(f"tuning_holdout={config.tuning_holdout} leaves no participant to evaluate")
        held = set(np.random.default_rng(config.base_seed).choice(participants, config.tuning_holdout, replace=False))
        logger.info("Holding out %d participants for tuning: %s", len(held), ", ".join(sorted(held)))
        participants = [p for p in participants if p not in held]
    return participants


def run_experiment(config, cohort, n_jobs=None):
    """Every (seed, participant, model) cell; results are keyed so any n_jobs gives the same report."""
    n_jobs = config.n_jobs if n_jobs is None else n_jobs
    control = cohort.control()
    if len(control) == 0:
        raise ValidationError("cohort has no control rows (condition = 0)")
    participants = evaluation_participants(config, cohort)
    if not participants:
        raise ValidationError("cohort has no treated rows (condition = 1)")
    participant_data = {pid: cohort.participant(pid) for pid in participants}
    seeds = config.seed_list
    tlearner_indices = [i for i, m in enumerate(config.models) if m.kind == "tlearner"]

    runner = Parallel(n_jobs=n_jobs)
    shared_jobs = [(seed, i) for seed in seeds for i in tlearner_indices]
    shared = runner(delayed(_fit_shared_control)(config, seed, i, control) for seed, i in shared_jobs)
    control_models = {key: model for key, model in zip(shared_jobs, shared)}

    units = [(seed, index, pid) for seed in seeds for index, pid in enumerate(participants)]
    logger.info("Running %d seeds x %d participants x %d models", len(seeds), len(participants), len(config.models))
    results = runner(
        delayed(_run_unit)(config, seed, index, pid, participant_data[pid], control,
                           {i: control_models[(seed, i)] for i in tlearner_indices})
        for seed, index, pid in units
    )
    cells = tuple(cell for unit in results for cell in unit)
    return summarize(config, cells, len(cohort))


def summarize(config, cells, n_records):
    """Fold cells into per-model summaries and per-participant means."""
    seeds = config.seed_list
    summaries = []
    per_participant = {}
    for spec in config.models:
        own = [c for c in cells if c.model == spec.name]
        seed_mse, seed_r2 = [], []
        for seed in seeds:
            seed_cells = [c for c in own if c.seed == seed and not math.isnan(c.mse)]
            if not seed_cells:
                continue
            seed_mse.append(float(np.mean([c.mse for c in seed_cells])))
            predictions = [p for c in seed_cells for p in c.predictions]
            truths = [t for c in seed_cells for t in c.truths]
            try:
                seed_r2.append(aggregated_r2(predictions, truths))
            except UndefinedMetricError as e:
                raise ExperimentError(spec.name, "all", seed, e) from e
        summaries.append(ModelSummary(
            spec.name,
            float(np.mean(seed_mse)) if seed_mse else math.nan, standard_error(seed_mse),
            float(np.mean(seed_r2)) if seed_r2 else math.nan, standard_error(seed_r2),
            tuple(seed_mse), tuple(seed_r2),
        ))
        by_participant = {}
        for c in own:
            if not math.isnan(c.mse):
                by_participant.setdefault(c.participant, []).append(c.mse)
        per_participant[spec.name] = {pid: float(np.mean(v)) for pid, v in by_participant.items()}

    n_skipped = sum(c.n_skipped for c in cells if c.model == config.models[0].name)
    provenance = {"config_hash": config.config_hash(), "seeds": seeds, "n_records": n_records}
    return ExperimentReport(tuple(summaries), cells, per_participant, n_skipped, provenance)


def _json_number(value):
    return None if math.isnan(value) else value


def report_to_dict(report):
    """Plain-data report; NaN (no scored cells) becomes null."""
    return {
        "provenance": report.provenance,
        "n_skipped": report.n_skipped,
        "summary": [
            {"model": s.model, "mse": _json_number(s.mse_mean), "mse_se": _json_number(s.mse_se),
             "r2": _json_number(s.r2_mean), "r2_se": _json_number(s.r2_se),
             "per_seed_mse": [_json_number(v) for v in s.per_seed_mse],
             "per_seed_r2": [_json_number(v) for v in s.per_seed_r2]}
            for s in report.summaries
        ],
        "per_participant_mse": report.per_participant,
        "cells": [
            {"model": c.model, "participant": c.participant, "seed": c.seed,
             "mse": _json_number(c.mse), "n_test": c.n_test, "n_skipped": c.n_skipped}
            for c in report.cells
        ],
    }


def report_json(report):
    """Report as sorted, indented JSON text."""
    return json.dumps(report_to_dict(report), indent=2, sort_keys=True, allow_nan=False) + "\n"


def cells_frame(report):
    """One row per (model, participant, seed) cell."""
    return pd.DataFrame(
        [{"model": c.model, "participant": c.participant, "seed": c.seed, "mse": c.mse,
          "n_test": c.n_test, "n_skipped": c.n_skipped} for c in report.cells],
        columns=["model", "participant", "seed", "mse", "n_test", "n_skipped"],
    )


def format_report_table(report):
    """Plain-text summary table with MSE and aggregated r² per model."""
    frame = pd.DataFrame(
        [{"Model": s.model,
          "MSE (±SE)": f"{s.mse_mean:.3f} ± {s.mse_se:.3f}",
          "agg. r² (±SE)": f"{s.r2_mean:.3f} ± {s.r2_se:.3f}"}
         for s in report.summaries],
        columns=["Model", "MSE (±SE)", "agg. r² (±SE)"],
    )
    footer = f"seeds: {len(report.provenance['seeds'])}  skipped test points: {report.n_skipped}"
    return frame.to_string(index=False) + "\n" + footer + "\n"
