"""Typed view of the YAML/JSON configuration file."""

import os
from dataclasses import dataclass, field, replace

import yaml

from modules.core_model import Cue
from modules.errors import ConfigError, ValidationError
from modules.evaluation import EvalConfig
from modules.synth import CohortSpec
from modules.workspace import WorkspaceSpec

DEFAULT_CONFIG_PATH = os.path.join("config", "config.yaml")


def load_config(path=DEFAULT_CONFIG_PATH):
    """Load a configuration file; JSON files parse as YAML."""
    with open(path, "r", encoding="utf-8") as file:
        config = yaml.safe_load(file)
    if config is None:
        return {}
    if not isinstance(config, dict):
        raise ConfigError(f"{path}: top level must be a mapping, got {type(config).__name__}")
    return config


@dataclass(frozen=True)
class HeatmapSettings:
    resolution: tuple = (5, 5, 4)
    cue: Cue = Cue.MOVE


@dataclass(frozen=True)
class Settings:
    workspace: WorkspaceSpec = field(default_factory=WorkspaceSpec)
    cohort: CohortSpec = field(default_factory=CohortSpec)
    evaluation: EvalConfig = field(default_factory=EvalConfig)
    heatmap: HeatmapSettings = field(default_factory=HeatmapSettings)

    def model_spec(self, name=None):
        """Configured model by name; the first configured model when name is None."""
        models = self.evaluation.models
        if name is None:
            return models[0]
        for spec in models:
            if spec.name == name:
                return spec
        raise ConfigError(f"no model named {name!r}; configured: {[m.name for m in models]}")


def _section(config, key):
    value = config.get(key)
    if value is None:
        return {}
    if not isinstance(value, dict):
        raise ConfigError(f"{key}: expected a mapping, got {type(value).__name__}")
    return value


def parse_settings(config):
    """Build Settings from a loaded config dict; bad values raise ConfigError naming the section."""
    config = config or {}
    try:
        workspace = WorkspaceSpec.from_config(_section(config, "workspace"))
    except (ValidationError, TypeError, ValueError) as e:
        raise ConfigError(f"workspace: {e}") from e
    try:
        cohort = CohortSpec.from_config(_section(config, "cohort"), workspace)
    except (ValidationError, TypeError, ValueError, KeyError) as e:
        raise ConfigError(f"cohort: {e}") from e
    try:
        evaluation = EvalConfig.from_config(
            _section(config, "evaluation"), config.get("models"), config.get("baselines")
        )
        env_jobs = os.getenv("DIFFICULTY_N_JOBS")
        if env_jobs and "n_jobs" not in _section(config, "evaluation"):
            evaluation = replace(evaluation, n_jobs=int(env_jobs))
    except ConfigError:
        raise
    except (ValidationError, TypeError, ValueError, KeyError) as e:
        raise ConfigError(f"evaluation/models: {e}") from e
    try:
        heatmap_section = _section(config, "heatmap")
        heatmap = HeatmapSettings(
            resolution=tuple(int(n) for n in heatmap_section.get("resolution", (5, 5, 4))),
            cue=Cue.parse(heatmap_section.get("cue", "move")),
        )
    except (ValidationError, TypeError, ValueError) as e:
        raise ConfigError(f"heatmap: {e}") from e
    return Settings(workspace, cohort, evaluation, heatmap)
