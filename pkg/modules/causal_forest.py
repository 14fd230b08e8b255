"""Causal forest: honest causal trees on per-arm subsamples, predictions averaged."""

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from joblib import Parallel, delayed

from modules.causal_tree import TreeParams, fit_honest, predict_tau, tree_from_dict, tree_to_dict
from modules.core_model import check_dimension
from modules.errors import FitError, ValidationError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ForestParams:
    n_trees: int = 100
    tree_params: TreeParams = field(default_factory=TreeParams)
    subsample_fraction: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValidationError(f"n_trees must be >= 1, got {self.n_trees}")
        if not 0 < self.subsample_fraction <= 1:
            raise ValidationError(f"subsample_fraction must lie in (0, 1], got {self.subsample_fraction}")

    @classmethod
    def from_config(cls, section):
        section = dict(section or {})
        return cls(
            n_trees=int(section.get("n_trees", section.get("n_estimators", 100))),
            tree_params=TreeParams.from_config(section.get("tree_params", {
                k: section[k] for k in ("min_samples", "max_depth", "honest_fraction") if k in section
            })),
            subsample_fraction=float(section.get("subsample_fraction", 0.5)),
            seed=int(section.get("seed", 0)),
        )

    def to_config(self):
        return {
            "n_trees": self.n_trees,
            "tree_params": self.tree_params.to_config(),
            "subsample_fraction": self.subsample_fraction,
            "seed": self.seed,
        }


def tree_rng(seed, index):
    """Generator for tree `index`; depends only on (seed, index), never on scheduling."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(index,)))


@dataclass(frozen=True)
class CausalForest:
    trees: tuple
    params: ForestParams

    @property
    def n_features(self):
        return self.trees[0].n_features

    def tree_predictions(self, X):
        X = check_dimension(np.atleast_2d(X), self.n_features)
        return np.vstack([tree.predict(X) for tree in self.trees])

    def predict(self, X):
        """Vectorized forest prediction over the rows of X."""
        return np.mean(self.tree_predictions(X), axis=0)

    def mean_leaf_count(self):
        return float(np.mean([len(tree.leaves()) for tree in self.trees]))


def _subsample(treated, fraction, rng):
    parts = []
    for arm in (True, False):
        rows = np.flatnonzero(treated == arm)
        size = int(math.ceil(fraction * rows.shape[0]))
        parts.append(rng.choice(rows, size=size, replace=False))
    return np.sort(np.concatenate(parts))


def _fit_member(X, y, treated, params, index):
    rng = tree_rng(params.seed, index)
    pool = _subsample(treated, params.subsample_fraction, rng)
    return fit_honest(X, y, treated, params.tree_params, rng, pool=pool)


def fit_forest(data, params, n_jobs=1):
    """Fit `params.n_trees` honest trees; identical for any n_jobs."""
    X, y = data.features, data.times
    treated = data.conditions.astype(bool)
    needed = 2 * params.tree_params.min_samples
    for arm, name in ((True, "treated"), (False, "control")):
        size = int(math.ceil(params.subsample_fraction * int(np.sum(treated == arm))))
        if size < needed:
            raise FitError(f"{name} subsample of {size} rows is below the {needed} rows one honest tree needs")

    try:
        if n_jobs == 1:
            trees = [_fit_member(X, y, treated, params, b) for b in range(params.n_trees)]
        else:
            trees = Parallel(n_jobs=n_jobs)(
                delayed(_fit_member)(X, y, treated, params, b) for b in range(params.n_trees)
            )
    except FitError as e:
        logger.error("Error fitting causal forest: %s", e)
        raise

    forest = CausalForest(tuple(trees), params)
    logger.debug("Fitted causal forest: %d trees, mean leaf count %.1f", params.n_trees, forest.mean_leaf_count())
    return forest


def predict(forest, x):
    """Mean of the per-tree tau estimates at one feature vector."""
    x = check_dimension(x, forest.n_features)
    return float(np.mean(np.array([predict_tau(tree, x) for tree in forest.trees])))


def forest_to_dict(forest):
    """Forest params and every tree as a dict."""
    return {
        "params": forest.params.to_config(),
        "trees": [tree_to_dict(tree) for tree in forest.trees],
    }


def forest_from_dict(payload):
    """Inverse of forest_to_dict."""
    trees = tuple(tree_from_dict(t) for t in payload["trees"])
    params = ForestParams.from_config(payload.get("params"))
    if len(trees) != params.n_trees:
        raise ValidationError(f"forest declares {params.n_trees} trees but holds {len(trees)}")
    return CausalForest(trees, params)
