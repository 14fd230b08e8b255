"""T-learner baselines f_s(x) − f_n(x) over three regressors: CART tree, bootstrap forest, k-NN."""

import logging
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from joblib import Parallel, delayed

from modules.causal_tree import SplitRule, candidate_thresholds, split_score_floor
from modules.core_model import check_dimension
from modules.errors import FitError, ValidationError

logger = logging.getLogger(__name__)


class Variant(str, Enum):
    TREE = "tree"
    FOREST = "forest"
    KNN = "knn"

    @classmethod
    def parse(cls, text):
        if isinstance(text, cls):
            return text
        try:
            return cls(str(text).strip().lower())
        except ValueError:
            raise ValidationError(f"unknown baseline variant {text!r}; expected tree, forest or knn") from None


TREE_DEFAULTS = {"max_depth": 10, "min_samples_split": 10, "min_samples_leaf": 4}
FOREST_DEFAULTS = {"n_estimators": 100, "max_depth": 100, "min_samples_split": 2, "min_samples_leaf": 1, "bootstrap": True}
KNN_DEFAULTS = {"k": 15, "weighting": "distance", "metric": "manhattan"}


@dataclass(frozen=True)
class RegressorParams:
    variant: Variant = Variant.TREE
    tree: dict = field(default_factory=lambda: dict(TREE_DEFAULTS))
    forest: dict = field(default_factory=lambda: dict(FOREST_DEFAULTS))
    knn: dict = field(default_factory=lambda: dict(KNN_DEFAULTS))

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant.parse(self.variant))
        object.__setattr__(self, "tree", {**TREE_DEFAULTS, **self.tree})
        object.__setattr__(self, "forest", {**FOREST_DEFAULTS, **self.forest})
        object.__setattr__(self, "knn", {**KNN_DEFAULTS, **self.knn})
        counts = [self.tree["max_depth"], self.tree["min_samples_split"], self.tree["min_samples_leaf"],
                  self.forest["n_estimators"], self.forest["max_depth"], self.forest["min_samples_split"],
                  self.forest["min_samples_leaf"], self.knn["k"]]
        if any(int(c) < 1 for c in counts):
            raise ValidationError(f"baseline counts must be >= 1, got {counts}")
        if self.knn["weighting"] not in ("distance", "uniform"):
            raise ValidationError(f"knn weighting must be 'distance' or 'uniform', got {self.knn['weighting']!r}")
        if self.knn["metric"] not in ("manhattan", "euclidean"):
            raise ValidationError(f"knn metric must be 'manhattan' or 'euclidean', got {self.knn['metric']!r}")

    @classmethod
    def from_config(cls, section):
        """Build from {variant, params}; params apply to the selected variant."""
        section = dict(section or {})
        variant = Variant.parse(section.get("variant", "tree"))
        params = dict(section.get("params") or {})
        if variant is Variant.KNN and "n_neighbors" in params:
            params["k"] = params.pop("n_neighbors")
        if variant is Variant.KNN and "weights" in params:
            params["weighting"] = params.pop("weights")
        if variant is Variant.TREE and "min_samples" in params:
            params["min_samples_leaf"] = params.pop("min_samples")
        return cls(variant=variant, **{variant.value: params})

    def to_config(self):
        return {"variant": self.variant.value, "params": dict(getattr(self, self.variant.value))}


@dataclass(frozen=True)
class _Value:
    value: float

    is_leaf = True


@dataclass(frozen=True)
class _Split:
    rule: SplitRule
    left: object
    right: object

    is_leaf = False


def _best_variance_split(X, y, min_samples_leaf):
    """Split maximising SSE reduction; None when nothing beats the rounding floor."""
    n = X.shape[0]
    best_gain = split_score_floor(n, y)
    best = None
    for j in range(X.shape[1]):
        order = np.argsort(X[:, j], kind="stable")
        xs = X[order, j]
        # Centred outcomes keep the gain of a constant node under the rounding floor.
        ys = y[order] - np.mean(y)
        n_left = np.arange(1, n)
        n_right = n - n_left
        s_left = np.cumsum(ys)[:-1]
        s_right = np.cumsum(ys[::-1])[::-1][1:]
        thresholds = candidate_thresholds(xs)
        ok = ~np.isnan(thresholds) & (n_left >= min_samples_leaf) & (n_right >= min_samples_leaf)
        # SSE_parent − SSE_children = s_L²/n_L + s_R²/n_R − s²/n
        gain = s_left ** 2 / n_left + s_right ** 2 / n_right - np.sum(ys) ** 2 / n
        gain = np.where(ok, gain, -np.inf)
        k = int(np.argmax(gain))
        if gain[k] > best_gain:
            best_gain = float(gain[k])
            best = SplitRule(j, float(thresholds[k]))
    return best


class RegressionTree:
    """CART regression tree; leaf value is the mean outcome of its rows."""

    def __init__(self, max_depth=10, min_samples_split=10, min_samples_leaf=4):
        self.max_depth = int(max_depth)
        self.min_samples_split = int(min_samples_split)
        self.min_samples_leaf = int(min_samples_leaf)
        self.root = None
        self.n_features = None

    def fit(self, X, y):
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float)
        if X.shape[0] == 0:
            raise FitError("cannot fit a regression tree on empty data")
        if X.shape[0] != y.shape[0]:
            raise ValidationError(f"{X.shape[0]} feature rows but {y.shape[0]} outcomes")
        self.n_features = X.shape[1]
        self.root = self._grow(X, y, 0)
        return self

    def _grow(self, X, y, depth):
        rule = None
        if depth < self.max_depth and X.shape[0] >= self.min_samples_split:
            rule = _best_variance_split(X, y, self.min_samples_leaf)
        if rule is None:
            return _Value(float(np.mean(y)))
        mask = X[:, rule.feature_index] < rule.threshold
        return _Split(rule, self._grow(X[mask], y[mask], depth + 1), self._grow(X[~mask], y[~mask], depth + 1))

    def predict(self, X):
        X = check_dimension(np.atleast_2d(X), self.n_features)
        out = np.empty(X.shape[0], dtype=float)

        def route(node, idx):
            if node.is_leaf:
                out[idx] = node.value
                return
            mask = X[idx, node.rule.feature_index] < node.rule.threshold
            route(node.left, idx[mask])
            route(node.right, idx[~mask])

        route(self.root, np.arange(X.shape[0]))
        return out

    def to_dict(self):
        def encode(node):
            if node.is_leaf:
                return {"value": node.value}
            return {"feature_index": node.rule.feature_index, "threshold": node.rule.threshold,
                    "left": encode(node.left), "right": encode(node.right)}

        return {"max_depth": self.max_depth, "min_samples_split": self.min_samples_split,
                "min_samples_leaf": self.min_samples_leaf, "n_features": self.n_features,
                "root": encode(self.root)}

    @classmethod
    def from_dict(cls, payload):
        def decode(node):
            if "value" in node:
                return _Value(float(node["value"]))
            return _Split(SplitRule(int(node["feature_index"]), float(node["threshold"])),
                          decode(node["left"]), decode(node["right"]))

        tree = cls(payload["max_depth"], payload["min_samples_split"], payload["min_samples_leaf"])
        tree.n_features = int(payload["n_features"])
        tree.root = decode(payload["root"])
        return tree


def _fit_bootstrap_member(X, y, settings, seed, index):
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(index,)))
    n = X.shape[0]
    rows = rng.integers(0, n, size=n) if settings["bootstrap"] else np.arange(n)
    return RegressionTree(settings["max_depth"], settings["min_samples_split"], settings["min_samples_leaf"]).fit(X[rows], y[rows])


class BootstrapForest:
    """Bagged regression trees (rows drawn with replacement, all features at every split)."""

    def __init__(self, n_estimators=100, max_depth=100, min_samples_split=2, min_samples_leaf=1,
                 bootstrap=True, seed=0, n_jobs=1):
        self.settings = {
            "n_estimators": int(n_estimators),
            "max_depth": int(max_depth),
            "min_samples_split": int(min_samples_split),
            "min_samples_leaf": int(min_samples_leaf),
            "bootstrap": bool(bootstrap),
        }
        self.seed = int(seed)
        self.n_jobs = n_jobs
        self.trees = []

    def fit(self, X, y):
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float)
        if X.shape[0] == 0:
            raise FitError("cannot fit a forest on empty data")
        n_trees = self.settings["n_estimators"]
        if self.n_jobs == 1:
            self.trees = [_fit_bootstrap_member(X, y, self.settings, self.seed, b) for b in range(n_trees)]
        else:
            self.trees = Parallel(n_jobs=self.n_jobs)(
                delayed(_fit_bootstrap_member)(X, y, self.settings, self.seed, b) for b in range(n_trees)
            )
        return self

    @property
    def n_features(self):
        return self.trees[0].n_features

    def predict(self, X):
        X = check_dimension(np.atleast_2d(X), self.n_features)
        return np.mean(np.vstack([tree.predict(X) for tree in self.trees]), axis=0)

    def to_dict(self):
        return {**self.settings, "seed": self.seed, "trees": [tree.to_dict() for tree in self.trees]}

    @classmethod
    def from_dict(cls, payload):
        forest = cls(payload["n_estimators"], payload["max_depth"], payload["min_samples_split"],
                     payload["min_samples_leaf"], payload.get("bootstrap", True), payload.get("seed", 0))
        forest.trees = [RegressionTree.from_dict(t) for t in payload["trees"]]
        return forest


class KNeighborsRegressor:
    """k-NN regression; with inverse-distance weights a zero distance returns the mean of the exact matches."""

    _BLOCK = 256

    def __init__(self, k=15, weighting="distance", metric="manhattan"):
        self.k = int(k)
        self.weighting = weighting
        self.metric = metric
        self.X = None
        self.y = None

    def fit(self, X, y):
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float)
        if X.shape[0] == 0:
            raise FitError("cannot fit k-NN on empty data")
        if X.shape[0] != y.shape[0]:
            raise ValidationError(f"{X.shape[0]} feature rows but {y.shape[0]} outcomes")
        self.X, self.y = X, y
        return self

    @property
    def n_features(self):
        return self.X.shape[1]

    def _distances(self, Q):
        delta = Q[:, None, :] - self.X[None, :, :]
        if self.metric == "manhattan":
            return np.sum(np.abs(delta), axis=2)
        return np.sqrt(np.sum(delta * delta, axis=2))

    def predict(self, X):
        X = check_dimension(np.atleast_2d(X), self.n_features)
        k = min(self.k, self.X.shape[0])
        out = np.empty(X.shape[0], dtype=float)
        for start in range(0, X.shape[0], self._BLOCK):
            dist = self._distances(X[start:start + self._BLOCK])
            nearest = np.argsort(dist, axis=1, kind="stable")[:, :k]
            for row, idx in enumerate(nearest):
                d = dist[row, idx]
                values = self.y[idx]
                if self.weighting == "uniform":
                    out[start + row] = float(np.mean(values))
                elif np.any(d == 0):
                    out[start + row] = float(np.mean(values[d == 0]))
                else:
                    w = 1.0 / d
                    out[start + row] = float(np.sum(w * values) / np.sum(w))
        return out

    def to_dict(self):
        return {"k": self.k, "weighting": self.weighting, "metric": self.metric,
                "X": self.X.tolist(), "y": self.y.tolist()}

    @classmethod
    def from_dict(cls, payload):
        knn = cls(payload["k"], payload["weighting"], payload["metric"])
        return knn.fit(np.array(payload["X"], dtype=float), np.array(payload["y"], dtype=float))


_REGRESSORS = {Variant.TREE: RegressionTree, Variant.FOREST: BootstrapForest, Variant.KNN: KNeighborsRegressor}


def fit_regressor(X, Y, params, seed=0, n_jobs=1):
    """Fit the regressor variant named in params on X and Y."""
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if X.ndim != 2 or X.shape[0] == 0:
        raise FitError("cannot fit a regressor on empty data")
    if X.shape[0] != Y.shape[0]:
        raise ValidationError(f"{X.shape[0]} feature rows but {Y.shape[0]} outcomes")
    if params.variant is Variant.TREE:
        model = RegressionTree(**params.tree)
    elif params.variant is Variant.FOREST:
        model = BootstrapForest(**params.forest, seed=seed, n_jobs=n_jobs)
    else:
        model = KNeighborsRegressor(**params.knn)
    return model.fit(X, Y)


def predict_regressor(regressor, x):
    """Prediction of a fitted regressor for one feature vector."""
    x = check_dimension(x, regressor.n_features)
    return float(regressor.predict(x.reshape(1, -1))[0])


def regressor_to_dict(regressor):
    """Tagged dict for any fitted regressor."""
    for variant, cls in _REGRESSORS.items():
        if isinstance(regressor, cls):
            return {"variant": variant.value, "model": regressor.to_dict()}
    raise ValidationError(f"unsupported regressor {type(regressor).__name__}")


def regressor_from_dict(payload):
    """Inverse of regressor_to_dict."""
    return _REGRESSORS[Variant.parse(payload["variant"])].from_dict(payload["model"])


@dataclass(frozen=True)
class TLearner:
    f_s: object
    f_n: object
    params: RegressorParams

    @property
    def n_features(self):
        return self.f_s.n_features

    def predict(self, X):
        return self.f_s.predict(X) - self.f_n.predict(X)


def fit_control_model(data, params, seed=0, n_jobs=1):
    """f_n alone; reusable across participants because control data is shared."""
    control = data.control()
    if len(control) == 0:
        raise FitError("no control rows (condition = 0) to fit f_n")
    return fit_regressor(control.features, control.times, params, seed=seed, n_jobs=n_jobs)


def tlearner_fit(data, params, seed=0, control_model=None, n_jobs=1):
    """Fit f_s on condition = 1 rows and f_n on condition = 0 rows; both arms share `seed`."""
    treated = data.treated()
    if len(treated) == 0:
        raise FitError("no treated rows (condition = 1) to fit f_s")
    f_n = control_model if control_model is not None else fit_control_model(data, params, seed, n_jobs)
    f_s = fit_regressor(treated.features, treated.times, params, seed=seed, n_jobs=n_jobs)
    return TLearner(f_s, f_n, params)


def tlearner_predict(t, x):
    """Treated-arm minus control-arm prediction for one feature vector."""
    return predict_regressor(t.f_s, x) - predict_regressor(t.f_n, x)


def tlearner_to_dict(t):
    """Both arm regressors and the shared params as a dict."""
    return {"params": t.params.to_config(), "f_s": regressor_to_dict(t.f_s), "f_n": regressor_to_dict(t.f_n)}


def tlearner_from_dict(payload):
    """Inverse of tlearner_to_dict."""
    return TLearner(
        regressor_from_dict(payload["f_s"]),
        regressor_from_dict(payload["f_n"]),
        RegressorParams.from_config(payload["params"]),
    )
