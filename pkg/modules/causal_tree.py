"""Honest causal tree.

Structure is grown on a splitting half of the data; every leaf effect is the
difference of treated and control mean outcomes over a disjoint estimation
half. Splits maximise (n_L·n_R)/(n_L+n_R) · (τ̂_L − τ̂_R)² where τ̂ are
difference-of-means on the splitting half.
"""

import logging
import math
from dataclasses import dataclass

import numpy as np

from modules.core_model import N_FEATURES, check_dimension
from modules.errors import FitError, ValidationError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SplitRule:
    feature_index: int
    threshold: float

    def goes_left(self, x):
        return x[self.feature_index] < self.threshold


@dataclass(frozen=True)
class Leaf:
    leaf_id: int
    tau_hat: float
    n_treated_est: int
    n_control_est: int
    estimation_rows: tuple = ()

    is_leaf = True

    @property
    def n_estimation(self):
        return self.n_treated_est + self.n_control_est


@dataclass(frozen=True)
class Internal:
    rule: SplitRule
    left: object
    right: object

    is_leaf = False


@dataclass(frozen=True)
class TreeParams:
    min_samples: int = 5
    max_depth: int = 25
    honest_fraction: float = 0.5
    rng_seed: int = 0

    def __post_init__(self):
        if self.min_samples < 1:
            raise ValidationError(f"min_samples must be >= 1, got {self.min_samples}")
        if self.max_depth < 0:
            raise ValidationError(f"max_depth must be >= 0, got {self.max_depth}")
        if not 0 < self.honest_fraction < 1:
            raise ValidationError(f"honest_fraction must lie in (0, 1), got {self.honest_fraction}")

    @classmethod
    def from_config(cls, section):
        section = dict(section or {})
        return cls(
            min_samples=int(section.get("min_samples", 5)),
            max_depth=int(section.get("max_depth", 25)),
            honest_fraction=float(section.get("honest_fraction", 0.5)),
            rng_seed=int(section.get("rng_seed", section.get("seed", 0))),
        )

    def to_config(self):
        return {
            "min_samples": self.min_samples,
            "max_depth": self.max_depth,
            "honest_fraction": self.honest_fraction,
            "rng_seed": self.rng_seed,
        }


@dataclass(frozen=True)
class CausalTree:
    root: object
    n_features: int
    params: TreeParams
    splitting_rows: tuple = ()

    def leaves(self):
        return list(iter_leaves(self.root))

    @property
    def height(self):
        return node_height(self.root)

    @property
    def n_nodes(self):
        return count_nodes(self.root)

    def predict(self, X):
        """Vectorized predict_tau over the rows of X."""
        X = check_dimension(np.atleast_2d(X), self.n_features)
        out = np.empty(X.shape[0], dtype=float)
        _route(self.root, X, np.arange(X.shape[0]), out, lambda leaf: leaf.tau_hat)
        return out

    def apply(self, X):
        """Vectorized leaf_assignment over the rows of X."""
        X = check_dimension(np.atleast_2d(X), self.n_features)
        out = np.empty(X.shape[0], dtype=int)
        _route(self.root, X, np.arange(X.shape[0]), out, lambda leaf: leaf.leaf_id)
        return out


def _route(node, X, idx, out, value):
    if node.is_leaf:
        out[idx] = value(node)
        return
    mask = X[idx, node.rule.feature_index] < node.rule.threshold
    _route(node.left, X, idx[mask], out, value)
    _route(node.right, X, idx[~mask], out, value)


def iter_leaves(node):
    if node.is_leaf:
        yield node
    else:
        yield from iter_leaves(node.left)
        yield from iter_leaves(node.right)


def node_height(node):
    if node.is_leaf:
        return 0
    return 1 + max(node_height(node.left), node_height(node.right))


def count_nodes(node):
    if node.is_leaf:
        return 1
    return 1 + count_nodes(node.left) + count_nodes(node.right)


def split_score_floor(n_rows, outcomes):
    """Scores at or below this are rounding noise, not heterogeneity."""
    scale = 1.0 + (float(np.max(np.abs(outcomes))) if len(outcomes) else 0.0)
    return n_rows * (1e-9 * scale) ** 2


def candidate_thresholds(sorted_values):
    """Midpoints between consecutive sorted values; entry i separates rows [0..i] from [i+1..].

    Positions whose neighbours are equal are NaN.
    """
    lo = sorted_values[:-1]
    hi = sorted_values[1:]
    mid = lo + (hi - lo) / 2
    # Adjacent floats can round the midpoint down onto lo.
    mid = np.where(mid <= lo, hi, mid)
    return np.where(hi > lo, mid, np.nan)


def _suffix_sums(values):
    return np.cumsum(values[::-1])[::-1][1:]


def _scan_feature(xj, y, treated, min_samples, est_x=None, est_treated=None):
    """Scores for every threshold of one feature; inadmissible candidates get -inf."""
    order = np.argsort(xj, kind="stable")
    xs = xj[order]
    ys = y[order]
    t = treated[order]
    c = ~t

    y1 = np.where(t, ys, 0.0)
    y0 = np.where(c, ys, 0.0)
    n1_left = np.cumsum(t)[:-1]
    n0_left = np.cumsum(c)[:-1]
    n1_right = _suffix_sums(t.astype(int))
    n0_right = _suffix_sums(c.astype(int))
    s1_left = np.cumsum(y1)[:-1]
    s0_left = np.cumsum(y0)[:-1]
    s1_right = _suffix_sums(y1)
    s0_right = _suffix_sums(y0)

    thresholds = candidate_thresholds(xs)
    ok = ~np.isnan(thresholds)
    ok &= (n1_left >= min_samples) & (n0_left >= min_samples)
    ok &= (n1_right >= min_samples) & (n0_right >= min_samples)

    if est_x is not None:
        # Estimation-half counts (never outcomes) must also fill both arms of each child.
        safe = np.where(ok, thresholds, 0.0)
        for arm in (True, False):
            arm_values = np.sort(est_x[est_treated == arm])
            n_left = np.searchsorted(arm_values, safe, side="left")
            ok &= (n_left >= min_samples) & (arm_values.shape[0] - n_left >= min_samples)

    with np.errstate(divide="ignore", invalid="ignore"):
        tau_left = s1_left / n1_left - s0_left / n0_left
        tau_right = s1_right / n1_right - s0_right / n0_right
        n_left = n1_left + n0_left
        n_right = n1_right + n0_right
        score = n_left * n_right / (n_left + n_right) * (tau_left - tau_right) ** 2
    return np.where(ok, score, -np.inf), thresholds


def best_split(X, y, treatment, params, estimation=None):
    """Best admissible SplitRule over every feature and midpoint threshold, or None.

    `estimation` is an optional (X_est, treatment_est) pair; when given, a
    candidate must also leave min_samples estimation rows per arm on each side.
    Ties go to the lowest feature index, then the lowest threshold.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    treated = np.asarray(treatment).astype(bool)
    if X.ndim != 2 or X.shape[0] != y.shape[0] or y.shape[0] != treated.shape[0]:
        raise ValidationError("features, outcomes and treatment must have matching rows")
    if X.shape[0] < 2:
        return None

    best_score = split_score_floor(X.shape[0], y)
    best = None
    for j in range(X.shape[1]):
        est_x = est_treated = None
        if estimation is not None:
            est_x = np.asarray(estimation[0], dtype=float)[:, j]
            est_treated = np.asarray(estimation[1]).astype(bool)
        scores, thresholds = _scan_feature(X[:, j], y, treated, params.min_samples, est_x, est_treated)
        k = int(np.argmax(scores))
        if scores[k] > best_score:
            best_score = float(scores[k])
            best = SplitRule(j, float(thresholds[k]))
    return best


def _make_leaf(leaf_id, y, treated, est_idx):
    rows_t = est_idx[treated[est_idx]]
    rows_c = est_idx[~treated[est_idx]]
    tau = float(np.mean(y[rows_t]) - np.mean(y[rows_c]))
    return Leaf(leaf_id, tau, int(rows_t.shape[0]), int(rows_c.shape[0]), tuple(int(i) for i in est_idx))


def _grow(X, y, treated, split_idx, est_idx, depth, params, leaf_ids):
    rule = None
    if depth < params.max_depth:
        rule = best_split(
            X[split_idx], y[split_idx], treated[split_idx], params,
            estimation=(X[est_idx], treated[est_idx]),
        )
    if rule is None:
        leaf = _make_leaf(len(leaf_ids), y, treated, est_idx)
        leaf_ids.append(leaf.leaf_id)
        return leaf

    logger.debug("depth %d split on feature %d < %.6g", depth, rule.feature_index, rule.threshold)
    split_left = X[split_idx, rule.feature_index] < rule.threshold
    est_left = X[est_idx, rule.feature_index] < rule.threshold
    left = _grow(X, y, treated, split_idx[split_left], est_idx[est_left], depth + 1, params, leaf_ids)
    right = _grow(X, y, treated, split_idx[~split_left], est_idx[~est_left], depth + 1, params, leaf_ids)
    return Internal(rule, left, right)


def honest_halves(treated, pool, params, rng):
    """Shuffle each arm of `pool` and cut it into (splitting, estimation) index arrays."""
    split_parts, est_parts = [], []
    for arm in (True, False):
        rows = rng.permutation(pool[treated[pool] == arm])
        n_split = int(math.floor(params.honest_fraction * rows.shape[0]))
        halves = (rows[:n_split], rows[n_split:])
        if min(h.shape[0] for h in halves) < params.min_samples:
            arm_name = "treated" if arm else "control"
            raise FitError(f"{arm_name} arm of {rows.shape[0]} rows cannot fill both honest halves with min_samples={params.min_samples}")
        split_parts.append(halves[0])
        est_parts.append(halves[1])
    return np.sort(np.concatenate(split_parts)), np.sort(np.concatenate(est_parts))


def fit_honest(X, y, treatment, params, rng, pool=None):
    """Fit an honest tree on the rows `pool` of (X, y, treatment); leaves index into these arrays."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    treated = np.asarray(treatment).astype(bool)
    pool = np.arange(X.shape[0]) if pool is None else np.asarray(pool, dtype=int)

    n_treated = int(np.sum(treated[pool]))
    n_control = int(pool.shape[0] - n_treated)
    needed = 2 * params.min_samples
    if n_treated < needed or n_control < needed:
        raise FitError(
            f"need >= {needed} treated and >= {needed} control records, got {n_treated} treated and {n_control} control"
        )

    split_idx, est_idx = honest_halves(treated, pool, params, rng)
    root = _grow(X, y, treated, split_idx, est_idx, 0, params, [])
    return CausalTree(root, X.shape[1], params, tuple(int(i) for i in split_idx))


def fit_tree(data, params, rng=None):
    """Fit an honest causal tree on a Dataset (condition is the treatment)."""
    if len(data) == 0:
        raise FitError("cannot fit a causal tree on an empty dataset")
    if rng is None:
        rng = np.random.default_rng(params.rng_seed)
    tree = fit_honest(data.features, data.times, data.conditions, params, rng)
    logger.debug("Fitted causal tree with %d leaves (height %d)", len(tree.leaves()), tree.height)
    return tree


def predict_tau(tree, x):
    """Leaf tau_hat for one feature vector."""
    x = check_dimension(x, tree.n_features)
    node = tree.root
    while not node.is_leaf:
        node = node.left if node.rule.goes_left(x) else node.right
    return node.tau_hat


def leaf_assignment(tree, x):
    """Id of the leaf one feature vector falls into."""
    x = check_dimension(x, tree.n_features)
    node = tree.root
    while not node.is_leaf:
        node = node.left if node.rule.goes_left(x) else node.right
    return node.leaf_id


@dataclass(frozen=True)
class PartitionEntry:
    """One region of a depth-k slice; path holds (feature_index, threshold, went_left) steps."""

    path: tuple
    tau_hat: float
    leaf_count: int
    n_estimation: int
    leaf_ids: tuple

    def contains(self, x):
        return all((x[f] < t) == went_left for f, t, went_left in self.path)


def summarize_node(node):
    """(estimation-count-weighted tau_hat, estimation count, leaf ids) of a subtree."""
    leaves = list(iter_leaves(node))
    weights = np.array([leaf.n_estimation for leaf in leaves], dtype=float)
    taus = np.array([leaf.tau_hat for leaf in leaves], dtype=float)
    tau = float(np.sum(weights * taus) / np.sum(weights))
    return tau, int(np.sum(weights)), tuple(leaf.leaf_id for leaf in leaves)


def depth_k_partition(tree, k):
    """Regions at depth k as (path, tau_hat, leaf count); shallower leaves stand for themselves."""
    if k < 0:
        raise ValidationError(f"depth must be >= 0, got {k}")
    entries = []

    def visit(node, path, depth):
        if node.is_leaf or depth == k:
            tau, n_est, leaf_ids = summarize_node(node)
            entries.append(PartitionEntry(path, tau, len(leaf_ids), n_est, leaf_ids))
            return
        f, t = node.rule.feature_index, node.rule.threshold
        visit(node.left, path + ((f, t, True),), depth + 1)
        visit(node.right, path + ((f, t, False),), depth + 1)

    root = tree.root if isinstance(tree, CausalTree) else tree
    visit(root, (), 0)
    return entries


def audit_honesty(tree, outcomes, treatment):
    """Largest gap between a stored leaf tau_hat and its recomputation from estimation rows."""
    y = np.asarray(outcomes, dtype=float)
    treated = np.asarray(treatment).astype(bool)
    worst = 0.0
    for leaf in tree.leaves():
        rows = np.asarray(leaf.estimation_rows, dtype=int)
        tau = float(np.mean(y[rows[treated[rows]]]) - np.mean(y[rows[~treated[rows]]]))
        worst = max(worst, abs(tau - leaf.tau_hat))
    return worst


def node_to_dict(node):
    if node.is_leaf:
        return {
            "leaf_id": node.leaf_id,
            "tau_hat": node.tau_hat,
            "n_treated_est": node.n_treated_est,
            "n_control_est": node.n_control_est,
            "estimation_rows": list(node.estimation_rows),
        }
    return {
        "feature_index": node.rule.feature_index,
        "threshold": node.rule.threshold,
        "left": node_to_dict(node.left),
        "right": node_to_dict(node.right),
    }


def node_from_dict(payload):
    if "leaf_id" in payload:
        return Leaf(
            int(payload["leaf_id"]),
            float(payload["tau_hat"]),
            int(payload["n_treated_est"]),
            int(payload["n_control_est"]),
            tuple(int(i) for i in payload.get("estimation_rows", ())),
        )
    return Internal(
        SplitRule(int(payload["feature_index"]), float(payload["threshold"])),
        node_from_dict(payload["left"]),
        node_from_dict(payload["right"]),
    )


def tree_to_dict(tree):
    """Tree params and node structure as a dict."""
    return {
        "n_features": tree.n_features,
        "params": tree.params.to_config(),
        "splitting_rows": list(tree.splitting_rows),
        "root": node_to_dict(tree.root),
    }


def tree_from_dict(payload):
    """Inverse of tree_to_dict."""
    return CausalTree(
        root=node_from_dict(payload["root"]),
        n_features=int(payload.get("n_features", N_FEATURES)),
        params=TreeParams.from_config(payload.get("params")),
        splitting_rows=tuple(int(i) for i in payload.get("splitting_rows", ())),
    )
