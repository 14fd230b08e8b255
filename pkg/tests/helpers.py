import numpy as np

from modules.causal_tree import CausalTree, Internal, Leaf, SplitRule, TreeParams
from modules.core_model import Cue, Dataset, ReachRecord, ReachTarget
from modules.synth import CohortSpec, NominalTimeModel


def make_dataset(rows):
    """rows: iterable of (x, y, z, time_s, condition[, participant_id])."""
    records = []
    for i, row in enumerate(rows):
        x, y, z, time_s, condition = row[:5]
        pid = row[5] if len(row) > 5 else ("S01" if condition else "N01")
        records.append(ReachRecord(pid, 1, i + 1, ReachTarget(x, y, z), Cue.MOVE, float(time_s), int(condition)))
    return Dataset(tuple(records))


def step_arrays(copies=4, n_values=100):
    """One feature on a regular grid; treated y = 1 below 0.5 and 3 above, control y = 0."""
    values = (np.arange(n_values) + 0.5) / n_values
    x = np.repeat(values, 2 * copies)
    treatment = np.tile(np.array([1] * copies + [0] * copies), n_values)
    y = np.where(treatment == 1, np.where(x < 0.5, 1.0, 3.0), 0.0)
    return x.reshape(-1, 1), y, treatment


def small_cohort_spec(**overrides):
    settings = dict(
        n_neurotypical=3,
        n_post_stroke=2,
        sessions_per_stroke=3,
        reaches_per_session=100,
        seed=7,
    )
    settings.update(overrides)
    return CohortSpec(**settings)


def noise_free_spec(**overrides):
    return small_cohort_spec(nominal=NominalTimeModel(sigma=0.0), p_distract=0.0, **overrides)


def three_level_tree():
    """Hand-built tree of height 3 over the 9 reach features."""
    left = Internal(SplitRule(0, 0.0), Leaf(0, 0.5, 10, 10), Leaf(1, 0.7, 5, 5))
    right = Internal(
        SplitRule(1, 0.2),
        Internal(SplitRule(0, 0.1), Leaf(2, 2.0, 6, 6), Leaf(3, 2.4, 5, 7)),
        Leaf(4, 1.8, 8, 8),
    )
    return CausalTree(Internal(SplitRule(2, 0.25), left, right), 9, TreeParams())


def sample_features(n=200, seed=0):
    rng = np.random.default_rng(seed)
    X = np.zeros((n, 9))
    X[:, 0] = rng.uniform(-0.3, 0.3, n)
    X[:, 1] = rng.uniform(0.0, 0.3, n)
    X[:, 2] = rng.uniform(0.0, 0.4, n)
    X[:, 3] = X[:, 0] ** 2
    X[:, 4] = np.sqrt(X[:, 0] ** 2 + X[:, 1] ** 2 + X[:, 2] ** 2)
    X[np.arange(n), 5 + rng.integers(0, 4, n)] = 1.0
    return X
