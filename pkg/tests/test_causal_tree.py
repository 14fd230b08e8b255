import json
import unittest

import numpy as np

from modules.causal_tree import (
    CausalTree,
    Internal,
    Leaf,
    SplitRule,
    TreeParams,
    audit_honesty,
    best_split,
    candidate_thresholds,
    depth_k_partition,
    fit_honest,
    fit_tree,
    leaf_assignment,
    predict_tau,
    tree_from_dict,
    tree_to_dict,
)
from modules.errors import DimensionError, FitError, ValidationError
from modules.synth import generate_cohort
from tests.helpers import sample_features, small_cohort_spec, step_arrays, three_level_tree


def oracle_split(X, y, treated, min_samples):
    """Exhaustive reference: every feature, every midpoint, scored with plain means."""
    best, best_score = None, -np.inf
    for j in range(X.shape[1]):
        values = np.unique(X[:, j])
        for lo, hi in zip(values[:-1], values[1:]):
            threshold = lo + (hi - lo) / 2
            if threshold <= lo:
                threshold = hi
            left = X[:, j] < threshold
            counts = [np.sum(left & treated), np.sum(left & ~treated),
                      np.sum(~left & treated), np.sum(~left & ~treated)]
            if min(counts) < min_samples:
                continue
            tau_l = np.mean(y[left & treated]) - np.mean(y[left & ~treated])
            tau_r = np.mean(y[~left & treated]) - np.mean(y[~left & ~treated])
            n_l, n_r = np.sum(left), np.sum(~left)
            score = n_l * n_r / (n_l + n_r) * (tau_l - tau_r) ** 2
            if score > best_score:
                best, best_score = (j, float(threshold)), score
    return best, best_score


def preorder_rules(node):
    if node.is_leaf:
        return []
    return [node.rule] + preorder_rules(node.left) + preorder_rules(node.right)


class TestCandidateThresholds(unittest.TestCase):
    def test_midpoints_and_ties(self):
        out = candidate_thresholds(np.array([0.0, 1.0, 1.0, 3.0]))
        self.assertEqual(out[0], 0.5)
        self.assertTrue(np.isnan(out[1]))
        self.assertEqual(out[2], 2.0)

    def test_adjacent_floats_use_upper_value(self):
        lo = 1.0
        hi = np.nextafter(lo, 2.0)
        out = candidate_thresholds(np.array([lo, hi]))
        self.assertGreater(out[0], lo)
        self.assertLessEqual(out[0], hi)


class TestBestSplit(unittest.TestCase):
    def test_step_boundary(self):
        X, y, w = step_arrays()
        rule = best_split(X, y, w, TreeParams(min_samples=5))
        self.assertEqual(rule.feature_index, 0)
        self.assertLess(abs(rule.threshold - 0.5), 1e-9)

    def test_constant_outcomes_do_not_split(self):
        X, _, w = step_arrays()
        self.assertIsNone(best_split(X, np.full(X.shape[0], 1.5), w, TreeParams(min_samples=5)))

    def test_larger_effect_gap_wins(self):
        cells = [(a, b) for a in (0.25, 0.75) for b in (0.25, 0.75)]
        X = np.array([c for c in cells for _ in range(20)])
        w = np.tile(np.array([1] * 10 + [0] * 10), len(cells))
        y = np.where(w == 1, 2.0 * (X[:, 0] > 0.5) + 0.5 * (X[:, 1] > 0.5), 0.0)
        rule = best_split(X, y, w, TreeParams(min_samples=5))
        self.assertEqual(rule, SplitRule(0, 0.5))

    def test_matches_exhaustive_search(self):
        rng = np.random.default_rng(11)
        for case in range(60):
            n = int(rng.integers(30, 201))
            d = int(rng.integers(1, 3))
            min_samples = int(rng.integers(1, 5))
            X = np.round(rng.uniform(0, 1, size=(n, d)), 2)
            w = rng.permutation(np.arange(n) < n // 2).astype(int)
            y = rng.normal(0, 1, n) + w * (X[:, 0] > 0.6) * rng.uniform(0, 3)
            params = TreeParams(min_samples=min_samples)

            expected, expected_score = oracle_split(X, y, w.astype(bool), min_samples)
            rule = best_split(X, y, w, params)
            with self.subTest(case=case):
                if expected is None or expected_score <= 0:
                    self.assertIsNone(rule)
                else:
                    self.assertEqual((rule.feature_index, rule.threshold), expected)

    def test_mismatched_rows_rejected(self):
        with self.assertRaises(ValidationError):
            best_split(np.zeros((4, 1)), np.zeros(3), np.array([1, 0, 1, 0]), TreeParams(min_samples=1))


class TestFitHonest(unittest.TestCase):
    def test_step_effect_recovered(self):
        X, y, w = step_arrays()
        tree = fit_honest(X, y, w, TreeParams(min_samples=5), np.random.default_rng(0))
        taus = sorted(leaf.tau_hat for leaf in tree.leaves())
        self.assertEqual(len(taus), 2)
        self.assertLess(abs(taus[0] - 1.0), 0.1)
        self.assertLess(abs(taus[1] - 3.0), 0.1)

        grid = np.linspace(0.0, 1.0, 201).reshape(-1, 1)
        far = np.abs(grid[:, 0] - 0.5) > 0.02
        expected = np.where(grid[:, 0] < 0.5, 1.0, 3.0)
        self.assertLess(np.max(np.abs(tree.predict(grid)[far] - expected[far])), 0.1)
        self.assertEqual(set(tree.apply(grid).tolist()), {leaf.leaf_id for leaf in tree.leaves()})

    def test_identical_arms_give_zero_effect(self):
        X, _, w = step_arrays()
        tree = fit_honest(X, np.full(X.shape[0], 1.5), w, TreeParams(min_samples=5), np.random.default_rng(1))
        self.assertEqual(len(tree.leaves()), 1)
        self.assertEqual(tree.leaves()[0].tau_hat, 0.0)

    def test_minimum_rows_force_a_single_leaf(self):
        rng = np.random.default_rng(2)
        X = rng.uniform(0, 1, size=(20, 1))
        w = np.array([1] * 10 + [0] * 10)
        y = rng.normal(0, 1, 20) + 3.0 * w * (X[:, 0] > 0.5)
        tree = fit_honest(X, y, w, TreeParams(min_samples=5), np.random.default_rng(3))
        self.assertTrue(tree.root.is_leaf)
        rows = np.array(tree.root.estimation_rows)
        expected = np.mean(y[rows[w[rows] == 1]]) - np.mean(y[rows[w[rows] == 0]])
        self.assertEqual(tree.root.tau_hat, expected)
        self.assertEqual((tree.root.n_treated_est, tree.root.n_control_est), (5, 5))

    def test_too_few_rows_per_arm(self):
        X = np.zeros((15, 1))
        w = np.array([1] * 9 + [0] * 6)
        with self.assertRaises(FitError):
            fit_honest(X, np.ones(15), w, TreeParams(min_samples=5), np.random.default_rng(0))

    def test_max_depth_zero_is_a_stump(self):
        X, y, w = step_arrays()
        tree = fit_honest(X, y, w, TreeParams(min_samples=5, max_depth=0), np.random.default_rng(0))
        self.assertEqual(tree.height, 0)


class TestFitTree(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cohort = generate_cohort(small_cohort_spec())
        cls.data = cohort.participant("S01").concat(cohort.control())
        cls.params = TreeParams(min_samples=5, rng_seed=4)
        cls.tree = fit_tree(cls.data, cls.params)

    def test_deterministic(self):
        self.assertEqual(fit_tree(self.data, self.params).root, self.tree.root)

    def test_honesty(self):
        self.assertEqual(audit_honesty(self.tree, self.data.times, self.data.conditions), 0.0)
        splitting = set(self.tree.splitting_rows)
        for leaf in self.tree.leaves():
            self.assertFalse(splitting & set(leaf.estimation_rows))
            self.assertGreaterEqual(leaf.n_treated_est, self.params.min_samples)
            self.assertGreaterEqual(leaf.n_control_est, self.params.min_samples)

    def test_estimation_outcomes_do_not_move_structure(self):
        times = np.array(self.data.times)
        est = [i for leaf in self.tree.leaves() for i in leaf.estimation_rows]
        times[est] += 5.0
        refit = fit_tree(self.data.with_times(times), self.params)
        self.assertEqual(preorder_rules(refit.root), preorder_rules(self.tree.root))

    def test_treated_shift_moves_every_leaf(self):
        shift = np.where(self.data.conditions == 1, 0.7, 0.0)
        shifted = fit_tree(self.data.with_times(self.data.times + shift), self.params)
        self.assertEqual(preorder_rules(shifted.root), preorder_rules(self.tree.root))
        for a, b in zip(self.tree.leaves(), shifted.leaves()):
            self.assertLess(abs(b.tau_hat - a.tau_hat - 0.7), 1e-9)

    def test_common_shift_leaves_effects_unchanged(self):
        shifted = fit_tree(self.data.with_times(self.data.times + 0.4), self.params)
        self.assertEqual(preorder_rules(shifted.root), preorder_rules(self.tree.root))
        for a, b in zip(self.tree.leaves(), shifted.leaves()):
            self.assertLess(abs(b.tau_hat - a.tau_hat), 1e-9)

    def test_vectorized_predict_matches_single(self):
        X = sample_features(50)
        expected = [predict_tau(self.tree, x) for x in X]
        np.testing.assert_array_equal(self.tree.predict(X), expected)
        np.testing.assert_array_equal(self.tree.apply(X), [leaf_assignment(self.tree, x) for x in X])

    def test_empty_dataset_rejected(self):
        with self.assertRaises(FitError):
            fit_tree(self.data.subset([]), self.params)

    def test_serialization_round_trip(self):
        payload = json.loads(json.dumps(tree_to_dict(self.tree)))
        restored = tree_from_dict(payload)
        self.assertEqual(restored, self.tree)


class TestQueries(unittest.TestCase):
    def test_single_leaf(self):
        tree = CausalTree(Leaf(0, 1.5, 2, 2), 9, TreeParams())
        self.assertEqual(predict_tau(tree, np.zeros(9)), 1.5)
        self.assertEqual(leaf_assignment(tree, np.ones(9)), 0)

    def test_routing_is_strict_less_than(self):
        tree = CausalTree(Internal(SplitRule(2, 0.4), Leaf(0, 1.0, 5, 5), Leaf(1, 2.0, 5, 5)), 9, TreeParams())
        x = np.zeros(9)
        x[2] = 0.39
        self.assertEqual(predict_tau(tree, x), 1.0)
        x[2] = 0.4
        self.assertEqual(predict_tau(tree, x), 2.0)
        self.assertEqual(leaf_assignment(tree, x), 1)

    def test_dimension_mismatch(self):
        tree = CausalTree(Leaf(0, 1.5, 2, 2), 9, TreeParams())
        with self.assertRaises(DimensionError):
            predict_tau(tree, np.zeros(8))
        with self.assertRaises(DimensionError):
            leaf_assignment(tree, np.zeros(10))


class TestDepthPartition(unittest.TestCase):
    def setUp(self):
        self.tree = three_level_tree()

    def test_root_slice_is_weighted_mean(self):
        (entry,) = depth_k_partition(self.tree, 0)
        leaves = self.tree.leaves()
        weights = np.array([leaf.n_estimation for leaf in leaves])
        expected = np.sum(weights * [leaf.tau_hat for leaf in leaves]) / np.sum(weights)
        self.assertLess(abs(entry.tau_hat - expected), 1e-12)
        self.assertEqual(entry.leaf_count, 5)
        self.assertEqual(entry.n_estimation, int(np.sum(weights)))

    def test_deep_slice_is_the_leaves(self):
        entries = depth_k_partition(self.tree, 7)
        self.assertEqual([e.tau_hat for e in entries], [leaf.tau_hat for leaf in self.tree.leaves()])
        self.assertTrue(all(e.leaf_count == 1 for e in entries))

    def test_children_recombine_into_parent(self):
        (root,) = depth_k_partition(self.tree, 0)
        children = depth_k_partition(self.tree, 1)
        self.assertEqual(len(children), 2)
        total = sum(e.tau_hat * e.n_estimation for e in children) / sum(e.n_estimation for e in children)
        self.assertLess(abs(total - root.tau_hat), 1e-9)

    def test_every_slice_partitions_feature_space(self):
        X = sample_features(300, seed=9)
        for k in range(self.tree.height + 1):
            entries = depth_k_partition(self.tree, k)
            for x in X:
                self.assertEqual(sum(e.contains(x) for e in entries), 1)

    def test_negative_depth_rejected(self):
        with self.assertRaises(ValidationError):
            depth_k_partition(self.tree, -1)


if __name__ == "__main__":
    unittest.main()
