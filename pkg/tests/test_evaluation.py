import json
import math
import unittest

import numpy as np

from modules import evaluation
from modules.core_model import ReachTarget
from modules.errors import ConfigError, ExperimentError, UndefinedGroundTruthError, UndefinedMetricError, ValidationError
from modules.evaluation import (
    CellResult,
    EvalConfig,
    ExperimentReport,
    ModelSpec,
    ModelSummary,
    aggregated_r2,
    cells_frame,
    derive_seed,
    format_report_table,
    ground_truth_tau,
    per_subject_mse,
    recovery_mse,
    report_json,
    run_experiment,
    split_train_test,
    standard_error,
)
from modules.synth import NominalTimeModel, generate_cohort, true_tau
from modules.workspace import generate_grid
from tests.helpers import make_dataset, noise_free_spec, small_cohort_spec


class FieldOracle:
    """Predicts the generating field exactly; stands in for a perfect model."""

    def __init__(self, field):
        self.field = field

    def predict(self, X):
        return np.array([true_tau(self.field, ReachTarget(*row[:3])) for row in np.atleast_2d(X)])


def fast_models():
    return (
        ModelSpec("causal_forest", "causal_forest", {"n_trees": 4, "min_samples": 5}),
        ModelSpec("causal_tree", "causal_tree", {"min_samples": 5}),
        ModelSpec.from_baseline({"variant": "tree"}),
    )


class TestGroundTruth(unittest.TestCase):
    def setUp(self):
        self.center = ReachTarget(0.0, 0.2, 0.1)
        self.participant = make_dataset([(0.0, 0.2, 0.1, 2.0, 1), (0.0, 0.2, 0.1, 4.0, 1)])
        self.control = make_dataset([(0.0, 0.2, 0.1, 1.0, 0)] * 3)

    def test_difference_of_ball_means(self):
        self.assertEqual(ground_truth_tau(self.participant, self.control, self.center, 0.05), 2.0)
        self.assertEqual(ground_truth_tau(self.control, self.participant, self.center, 0.05), -2.0)

    def test_empty_ball(self):
        far = ReachTarget(0.0, 0.3, 0.4)
        with self.assertRaises(UndefinedGroundTruthError):
            ground_truth_tau(self.participant, self.control, far, 0.05)

    def test_noise_free_cohort_matches_field(self):
        spec = noise_free_spec(n_post_stroke=1)
        cohort = generate_cohort(spec)
        participant, control = cohort.participant("S01"), cohort.control()
        for target in generate_grid(spec.workspace, *spec.grid):
            value = ground_truth_tau(participant, control, target, 0.05)
            self.assertLess(abs(value - true_tau(spec.difficulty_field, target)), 1e-9)


class TestSplitTrainTest(unittest.TestCase):
    def setUp(self):
        self.data = generate_cohort(small_cohort_spec(n_post_stroke=1)).participant("S01")

    def test_sizes_and_partition(self):
        train, test = split_train_test(self.data, 0.8, 3)
        self.assertEqual((len(train), len(test)), (240, 60))
        keys = lambda d: {(r.session, r.trial) for r in d}
        self.assertFalse(keys(train) & keys(test))
        self.assertEqual(keys(train) | keys(test), keys(self.data))

    def test_deterministic(self):
        self.assertEqual(split_train_test(self.data, 0.8, 3), split_train_test(self.data, 0.8, 3))
        self.assertNotEqual(split_train_test(self.data, 0.8, 3)[1], split_train_test(self.data, 0.8, 4)[1])

    def test_too_few_rows(self):
        with self.assertRaises(ValidationError):
            split_train_test(self.data.subset(range(4)), 0.8, 0)


class TestMetrics(unittest.TestCase):
    def test_mse(self):
        self.assertEqual(per_subject_mse([1, 2], [1, 4]), 2.0)
        self.assertEqual(per_subject_mse([3, 3], [3, 3]), 0.0)
        with self.assertRaises(ValidationError):
            per_subject_mse([1, 2], [1])

    def test_r2(self):
        self.assertEqual(aggregated_r2([0, 2], [0, 2]), 1.0)
        self.assertEqual(aggregated_r2([1, 1], [0, 2]), 0.0)
        with self.assertRaises(UndefinedMetricError):
            aggregated_r2([1, 2], [3, 3])

    def test_standard_error(self):
        self.assertEqual(standard_error([0.4]), 0.0)
        self.assertAlmostEqual(standard_error([1.0, 3.0]), 1.0)

    def test_derive_seed_is_stable(self):
        self.assertEqual(derive_seed(0, 1, 2), derive_seed(0, 1, 2))
        self.assertNotEqual(derive_seed(0, 1, 2), derive_seed(0, 2, 1))

    def test_recovery_mse_of_oracle(self):
        spec = small_cohort_spec()
        targets = generate_grid(spec.workspace, 5, 5, 4)
        self.assertEqual(recovery_mse(FieldOracle(spec.difficulty_field), spec.difficulty_field, targets), 0.0)


class TestEvalConfig(unittest.TestCase):
    def test_from_config(self):
        config = EvalConfig.from_config(
            {"n_seeds": 3, "base_seed": 10},
            [{"name": "cf", "kind": "causal_forest", "params": {"n_trees": 5}}],
            [{"variant": "knn", "params": {"n_neighbors": 5}}],
        )
        self.assertEqual(config.seed_list, [10, 11, 12])
        self.assertEqual([m.name for m in config.models], ["cf", "tlearner_knn"])

    def test_explicit_seeds(self):
        config = EvalConfig.from_config({"seeds": [4, 9]})
        self.assertEqual(config.seed_list, [4, 9])
        self.assertEqual(config.n_seeds, 2)

    def test_invalid(self):
        with self.assertRaises(ConfigError):
            EvalConfig(train_fraction=1.0)
        with self.assertRaises(ConfigError):
            EvalConfig.from_config({}, [{"kind": "svm"}])
        with self.assertRaises(ConfigError):
            EvalConfig(models=(ModelSpec("a", "causal_tree"), ModelSpec("a", "causal_forest")))

    def test_hash_tracks_settings(self):
        self.assertEqual(EvalConfig().config_hash(), EvalConfig().config_hash())
        self.assertNotEqual(EvalConfig().config_hash(), EvalConfig(ball_radius=0.06).config_hash())


class TestRunExperiment(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.cohort = generate_cohort(small_cohort_spec())
        cls.config = EvalConfig(n_seeds=2, models=fast_models())
        cls.report = run_experiment(cls.config, cls.cohort)

    def test_report_shape(self):
        self.assertEqual([s.model for s in self.report.summaries], ["causal_forest", "causal_tree", "tlearner_tree"])
        self.assertEqual(len(self.report.cells), 2 * 2 * 3)
        for summary in self.report.summaries:
            self.assertGreaterEqual(summary.mse_mean, 0.0)
            self.assertLessEqual(summary.r2_mean, 1.0)
            self.assertEqual(len(summary.per_seed_mse), 2)
        self.assertEqual(set(self.report.per_participant["causal_tree"]), {"S01", "S02"})

    def test_full_lattice_skips_nothing(self):
        self.assertEqual(self.report.n_skipped, 0)
        self.assertTrue(all(c.n_test == 60 for c in self.report.cells))

    def test_deterministic_and_schedule_free(self):
        again = run_experiment(self.config, self.cohort)
        self.assertEqual(report_json(again), report_json(self.report))
        parallel = run_experiment(self.config, self.cohort, n_jobs=2)
        self.assertEqual(report_json(parallel), report_json(self.report))

    def test_outputs(self):
        payload = json.loads(report_json(self.report))
        self.assertEqual(payload["provenance"]["seeds"], [0, 1])
        self.assertEqual(len(payload["cells"]), 12)
        frame = cells_frame(self.report)
        self.assertEqual(list(frame.columns), ["model", "participant", "seed", "mse", "n_test", "n_skipped"])
        table = format_report_table(self.report)
        self.assertIn("causal_forest", table)
        self.assertIn("±", table)

    def test_single_seed_has_zero_se(self):
        config = EvalConfig(n_seeds=1, models=fast_models()[1:2])
        summary = run_experiment(config, self.cohort).summaries[0]
        self.assertEqual((summary.mse_se, summary.r2_se), (0.0, 0.0))

    def test_tuning_holdout(self):
        config = EvalConfig(n_seeds=1, models=fast_models()[1:2], tuning_holdout=1)
        report = run_experiment(config, self.cohort)
        self.assertEqual(len({c.participant for c in report.cells}), 1)
        with self.assertRaises(ConfigError):
            run_experiment(EvalConfig(n_seeds=1, models=fast_models()[1:2], tuning_holdout=2), self.cohort)

    def test_fit_failure_names_the_cell(self):
        config = EvalConfig(n_seeds=1, models=(ModelSpec("greedy", "causal_tree", {"min_samples": 500}),))
        with self.assertRaises(ExperimentError) as ctx:
            run_experiment(config, self.cohort)
        self.assertEqual(ctx.exception.model, "greedy")
        self.assertIn("seed=0", str(ctx.exception))

    def test_unscored_model_is_null_in_json(self):
        cell = CellResult("knn", "S01", 0, math.nan, 0, 60, (), ())
        summary = ModelSummary("knn", math.nan, 0.0, math.nan, 0.0, (), ())
        report = ExperimentReport((summary,), (cell,), {"knn": {}}, 60, {"seeds": [0]})
        text = report_json(report)
        self.assertNotIn("NaN", text)
        payload = json.loads(text)
        self.assertIsNone(payload["summary"][0]["mse"])
        self.assertIsNone(payload["cells"][0]["mse"])

    def test_missing_arms(self):
        with self.assertRaises(ValidationError):
            run_experiment(self.config, self.cohort.treated())
        with self.assertRaises(ValidationError):
            run_experiment(self.config, self.cohort.control())


class TestDeepTreeRecovery(unittest.TestCase):
    """Noise-free cohorts scored with an unbounded honest causal tree."""

    def deep_tree_mse(self, nominal):
        spec = small_cohort_spec(nominal=nominal, p_distract=0.0)
        model = ModelSpec("deep_tree", "causal_tree", {"min_samples": 5, "max_depth": 10000})
        report = run_experiment(EvalConfig(n_seeds=3, models=(model,)), generate_cohort(spec))
        return report.summary("deep_tree").per_seed_mse

    def test_exact_when_nominal_time_is_constant(self):
        for mse in self.deep_tree_mse(NominalTimeModel(a=0.0, b=0.0, sigma=0.0)):
            self.assertLessEqual(mse, 1e-6)

    def test_bounded_when_nominal_time_varies(self):
        # leaf means mix targets whose nominal times differ, unevenly across arms
        for mse in self.deep_tree_mse(NominalTimeModel(sigma=0.0)):
            self.assertLessEqual(mse, 0.05)


class TestOracleModel(unittest.TestCase):
    def setUp(self):
        self.spec = noise_free_spec()
        evaluation.MODEL_KINDS["field_oracle"] = lambda spec, train, seed, **_: FieldOracle(self.spec.difficulty_field)

    def tearDown(self):
        evaluation.MODEL_KINDS.pop("field_oracle", None)

    def test_perfect_model_scores_perfectly(self):
        config = EvalConfig(n_seeds=2, models=(ModelSpec("oracle", "field_oracle"),))
        summary = run_experiment(config, generate_cohort(self.spec)).summary("oracle")
        self.assertLess(summary.mse_mean, 1e-18)
        self.assertLess(abs(summary.r2_mean - 1.0), 1e-12)
        self.assertFalse(math.isnan(summary.r2_se))


if __name__ == "__main__":
    unittest.main()
