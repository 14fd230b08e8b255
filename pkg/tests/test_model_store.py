import json
import os
import tempfile
import unittest

import numpy as np

from modules.baselines import RegressorParams, tlearner_fit
from modules.causal_forest import ForestParams, fit_forest
from modules.causal_tree import TreeParams, fit_tree
from modules.errors import ValidationError
from modules.model_store import load_model, model_from_json, model_kind, model_to_json, save_model
from modules.synth import generate_cohort
from tests.helpers import sample_features, small_cohort_spec


class TestModelStore(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cohort = generate_cohort(small_cohort_spec(n_post_stroke=1))
        cls.data = cohort
        cls.X = sample_features(40)
        cls.models = {
            "causal_forest": fit_forest(cohort, ForestParams(n_trees=3, tree_params=TreeParams(min_samples=5))),
            "causal_tree": fit_tree(cohort, TreeParams(min_samples=5)),
            "tlearner_tree": tlearner_fit(cohort, RegressorParams(variant="tree")),
            "tlearner_forest": tlearner_fit(cohort, RegressorParams(variant="forest", forest={"n_estimators": 5})),
            "tlearner_knn": tlearner_fit(cohort, RegressorParams(variant="knn")),
        }

    def test_round_trip_keeps_predictions(self):
        for name, model in self.models.items():
            with self.subTest(model=name):
                restored = model_from_json(model_to_json(model))
                np.testing.assert_array_equal(restored.predict(self.X), model.predict(self.X))

    def test_file_round_trip_and_metadata(self):
        model = self.models["causal_tree"]
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "model.json")
            save_model(model, path, {"participant_id": "S01"})
            with open(path, encoding="utf-8") as file:
                payload = json.load(file)
            self.assertEqual(payload["kind"], "causal_tree")
            self.assertEqual(payload["metadata"], {"participant_id": "S01"})
            self.assertEqual(len(payload["feature_names"]), 9)
            self.assertEqual(load_model(path), model)

    def test_kinds(self):
        self.assertEqual(model_kind(self.models["tlearner_knn"]), "tlearner")
        with self.assertRaises(ValidationError):
            model_kind(object())
        with self.assertRaises(ValidationError):
            model_from_json(json.dumps({"kind": "svm", "model": {}}))


if __name__ == "__main__":
    unittest.main()
