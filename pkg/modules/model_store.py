import json
import logging

from modules.baselines import TLearner, tlearner_from_dict, tlearner_to_dict
from modules.causal_forest import CausalForest, forest_from_dict, forest_to_dict
from modules.causal_tree import CausalTree, tree_from_dict, tree_to_dict
from modules.core_model import FEATURE_NAMES
from modules.errors import ValidationError

logger = logging.getLogger(__name__)

_CODECS = {
    "causal_forest": (CausalForest, forest_to_dict, forest_from_dict),
    "causal_tree": (CausalTree, tree_to_dict, tree_from_dict),
    "tlearner": (TLearner, tlearner_to_dict, tlearner_from_dict),
}


def model_kind(model):
    """Kind tag stored alongside a serialized model."""
    for kind, (cls, _, _) in _CODECS.items():
        if isinstance(model, cls):
            return kind
    raise ValidationError(f"cannot serialize {type(model).__name__}")


def model_to_json(model, metadata=None):
    """Tagged JSON text for a fitted model."""
    kind = model_kind(model)
    payload = {
        "kind": kind,
        "feature_names": list(FEATURE_NAMES),
        "metadata": dict(metadata or {}),
        "model": _CODECS[kind][1](model),
    }
    return json.dumps(payload, sort_keys=True) + "\n"


def model_from_json(text):
    """Rebuild a model from model_to_json output."""
    payload = json.loads(text)
    kind = payload.get("kind")
    if kind not in _CODECS:
        raise ValidationError(f"unknown model kind {kind!r} in model file")
    return _CODECS[kind][2](payload["model"])


def save_model(model, path, metadata=None):
    """Write a fitted model with its metadata to a JSON file."""
    with open(path, "w", encoding="utf-8") as file:
        file.write(model_to_json(model, metadata))
    logger.info("Saved %s model to %s", model_kind(model), path)


def load_model(path):
    """Read a model written by save_model."""
    with open(path, "r", encoding="utf-8") as file:
        return model_from_json(file.read())
