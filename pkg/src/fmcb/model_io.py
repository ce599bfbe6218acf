"""Model file format: versioned, checksummed, JSON-structured text.

Floats are emitted through Python's shortest round-trip repr, so a
serialize/deserialize cycle reproduces every score bit-exactly. The file
is self-describing and diff-able; a binary format is out of scope.
"""

from __future__ import annotations

import hashlib
import json
import math

import numpy as np

from .boost import BaselineModel, FmcbModel, Model
from .data import Dataset
from .tree import RegressionTree

__all__ = [
    "MODEL_FORMAT_VERSION",
    "ModelFormatError",
    "serialize_model",
    "deserialize_model",
    "save_model",
    "load_model",
    "read_provenance",
    "dataset_hash",
]

MODEL_FORMAT_VERSION = 1


class ModelFormatError(ValueError):
    """Raised for unreadable, mismatched, or corrupted model files."""


def dataset_hash(ds: Dataset) -> str:
    h = hashlib.sha256()
    h.update(ds.features.tobytes())
    h.update(ds.labels.tobytes())
    h.update("\x00".join(ds.label_names).encode())
    return h.hexdigest()


def _tree_to_obj(tree: RegressionTree) -> dict:
    return {
        "feature": tree.feature.tolist(),
        # JSON has no NaN literal; leaves carry null thresholds.
        "threshold": [None if math.isnan(x) else x for x in tree.threshold.tolist()],
        "left": tree.left.tolist(),
        "right": tree.right.tolist(),
        "value": tree.value.tolist(),
        "count": tree.count.tolist(),
        "max_depth_used": tree.max_depth_used,
    }


def _tree_from_obj(obj: dict, num_features: int) -> RegressionTree:
    try:
        return RegressionTree(
            feature=np.array(obj["feature"], dtype=np.int32),
            threshold=np.array([math.nan if x is None else x for x in obj["threshold"]]),
            left=np.array(obj["left"], dtype=np.int32),
            right=np.array(obj["right"], dtype=np.int32),
            value=np.array(obj["value"], dtype=np.float64),
            count=np.array(obj["count"], dtype=np.int64),
            max_depth_used=int(obj["max_depth_used"]),
            num_features=num_features,
        )
    except (KeyError, TypeError) as exc:
        raise ModelFormatError(f"malformed tree record: {exc}") from exc


def _model_payload(model: Model) -> dict:
    payload = {
        "algorithm": model.algorithm,
        "num_classes": model.num_classes,
        "alpha": model.alpha,
        "label_names": list(model.label_names),
        "num_features": model.num_features,
        "feature_names": list(model.feature_names) if model.feature_names else None,
    }
    if isinstance(model, FmcbModel):
        payload["b_vectors"] = model.b_vectors.tolist()
        payload["trees"] = [_tree_to_obj(t) for t in model.trees]
    else:
        payload["tree_groups"] = [[_tree_to_obj(t) for t in g] for g in model.tree_groups]
    return payload


def _checksum(payload: dict) -> str:
    canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()


def serialize_model(model: Model, provenance: dict | None = None) -> str:
    payload = _model_payload(model)
    doc = {
        "format_version": MODEL_FORMAT_VERSION,
        "checksum": _checksum(payload),
        "model": payload,
        "provenance": provenance,
    }
    return json.dumps(doc, separators=(",", ":")) + "\n"


def deserialize_model(text: str) -> Model:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"truncated or invalid model file: {exc}") from exc
    if not isinstance(doc, dict) or "format_version" not in doc:
        raise ModelFormatError("not a model file (missing format_version)")
    version = doc["format_version"]
    if version != MODEL_FORMAT_VERSION:
        raise ModelFormatError(
            f"model format version {version} not supported (expected {MODEL_FORMAT_VERSION})"
        )
    payload = doc.get("model")
    if not isinstance(payload, dict):
        raise ModelFormatError("missing model payload")
    stored = doc.get("checksum")
    if stored != _checksum(payload):
        raise ModelFormatError("checksum failure: model payload was modified or truncated")

    try:
        algorithm = payload["algorithm"]
        num_features = int(payload["num_features"])
        common = dict(
            alpha=float(payload["alpha"]),
            num_classes=int(payload["num_classes"]),
            label_names=tuple(payload["label_names"]),
            num_features=num_features,
            feature_names=tuple(payload["feature_names"]) if payload.get("feature_names") else None,
        )
        if algorithm == "fmcb":
            trees = [_tree_from_obj(t, num_features) for t in payload["trees"]]
            return FmcbModel(
                trees=trees,
                b_vectors=np.array(payload["b_vectors"], dtype=np.float64).reshape(
                    len(trees), common["num_classes"] - 1
                ),
                **common,
            )
        if algorithm in ("mlr", "ovr"):
            groups = [[_tree_from_obj(t, num_features) for t in g] for g in payload["tree_groups"]]
            return BaselineModel(algorithm=algorithm, tree_groups=groups, **common)
        raise ModelFormatError(f"unknown algorithm tag {algorithm!r}")
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ModelFormatError):
            raise
        raise ModelFormatError(f"malformed model payload: {exc}") from exc


def save_model(model: Model, path: str, provenance: dict | None = None) -> None:
    with open(path, "w") as fh:
        fh.write(serialize_model(model, provenance))


def load_model(path: str) -> Model:
    with open(path) as fh:
        return deserialize_model(fh.read())


def read_provenance(path: str) -> dict | None:
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ModelFormatError(f"truncated or invalid model file: {exc}") from exc
    return doc.get("provenance")
