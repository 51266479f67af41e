"""JSON model files.

A model file is one JSON object::

    {"schema_version": "1", "created_by": {...}, "method": ..., "arm_labels": [...],
     "feature_names": [...], "seed": ..., "components": [...], ...}

Keys are sorted and floats use their shortest round-trip form, so
save -> load -> save reproduces the same bytes.
"""

import json
from pathlib import Path

from . import __version__
from .errors import DataError, ModelFormatError
from .meta import CateModel

SCHEMA_VERSION = "1"


def model_to_json(model):
    obj = model.to_dict()
    obj["schema_version"] = SCHEMA_VERSION
    obj["created_by"] = {"package": "upliftkit", "version": __version__}
    return json.dumps(obj, sort_keys=True, separators=(",", ":")) + "\n"


def model_from_json(text):
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"model file is not valid JSON: {exc}") from exc
    if not isinstance(obj, dict):
        raise ModelFormatError("model file must hold a JSON object")
    version = obj.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ModelFormatError(
            f"unsupported schema_version {version!r}; expected {SCHEMA_VERSION!r}")
    return CateModel.from_dict(obj)


def save_model(model, path):
    try:
        Path(path).write_text(model_to_json(model), encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot write model to {path}: {exc}") from exc


def load_model(path):
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read model file {path}: {exc}") from exc
    return model_from_json(text)
