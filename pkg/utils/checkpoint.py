import json
import logging
import os

from network.Mlp import ParameterSet
from utils.errors import DependencyError, SchemaError

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = "gmah-ckpt-1"


def save_checkpoint(path, kind, spec, params, meta=None):
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    document = {
        "version": CHECKPOINT_VERSION,
        "kind": kind,
        "spec": spec,
        "params": params.to_dict(),
        "meta": meta or {},
    }
    with open(path, "w") as f:
        json.dump(document, f)
    log.debug("saved {} checkpoint to {}".format(kind, path))
    return path


def load_checkpoint(path, kind=None):
    if not os.path.isfile(path):
        raise DependencyError("checkpoint {} does not exist; run the earlier stage first".format(path))
    with open(path) as f:
        document = json.load(f)
    if document.get("version") != CHECKPOINT_VERSION:
        raise SchemaError("{} has version {!r}, expected {}".format(path, document.get("version"), CHECKPOINT_VERSION))
    if kind is not None and document.get("kind") != kind:
        raise SchemaError("{} holds a {!r} checkpoint, expected {!r}".format(path, document.get("kind"), kind))
    document["params"] = ParameterSet.from_dict(document["params"])
    return document
