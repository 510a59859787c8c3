"""Python bindings for the hipss library.

Commands take a config dict (missing keys fall back to defaults) and return
``(output, summary, path)`` where ``output`` is the JSON artifact as a dict.
"""

import json

from . import _hipss
from ._hipss import (
    ConfigError,
    DataError,
    NumericError,
    ShapeError,
    attach_depth,
    auc,
    cosine,
    count_trainable,
    dice,
    refinement_score,
    softmax,
    ssf_forward,
)

__all__ = [
    "ConfigError",
    "DataError",
    "NumericError",
    "ShapeError",
    "attach_depth",
    "auc",
    "cosine",
    "count_trainable",
    "default_config",
    "dice",
    "evaluate",
    "generate",
    "gradcheck",
    "localize",
    "merge",
    "params",
    "refinement_score",
    "softmax",
    "ssf_forward",
    "train",
]


def default_config():
    return json.loads(_hipss.default_config())


def _dump(config):
    return json.dumps(config or {})


def _result(raw):
    output, summary, path = raw
    return json.loads(output), summary, path


def generate(config=None):
    return _result(_hipss.generate(_dump(config)))


def train(config=None):
    return _result(_hipss.train(_dump(config)))


def evaluate(config=None, checkpoint=None, split="test"):
    checkpoint = None if checkpoint is None else str(checkpoint)
    return _result(_hipss.evaluate(_dump(config), checkpoint, split))


def localize(config, checkpoint, split="test"):
    return _result(_hipss.localize(_dump(config), str(checkpoint), split))


def gradcheck(config=None):
    return _result(_hipss.gradcheck(_dump(config)))


def merge(config, checkpoint, output=None):
    output = None if output is None else str(output)
    return _result(_hipss.merge(_dump(config), str(checkpoint), output))


def params(config=None):
    return _result(_hipss.params(_dump(config)))
