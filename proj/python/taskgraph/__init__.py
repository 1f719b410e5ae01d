"""Task relationships from learned representations: estimators, oracles and file formats."""

import json

import numpy as np

from . import _taskgraph
from ._taskgraph import (
    FitError,
    IoError,
    SolverError,
    TrainingError,
    ValidationError,
    __version__,
    bayes_risk_01,
    deficiency,
    discrete_mi,
    grassmann_distance,
    kendall_tau,
    predictive_power,
    read_block,
    read_store,
    write_block,
)

__all__ = [
    "FitError",
    "IoError",
    "SolverError",
    "TrainingError",
    "ValidationError",
    "__version__",
    "bayes_risk_01",
    "deficiency",
    "discrete_mi",
    "grassmann_distance",
    "information_sufficiency",
    "kendall_tau",
    "predictive_power",
    "read_block",
    "read_store",
    "validate_store",
    "write_block",
    "write_store",
]


def information_sufficiency(source, target, seed=0, **knife):
    """Estimate IS(source -> target) in nats. Keyword arguments override KNIFE settings."""
    raw = _taskgraph.information_sufficiency(
        np.asarray(source, dtype=float), np.asarray(target, dtype=float), json.dumps(knife), seed
    )
    return json.loads(raw)


def write_store(directory, model_id, task_id, layers, labels=None):
    """Write an embedding store. `layers` maps layer index to an (N, d) array."""
    pairs = [(int(k), np.asarray(v, dtype=float)) for k, v in sorted(layers.items())]
    raw = _taskgraph.write_store(str(directory), model_id, task_id, pairs, list(labels or []))
    return json.loads(raw)


def validate_store(directory):
    """Check a store against its manifest; returns the per-file report."""
    return json.loads(_taskgraph.validate_store(str(directory)))
