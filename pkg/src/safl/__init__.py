"""Federated learning under sybil label-flipping attacks.

Aggregation rules (FedAvg, Krum/Multi-Krum, FoolsGold, SaFL), a deterministic
round-loop simulator, and a scikit-learn style :class:`FederatedClassifier`.
"""

from .aggregation import (
    DecayThreshold,
    FedAvg,
    FixedThreshold,
    FoolsGold,
    Krum,
    MultiKrum,
    SaFL,
    threshold_at,
)
from .config import ExperimentConfig, config_from_dict, parse_config
from .exceptions import ConfigError, DimensionError, FormatError, PreconditionError, SaflError
from .simulator import Simulation, run_experiment

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "DecayThreshold",
    "DimensionError",
    "ExperimentConfig",
    "FedAvg",
    "FixedThreshold",
    "FoolsGold",
    "FormatError",
    "Krum",
    "MultiKrum",
    "PreconditionError",
    "SaFL",
    "SaflError",
    "Simulation",
    "config_from_dict",
    "parse_config",
    "run_experiment",
    "threshold_at",
]
