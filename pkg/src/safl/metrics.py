"""Attack success rate and poisoning-rate diagnostics."""

from __future__ import annotations

from typing import Iterable

import numpy as np

from .data import Dataset
from .exceptions import ConfigError
from .model import ModelState, predict

__all__ = [
    "attack_success_rate",
    "attack_rate_from_confusion",
    "estimated_poisoning_rate",
    "true_poisoning_rate",
]


def attack_rate_from_confusion(confusion: np.ndarray, source_class: int, target_class: int) -> float:
    row = confusion[source_class]
    total = int(row.sum())
    if total == 0:
        raise ConfigError(f"no test examples of source class {source_class}")
    return int(row[target_class]) / total


def attack_success_rate(m: ModelState, test: Dataset, source_class: int, target_class: int) -> float:
    """Fraction of source-class test examples predicted as the target class."""
    idx = test.class_indices(source_class)
    if idx.size == 0:
        raise ConfigError(f"no test examples of source class {source_class}")
    pred = predict(m, test.features[idx])
    return int(np.count_nonzero(pred == target_class)) / idx.size


def estimated_poisoning_rate(diagnostics: dict | None) -> float | None:
    """Share of submitting clients that SaFL put into a group.

    Returns ``None`` when the round has no SaFL grouping diagnostics.
    """
    if not diagnostics or "groups" not in diagnostics:
        return None
    grouped = sum(len(g) for g in diagnostics["groups"])
    total = grouped + len(diagnostics["singletons"])
    return grouped / total if total else 0.0


def true_poisoning_rate(active_roles: Iterable[bool]) -> float:
    """Share of active clients that are sybils; ``active_roles`` holds ``is_sybil`` flags."""
    flags = list(active_roles)
    return sum(flags) / len(flags) if flags else 0.0
