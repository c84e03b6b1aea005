"""Server-side aggregation rules.

Every rule turns the round's client updates into ``gamma``, the list of
vectors whose uniform mean is added to the global model by
:func:`update_model`. Updates and histories are passed as ``{client_id:
vector}`` mappings; all iteration happens in ascending client-id order so
results never depend on dict insertion order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .exceptions import ConfigError, DimensionError, PreconditionError
from .linalg import as_vector, cosine_distance, cosine_similarity, elementwise_median, squared_euclidean
from .model import ModelState

__all__ = [
    "FixedThreshold",
    "DecayThreshold",
    "threshold_at",
    "GroupPartition",
    "AggregationOutcome",
    "safl_group",
    "safl_aggregate",
    "update_model",
    "fedavg",
    "krum_scores",
    "krum_select",
    "foolsgold_weights",
    "FedAvg",
    "Krum",
    "MultiKrum",
    "FoolsGold",
    "SaFL",
]


# --------------------------------------------------------------------------
# threshold schedules


@dataclass(frozen=True)
class FixedThreshold:
    nu: float

    def __post_init__(self):
        if not 0.0 < self.nu < 2.0:
            raise ConfigError(f"fixed threshold must lie in (0, 2), got {self.nu}")


@dataclass(frozen=True)
class DecayThreshold:
    """``lam * (1 - r) ** t``."""

    lam: float = 0.8
    r: float = 0.001

    def __post_init__(self):
        if not 0.0 < self.lam < 2.0:
            raise ConfigError(f"decay lambda must lie in (0, 2), got {self.lam}")
        if not 0.0 < self.r < 1.0:
            raise ConfigError(f"decay rate must lie in (0, 1), got {self.r}")


ThresholdSchedule = FixedThreshold | DecayThreshold


def threshold_at(schedule: ThresholdSchedule, t: int) -> float:
    if t < 0:
        raise PreconditionError("round index must be non-negative")
    if isinstance(schedule, FixedThreshold):
        return float(schedule.nu)
    return schedule.lam * (1.0 - schedule.r) ** t


# --------------------------------------------------------------------------
# outcome types


@dataclass(frozen=True)
class GroupPartition:
    groups: tuple[tuple[int, ...], ...]
    singletons: tuple[int, ...]
    threshold_used: float

    def __post_init__(self):
        seen: set[int] = set()
        for g in self.groups:
            if len(g) < 2:
                raise PreconditionError(f"group {g} has fewer than two members")
            if seen & set(g):
                raise PreconditionError("groups overlap")
            seen |= set(g)
        if seen & set(self.singletons):
            raise PreconditionError("a client is both grouped and a singleton")

    @property
    def grouped_ids(self) -> list[int]:
        return sorted(i for g in self.groups for i in g)

    def to_dict(self) -> dict:
        return {
            "threshold": self.threshold_used,
            "groups": [list(g) for g in self.groups],
            "singletons": list(self.singletons),
        }


@dataclass
class AggregationOutcome:
    gamma: list[np.ndarray]
    diagnostics: dict = field(default_factory=dict)
    partition: GroupPartition | None = None


def _sorted_ids(vectors: Mapping[int, np.ndarray]) -> list[int]:
    if not vectors:
        raise PreconditionError("no updates were submitted")
    ids = sorted(vectors)
    d = as_vector(vectors[ids[0]]).size
    for i in ids:
        if as_vector(vectors[i]).size != d:
            raise DimensionError(f"client {i} sent {vectors[i].size} values, expected {d}")
    return ids


# --------------------------------------------------------------------------
# SaFL


def _distance_matrix(ids: list[int], vectors: Mapping[int, np.ndarray]) -> np.ndarray:
    n = len(ids)
    dist = np.zeros((n, n))
    for a in range(n):
        for b in range(a + 1, n):
            dist[a, b] = dist[b, a] = cosine_distance(vectors[ids[a]], vectors[ids[b]])
    return dist


def safl_group(
    vectors: Mapping[int, np.ndarray],
    nu: float,
    grouping: str = "components",
) -> GroupPartition:
    """Partition clients into groups of mutually close vectors.

    ``components``: connected components of the graph with an edge wherever
    the cosine distance is strictly below ``nu``.

    ``literal``: scan pairs ``i < j`` in id order and pair up two clients
    when they are close and neither is grouped yet (groups of exactly two).
    """
    ids = _sorted_ids(vectors)
    dist = _distance_matrix(ids, vectors)
    close = dist < nu
    np.fill_diagonal(close, False)
    n = len(ids)

    if grouping == "components":
        label = [-1] * n
        for start in range(n):
            if label[start] >= 0:
                continue
            label[start] = start
            stack = [start]
            while stack:
                a = stack.pop()
                for b in np.flatnonzero(close[a]):
                    if label[b] < 0:
                        label[b] = start
                        stack.append(int(b))
        members: dict[int, list[int]] = {}
        for pos, root in enumerate(label):
            members.setdefault(root, []).append(ids[pos])
        groups = tuple(tuple(m) for m in members.values() if len(m) > 1)
    elif grouping == "literal":
        taken = [False] * n
        found = []
        for a in range(n):
            for b in range(a + 1, n):
                if close[a, b] and not taken[a] and not taken[b]:
                    taken[a] = taken[b] = True
                    found.append((ids[a], ids[b]))
        groups = tuple(found)
    else:
        raise ConfigError(f"unknown grouping mode {grouping!r}")

    grouped = {i for g in groups for i in g}
    singletons = tuple(i for i in ids if i not in grouped)
    return GroupPartition(tuple(sorted(groups)), singletons, float(nu))


def safl_aggregate(
    updates: Mapping[int, np.ndarray],
    histories: Mapping[int, np.ndarray],
    t: int,
    schedule: ThresholdSchedule,
    *,
    distance_basis: str = "accumulated",
    grouping: str = "components",
    selection_basis: str = "current",
) -> AggregationOutcome:
    """Group suspected colluders and keep one element-wise median per group.

    gamma holds one entry per group or singleton, ordered by the smallest
    client id it contains.
    """
    ids = _sorted_ids(updates)
    if sorted(histories) != ids:
        raise PreconditionError("updates and histories must cover the same clients")
    bases = {"accumulated": histories, "current": updates}
    if distance_basis not in bases or selection_basis not in bases:
        raise ConfigError("distance/selection basis must be 'accumulated' or 'current'")
    nu = threshold_at(schedule, t)
    partition = safl_group({i: bases[distance_basis][i] for i in ids}, nu, grouping)
    select = bases[selection_basis]

    entries = [(i, as_vector(select[i])) for i in partition.singletons]
    entries += [(min(g), elementwise_median([select[i] for i in g])) for g in partition.groups]
    entries.sort(key=lambda e: e[0])
    return AggregationOutcome(
        gamma=[v for _, v in entries],
        diagnostics=partition.to_dict(),
        partition=partition,
    )


# --------------------------------------------------------------------------
# model update and the baselines


def update_model(w_prev: ModelState, gamma: Sequence[np.ndarray], server_lr: float = 1.0) -> ModelState:
    """``w_prev + server_lr * mean(gamma)``, summed in list order."""
    if len(gamma) == 0:
        raise PreconditionError("gamma is empty")
    total = np.zeros_like(w_prev.params)
    for v in gamma:
        v = as_vector(v)
        if v.shape != total.shape:
            raise DimensionError(f"update length {v.size} != model length {total.size}")
        total += v
    return w_prev.with_params(w_prev.params + server_lr * (total / len(gamma)))


def fedavg(updates: Mapping[int, np.ndarray]) -> AggregationOutcome:
    ids = _sorted_ids(updates)
    return AggregationOutcome([as_vector(updates[i]) for i in ids])


def krum_scores(updates: Mapping[int, np.ndarray], f: int) -> dict[int, float]:
    """Sum of squared distances to the ``N - f - 2`` nearest peers."""
    ids = _sorted_ids(updates)
    n = len(ids)
    if f < 0 or n < f + 3:
        raise ConfigError(f"Krum needs N >= f + 3 (N={n}, f={f})")
    k = n - f - 2
    dist = np.zeros((n, n))
    for a in range(n):
        for b in range(a + 1, n):
            dist[a, b] = dist[b, a] = squared_euclidean(updates[ids[a]], updates[ids[b]])
    scores = {}
    for a in range(n):
        # stable sort on distance keeps lower ids first among equal distances
        peers = sorted((b for b in range(n) if b != a), key=lambda b: dist[a, b])[:k]
        total = 0.0
        for b in peers:
            total += dist[a, b]
        scores[ids[a]] = total
    return scores


def krum_select(updates: Mapping[int, np.ndarray], f: int, m: int | None = 1) -> AggregationOutcome:
    """Krum (``m=1``) or Multi-Krum (``m`` lowest scores; ``None`` means N-f-2)."""
    scores = krum_scores(updates, f)
    n = len(scores)
    if m is None:
        m = n - f - 2
    if not 1 <= m <= n:
        raise ConfigError(f"Multi-Krum m must lie in [1, {n}], got {m}")
    ranked = sorted(scores, key=lambda i: (scores[i], i))
    selected = sorted(ranked[:m])
    return AggregationOutcome(
        [as_vector(updates[i]) for i in selected],
        diagnostics={"scores": {str(i): scores[i] for i in sorted(scores)}, "selected": selected},
    )


def foolsgold_weights(histories: Mapping[int, np.ndarray], kappa: float = 1.0) -> dict[int, float]:
    """Per-client learning-rate weights from history similarity.

    Pipeline: pairwise cosine similarity, pardoning of less-suspicious
    clients, ``1 - max similarity``, rescale by the maximum, logit with
    confidence ``kappa``, clip to [0, 1].
    """
    ids = _sorted_ids(histories)
    n = len(ids)
    if n < 2:
        raise ConfigError("FoolsGold needs at least two clients")
    if kappa <= 0:
        raise ConfigError("kappa must be positive")
    cs = np.full((n, n), -np.inf)
    for a in range(n):
        for b in range(a + 1, n):
            cs[a, b] = cs[b, a] = cosine_similarity(histories[ids[a]], histories[ids[b]])
    maxcs = cs.max(axis=1)
    pardoned = cs.copy()
    for a in range(n):
        for b in range(n):
            # only shrink similarities; a non-positive max means nothing to pardon
            if a != b and 0.0 < maxcs[a] < maxcs[b]:
                pardoned[a, b] = cs[a, b] * maxcs[a] / maxcs[b]
    alpha = np.clip(1.0 - pardoned.max(axis=1), 0.0, 1.0)
    top = alpha.max()
    alpha = alpha / top if top > 0 else alpha

    weights = {}
    for i, a in zip(ids, alpha):
        if a >= 1.0:
            w = 1.0
        elif a <= 0.0:
            w = 0.0
        else:
            w = kappa * (math.log(a / (1.0 - a)) + 0.5)
            w = min(1.0, max(0.0, w))
        weights[i] = w
    return weights


# --------------------------------------------------------------------------
# rule objects used by the simulator


class FedAvg:
    name = "fedavg"
    uses_history = False

    def __call__(self, updates, histories, t):
        return fedavg(updates)

    def to_dict(self):
        return {"kind": self.name}


@dataclass
class Krum:
    f: int = 0
    name = "krum"
    uses_history = False

    def __call__(self, updates, histories, t):
        return krum_select(updates, self.f, 1)

    def to_dict(self):
        return {"kind": self.name, "f": self.f}


@dataclass
class MultiKrum:
    f: int = 0
    m: int | None = None
    name = "multikrum"
    uses_history = False

    def __call__(self, updates, histories, t):
        return krum_select(updates, self.f, self.m)

    def to_dict(self):
        return {"kind": self.name, "f": self.f, "m": self.m}


@dataclass
class FoolsGold:
    kappa: float = 1.0
    name = "foolsgold"
    uses_history = True

    def __call__(self, updates, histories, t):
        ids = _sorted_ids(updates)
        if len(ids) < 2:
            # nothing to compare against yet
            weights = {i: 1.0 for i in ids}
        else:
            weights = foolsgold_weights({i: histories[i] for i in ids}, self.kappa)
        return AggregationOutcome(
            [weights[i] * as_vector(updates[i]) for i in ids],
            diagnostics={"weights": {str(i): weights[i] for i in ids}},
        )

    def to_dict(self):
        return {"kind": self.name, "kappa": self.kappa}


@dataclass
class SaFL:
    schedule: ThresholdSchedule = field(default_factory=DecayThreshold)
    distance_basis: str = "accumulated"
    grouping: str = "components"
    selection_basis: str = "current"
    name = "safl"
    uses_history = True

    def __call__(self, updates, histories, t):
        return safl_aggregate(
            updates,
            histories,
            t,
            self.schedule,
            distance_basis=self.distance_basis,
            grouping=self.grouping,
            selection_basis=self.selection_basis,
        )

    def to_dict(self):
        if isinstance(self.schedule, FixedThreshold):
            threshold = self.schedule.nu
        else:
            threshold = {"decay_lambda": self.schedule.lam, "decay_rate": self.schedule.r}
        return {
            "kind": self.name,
            "threshold": threshold,
            "distance_basis": self.distance_basis,
            "grouping": self.grouping,
            "selection_basis": self.selection_basis,
        }
