"""Round loop: honest clients, sybils, aggregation and per-round metrics."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import metrics
from .aggregation import update_model
from .config import AdversaryConfig, ExperimentConfig
from .data import Dataset, Shard, build_sybil_shards, generate_synthetic, load_idx, partition_non_iid
from .exceptions import ConfigError, SaflError
from .linalg import accumulate
from .model import ModelArch, ModelState, evaluate, init_model, local_train

__all__ = [
    "seed_derivation",
    "ClientSpec",
    "RoundRecord",
    "Simulation",
    "build_datasets",
    "run_experiment",
]

_MASK = (1 << 64) - 1
_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3


def _splitmix64(z: int) -> int:
    z = (z + 0x9E3779B97F4A7C15) & _MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def seed_derivation(master: int, label: str, client_id: int = 0, round_: int = 0) -> int:
    """Derive an independent 64-bit stream seed.

    64-bit FNV-1a over the UTF-8 label, then the master seed, client id and
    round are each xor-ed in and passed through the splitmix64 finalizer.
    """
    h = _FNV_OFFSET
    for byte in label.encode():
        h = ((h ^ byte) * _FNV_PRIME) & _MASK
    for part in (master, client_id, round_):
        h = _splitmix64(h ^ (part & _MASK))
    return h


@dataclass(frozen=True)
class ClientSpec:
    id: int
    role: str  # "honest" or "sybil"
    shard: Shard | None = None
    adversary: int | None = None
    source_class: int | None = None
    target_class: int | None = None
    strategy: str = "label_flip"
    victim_client: int | None = None
    join_round: int = 0
    leave_round: int | None = None

    @property
    def is_sybil(self) -> bool:
        return self.role == "sybil"

    @property
    def is_copycat(self) -> bool:
        return self.is_sybil and self.victim_client is not None

    def active_at(self, t: int) -> bool:
        return self.join_round <= t and (self.leave_round is None or t < self.leave_round)


@dataclass
class RoundRecord:
    round: int
    train_loss: float
    train_accuracy: float
    val_loss: float
    val_accuracy: float
    attack_rates: dict[str, float]
    est_poison_rate: float | None
    true_poison_rate: float
    threshold: float | None
    diagnostics: dict = field(default_factory=dict)
    wall_time: float = 0.0


def build_datasets(cfg: ExperimentConfig) -> tuple[Dataset, Dataset]:
    d = cfg.data
    if d.source == "synthetic":
        return generate_synthetic(
            d.num_classes, d.input_dim, d.per_class, d.spread, seed_derivation(cfg.seed, "data")
        )
    full = load_idx(d.images_path, d.labels_path, d.limit_per_class)
    # first 80% of each class (file order) trains, the rest is held out
    is_train = np.zeros(len(full), dtype=bool)
    for c in range(full.num_classes):
        idx = full.class_indices(c)
        is_train[idx[: max(1, int(round(0.8 * idx.size)))]] = True
    if not np.any(~is_train):
        raise ConfigError("idx data too small to hold out a test split")
    split = lambda mask: Dataset(
        full.features[mask].copy(), full.labels[mask].copy(), full.num_classes, "idx-file"
    )
    return split(is_train), split(~is_train)


def _attack_key(adv: AdversaryConfig, target: int, shared_targets: set[int]) -> str:
    if target in shared_targets:
        return f"attack_rate_{target}_src{adv.source_class}"
    return f"attack_rate_{target}"


class Simulation:
    """Mutable state of one experiment, advanced one round at a time."""

    def __init__(self, cfg: ExperimentConfig, train: Dataset | None = None, test: Dataset | None = None):
        cfg.validate()
        if train is None or test is None:
            train, test = build_datasets(cfg)
        if train.num_classes != cfg.num_honest:
            raise ConfigError(
                f"num_honest ({cfg.num_honest}) must equal the number of classes "
                f"({train.num_classes}): one honest client per class"
            )
        self.cfg = cfg
        self.train = train
        self.test = test
        self.arch = ModelArch(train.input_dim, train.num_classes, cfg.model_hidden_dim)
        self.aggregator = cfg.aggregator.build()
        self.clients = self._build_clients()
        self.model = init_model(self.arch, seed_derivation(cfg.seed, "init"))
        self.histories: dict[int, np.ndarray] = {}
        self.round = 0

        # (adversary index, source, target, column name) per attack metric
        counts: dict[int, int] = {}
        for adv in cfg.adversaries:
            for tgt in adv.distinct_targets:
                counts[tgt] = counts.get(tgt, 0) + 1
        shared = {t for t, c in counts.items() if c > 1}
        self.attacks = [
            (n, adv.source_class, tgt, _attack_key(adv, tgt, shared))
            for n, adv in enumerate(cfg.adversaries)
            for tgt in adv.distinct_targets
        ]
        for _, source, _, _ in self.attacks:
            if test.class_indices(source).size == 0:
                raise ConfigError(f"test split has no examples of source class {source}")

    def _build_clients(self) -> list[ClientSpec]:
        cfg = self.cfg
        clients = [ClientSpec(s.owner, "honest", s) for s in partition_non_iid(self.train, cfg.num_honest)]
        next_id = cfg.num_honest
        for n, adv in enumerate(cfg.adversaries):
            ids = list(range(next_id, next_id + adv.num_sybils))
            next_id += adv.num_sybils
            common = dict(
                adversary=n,
                source_class=adv.source_class,
                join_round=adv.join_round,
                leave_round=adv.leave_round,
                strategy=adv.strategy,
            )
            if adv.strategy == "mimicry":
                victim = adv.victim_client if adv.victim_client is not None else adv.target_class
                clients.append(ClientSpec(ids[0], "sybil", victim_client=victim, **common))
                ids = ids[1:]
            seed = seed_derivation(cfg.seed, "sybil", n)
            targets = adv.targets
            if len(set(targets)) == 1:
                shards = build_sybil_shards(
                    self.train, adv.source_class, targets[0], len(ids), seed,
                    owners=ids, duplicate_poison_data=adv.duplicate_poison_data,
                )
            else:
                # one sybil per target; the source data is divided the same way
                parts = build_sybil_shards(
                    self.train, adv.source_class, targets[0], len(ids), seed,
                    owners=ids, duplicate_poison_data=adv.duplicate_poison_data,
                )
                shards = [Shard(p.owner, p.indices, tgt) for p, tgt in zip(parts, targets)]
            for shard in shards:
                clients.append(
                    ClientSpec(shard.owner, "sybil", shard, target_class=shard.label_override, **common)
                )
        clients.sort(key=lambda c: c.id)
        return clients

    def active_clients(self, t: int) -> list[ClientSpec]:
        return [c for c in self.clients if c.active_at(t)]

    def evaluate_round(self, t: int, diagnostics: dict, active: list[ClientSpec]) -> RoundRecord:
        tr = evaluate(self.model, self.train.features, self.train.labels)
        te = evaluate(self.model, self.test.features, self.test.labels)
        rates = {
            key: metrics.attack_rate_from_confusion(te.confusion, source, target)
            for _, source, target, key in self.attacks
        }
        return RoundRecord(
            round=t,
            train_loss=tr.loss,
            train_accuracy=tr.accuracy,
            val_loss=te.loss,
            val_accuracy=te.accuracy,
            attack_rates=rates,
            est_poison_rate=metrics.estimated_poisoning_rate(diagnostics),
            true_poison_rate=metrics.true_poisoning_rate(c.is_sybil for c in active),
            threshold=diagnostics.get("threshold"),
            diagnostics=diagnostics,
        )

    def client_updates(self, t: int, active: list[ClientSpec]) -> dict[int, np.ndarray]:
        cfg = self.cfg
        updates: dict[int, np.ndarray] = {}
        for c in active:
            if c.is_copycat:
                continue
            X, y = c.shard.view(self.train)
            updates[c.id] = local_train(
                self.model, X, y, cfg.local, seed_derivation(cfg.seed, "train", c.id, t)
            )
        for c in active:
            # eavesdropped same-round copy of the victim's update
            if c.is_copycat and c.victim_client in updates:
                updates[c.id] = updates[c.victim_client].copy()
        return updates

    def run_round(self) -> RoundRecord:
        t = self.round + 1
        start = time.perf_counter()
        updates = self.client_updates(t, self.active_clients(t))
        # a copycat whose victim is absent submits nothing
        active = [c for c in self.clients if c.id in updates]
        for i, u in updates.items():
            self.histories[i] = accumulate(self.histories[i], u) if i in self.histories else u.copy()
        try:
            outcome = self.aggregator(updates, {i: self.histories[i] for i in updates}, t)
        except SaflError as exc:
            raise type(exc)(f"round {t}: {exc}") from exc
        self.model = update_model(self.model, outcome.gamma, self.cfg.server_lr)
        self.round = t
        record = self.evaluate_round(t, outcome.diagnostics, active)
        record.wall_time = time.perf_counter() - start
        return record

    def initial_record(self) -> RoundRecord:
        return self.evaluate_round(0, {}, self.active_clients(0))

    def run(self, progress=None) -> list[RoundRecord]:
        records = []
        for _ in range(self.cfg.rounds):
            records.append(self.run_round())
            if progress is not None:
                progress(records[-1])
        return records

    def summary(self, records: list[RoundRecord]) -> dict:
        last = records[-1] if records else self.initial_record()
        attacks = []
        for n, source, target, key in self.attacks:
            rate = last.attack_rates[key]
            attacks.append(
                {
                    "adversary": n,
                    "source_class": source,
                    "target_class": target,
                    "attack_rate": rate,
                    "protection_rate": 1.0 - rate,
                }
            )
        rounds = [
            {
                "round": r.round,
                "est_poison_rate": r.est_poison_rate,
                "true_poison_rate": r.true_poison_rate,
                **r.diagnostics,
            }
            for r in records
        ]
        return {
            "aggregator": self.cfg.aggregator.to_dict(),
            "rounds": self.cfg.rounds,
            "num_clients": len(self.clients),
            "num_sybils": sum(c.is_sybil for c in self.clients),
            "final": {
                "round": last.round,
                "train_loss": last.train_loss,
                "train_accuracy": last.train_accuracy,
                "val_loss": last.val_loss,
                "val_accuracy": last.val_accuracy,
            },
            "attacks": attacks,
            "diagnostics": rounds,
        }


def run_experiment(cfg: ExperimentConfig, progress=None) -> tuple[ModelState, list[RoundRecord], dict]:
    sim = Simulation(cfg)
    records = sim.run(progress)
    return sim.model, records, sim.summary(records)
