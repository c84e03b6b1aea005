"""Experiment configuration: dataclasses, strict JSON parsing, defaults."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from functools import lru_cache
from importlib import resources
from pathlib import Path

import jsonschema

from . import aggregation
from .exceptions import ConfigError
from .model import LocalTrainConfig

__all__ = [
    "DataConfig",
    "AdversaryConfig",
    "AggregatorConfig",
    "ExperimentConfig",
    "load_schema",
    "parse_config",
    "config_from_dict",
]


@lru_cache(maxsize=None)
def load_schema(name: str = "config") -> dict:
    text = resources.files("safl").joinpath("schemas", f"{name}.schema.json").read_text()
    return json.loads(text)


@dataclass(frozen=True)
class DataConfig:
    source: str = "synthetic"
    num_classes: int = 10
    input_dim: int = 32
    per_class: int = 100
    spread: float = 0.2
    images_path: str | None = None
    labels_path: str | None = None
    limit_per_class: int | None = None


@dataclass(frozen=True)
class AdversaryConfig:
    """One attacker controlling ``num_sybils`` colluding clients.

    Single target: ``target_class`` is shared by every sybil. Multi-target:
    ``target_classes`` lists one target per sybil.
    """

    num_sybils: int = 1
    source_class: int = 0
    target_class: int | None = 1
    target_classes: tuple[int, ...] | None = None
    join_round: int = 0
    leave_round: int | None = None
    strategy: str = "label_flip"
    victim_client: int | None = None
    duplicate_poison_data: bool = False

    @property
    def targets(self) -> tuple[int, ...]:
        """Target class of each poison-carrying sybil."""
        if self.target_classes is not None:
            return tuple(self.target_classes)
        carriers = self.num_sybils - (1 if self.strategy == "mimicry" else 0)
        return (self.target_class,) * carriers

    @property
    def distinct_targets(self) -> tuple[int, ...]:
        return tuple(dict.fromkeys(self.targets))


@dataclass(frozen=True)
class AggregatorConfig:
    kind: str = "fedavg"
    threshold: float | str = "decay"
    decay_lambda: float = 0.8
    decay_rate: float = 0.001
    grouping: str = "components"
    distance_basis: str = "accumulated"
    selection_basis: str = "current"
    f: int | None = None
    m: int | None = None
    kappa: float = 1.0

    def build(self):
        if self.kind == "fedavg":
            return aggregation.FedAvg()
        if self.kind == "krum":
            return aggregation.Krum(self.f or 0)
        if self.kind == "multikrum":
            return aggregation.MultiKrum(self.f or 0, self.m)
        if self.kind == "foolsgold":
            return aggregation.FoolsGold(self.kappa)
        if self.threshold == "decay":
            schedule = aggregation.DecayThreshold(self.decay_lambda, self.decay_rate)
        else:
            schedule = aggregation.FixedThreshold(float(self.threshold))
        return aggregation.SaFL(schedule, self.distance_basis, self.grouping, self.selection_basis)

    @property
    def label(self) -> str:
        if self.kind == "safl":
            return f"safl:{self.threshold}"
        return self.kind

    def to_dict(self) -> dict:
        d = {"kind": self.kind}
        if self.kind == "safl":
            keys = ["threshold", "grouping", "distance_basis", "selection_basis"]
            if self.threshold == "decay":
                keys += ["decay_lambda", "decay_rate"]
        elif self.kind in ("krum", "multikrum"):
            keys = ["f"] + (["m"] if self.kind == "multikrum" else [])
        elif self.kind == "foolsgold":
            keys = ["kappa"]
        else:
            keys = []
        d.update({k: getattr(self, k) for k in keys})
        return d


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    rounds: int = 300
    num_honest: int = 10
    server_lr: float = 1.0
    data: DataConfig = field(default_factory=DataConfig)
    model_hidden_dim: int = 0
    local: LocalTrainConfig = field(default_factory=LocalTrainConfig)
    aggregator: AggregatorConfig = field(default_factory=AggregatorConfig)
    adversaries: tuple[AdversaryConfig, ...] = ()

    @property
    def num_sybils(self) -> int:
        return sum(a.num_sybils for a in self.adversaries)

    def with_overrides(self, **kw) -> "ExperimentConfig":
        return replace(self, **kw)

    def validate(self) -> "ExperimentConfig":
        """Check cross-field constraints; returns ``self`` for chaining."""
        k = self.data.num_classes
        if self.data.source == "idx" and not (self.data.images_path and self.data.labels_path):
            raise ConfigError("data.images_path and data.labels_path are required for idx data")
        if self.data.source == "synthetic" and self.num_honest != k:
            raise ConfigError(
                f"num_honest ({self.num_honest}) must equal data.num_classes ({k}): "
                "one honest client per class"
            )
        for n, adv in enumerate(self.adversaries):
            where = f"adversaries[{n}]"
            classes = [adv.source_class, *adv.targets]
            if adv.victim_client is not None:
                classes.append(adv.victim_client)
            for c in classes:
                if c >= self.num_honest:
                    raise ConfigError(f"{where}: class {c} outside [0, {self.num_honest})")
            if adv.target_classes is not None:
                if adv.target_class is not None:
                    raise ConfigError(f"{where}: give target_class or target_classes, not both")
                if adv.strategy == "label_flip" and len(adv.target_classes) != adv.num_sybils:
                    raise ConfigError(
                        f"{where}: multi-target needs one sybil per target "
                        f"({len(adv.target_classes)} targets, {adv.num_sybils} sybils)"
                    )
            elif adv.target_class is None:
                raise ConfigError(f"{where}: target_class is required")
            if adv.source_class in adv.targets:
                raise ConfigError(
                    f"{where}: source_class must differ from target class "
                    f"(source_class = target_class = {adv.source_class})"
                )
            if adv.strategy == "mimicry":
                if adv.num_sybils < 2:
                    raise ConfigError(f"{where}: mimicry needs at least 2 sybils")
                if adv.target_classes is not None:
                    raise ConfigError(f"{where}: mimicry uses a single target_class")
            if adv.leave_round is not None and adv.leave_round <= adv.join_round:
                raise ConfigError(f"{where}: leave_round must be after join_round")
        agg = self.aggregator
        if agg.kind in ("krum", "multikrum"):
            n = self.num_honest + self.num_sybils
            if n < (agg.f or 0) + 3:
                raise ConfigError(f"aggregator: Krum needs N >= f + 3 (N={n}, f={agg.f})")
        return self

    def to_dict(self) -> dict:
        """Fully materialized JSON-compatible echo (parseable by :func:`config_from_dict`)."""
        advs = []
        for a in self.adversaries:
            d = asdict(a)
            d["target_classes"] = list(a.target_classes) if a.target_classes is not None else None
            advs.append(d)
        return {
            "seed": self.seed,
            "rounds": self.rounds,
            "num_honest": self.num_honest,
            "server_lr": self.server_lr,
            "data": asdict(self.data),
            "model": {"hidden_dim": self.model_hidden_dim},
            "local": asdict(self.local),
            "aggregator": self.aggregator.to_dict(),
            "adversaries": advs,
        }


def _aggregator_from(raw) -> AggregatorConfig:
    if isinstance(raw, str):
        kind, _, arg = raw.partition(":")
        if kind == "safl" and arg:
            threshold = "decay" if arg == "decay" else float(arg)
            return AggregatorConfig(kind="safl", threshold=threshold)
        return AggregatorConfig(kind=kind)
    return AggregatorConfig(**raw)


def _schema_error(err: jsonschema.ValidationError) -> ConfigError:
    path = "/".join(str(p) for p in err.absolute_path) or "<root>"
    return ConfigError(f"config error at {path}: {err.message}")


def config_from_dict(raw: dict) -> ExperimentConfig:
    """Validate ``raw`` against the schema, fill defaults, check semantics."""
    validator = jsonschema.Draft202012Validator(load_schema("config"))
    err = jsonschema.exceptions.best_match(validator.iter_errors(raw))
    if err is not None:
        raise _schema_error(err)

    num_classes = raw.get("data", {}).get("num_classes", DataConfig.num_classes)
    data = DataConfig(**raw.get("data", {}))
    advs = []
    for a in raw.get("adversaries", []):
        a = dict(a)
        if a.get("target_classes") is not None:
            a["target_classes"] = tuple(a["target_classes"])
            a.setdefault("target_class", None)
        advs.append(AdversaryConfig(**a))
    agg = _aggregator_from(raw.get("aggregator", "fedavg"))
    num_honest = raw.get("num_honest", num_classes if data.source == "synthetic" else 10)
    if agg.kind in ("krum", "multikrum") and agg.f is None:
        # default: the defender budgets for every sybil, as far as N >= f + 3 allows
        total = num_honest + sum(a.num_sybils for a in advs)
        agg = replace(agg, f=max(0, min(sum(a.num_sybils for a in advs), total - 3)))

    try:
        cfg = ExperimentConfig(
            seed=raw.get("seed", 0),
            rounds=raw.get("rounds", 300),
            num_honest=num_honest,
            server_lr=raw.get("server_lr", 1.0),
            data=data,
            model_hidden_dim=raw.get("model", {}).get("hidden_dim", 0),
            local=LocalTrainConfig(**raw.get("local", {})),
            aggregator=agg,
            adversaries=tuple(advs),
        )
        # builds the rule once so range errors surface now
        cfg.aggregator.build()
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    return cfg.validate()


def parse_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed JSON in {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"config {path} must be a JSON object")
    return config_from_dict(raw)
