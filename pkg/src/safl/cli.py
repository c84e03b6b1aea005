"""Command line entry point: ``safl run`` and ``safl sweep``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from datetime import datetime, timezone
from pathlib import Path

from . import __version__
from .config import AdversaryConfig, ExperimentConfig, config_from_dict, parse_config
from .exceptions import ConfigError
from .reporting import atomic_write, dumps_json, fmt_float, rounds_csv, verify_manifest, write_manifest
from .simulator import Simulation

log = logging.getLogger("safl")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _prepare_out(out: Path) -> Path:
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc.strerror}") from exc
    if not out.is_dir():
        raise OSError(f"output path {out} is not a directory")
    return out


def execute(cfg: ExperimentConfig, out: Path) -> dict:
    """Run one experiment and write rounds.csv, summary.json, manifest.json."""
    out = _prepare_out(Path(out))
    started = _now()
    sim = Simulation(cfg)
    records = sim.run(lambda r: log.debug("round %d train_loss=%.4f", r.round, r.train_loss))
    summary = sim.summary(records)
    columns = [key for *_, key in sim.attacks]
    try:
        atomic_write(out / "rounds.csv", rounds_csv(records, columns))
        atomic_write(out / "summary.json", dumps_json(summary))
        write_manifest(
            out,
            ["rounds.csv", "summary.json"],
            {
                "tool": "safl",
                "version": __version__,
                "seed": cfg.seed,
                "config": cfg.to_dict(),
                "started": started,
                "finished": _now(),
            },
        )
    except OSError as exc:
        raise OSError(f"cannot write results to {out}: {exc}") from exc
    return summary


def cmd_run(args) -> int:
    cfg = parse_config(args.config)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    summary = execute(cfg, Path(args.out))
    final = summary["final"]
    log.info(
        "done: %d rounds, train_loss=%.4f val_accuracy=%.3f",
        cfg.rounds, final["train_loss"], final["val_accuracy"],
    )
    for a in summary["attacks"]:
        log.info("attack %d->%d: rate %.3f", a["source_class"], a["target_class"], a["attack_rate"])
    return EXIT_OK


def parse_range(text: str) -> list[int]:
    """``"1..4"`` or ``"1,2,4"`` to a list of ints."""
    try:
        if ".." in text:
            lo, hi = text.split("..")
            values = list(range(int(lo), int(hi) + 1))
        else:
            values = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"bad sybil range {text!r}; use e.g. 1..4 or 1,2,3") from None
    if not values or min(values) < 1:
        raise ConfigError(f"sybil counts must be positive, got {text!r}")
    return values


def sweep_adversary(base: ExperimentConfig, k: int, mode: str) -> AdversaryConfig:
    """The single adversary used by one sweep cell."""
    template = base.adversaries[0] if base.adversaries else AdversaryConfig()
    source = template.source_class
    first = template.target_class if template.target_class is not None else template.targets[0]
    if mode == "single":
        return replace(template, num_sybils=k, target_class=first, target_classes=None,
                       strategy="label_flip")
    n = base.num_honest
    order = [(first + i) % n for i in range(n)]
    targets = [c for c in order if c != source][:k]
    if len(targets) < k:
        raise ConfigError(f"multi-target sweep with {k} sybils needs {k} classes besides the source")
    return replace(template, num_sybils=k, target_class=None, target_classes=tuple(targets),
                   strategy="label_flip")


def cell_config(base: ExperimentConfig, aggregator: str, mode: str, k: int) -> ExperimentConfig:
    raw = base.to_dict()
    raw["aggregator"] = aggregator
    adv = sweep_adversary(base, k, mode)
    raw["adversaries"] = [
        {**{f: getattr(adv, f) for f in ("num_sybils", "source_class", "target_class",
                                          "join_round", "leave_round", "strategy",
                                          "victim_client", "duplicate_poison_data")},
         "target_classes": list(adv.target_classes) if adv.target_classes else None}
    ]
    return config_from_dict(raw)


def cell_name(aggregator: str, mode: str, k: int) -> str:
    return f"{aggregator.replace(':', '-')}_{mode}_s{k}"


def _run_cell(job) -> tuple[str, float, bool]:
    name, cfg, out = job
    out = Path(out)
    manifest = verify_manifest(out)
    if manifest is not None and manifest.get("config") == cfg.to_dict():
        summary = json.loads((out / "summary.json").read_text())
        skipped = True
    else:
        summary = execute(cfg, out)
        skipped = False
    rates = [a["attack_rate"] for a in summary["attacks"]]
    return name, sum(rates) / len(rates), skipped


def cmd_sweep(args) -> int:
    base = parse_config(args.config)
    if args.seed is not None:
        base = replace(base, seed=args.seed)
    counts = parse_range(args.sybils)
    modes = [m for m in args.modes.split(",") if m]
    aggregators = [a for a in args.aggregators.split(",") if a]
    for m in modes:
        if m not in ("single", "multi"):
            raise ConfigError(f"unknown sweep mode {m!r}; use single or multi")

    out = _prepare_out(Path(args.out))
    jobs = []
    for agg in aggregators:
        for mode in modes:
            for k in counts:
                try:
                    cfg = cell_config(base, agg, mode, k)
                except ConfigError as exc:
                    raise ConfigError(f"cell {cell_name(agg, mode, k)}: {exc}") from exc
                jobs.append((cell_name(agg, mode, k), cfg, str(out / cell_name(agg, mode, k))))

    results: dict[str, float] = {}

    def record(res):
        name, rate, skipped = res
        results[name] = rate
        log.info("%s %s: attack rate %.3f", "skipped" if skipped else "finished", name, rate)

    if args.jobs > 1:
        with ProcessPoolExecutor(args.jobs) as pool:
            for res in pool.map(_run_cell, jobs):
                record(res)
    else:
        for job in jobs:
            try:
                record(_run_cell(job))
            except Exception as exc:
                raise type(exc)(f"cell {job[0]}: {exc}") from exc

    columns = [f"{agg}/{mode}" for agg in aggregators for mode in modes]
    header = ["sybils", *columns]
    rows = [
        [str(k)] + [fmt_float(results[cell_name(agg, mode, k)]) for agg in aggregators for mode in modes]
        for k in counts
    ]
    csv_text = "\n".join(",".join(r) for r in [header, *rows]) + "\n"
    dat_text = "# " + " ".join(h.replace(" ", "_") for h in header) + "\n"
    dat_text += "\n".join(" ".join(r) for r in rows) + "\n"
    atomic_write(out / "attack_rate_matrix.csv", csv_text)
    atomic_write(out / "attack_rate_matrix.dat", dat_text)
    write_manifest(
        out,
        ["attack_rate_matrix.csv", "attack_rate_matrix.dat"],
        {
            "tool": "safl",
            "version": __version__,
            "seed": base.seed,
            "config": base.to_dict(),
            "sweep": {"sybils": counts, "modes": modes, "aggregators": aggregators},
            "cells": [j[0] for j in jobs],
        },
    )
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="safl", description=__doc__)
    parser.add_argument("--version", action="version", version=f"safl {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="experiment config (JSON)")
    common.add_argument("--out", required=True, help="output directory")
    common.add_argument("--seed", type=int, default=None, help="override the master seed")
    common.add_argument("--quiet", action="store_true", help="only report errors")

    run = sub.add_parser("run", parents=[common], help="run one experiment")
    run.set_defaults(func=cmd_run)

    sweep = sub.add_parser("sweep", parents=[common], help="sybil-count x mode x aggregator grid")
    sweep.add_argument("--sybils", default="1..4", help="sybil counts, e.g. 1..4 or 1,2")
    sweep.add_argument("--modes", default="single,multi", help="single, multi or both")
    sweep.add_argument(
        "--aggregators",
        default="fedavg,multikrum,foolsgold,safl:0.6,safl:0.8,safl:decay",
        help="comma-separated aggregator names (safl:<nu> or safl:decay)",
    )
    sweep.add_argument("--jobs", type=int, default=1, help="cells run in parallel")
    sweep.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.ERROR if args.quiet else logging.INFO,
        format="%(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - every other failure is a runtime error
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
