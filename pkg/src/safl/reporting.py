"""Deterministic artifact emission: rounds.csv, summary.json, manifest.json."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import os
import tempfile
from pathlib import Path
from typing import Iterable, Sequence

from .simulator import RoundRecord

__all__ = [
    "fmt_float",
    "atomic_write",
    "rounds_csv",
    "dumps_json",
    "file_digest",
    "write_manifest",
    "verify_manifest",
]

NA = "NA"


def fmt_float(x: float | None) -> str:
    """17 significant digits, enough to round-trip any float64."""
    if x is None:
        return NA
    return format(float(x), ".17g")


def atomic_write(path: Path, data: str | bytes) -> None:
    """Write through a temporary file in the same directory, then rename."""
    path = Path(path)
    raw = data.encode() if isinstance(data, str) else data
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(raw)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def rounds_csv(records: Sequence[RoundRecord], attack_columns: Iterable[str]) -> str:
    attack_columns = list(attack_columns)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(
        ["round", "train_loss", "val_loss", *attack_columns,
         "est_poison_rate", "true_poison_rate", "threshold"]
    )
    for r in records:
        writer.writerow(
            [r.round, fmt_float(r.train_loss), fmt_float(r.val_loss)]
            + [fmt_float(r.attack_rates[c]) for c in attack_columns]
            + [fmt_float(r.est_poison_rate), fmt_float(r.true_poison_rate), fmt_float(r.threshold)]
        )
    return buf.getvalue()


def dumps_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n"


def file_digest(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(out: Path, files: Sequence[str], extra: dict) -> None:
    inventory = {
        name: {"sha256": file_digest(out / name), "bytes": (out / name).stat().st_size}
        for name in files
    }
    atomic_write(out / "manifest.json", dumps_json({**extra, "files": inventory}))


def verify_manifest(out: Path) -> dict | None:
    """Return the manifest if every listed file matches its digest, else ``None``."""
    try:
        manifest = json.loads((Path(out) / "manifest.json").read_text())
        for name, entry in manifest["files"].items():
            if file_digest(Path(out) / name) != entry["sha256"]:
                return None
    except (OSError, ValueError, KeyError, TypeError):
        return None
    return manifest
