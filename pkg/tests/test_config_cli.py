import json
import os
from pathlib import Path

import jsonschema
import pytest

from safl.cli import main, parse_range, sweep_adversary
from safl.config import ExperimentConfig, config_from_dict, load_schema, parse_config
from safl.exceptions import ConfigError


def write_config(tmp_path, raw, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(raw))
    return path


def test_minimal_config_materializes_defaults():
    cfg = config_from_dict({})
    assert cfg == ExperimentConfig()
    echo = cfg.to_dict()
    assert echo["aggregator"] == {"kind": "fedavg"}
    assert config_from_dict(echo) == cfg


def test_round_trip_of_every_aggregator():
    for agg in ["fedavg", "krum", "multikrum", "foolsgold", "safl", "safl:0.6", "safl:decay"]:
        cfg = config_from_dict({"aggregator": agg, "adversaries": [{"num_sybils": 2}]})
        assert config_from_dict(cfg.to_dict()) == cfg


def test_safl_shorthand():
    cfg = config_from_dict({"aggregator": "safl:0.6"})
    assert cfg.aggregator.kind == "safl" and cfg.aggregator.threshold == 0.6
    assert config_from_dict({"aggregator": "safl"}).aggregator.threshold == "decay"


def test_krum_budget_defaults_to_sybil_count():
    cfg = config_from_dict({"aggregator": "multikrum", "adversaries": [{"num_sybils": 3}]})
    assert cfg.aggregator.f == 3
    assert config_from_dict({"aggregator": "krum"}).aggregator.f == 0


def test_unknown_key_is_named():
    with pytest.raises(ConfigError, match="agregator"):
        config_from_dict({"agregator": "fedavg"})


def test_nested_error_reports_path():
    with pytest.raises(ConfigError, match="adversaries/0/num_sybils"):
        config_from_dict({"adversaries": [{"num_sybils": 0}]})


@pytest.mark.parametrize(
    "raw, match",
    [
        ({"adversaries": [{"source_class": 3, "target_class": 3}]}, "source_class must differ"),
        ({"adversaries": [{"target_class": 12}]}, "outside"),
        ({"adversaries": [{"num_sybils": 3, "target_class": None, "target_classes": [1, 2]}]},
         "one sybil per target"),
        ({"adversaries": [{"strategy": "mimicry", "num_sybils": 1}]}, "at least 2"),
        ({"adversaries": [{"join_round": 5, "leave_round": 5}]}, "leave_round"),
        ({"num_honest": 4}, "num_honest"),
        ({"aggregator": {"kind": "krum", "f": 9}}, "N >= f"),
        ({"aggregator": "median"}, "aggregator"),
        ({"data": {"source": "idx"}}, "images_path"),
    ],
)
def test_semantic_errors(raw, match):
    with pytest.raises(ConfigError, match=match):
        config_from_dict(raw)


def test_parse_config_file_errors(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        parse_config(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigError, match="malformed"):
        parse_config(bad)
    bad.write_text("[1, 2]")
    with pytest.raises(ConfigError, match="object"):
        parse_config(bad)


def test_parse_range():
    assert parse_range("1..4") == [1, 2, 3, 4]
    assert parse_range("2,3") == [2, 3]
    for bad in ["a..b", "0..2", ""]:
        with pytest.raises(ConfigError):
            parse_range(bad)


def test_multi_sweep_targets_skip_source():
    base = config_from_dict({"adversaries": [{"source_class": 2, "target_class": 9}]})
    adv = sweep_adversary(base, 4, "multi")
    assert adv.target_classes == (9, 0, 1, 3)
    single = sweep_adversary(base, 3, "single")
    assert single.targets == (9, 9, 9)


def test_run_writes_outputs(tmp_path, tiny_raw):
    tiny_raw["adversaries"] = [{"num_sybils": 2, "source_class": 0, "target_class": 1}]
    tiny_raw["aggregator"] = "safl:0.6"
    cfg = write_config(tmp_path, tiny_raw)
    out = tmp_path / "out"
    assert main(["run", "--config", str(cfg), "--out", str(out), "--quiet"]) == 0
    lines = (out / "rounds.csv").read_text().splitlines()
    assert len(lines) == tiny_raw["rounds"] + 1
    assert lines[0] == "round,train_loss,val_loss,attack_rate_1,est_poison_rate,true_poison_rate,threshold"
    first = lines[1].split(",")
    # losses carry 17 significant digits
    assert len(first[1].replace(".", "").lstrip("0")) >= 15
    assert first[6] == "0.59999999999999998"
    summary = json.loads((out / "summary.json").read_text())
    jsonschema.validate(summary, load_schema("summary"))
    manifest = json.loads((out / "manifest.json").read_text())
    assert set(manifest["files"]) == {"rounds.csv", "summary.json"}
    assert manifest["config"] == config_from_dict(tiny_raw).to_dict()


def test_run_is_byte_identical(tmp_path, tiny_raw):
    cfg = write_config(tmp_path, tiny_raw)
    for name in ("a", "b"):
        assert main(["run", "--config", str(cfg), "--out", str(tmp_path / name), "--quiet"]) == 0
    for f in ("rounds.csv", "summary.json"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_seed_override(tmp_path, tiny_raw):
    cfg = write_config(tmp_path, tiny_raw)
    main(["run", "--config", str(cfg), "--out", str(tmp_path / "a"), "--quiet"])
    main(["run", "--config", str(cfg), "--out", str(tmp_path / "b"), "--quiet", "--seed", "99"])
    assert (tmp_path / "a" / "rounds.csv").read_bytes() != (tmp_path / "b" / "rounds.csv").read_bytes()
    assert json.loads((tmp_path / "b" / "manifest.json").read_text())["seed"] == 99


def test_config_error_exit_code(tmp_path, capsys):
    cfg = write_config(tmp_path, {"agregator": "fedavg"})
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 1
    assert "agregator" in capsys.readouterr().err


@pytest.mark.skipif(os.geteuid() == 0, reason="root ignores directory permissions")
def test_unwritable_output_exit_code(tmp_path, tiny_raw, capsys):
    cfg = write_config(tmp_path, tiny_raw)
    locked = tmp_path / "locked"
    locked.mkdir()
    locked.chmod(0o500)
    try:
        assert main(["run", "--config", str(cfg), "--out", str(locked / "x")]) == 2
    finally:
        locked.chmod(0o700)
    assert str(locked) in capsys.readouterr().err


def test_output_path_is_a_file(tmp_path, tiny_raw, capsys):
    cfg = write_config(tmp_path, tiny_raw)
    blocker = tmp_path / "blocker"
    blocker.write_text("")
    assert main(["run", "--config", str(cfg), "--out", str(blocker / "x")]) == 2
    assert str(blocker) in capsys.readouterr().err


def test_sweep_matrix_and_resume(tmp_path, tiny_raw, caplog):
    tiny_raw["rounds"] = 2
    cfg = write_config(tmp_path, tiny_raw)
    out = tmp_path / "sweep"
    argv = ["sweep", "--config", str(cfg), "--out", str(out), "--sybils", "1..2",
            "--modes", "single,multi", "--aggregators", "fedavg,safl:0.6"]
    assert main(argv) == 0
    rows = (out / "attack_rate_matrix.csv").read_text().splitlines()
    assert rows[0] == "sybils,fedavg/single,fedavg/multi,safl:0.6/single,safl:0.6/multi"
    assert [r.split(",")[0] for r in rows[1:]] == ["1", "2"]
    assert all(len(r.split(",")) == 5 for r in rows)
    assert (out / "attack_rate_matrix.dat").read_text().startswith("# sybils ")
    multi = json.loads((out / "fedavg_multi_s2" / "summary.json").read_text())
    assert sorted(a["target_class"] for a in multi["attacks"]) == [1, 2]

    before = (out / "fedavg_single_s1" / "manifest.json").read_bytes()
    caplog.clear()
    with caplog.at_level("INFO", logger="safl"):
        assert main(argv) == 0
    assert sum("skipped" in m for m in caplog.messages) == 8
    assert (out / "fedavg_single_s1" / "manifest.json").read_bytes() == before

    # a tampered cell is recomputed, the rest are reused
    (out / "safl-0.6_multi_s1" / "rounds.csv").write_text("garbage")
    caplog.clear()
    with caplog.at_level("INFO", logger="safl"):
        assert main(argv) == 0
    assert sum("skipped" in m for m in caplog.messages) == 7
    assert (out / "attack_rate_matrix.csv").read_text().splitlines() == rows


def test_sweep_bad_mode(tmp_path, tiny_raw):
    cfg = write_config(tmp_path, tiny_raw)
    assert main(["sweep", "--config", str(cfg), "--out", str(tmp_path / "s"), "--modes", "both"]) == 1


@pytest.mark.skipif(not os.path.isdir("/proc/self"), reason="needs procfs")
def test_unwritable_output_even_for_root(tmp_path, tiny_raw, capsys):
    cfg = write_config(tmp_path, tiny_raw)
    assert main(["run", "--config", str(cfg), "--out", "/proc/self/safl-out"]) == 2
    assert "/proc/self/safl-out" in capsys.readouterr().err


DOCS = Path(__file__).resolve().parent.parent / "docs" / "configs"


@pytest.mark.parametrize("path", sorted(DOCS.glob("*.json")), ids=lambda p: p.stem)
def test_shipped_configs_parse(path):
    cfg = parse_config(path)
    assert config_from_dict(cfg.to_dict()) == cfg
