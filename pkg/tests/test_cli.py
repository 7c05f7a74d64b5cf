import json
from pathlib import Path

import pytest

from dataswap.cli import load_config, main, parse_rates
from dataswap.errors import InvalidConfig

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def write_cfg(tmp_path, text):
    p = tmp_path / "run.cfg"
    p.write_text(text)
    return str(p)


SMALL = """
[data]
source = dummy
[dummy]
n_tracts = 4
persons_per_tract = 25
[swap]
rate = 0.2
require_distinct_tracts = true
[sweep]
rates = 0:0.2:0.1
replications = 3
tables = Poor*Young
[tabulate]
row = Poor
col = Young
"""


def test_generate_is_reproducible(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["generate", "--seed", "7", "-o", str(a)]) == 0
    assert main(["generate", "--seed", "7", "-o", str(b)]) == 0
    for name in ("data.csv", "data.schema", "summary.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    summary = json.loads((a / "summary.json").read_text())
    assert summary["persons"] == 10_000 and summary["tracts"] == 50
    manifest = json.loads((a / "manifest.json").read_text())
    assert manifest["overrides"] == {"dummy.seed": "7"}
    assert (a / "resolved.cfg").exists()


def test_bad_rate_is_config_error(tmp_path, capsys):
    assert main(["swap", "--rate", "1.5", "-o", str(tmp_path)]) == 3
    assert "swap.rate" in capsys.readouterr().err


def test_usage_error_exit_code(capsys):
    assert main(["explode"]) == 2
    assert main(["sweep", "--workers", "many"]) == 2


def test_missing_data_file_is_data_error(tmp_path, capsys):
    schema = tmp_path / "d.schema"
    schema.write_text("[geography]\nhousehold = household_id\n[variable:a]\nlevels = x, y\n")
    cfg = write_cfg(tmp_path, "[data]\nsource = csv\ncsv = missing.csv\nschema = d.schema\n")
    assert main(["tabulate", "-c", cfg, "-o", str(tmp_path / "out")]) == 4
    assert "missing.csv" in capsys.readouterr().err


def test_bad_level_in_csv_is_data_error(tmp_path):
    assert main(["generate", "-c", write_cfg(tmp_path, SMALL), "-o", str(tmp_path / "g")]) == 0
    data = tmp_path / "g" / "data.csv"
    lines = data.read_text().splitlines()
    lines[1] = lines[1].rsplit(",", 1)[0] + ",maybe"
    data.write_text("\n".join(lines) + "\n")
    cfg = write_cfg(tmp_path, f"[data]\ncsv = {data}\nschema = {tmp_path / 'g' / 'data.schema'}\n"
                              "[tabulate]\nrow = Poor\ncol = Young\n")
    assert main(["tabulate", "-c", cfg, "-o", str(tmp_path / "t")]) == 4


def test_unknown_config_key_is_config_error(tmp_path):
    cfg = write_cfg(tmp_path, "[dummy]\nnot_a_key = 1\n")
    assert main(["generate", "-c", cfg, "-o", str(tmp_path / "o")]) == 3


def test_override_precedence(tmp_path):
    cfg = write_cfg(tmp_path, SMALL)
    out = tmp_path / "o"
    # --set beats the file, --rate beats --set
    assert main(["swap", "-c", cfg, "-s", "swap.rate=0.4", "--rate", "0.6", "-s", "swap.seed=3",
                 "-o", str(out)]) == 0
    summary = json.loads((out / "swap_summary.json").read_text())
    assert summary["selected"] == 60
    resolved = (out / "resolved.cfg").read_text()
    assert "rate = 0.6" in resolved and "seed = 3" in resolved


def test_env_sets_default_output(tmp_path, monkeypatch):
    monkeypatch.setenv("DATASWAP_OUT", str(tmp_path / "env"))
    assert main(["tabulate", "-c", write_cfg(tmp_path, SMALL)]) == 0
    report = json.loads((tmp_path / "env" / "association.json").read_text())
    assert len(report) == 5 and report[-1]["tract"] is None
    assert report[-1]["n"] == 100


def test_score_subcommand(tmp_path):
    cfg = write_cfg(tmp_path, SMALL + "[risk]\nvariables = Age, Income\n")
    assert main(["score", "-c", cfg, "-o", str(tmp_path)]) == 0
    lines = (tmp_path / "scores.csv").read_text().splitlines()
    assert len(lines) == 101


def test_sweep_subcommand_writes_everything(tmp_path):
    out = tmp_path / "s"
    assert main(["sweep", "-c", write_cfg(tmp_path, SMALL), "--workers", "1", "-o", str(out)]) == 0
    for name in ("sweep_result.csv", "raw_log.csv", "swap_stats.csv", "sweep_result.json",
                 "convergence.json", "manifest.json", "resolved.cfg"):
        assert (out / name).exists(), name
    manifest = json.loads((out / "manifest.json").read_text())
    assert set(manifest["outputs"]) >= {"raw_log_csv", "convergence"}


def test_sweep_rerun_is_byte_identical(tmp_path):
    cfg = write_cfg(tmp_path, SMALL)
    main(["sweep", "-c", cfg, "-o", str(tmp_path / "a")])
    main(["sweep", "-c", cfg, "-o", str(tmp_path / "b"), "--workers", "2"])
    for name in ("raw_log.csv", "sweep_result.csv", "swap_stats.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    a, b = (json.loads((tmp_path / d / "sweep_result.json").read_text()) for d in "ab")
    # the metadata records the worker count itself; everything else must match
    assert (a["metadata"]["config"].pop("workers"), b["metadata"]["config"].pop("workers")) == (1, 2)
    assert a == b


def test_parse_rates():
    assert parse_rates("0:0.2:0.05") == (0.0, 0.05, 0.1, 0.15, 0.2)
    assert parse_rates("0.05, 0.1") == (0.05, 0.1)
    assert len(parse_rates("0:0.20:0.01")) == 21
    for bad in ("0:1", "0.2:0.1:0.1", "a, b"):
        with pytest.raises(InvalidConfig):
            parse_rates(bad)


def test_relative_csv_path_resolves_against_config(tmp_path):
    sub = tmp_path / "cfgs"
    sub.mkdir()
    p = sub / "x.cfg"
    p.write_text("[data]\ncsv = data.csv\nschema = data.schema\n")
    cp, _ = load_config(str(p), [])
    assert cp.get("data", "csv") == str(sub / "data.csv")


@pytest.mark.parametrize("name", sorted(p.name for p in CONFIGS.glob("*.cfg")))
def test_shipped_configs_parse(name):
    from dataswap.cli import build_sweep, build_swap

    cp, _ = load_config(str(CONFIGS / name), [])
    if cp.has_section("sweep"):
        build_sweep(cp)
    else:
        build_swap(cp)
