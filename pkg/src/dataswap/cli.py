"""Command-line interface.

Configuration is an INI file with one section per concern (``data``,
``dummy``, ``pums_like``, ``swap``, ``risk``, ``sweep``, ``tabulate``).
Values given on the command line win over the file: first ``--set
section.key=value`` overrides, then the dedicated flags (``--seed``,
``--workers``, ``--rate``, ...). Every run writes ``manifest.json`` and
``resolved.cfg`` next to its outputs.

Exit codes: 0 success, 2 usage error, 3 configuration error, 4 data error.
"""

from __future__ import annotations

import argparse
import configparser
import dataclasses
import json
import os
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .errors import ConfigError, DataError, InvalidConfig
from .microdata import Dataset, load_csv, load_schema, subset_by_tract, write_csv, write_schema
from .risk import RiskConfig, Scorer, find_at_risk_cells, score_records, write_scores_csv
from .simulate import (
    SweepConfig,
    TableSpec,
    aggregate,
    convergence_summary,
    raw_replication_log,
    sweep_config_dict,
    write_sweep_outputs,
)
from .swap import SwapConfig, swap, write_pairs_csv
from .synthgen import DummyConfig, PumsLikeConfig, combined_vs_tract_v_share, generate_dummy, generate_pums_like
from .tabulate import bin_variable, cramers_v, cross_tab, write_table_csv

OUT_ENV = "DATASWAP_OUT"
SUBCOMMANDS = ("generate", "score", "swap", "sweep", "tabulate")


@dataclasses.dataclass
class RunManifest:
    subcommand: str
    config_path: str | None
    output_dir: str
    overrides: dict[str, str]


# -- config plumbing -----------------------------------------------------------------


def _split_list(text: str) -> list[str]:
    return [x.strip() for x in text.split(",") if x.strip()]


def _get(cp: configparser.ConfigParser, section: str, key: str, conv=str, default=None):
    if not cp.has_option(section, key):
        return default
    raw = cp.get(section, key)
    try:
        if conv is bool:
            return cp.getboolean(section, key)
        return conv(raw)
    except (TypeError, ValueError) as e:
        raise InvalidConfig(f"{section}.{key}: cannot parse {raw!r} ({e})") from None


def _section_dataclass(cls, cp: configparser.ConfigParser, section: str):
    """Build a dataclass from a section, converting each value like the field default."""
    kwargs = {}
    known = {f.name: f for f in dataclasses.fields(cls)}
    if cp.has_section(section):
        for key in cp[section]:
            if key not in known:
                raise InvalidConfig(f"{section}.{key}: unknown key")
            default = known[key].default
            if isinstance(default, tuple):
                kwargs[key] = tuple(_get(cp, section, key, lambda s: [float(x) for x in _split_list(s)]))
            else:
                kwargs[key] = _get(cp, section, key, type(default))
    return cls(**kwargs)


def parse_rates(text: str) -> tuple[float, ...]:
    """``0, 0.05, 0.1`` or an inclusive range ``start:stop:step``."""
    text = text.strip()
    if ":" in text:
        try:
            a, b, step = (float(x) for x in text.split(":"))
        except ValueError:
            raise InvalidConfig(f"sweep.rates: bad range {text!r}") from None
        if step <= 0 or b < a:
            raise InvalidConfig(f"sweep.rates: bad range {text!r}")
        count = int(round((b - a) / step))
        return tuple(round(a + i * step, 10) for i in range(count + 1))
    try:
        return tuple(float(x) for x in _split_list(text))
    except ValueError:
        raise InvalidConfig(f"sweep.rates: cannot parse {text!r}") from None


def load_config(path: str | None, overrides: Sequence[str]) -> tuple[configparser.ConfigParser, dict[str, str]]:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    if path is not None:
        try:
            with open(path, encoding="utf-8") as f:
                cp.read_file(f)
        except OSError as e:
            raise InvalidConfig(f"cannot read config {path}: {e.strerror}") from None
        except configparser.Error as e:
            raise InvalidConfig(f"cannot parse config {path}: {e}") from None
        # relative data paths resolve against the config file
        base = Path(path).resolve().parent
        for key in ("csv", "schema"):
            if cp.has_option("data", key) and not Path(cp.get("data", key)).is_absolute():
                cp.set("data", key, str(base / cp.get("data", key)))
    applied = {}
    for item in overrides:
        key, sep, value = item.partition("=")
        section, dot, option = key.strip().partition(".")
        if not sep or not dot or not section or not option:
            raise InvalidConfig(f"override must look like section.key=value: {item!r}")
        set_option(cp, section, option, value.strip())
        applied[f"{section}.{option}"] = value.strip()
    return cp, applied


def set_option(cp: configparser.ConfigParser, section: str, key: str, value: str) -> None:
    if not cp.has_section(section):
        cp.add_section(section)
    cp.set(section, key, value)


# -- builders ------------------------------------------------------------------------


def build_dataset(cp: configparser.ConfigParser) -> Dataset:
    source = _get(cp, "data", "source", default="csv" if cp.has_option("data", "csv") else "dummy")
    if source == "dummy":
        return generate_dummy(_section_dataclass(DummyConfig, cp, "dummy"))
    if source == "pums_like":
        return generate_pums_like(_section_dataclass(PumsLikeConfig, cp, "pums_like"))
    if source == "csv":
        csv_path = _get(cp, "data", "csv")
        schema_path = _get(cp, "data", "schema")
        if not csv_path or not schema_path:
            raise InvalidConfig("data.csv and data.schema are required when data.source = csv")
        if not Path(schema_path).exists():
            raise InvalidConfig(f"data.schema: no such file {schema_path}")
        if not Path(csv_path).exists():
            raise DataError(f"data.csv: no such file {csv_path}")
        return load_csv(csv_path, load_schema(schema_path))
    raise InvalidConfig(f"data.source: expected dummy, pums_like or csv, got {source!r}")


def build_risk(cp: configparser.ConfigParser) -> RiskConfig | None:
    if not cp.has_section("risk"):
        return None
    return RiskConfig(
        risk_variables=tuple(_split_list(_get(cp, "risk", "variables", default=""))),
        scorer=_scorer(cp),
        q=_get(cp, "risk", "q", float),
    )


def _scorer(cp):
    value = _get(cp, "risk", "scorer", default="log_frequency")
    try:
        return Scorer(value)
    except ValueError:
        raise InvalidConfig(f"risk.scorer: expected log_frequency or quantile_extremity, got {value!r}") from None


def build_swap(cp: configparser.ConfigParser, rate_required: bool = True) -> SwapConfig:
    rate = _get(cp, "swap", "rate", float)
    if rate is None:
        if rate_required:
            raise InvalidConfig("swap.rate is required")
        rate = 0.0
    mode = _get(cp, "swap", "mode", default="non_targeted")
    if mode not in ("non_targeted", "targeted"):
        raise InvalidConfig(f"swap.mode: expected non_targeted or targeted, got {mode!r}")
    return SwapConfig(
        rate=rate,
        matching_variables=tuple(_split_list(_get(cp, "swap", "matching_variables", default=""))),
        mode=mode,
        risk=build_risk(cp),
        seed=_get(cp, "swap", "seed", int, 0),
        require_distinct_tracts=_get(cp, "swap", "require_distinct_tracts", bool, False),
    )


def build_sweep(cp: configparser.ConfigParser) -> SweepConfig:
    if not cp.has_option("sweep", "rates"):
        raise InvalidConfig("sweep.rates is required")
    tables = [t.strip() for t in _get(cp, "sweep", "tables", default="").split(",") if t.strip()]
    tracts = _get(cp, "sweep", "tracts", default="all")
    return SweepConfig(
        rates=parse_rates(cp.get("sweep", "rates")),
        replications=_get(cp, "sweep", "replications", int, 100),
        base_swap=build_swap(cp, rate_required=False),
        table_specs=tuple(TableSpec.parse(t) for t in tables),
        tracts=None if tracts.strip() == "all" else tuple(_split_list(tracts)),
        master_seed=_get(cp, "sweep", "master_seed", int, 0),
        workers=_get(cp, "sweep", "workers", int, 1),
    )


# -- subcommands ---------------------------------------------------------------------


def cmd_generate(cp, out: Path) -> dict:
    ds = build_dataset(cp)
    write_csv(ds, out / "data.csv")
    write_schema(ds.schema, out / "data.schema")
    summary = {"persons": ds.n, "households": ds.n_households,
               "pumas": len(ds.pumas()), "tracts": len(ds.tracts())}
    if "Poor" in ds.schema and "Young" in ds.schema:
        summary["combined_vs_tract_v_share"] = combined_vs_tract_v_share(ds)
    _dump_json(summary, out / "summary.json")
    return {"data": "data.csv", "schema": "data.schema", "summary": "summary.json"}


def cmd_score(cp, out: Path) -> dict:
    ds = build_dataset(cp)
    cfg = build_risk(cp)
    if cfg is None:
        raise InvalidConfig("score needs a [risk] section")
    scores = score_records(ds, cfg, seed=_get(cp, "risk", "seed", int, 0))
    write_scores_csv(scores, out / "scores.csv")
    return {"scores": "scores.csv"}


def cmd_swap(cp, out: Path) -> dict:
    cfg = build_swap(cp)
    ds = build_dataset(cp)
    res = swap(ds, cfg)
    write_csv(res.dataset, out / "swapped.csv")
    write_schema(ds.schema, out / "swapped.schema")
    write_pairs_csv(res, ds, out / "pairs.csv")
    _dump_json({"selected": res.selected, "pairs": len(res.swapped_household_pairs),
                "unmatched_selected": res.unmatched_selected, "achieved_rate": res.achieved_rate},
               out / "swap_summary.json")
    return {"data": "swapped.csv", "schema": "swapped.schema", "pairs": "pairs.csv",
            "summary": "swap_summary.json"}


def cmd_tabulate(cp, out: Path) -> dict:
    ds = build_dataset(cp)
    row = _get(cp, "tabulate", "row")
    col = _get(cp, "tabulate", "col")
    if not row or not col:
        raise InvalidConfig("tabulate.row and tabulate.col are required")
    spec = TableSpec.parse(f"{row}*{col}" + "".join(
        f";{k[len('bin.'):]}={v}" for k, v in (cp["tabulate"].items() if cp.has_section("tabulate") else [])
        if k.startswith("bin.")))
    for var, bounds in spec.bins:
        ds = bin_variable(ds, var, bounds)
    thresholds = [int(x) for x in _split_list(_get(cp, "tabulate", "thresholds", default="1,2"))]
    tract = _get(cp, "tabulate", "tract", default="all")
    tracts = ds.tracts() if tract == "all" else _split_list(tract)
    report, files = [], {}
    for t in tracts:
        table = cross_tab(subset_by_tract(ds, t), row, col)
        assoc = cramers_v(table)
        name = f"table_{t}.csv"
        write_table_csv(table, out / name)
        files[t] = name
        report.append({"tract": t, "n": table.n, "chi_square": assoc.chi_square, "v": assoc.v,
                       "effective_k": assoc.effective_k, "effective_r": assoc.effective_r,
                       "at_risk_cells": [list(c) for c in find_at_risk_cells(table, thresholds)]})
    whole = cross_tab(ds, row, col)
    assoc = cramers_v(whole)
    write_table_csv(whole, out / "table_all.csv")
    report.append({"tract": None, "n": whole.n, "chi_square": assoc.chi_square, "v": assoc.v,
                   "effective_k": assoc.effective_k, "effective_r": assoc.effective_r,
                   "at_risk_cells": [list(c) for c in find_at_risk_cells(whole, thresholds)]})
    _dump_json(report, out / "association.json")
    return {"tables": files, "table_all": "table_all.csv", "association": "association.json"}


def cmd_sweep(cp, out: Path) -> dict:
    cfg = build_sweep(cp)
    ds = build_dataset(cp)
    log = raw_replication_log(ds, cfg)
    res = aggregate(log)
    paths = write_sweep_outputs(res, log, out, metadata={"config": sweep_config_dict(cfg)})
    outputs = {k: p.name for k, p in paths.items()}
    if len(cfg.rates) >= 2:
        rows = []
        for spec in res.specs:
            c = convergence_summary(res, spec)
            for t, tract in enumerate(c.tracts):
                rows.append({"spec": spec, "tract": tract, "side": c.side[t],
                             "distance_low": _jsonable(c.distance_low[t]),
                             "distance_high": _jsonable(c.distance_high[t]),
                             "shrunk": bool(c.shrunk[t])})
            rows.append({"spec": spec, "tract": None, "shrink_fraction": _jsonable(c.shrink_fraction),
                         "shrink_fraction_below": _jsonable(c.shrink_fraction_below),
                         "shrink_fraction_above": _jsonable(c.shrink_fraction_above)})
        _dump_json(rows, out / "convergence.json")
        outputs["convergence"] = "convergence.json"
    return outputs


COMMANDS = {"generate": cmd_generate, "score": cmd_score, "swap": cmd_swap,
            "tabulate": cmd_tabulate, "sweep": cmd_sweep}


def _jsonable(x):
    x = float(x)
    return None if np.isnan(x) else x


def _dump_json(obj, path: Path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(obj, f, indent=1, sort_keys=False)
        f.write("\n")


# -- entry point ---------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dataswap", description=__doc__.split("\n")[0])
    p.add_argument("--version", action="version", version=f"dataswap {__version__}")
    sub = p.add_subparsers(dest="subcommand", required=True)
    for name in SUBCOMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", "-c", help="INI config file")
        sp.add_argument("--out", "-o", help=f"output directory (default: ${OUT_ENV} or ./dataswap_out)")
        sp.add_argument("--seed", type=int, help="seed for this subcommand's randomness")
        sp.add_argument("--workers", type=int, help="worker processes for sweeps")
        sp.add_argument("--set", "-s", dest="overrides", action="append", default=[],
                        metavar="SECTION.KEY=VALUE", help="override a config value (repeatable)")
        if name in ("swap", "sweep"):
            sp.add_argument("--rate", help="swap rate (swap) or rate list/range (sweep)")
            sp.add_argument("--mode", choices=["non_targeted", "targeted"])
        sp.add_argument("--source", choices=["dummy", "pums_like", "csv"], help="data source")
    return p


def _flag_overrides(args, cp: configparser.ConfigParser) -> list[str]:
    sub = args.subcommand
    out = []
    if getattr(args, "source", None):
        out.append(f"data.source={args.source}")
    if args.seed is not None:
        if sub in ("generate", "tabulate"):
            src = args.source or _get(cp, "data", "source", default="dummy")
            key = "pums_like.seed" if src == "pums_like" else "dummy.seed"
        else:
            key = {"score": "risk.seed", "swap": "swap.seed", "sweep": "sweep.master_seed"}[sub]
        out.append(f"{key}={args.seed}")
    if args.workers is not None:
        out.append(f"sweep.workers={args.workers}")
    if getattr(args, "rate", None) is not None:
        out.append(f"{'swap.rate' if sub == 'swap' else 'sweep.rates'}={args.rate}")
    if getattr(args, "mode", None):
        out.append(f"swap.mode={args.mode}")
    return out


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    out = Path(args.out or os.environ.get(OUT_ENV) or "dataswap_out")
    try:
        cp, applied = load_config(args.config, args.overrides)
        for item in _flag_overrides(args, cp):
            key, _, value = item.partition("=")
            section, _, option = key.partition(".")
            set_option(cp, section, option, value)
            applied[key] = value
        try:
            out.mkdir(parents=True, exist_ok=True)
        except OSError as e:
            raise InvalidConfig(f"output directory {out} is not writable: {e.strerror}") from None
        outputs = COMMANDS[args.subcommand](cp, out)
    except ConfigError as e:
        print(f"dataswap: config error: {e}", file=sys.stderr)
        return 3
    except DataError as e:
        print(f"dataswap: data error: {e}", file=sys.stderr)
        return 4
    manifest = RunManifest(args.subcommand, args.config, str(out), applied)
    with open(out / "resolved.cfg", "w", encoding="utf-8") as f:
        cp.write(f)
    _dump_json({**dataclasses.asdict(manifest), "dataswap_version": __version__,
                "argv": list(sys.argv[1:] if argv is None else argv), "outputs": outputs},
               out / "manifest.json")
    return 0


if __name__ == "__main__":
    sys.exit(main())
