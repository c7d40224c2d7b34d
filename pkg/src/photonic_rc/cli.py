"""Command-line interface: ``photonic-rc <command> ...``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 rejected by
the memory guard, 1 anything else.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path
from typing import Any, Sequence

import yaml

from .cache import write_csv, write_matrix
from .harness import data as data_mod
from .harness.config import ConfigError, ExperimentConfig, default_data_dir
from .harness.data import DataError
from .harness.pipeline import (CombinatorialBudgetError, ResourceGuardError, dataset_for,
                               estimate_memory, run_experiment, search_aggregates, sweep, tune)
from .harness.report import FORMATS, emit_report, load_reports
from .numerics import ReservoirGenerationError

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_RESOURCE = 4

log = logging.getLogger("photonic_rc")


def _value(text: str) -> Any:
    """Parse a flag value the way a YAML config would (``0.5``, ``[1, 2]``, ``true``)."""
    try:
        return yaml.safe_load(text)
    except yaml.YAMLError:
        return text


def _list_value(text: str) -> list:
    v = _value(text)
    if isinstance(v, list):
        return v
    if isinstance(text, str) and "," in text:
        return [_value(t.strip()) for t in text.split(",") if t.strip()]
    return [v]


def _range(text: str) -> list[int]:
    if "-" in text and "," not in text:
        lo, hi = text.split("-", 1)
        return list(range(int(lo), int(hi) + 1))
    return [int(t) for t in text.split(",") if t.strip()]


# ---------------------------------------------------------------------------
# Config flags
# ---------------------------------------------------------------------------

_SKIP_FLAGS = {"features"}


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("experiment configuration")
    g.add_argument("--config", "-c", type=Path, help="YAML or JSON experiment config")
    g.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override any config field (features.<param> allowed); repeatable")
    g.add_argument("--features", dest="feature_method", help="feature method (raw, zoning2, hog, ...)")
    g.add_argument("--feature-param", action="append", default=[], metavar="KEY=VALUE",
                   help="feature parameter, e.g. cell_size=7; repeatable")
    for f in dataclasses.fields(ExperimentConfig):
        if f.name in _SKIP_FLAGS:
            continue
        g.add_argument("--" + f.name.replace("_", "-"), dest="cfg_" + f.name, default=None,
                       metavar="VALUE")


def _split_kv(item: str) -> tuple[str, Any]:
    if "=" not in item:
        raise ConfigError(f"expected KEY=VALUE, got {item!r}")
    k, v = item.split("=", 1)
    return k.strip(), _value(v)


def build_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.from_file(args.config) if args.config else ExperimentConfig()
    overrides: dict[str, Any] = {}
    if args.feature_method:
        overrides["features.method"] = args.feature_method
    for f in dataclasses.fields(ExperimentConfig):
        raw = getattr(args, "cfg_" + f.name, None)
        if raw is None:
            continue
        if f.name in ("aggregate", "seeds", "lambda_grid"):
            overrides[f.name] = _list_value(raw)
        elif f.name in ("data_dir", "cache_dir", "label", "mode"):
            overrides[f.name] = raw
        else:
            overrides[f.name] = _value(raw)
    for item in args.feature_param:
        k, v = _split_kv(item)
        overrides["features." + k] = v
    for item in args.overrides:
        k, v = _split_kv(item)
        overrides[k] = v
    return cfg.with_overrides(overrides) if overrides else cfg


def _emit(reports, args) -> None:
    emit_report(reports, args.format, args.out, include_timing=args.timing)
    if args.figures:
        from .harness.plotting import render_figures
        stem = Path(args.out).stem if args.out else "report"
        for path in render_figures(reports, args.figures, stem, getattr(args, "axis", None)):
            log.info("wrote %s", path)


def _add_output_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--format", "-f", choices=FORMATS, default="table")
    p.add_argument("--out", "-o", help="write the report here instead of stdout")
    p.add_argument("--figures", metavar="DIR", help="also render PNG figures into DIR")
    p.add_argument("--timing", action="store_true", help="include wall time in JSON output")


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_data(args) -> int:
    data_dir = Path(args.data_dir) if args.data_dir else default_data_dir()
    if args.data_command == "fetch":
        status = data_mod.fetch(data_dir, archive=args.from_archive, force=args.force)
    else:
        status = data_mod.verify(data_dir)
    for name, s in status.items():
        print(f"{name}\t{s}")
    if any(s != "ok" for s in status.values()):
        print(f"MNIST files incomplete in {data_dir}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


def cmd_features(args) -> int:
    cfg = build_config(args)
    if cfg.columnwise:
        raise ConfigError("column-wise modes bypass feature extraction")
    ds = dataset_for(cfg)
    split = {"train": ds.train, "validation": ds.validation, "test": ds.test}[args.split]
    images = split.images[:args.limit] if args.limit else split.images
    feats = cfg.features.extract(images)
    meta = {"features": cfg.features.to_dict(), "split": args.split, "split_seed": cfg.split_seed}
    out = Path(args.out)
    if args.format == "csv":
        write_csv(out, feats, meta)
    else:
        write_matrix(out, feats, meta)
    print(f"{out}\t{feats.shape[0]}x{feats.shape[1]}")
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = build_config(args)
    if args.dry_run:
        est = estimate_memory(cfg)
        print(json.dumps({"config": cfg.to_dict(), "memory_bytes": est}, indent=2, sort_keys=True))
        return EXIT_OK
    _emit([run_experiment(cfg)], args)
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = build_config(args)
    values = _list_value(args.values)
    _emit(sweep(cfg, args.axis, values, workers=args.workers), args)
    return EXIT_OK


def cmd_tune(args) -> int:
    cfg = build_config(args)
    grid = {}
    for item in args.grid:
        k, _ = _split_kv(item)
        grid[k] = _list_value(item.split("=", 1)[1])
    if not grid:
        raise ConfigError("tune needs at least one --grid KEY=V1,V2,...")
    best, results = tune(cfg, grid)
    for overrides, err in results:
        print(json.dumps({"overrides": overrides, "validation_error": err}, sort_keys=True))
    print(json.dumps({"best": best}, sort_keys=True))
    return EXIT_OK


def cmd_search(args) -> int:
    cfg = build_config(args)
    ranked = search_aggregates(cfg, args.arity, _range(args.range), args.max_combinations)
    print(f"# {len(ranked)} combinations, ranked by validation error")
    print("rank,indices,validation_error")
    for i, (idx, err) in enumerate(ranked[:args.top] if args.top else ranked, 1):
        print(f"{i},{'-'.join(map(str, idx))},{err!r}")
    return EXIT_OK


def cmd_report(args) -> int:
    reports = []
    for path in args.inputs:
        try:
            reports.extend(load_reports(path))
        except (OSError, json.JSONDecodeError, KeyError) as exc:
            raise ConfigError(f"cannot read report {path}: {exc}") from exc
    _emit(reports, args)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="photonic-rc",
                                     description="Simulate a quantized photonic reservoir on MNIST.")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("data", help="download or check the MNIST files")
    dsub = p.add_subparsers(dest="data_command", required=True)
    for name in ("fetch", "verify"):
        q = dsub.add_parser(name)
        q.add_argument("--data-dir", help="default: $PHOTONIC_RC_DATA or ~/.cache/photonic_rc/mnist")
        if name == "fetch":
            q.add_argument("--from-archive", type=Path, help="local zip containing the *.gz files")
            q.add_argument("--force", action="store_true")
        q.set_defaults(func=cmd_data)

    p = sub.add_parser("features", help="feature extraction")
    fsub = p.add_subparsers(dest="features_command", required=True)
    q = fsub.add_parser("extract", help="extract one split's features to a matrix file")
    _add_config_flags(q)
    q.add_argument("--split", choices=("train", "validation", "test"), default="train")
    q.add_argument("--limit", type=int, default=None, help="only the first N images")
    q.add_argument("--out", "-o", required=True)
    q.add_argument("--format", choices=("bin", "csv"), default="bin")
    q.set_defaults(func=cmd_features)

    p = sub.add_parser("run", help="run one experiment over its seeds")
    _add_config_flags(p)
    _add_output_flags(p)
    p.add_argument("--dry-run", action="store_true", help="print the config and memory estimate")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="one experiment per value of a config field")
    _add_config_flags(p)
    _add_output_flags(p)
    p.add_argument("--axis", required=True, help="config field or features.<param>")
    p.add_argument("--values", required=True, help="comma list or YAML list")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("tune", help="grid search by mean validation error")
    _add_config_flags(p)
    p.add_argument("--grid", action="append", default=[], metavar="KEY=V1,V2,...")
    p.set_defaults(func=cmd_tune)

    p = sub.add_parser("search-aggregates", help="rank column-state index sets by validation error")
    _add_config_flags(p)
    p.add_argument("--arity", type=int, required=True)
    p.add_argument("--range", default="1-28", help="candidate timesteps, e.g. 11-28 or 14,16,20")
    p.add_argument("--max-combinations", type=int, default=5000)
    p.add_argument("--top", type=int, default=0, help="only print the best K")
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("report", help="re-render saved JSON reports")
    p.add_argument("inputs", nargs="+", type=Path)
    _add_output_flags(p)
    p.add_argument("--axis", help="sweep axis for the error figure (guessed if omitted)")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, CombinatorialBudgetError, ReservoirGenerationError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ResourceGuardError as exc:
        print(f"resource guard: {exc}", file=sys.stderr)
        return EXIT_RESOURCE
    except ValueError as exc:
        # invalid parameter values raised by the library layers
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001
        log.debug("unhandled", exc_info=True)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
