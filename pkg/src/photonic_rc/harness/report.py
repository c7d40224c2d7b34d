"""Experiment reports and their JSON / CSV / text-table renderings."""

from __future__ import annotations

import csv
import io
import json
import math
import statistics
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence

FORMATS = ("json", "csv", "table")

CSV_FIELDS = ("label", "mode", "features", "n", "rho", "density", "input_gain", "k_e",
              "aggregate", "seeds", "mean_error", "std_error", "test_errors",
              "validation_errors", "selected_lambdas")


@dataclass
class ExperimentReport:
    """Outcome of one configuration over its replicate seeds.

    ``test_errors[i]`` is the fraction of misclassified test images for
    ``seeds[i]``; ``confusion[i]`` rows are true digits, columns predictions.
    """

    config: dict[str, Any]
    seeds: list[int]
    test_errors: list[float]
    validation_errors: list[float]
    selected_lambdas: list[float]
    confusion: list[list[list[int]]]
    lambda_errors: list[list[list[float]]] = field(default_factory=list)
    wall_time: float = 0.0

    @property
    def mean_error(self) -> float:
        return statistics.fmean(self.test_errors)

    @property
    def std_error(self) -> float:
        return statistics.stdev(self.test_errors) if len(self.test_errors) > 1 else 0.0

    def to_dict(self, include_timing: bool = False) -> dict[str, Any]:
        d = {
            "config": self.config,
            "seeds": list(self.seeds),
            "test_errors": list(self.test_errors),
            "validation_errors": list(self.validation_errors),
            "selected_lambdas": list(self.selected_lambdas),
            "confusion": self.confusion,
            "lambda_errors": self.lambda_errors,
            "mean_error": self.mean_error,
            "std_error": self.std_error,
        }
        if include_timing:
            d["wall_time"] = self.wall_time
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ExperimentReport":
        return cls(config=d["config"], seeds=list(d["seeds"]), test_errors=list(d["test_errors"]),
                   validation_errors=list(d["validation_errors"]),
                   selected_lambdas=list(d["selected_lambdas"]), confusion=d["confusion"],
                   lambda_errors=d.get("lambda_errors", []), wall_time=d.get("wall_time", 0.0))

    def __eq__(self, other) -> bool:
        if not isinstance(other, ExperimentReport):
            return NotImplemented
        return self.to_dict() == other.to_dict()


def _features_label(cfg: dict[str, Any]) -> str:
    if str(cfg.get("mode", "")).startswith("columnwise"):
        return "columns"
    feats = cfg.get("features") or {}
    params = feats.get("params") or {}
    if not params:
        return feats.get("method", "")
    inner = ",".join(f"{k}={params[k]}" for k in sorted(params))
    return f"{feats.get('method', '')}({inner})"


def _fmt_list(values: Iterable) -> str:
    return ";".join(repr(v) if isinstance(v, float) else str(v) for v in values)


def report_row(r: ExperimentReport) -> dict[str, Any]:
    c = r.config
    return {
        "label": c.get("label", ""),
        "mode": c.get("mode"),
        "features": _features_label(c),
        "n": c.get("n"),
        "rho": 0.0 if c.get("mode") == "feedforward" else c.get("rho"),
        "density": c.get("density"),
        "input_gain": c.get("input_gain"),
        "k_e": c.get("k_e") if c.get("mode") == "recurrent_full" else "",
        "aggregate": _fmt_list(c.get("aggregate", [])) if c.get("mode") == "columnwise_aggregate" else "",
        "seeds": _fmt_list(r.seeds),
        "mean_error": r.mean_error,
        "std_error": r.std_error,
        "test_errors": _fmt_list(r.test_errors),
        "validation_errors": _fmt_list(r.validation_errors),
        "selected_lambdas": _fmt_list(r.selected_lambdas),
    }


def render_json(reports: Sequence[ExperimentReport], include_timing: bool = False) -> str:
    payload = [r.to_dict(include_timing) for r in reports]
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"


def render_csv(reports: Sequence[ExperimentReport]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=CSV_FIELDS, lineterminator="\n")
    writer.writeheader()
    for r in reports:
        writer.writerow(report_row(r))
    return buf.getvalue()


def render_table(reports: Sequence[ExperimentReport]) -> str:
    cols = ("label", "mode", "features", "n", "k_e", "aggregate", "input_gain", "rho")
    rows = []
    for r in reports:
        row = report_row(r)
        cells = [str(row[c]) for c in cols]
        cells.append(f"{100 * r.mean_error:.2f}% ± {100 * r.std_error:.2f}%")
        rows.append(cells)
    header = list(cols) + ["test error (mean ± std)"]
    widths = [max(len(h), *(len(row[i]) for row in rows)) if rows else len(h)
              for i, h in enumerate(header)]
    lines = ["  ".join(h.ljust(w) for h, w in zip(header, widths)),
             "  ".join("-" * w for w in widths)]
    lines += ["  ".join(cell.ljust(w) for cell, w in zip(row, widths)) for row in rows]
    return "\n".join(lines) + "\n"


def emit_report(reports, fmt: str = "table", path=None, include_timing: bool = False) -> str:
    """Render one report or a list of them and write to ``path`` (stdout if ``None``)."""
    if isinstance(reports, ExperimentReport):
        reports = [reports]
    reports = list(reports)
    if fmt == "json":
        text = render_json(reports, include_timing)
    elif fmt == "csv":
        text = render_csv(reports)
    elif fmt == "table":
        text = render_table(reports)
    else:
        raise ValueError(f"unknown report format {fmt!r}; choose from {FORMATS}")
    if path is None:
        sys.stdout.write(text)
    else:
        path = Path(path)
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(text)
        except OSError as exc:
            raise OSError(f"cannot write report to {path}: {exc}") from exc
    return text


def load_reports(path) -> list[ExperimentReport]:
    data = json.loads(Path(path).read_text())
    if isinstance(data, dict):
        data = [data]
    return [ExperimentReport.from_dict(d) for d in data]


def argmin_set(errors: Sequence[float], tol: float) -> list[int]:
    """Indices whose error is within ``tol`` of the minimum."""
    best = min(errors)
    return [i for i, e in enumerate(errors) if e - best <= tol and not math.isnan(e)]
