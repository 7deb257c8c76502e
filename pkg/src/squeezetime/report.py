"""CSV / JSON emission for cost reports, benchmark results, training
histories and sweep tables. Floats are written with 6 significant digits."""
from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path

import numpy as np

from .analysis import CostReport
from .bench import BenchResult

SCHEMA_VERSION = 1
HISTORY_FIELDS = ("epoch", "lr", "loss", "top1")
COST_FIELDS = ("layer", "kind", "params", "flops", "out_shape")


def fmt_float(x: float) -> str:
    return "nan" if math.isnan(x) else f"{x:.6g}"


def _clean(obj):
    """JSON-ready copy: numpy scalars unwrapped, floats rounded to 6 significant digits."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if not math.isfinite(x) else float(f"{x:.6g}")
    return obj


def _cell(v):
    if isinstance(v, (float, np.floating)):
        return fmt_float(float(v))
    if isinstance(v, tuple):
        return "x".join(str(d) for d in v)
    return v


def _kind_of(report) -> str:
    if isinstance(report, CostReport):
        return "cost_report"
    if isinstance(report, BenchResult):
        return "bench_result"
    if isinstance(report, list) and all(isinstance(r, dict) for r in report):
        if all(set(HISTORY_FIELDS) <= set(r) for r in report):
            return "history"
        return "table"
    if isinstance(report, dict):
        return "record"
    raise TypeError(f"cannot emit {type(report).__name__}")


def to_json(report) -> dict:
    kind = _kind_of(report)
    if kind == "cost_report":
        body = {"convention": report.convention, "input_shape": report.input_shape,
                "totals": report.totals(), "by_kind": report.by_kind(), "meta": report.meta,
                "rows": [{"layer": r.layer, "kind": r.kind, "params": r.params, "flops": r.flops,
                          "out_shape": list(r.out_shape)} for r in report.rows]}
    elif kind == "bench_result":
        body = report.to_dict()
    elif kind in ("history", "table"):
        body = {"rows": report}
    else:
        body = report
    return _clean({"schema_version": SCHEMA_VERSION, "kind": kind, **body})


def to_csv(report) -> str:
    kind = _kind_of(report)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    if kind == "cost_report":
        w.writerow(COST_FIELDS)
        for r in report.rows:
            w.writerow([r.layer, r.kind, r.params, r.flops, _cell(tuple(r.out_shape))])
    elif kind == "history":
        w.writerow(HISTORY_FIELDS)
        for r in report:
            w.writerow([_cell(r[f]) for f in HISTORY_FIELDS])
    elif kind == "bench_result":
        w.writerow(("model_id", "batch", "warmup", "reps", "median", "p95", "throughput", "threads", "platform"))
        w.writerow([report.model_id, report.batch, report.warmup, report.reps, _cell(report.median),
                    _cell(report.p95), _cell(report.throughput), report.environment.get("threads"),
                    report.environment.get("platform")])
    elif kind == "table":
        fields = list(report[0]) if report else []
        w.writerow(fields)
        for r in report:
            w.writerow([_cell(r[f]) for f in fields])
    else:
        w.writerow(("key", "value"))
        for k, v in report.items():
            if not isinstance(v, (dict, list)):
                w.writerow([k, _cell(v)])
    return buf.getvalue()


def emit_report(report, fmt: str, path: str | Path) -> None:
    """Write ``report`` as ``csv`` or ``json``. An empty list is treated as a
    training history, so it yields the history header only."""
    if fmt not in ("csv", "json"):
        raise ValueError(f"format must be 'csv' or 'json', got {fmt!r}")
    text = to_csv(report) if fmt == "csv" else json.dumps(to_json(report), indent=2) + "\n"
    Path(path).write_text(text, encoding="utf-8")
