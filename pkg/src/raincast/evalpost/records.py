"""CSV / JSON serialization for metric series, threshold maps and permutation reports."""
from __future__ import annotations

import csv
import io
import json
import os

from .metrics import GLOBAL, MetricsRecord
from .permutation import BandImportance, PermutationReport
from .postprocess import ThresholdMap

SERIES_HEADER = ["lead_time", "tp", "fp", "fn", "iou"]
REGION_HEADER = ["region", "tp", "fp", "fn", "iou"]
THRESHOLD_HEADER = ["region", "threshold", "iou_at_threshold"]
PERMUTATION_HEADER = ["band_label", "baseline_iou", "permuted_iou", "delta"]
THRESHOLD_CURVE_HEADER = ["region", "threshold", "iou"]


def _fmt(x):
    return repr(float(x))


def format_value(v):
    """CSV cell text: floats as shortest round-trip repr, everything else via str."""
    if isinstance(v, str):
        return v
    if isinstance(v, (bool, int)) or (hasattr(v, "dtype") and v.dtype.kind in "iub"):
        return str(int(v))
    return _fmt(v)


def metrics_rows(obj):
    """(header, rows) as written by the CSV writer."""
    if isinstance(obj, ThresholdMap):
        return THRESHOLD_HEADER, [[r, _fmt(t), _fmt(obj.iou_at_threshold(r))]
                                  for r, t in obj.thresholds.items()]
    if isinstance(obj, PermutationReport):
        return PERMUTATION_HEADER, [[b.band_label, _fmt(b.baseline_iou), _fmt(b.permuted_iou), _fmt(b.delta)]
                                    for b in obj.bands]
    records = list(obj)
    if records and isinstance(records[0].scope, str):
        return REGION_HEADER, [[r.scope, r.tp, r.fp, r.fn, _fmt(r.iou)] for r in records]
    return SERIES_HEADER, [[r.scope, r.tp, r.fp, r.fn, _fmt(r.iou)] for r in records]


def _json_obj(obj):
    if isinstance(obj, ThresholdMap):
        return obj.to_dict()
    if isinstance(obj, PermutationReport):
        return {"seed": obj.seed, "threshold": obj.threshold,
                "bands": [{"band_label": b.band_label, "baseline_iou": b.baseline_iou,
                           "permuted_iou": b.permuted_iou, "delta": b.delta} for b in obj.bands]}
    return [{"scope": r.scope, "tp": r.tp, "fp": r.fp, "fn": r.fn, "iou": r.iou} for r in obj]


def metrics_to_text(obj, fmt="csv"):
    if fmt == "json":
        return json.dumps(_json_obj(obj), indent=1, sort_keys=True) + "\n"
    if fmt != "csv":
        raise ValueError(f"unknown format {fmt!r}")
    header, rows = metrics_rows(obj)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def write_metrics(obj, path, fmt=None):
    """Write records, a ThresholdMap or a PermutationReport; format defaults from the suffix."""
    fmt = fmt or ("json" if str(path).endswith(".json") else "csv")
    text = metrics_to_text(obj, fmt)
    tmp = f"{path}.tmp"
    with open(tmp, "w", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


def read_metrics(path, kind=None):
    """Parse a file written by :func:`write_metrics` back into the object it came from."""
    path = str(path)
    with open(path, newline="") as fh:
        text = fh.read()
    if path.endswith(".json"):
        d = json.loads(text)
        if isinstance(d, list):
            return [MetricsRecord(r["scope"], r["tp"], r["fp"], r["fn"]) for r in d]
        if "thresholds" in d:
            return ThresholdMap.from_dict(d)
        return PermutationReport([BandImportance(b["band_label"], b["baseline_iou"], b["permuted_iou"])
                                  for b in d["bands"]], d["seed"], d["threshold"])
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        raise ValueError(f"{path}: empty file")
    header, body = rows[0], rows[1:]
    if header == SERIES_HEADER:
        return [MetricsRecord(int(r[0]), int(r[1]), int(r[2]), int(r[3])) for r in body]
    if header == REGION_HEADER:
        return [MetricsRecord(r[0], int(r[1]), int(r[2]), int(r[3])) for r in body]
    if header == PERMUTATION_HEADER:
        return PermutationReport([BandImportance(r[0], float(r[1]), float(r[2])) for r in body])
    if header == THRESHOLD_HEADER:
        raise ValueError("threshold CSVs hold the selection only; read the JSON map for curves")
    raise ValueError(f"{path}: unrecognised header {header}")


def global_record(records):
    for r in records:
        if r.scope == GLOBAL:
            return r
    raise KeyError("series has no global record")
