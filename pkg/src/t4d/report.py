"""Metric reports: deterministic JSON and the scaled CSV table."""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__

# table value = raw / factor, i.e. the column reads "metric x factor"
SCALE_FACTORS = {"dtw": 1e-2, "dfd": 1e-3, "delta_m": 1e-6}
UNITS = {
    "lve": "mm^2", "mve": "mm^2", "fdd": "mm", "fdd_abs": "mm",
    "dtw": "mm", "dfd": "mm", "delta_m": "mm^2", "delta_cd": "1",
    "hd": "mm", "cd": "mm^2", "varifold": "mm^4",
    "mse": "mm^2", "masked_mse": "mm^2", "velocity": "mm^2", "cosine": "1",
    "dynamic_chamfer": "mm^2",
}
SIG_DIGITS = 12


def round_sig(x: float, digits: int = SIG_DIGITS) -> float:
    return float(f"{x:.{digits}g}")


def _clean(obj):
    """Recursively convert numpy scalars and round floats for stable output."""
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
        return round_sig(float(obj))
    return obj


def scaled_value(metric: str, raw: float) -> float:
    return raw / SCALE_FACTORS.get(metric, 1.0)


def column_label(metric: str) -> str:
    f = SCALE_FACTORS.get(metric)
    if f is None:
        return metric
    return f"{metric} x10^{int(round(math.log10(f)))}"


@dataclass
class MetricReport:
    """Per-sequence metric values plus aggregates and provenance metadata.

    ``entries`` holds dicts ``{"sequence_id", "mode", "metrics": {name: raw}}``
    with optional ``"per_frame": {name: [...]}``. Values are stored raw (mm or
    mm^2); scale factors only apply in :meth:`to_csv`.
    """

    entries: list[dict]
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        for e in self.entries:
            for name, v in e["metrics"].items():
                if not math.isfinite(v):
                    raise ValueError(f"{e['sequence_id']}: metric '{name}' is not finite ({v})")

    def metric_names(self) -> list[str]:
        names = []
        for e in self.entries:
            for k in e["metrics"]:
                if k not in names:
                    names.append(k)
        return names

    def aggregate(self) -> dict:
        out = {}
        for name in self.metric_names():
            vals = np.array([e["metrics"][name] for e in self.entries if name in e["metrics"]])
            out[name] = {"mean": float(vals.mean()), "std": float(vals.std()), "n": len(vals)}
        return out

    def value(self, metric: str, sequence_id: str | None = None) -> float:
        if sequence_id is None:
            if len(self.entries) != 1:
                return self.aggregate()[metric]["mean"]
            return self.entries[0]["metrics"][metric]
        for e in self.entries:
            if e["sequence_id"] == sequence_id:
                return e["metrics"][metric]
        raise KeyError(sequence_id)

    def to_dict(self) -> dict:
        meta = dict(self.metadata)
        meta.setdefault("tool_version", __version__)
        meta.setdefault("scale_factors", SCALE_FACTORS)
        meta.setdefault("units", {k: UNITS[k] for k in self.metric_names() if k in UNITS})
        return {"entries": self.entries, "aggregate": self.aggregate(), "metadata": meta}

    def to_json(self) -> str:
        return json.dumps(_clean(self.to_dict()), sort_keys=True, indent=2) + "\n"

    def write_json(self, path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def from_json(cls, text: str) -> MetricReport:
        d = json.loads(text)
        return cls(entries=d["entries"], metadata=d.get("metadata", {}))

    @classmethod
    def read_json(cls, path) -> MetricReport:
        return cls.from_json(Path(path).read_text(encoding="utf-8"))

    @classmethod
    def merge(cls, reports, metadata: dict | None = None) -> MetricReport:
        reports = list(reports)
        entries = [e for r in reports for e in r.entries]
        meta = dict(reports[0].metadata) if reports and metadata is None else dict(metadata or {})
        return cls(entries, meta)

    def to_csv(self) -> str:
        """Scaled table: one row per sequence plus a ``mean`` row.

        DTW, DFD and delta_M columns are divided by 1e-2, 1e-3 and 1e-6.
        """
        names = self.metric_names()
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["sequence_id"] + [column_label(n) for n in names])
        for e in self.entries:
            w.writerow([e["sequence_id"]] + [
                f"{scaled_value(n, e['metrics'][n]):.6g}" if n in e["metrics"] else ""
                for n in names])
        agg = self.aggregate()
        w.writerow(["mean"] + [f"{scaled_value(n, agg[n]['mean']):.6g}" for n in names])
        return buf.getvalue()
