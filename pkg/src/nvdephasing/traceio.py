"""CSV / JSON persistence for traces and fit results.

CSV files start with a ``# schema_version: N`` comment followed by the
``tau_ms,signal,stderr`` header.  JSON files carry ``schema_version`` and a
``kind`` of ``"trace"`` or ``"fit"``.
"""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path

import numpy as np

from .protocols import SignalTrace

SCHEMA_VERSION = 1
CSV_COLUMNS = ("tau_ms", "signal", "stderr")


class TraceFormatError(ValueError):
    pass


def _fmt(x: float) -> str:
    return repr(float(x))


def trace_to_csv(trace: SignalTrace) -> str:
    buf = io.StringIO()
    buf.write(f"# schema_version: {SCHEMA_VERSION}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for t, s, e in zip(trace.tau, trace.signal, trace.stderr):
        w.writerow((_fmt(t), _fmt(s), _fmt(e)))
    return buf.getvalue()


def trace_from_csv(text: str) -> SignalTrace:
    lines = [ln for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
    if not lines:
        raise TraceFormatError("empty CSV")
    rows = list(csv.reader(lines))
    header = tuple(c.strip() for c in rows[0])
    if header[:2] != CSV_COLUMNS[:2]:
        raise TraceFormatError(f"unexpected CSV header {header}")
    data = np.array([[float(v) for v in r] for r in rows[1:]], dtype=float).reshape(-1, len(header))
    stderr = data[:, 2] if len(header) > 2 else None
    return SignalTrace(data[:, 0], data[:, 1], stderr)


def dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n"


def trace_to_dict(trace: SignalTrace, run_config: dict | None = None) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "kind": "trace",
        "tau_ms": [float(t) for t in trace.tau],
        "signal": [float(s) for s in trace.signal],
        "stderr": [float(e) for e in trace.stderr],
        "counts": None if trace.counts is None else [int(c) for c in trace.counts],
        "meta": trace.meta,
        "run_config": run_config,
    }


def trace_from_dict(d: dict) -> SignalTrace:
    if d.get("kind") != "trace":
        raise TraceFormatError("JSON is not a trace")
    if d.get("schema_version") != SCHEMA_VERSION:
        raise TraceFormatError(f"unsupported schema_version {d.get('schema_version')}")
    return SignalTrace(d["tau_ms"], d["signal"], d.get("stderr"), d.get("counts"), d.get("meta") or {})


def read_trace(path) -> tuple:
    """Return ``(trace, json_document_or_None)`` from a CSV or JSON file."""
    path = Path(path)
    text = path.read_text()
    if path.suffix.lower() == ".json":
        doc = json.loads(text)
        return trace_from_dict(doc), doc
    return trace_from_csv(text), None


def write_text(path, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)
    return path
