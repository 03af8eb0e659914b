"""Delimited tables and figure files for comparison runs.

CSV output is stable byte-for-byte across re-runs of the same seed except
for the solve_ms column; floats are printed through one fixed format so the
files diff cleanly.
"""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path

import numpy as np

__all__ = ["COLUMNS", "write_csv", "write_json", "render_figures"]

COLUMNS = (
    "method",
    "mode",
    "bound_mean",
    "control_mean",
    "control_se",
    "solve_ms",
    "decision_ops",
)


def _fmt(v) -> str:
    if isinstance(v, str):
        return v
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return format(float(v), ".10g")


def write_csv(result, path) -> Path:
    """Comment header (# key=value) with run metadata, then one row per
    (method, mode); failed methods appear as # error: lines."""
    path = Path(path)
    buf = io.StringIO()
    for k, v in result.meta.items():
        buf.write(f"# {k}={_fmt(v)}\n")
    for k in sorted(result.errors):
        buf.write(f"# error:{k}={result.errors[k]}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(COLUMNS)
    for row in result.rows:
        writer.writerow([_fmt(row[c]) for c in COLUMNS])
    path.write_text(buf.getvalue())
    return path


def write_json(result, path) -> Path:
    doc = {
        "meta": result.meta,
        "rows": [{c: row[c] for c in COLUMNS} for row in result.rows],
        "errors": result.errors,
    }
    path = Path(path)
    path.write_text(json.dumps(doc, indent=2, default=float) + "\n")
    return path


def render_figures(result, table_path, dpi: int = 120) -> list[Path]:
    """Two bar charts next to the table: per-method value bounds, and control
    quality per (method, mode) with standard-error whiskers."""
    if not result.rows:
        return []
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    base = Path(table_path)
    out: list[Path] = []

    seen: set[str] = set()
    names, bounds = [], []
    for row in result.rows:
        if row["method"] in seen:
            continue  # bound is a property of the method, not the mode
        seen.add(row["method"])
        names.append(row["method"])
        bounds.append(float(row["bound_mean"]))
    fig, ax = plt.subplots(figsize=(max(4.0, 1.1 * len(names) + 1.5), 3.4))
    ax.bar(names, bounds, color="#4878a8")
    ax.set_ylabel("mean value at sampled beliefs")
    ax.set_title("value bounds")
    ax.grid(axis="y", alpha=0.3)
    plt.setp(ax.get_xticklabels(), rotation=20, ha="right")
    fig.tight_layout()
    p = base.with_name(base.stem + "_bounds.png")
    fig.savefig(p, dpi=dpi)
    plt.close(fig)
    out.append(p)

    labels = [f"{r['method']}:{r['mode']}" for r in result.rows]
    means = [float(r["control_mean"]) for r in result.rows]
    ses = [float(r["control_se"]) for r in result.rows]
    fig, ax = plt.subplots(figsize=(max(4.0, 1.1 * len(labels) + 1.5), 3.4))
    ax.bar(labels, means, yerr=ses, capsize=3, color="#6a9f58")
    ax.set_ylabel("mean discounted return (±SE)")
    ax.set_title("control quality")
    ax.grid(axis="y", alpha=0.3)
    plt.setp(ax.get_xticklabels(), rotation=20, ha="right")
    fig.tight_layout()
    p = base.with_name(base.stem + "_control.png")
    fig.savefig(p, dpi=dpi)
    plt.close(fig)
    out.append(p)
    return out
