"""Deterministic table/CSV/JSON rendering of command reports, plus optional figures.

A report is a plain dict with a ``columns``/``rows`` table and scalar
``summary`` fields. Floats are formatted to fixed precision before rendering so
every machine format is byte-stable across runs.
"""

from __future__ import annotations

import csv
import io
import json
from typing import Any, Sequence

SCHEMA_VERSION = 1
FORMATS = ("table", "csv", "json")


def make_report(command: str, summary: dict[str, Any], columns: Sequence[str], rows: Sequence[Sequence[Any]]) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "command": command,
        "summary": dict(summary),
        "columns": list(columns),
        "rows": [list(r) for r in rows],
    }


def _cell(v: Any) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return f"{v:.4f}"
    if isinstance(v, (list, tuple)):
        return " ".join(_cell(x) for x in v)
    return str(v)


def _jsonable(v: Any) -> Any:
    if isinstance(v, float):
        return float(f"{v:.6f}")
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    return v


def to_json(report: dict) -> str:
    return json.dumps(_jsonable(report), indent=2, sort_keys=True) + "\n"


def to_csv(report: dict) -> str:
    """The row table only; summary fields become ``# key=value`` comment lines."""
    buf = io.StringIO()
    for key in sorted(report["summary"]):
        buf.write(f"# {key}={_cell(report['summary'][key])}\n")
    out = csv.writer(buf, lineterminator="\n")
    out.writerow(report["columns"])
    for row in report["rows"]:
        out.writerow([_cell(v) for v in row])
    return buf.getvalue()


def to_table(report: dict) -> str:
    lines = [f"[{report['command']}]"]
    width = max((len(k) for k in report["summary"]), default=0)
    for key in sorted(report["summary"]):
        lines.append(f"{key.ljust(width)} : {_cell(report['summary'][key])}")
    if report["columns"]:
        cells = [report["columns"]] + [[_cell(v) for v in r] for r in report["rows"]]
        widths = [max(len(str(r[i])) for r in cells) for i in range(len(report["columns"]))]
        lines.append("")
        for n, r in enumerate(cells):
            lines.append("  ".join(str(c).rjust(w) for c, w in zip(r, widths)).rstrip())
            if n == 0:
                lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def render(report: dict, fmt: str) -> str:
    if fmt == "json":
        return to_json(report)
    if fmt == "csv":
        return to_csv(report)
    if fmt == "table":
        return to_table(report)
    raise ValueError(f"unknown format {fmt!r}")


# -- figures -------------------------------------------------------------------

def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def plot_convergence(values: Sequence[float], path: str, title: str = "") -> None:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.plot(range(len(values)), values, marker="o", ms=3, lw=1.2)
    ax.set_xlabel("iteration")
    ax.set_ylabel("best objective")
    ax.set_title(title)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def plot_phasing(cum_pmus: Sequence[int], pct: Sequence[float], path: str, title: str = "") -> None:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.step(cum_pmus, pct, where="post", marker="o")
    ax.set_xlabel("installed PMUs")
    ax.set_ylabel("observability (%)")
    ax.set_ylim(0, 105)
    ax.set_title(title)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def plot_loadability(buses: Sequence[int], q_max: Sequence[float], path: str, title: str = "") -> None:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6, 3.2))
    ax.bar([str(b) for b in buses], q_max, color="tab:blue")
    ax.set_xlabel("load bus (ascending q_max)")
    ax.set_ylabel("q_max (pu)")
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def plot_coverage(buses: Sequence[int], counts: Sequence[int], path: str, title: str = "") -> None:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6, 3.2))
    ax.bar([str(b) for b in buses], counts, color="tab:green")
    ax.set_xlabel("bus")
    ax.set_ylabel("coverage f_i")
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
