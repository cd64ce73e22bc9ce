"""Deterministic report documents and flat CSV tables.

``report.json`` holds the whole report with sorted keys and no timestamps,
so identical inputs give byte-identical files. Alongside it:

- ``runs.csv``: one row per grid point (strategy/mode, tau, ablation, seed)
- ``windows.csv``: one row per training window (training subcommands only)
- ``summary.csv``: mean and sample standard deviation over seeds per grid cell

Missing values (e.g. precision of an empty pseudo-label set) are ``null`` in
JSON and ``NA`` in CSV.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List

from ..errors import IoError


@dataclass
class ExperimentReport:
    command: str
    config: Dict[str, Any]
    non_paper_defaults: Dict[str, Any]
    runs: List[Dict[str, Any]]
    windows: List[Dict[str, Any]] = field(default_factory=list)
    summary: List[Dict[str, Any]] = field(default_factory=list)
    metadata: Dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        return {"command": self.command, "config": self.config,
                "non_paper_defaults": self.non_paper_defaults, "runs": self.runs,
                "windows": self.windows, "summary": self.summary, "metadata": self.metadata}

    def body(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2, allow_nan=False) + "\n"


def _cell(v: Any) -> str:
    if v is None:
        return "NA"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (list, tuple)):
        return ";".join(_cell(x) for x in v)
    return str(v)


def to_csv(rows: List[Dict[str, Any]]) -> str:
    if not rows:
        return ""
    header: List[str] = []
    for r in rows:
        for k in r:
            if k not in header:
                header.append(k)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_cell(r.get(k)) for k in header])
    return buf.getvalue()


def write_report(report: ExperimentReport, out_dir: str | Path) -> Dict[str, Path]:
    out = Path(out_dir)
    files = {"report.json": report.body(), "runs.csv": to_csv(report.runs)}
    if report.windows:
        files["windows.csv"] = to_csv(report.windows)
    if report.summary:
        files["summary.csv"] = to_csv(report.summary)
    written = {}
    try:
        out.mkdir(parents=True, exist_ok=True)
        for name, text in files.items():
            path = out / name
            path.write_text(text, encoding="utf-8")
            written[name] = path
    except OSError as exc:
        raise IoError(f"cannot write report to {out}: {exc}") from exc
    return written
