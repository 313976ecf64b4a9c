"""Metric reports: JSON, aligned text tables, and per-record JSONL audits."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path


@dataclass(frozen=True)
class MetricReport:
    metrics: dict
    sample_count: int

    def __post_init__(self):
        if self.sample_count <= 0:
            raise ValueError("sample_count must be positive")
        for name, value in self.metrics.items():
            if not math.isfinite(value):
                raise ValueError(f"metric {name!r} is not finite: {value}")

    def to_json(self) -> str:
        return json.dumps(
            {"sample_count": self.sample_count, "metrics": dict(self.metrics)},
            indent=2,
        )

    def format_table(self) -> str:
        name_width = max([len("metric")] + [len(k) for k in self.metrics])
        lines = [
            f"{'metric'.ljust(name_width)}  value",
            f"{'-' * name_width}  ------",
        ]
        for name, value in self.metrics.items():
            lines.append(f"{name.ljust(name_width)}  {value:0.4f}")
        lines.append(f"{'samples'.ljust(name_width)}  {self.sample_count}")
        return "\n".join(lines)

    def write(self, directory, stem: str = "report") -> None:
        root = Path(directory)
        root.mkdir(parents=True, exist_ok=True)
        (root / f"{stem}.json").write_text(self.to_json())
        (root / f"{stem}.txt").write_text(self.format_table() + "\n")


def write_audit_jsonl(path, rows) -> None:
    """Per-record audit lines, one JSON object each, stable key order."""
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, ensure_ascii=False) + "\n")


def read_jsonl(path) -> list[dict]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                rows.append(json.loads(line))
    return rows
