"""Structured run reports with deterministic JSON serialisation."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any

SCHEMA_VERSION = 1


@dataclass
class Report:
    command: str
    source: str
    seed: int
    verdict: str
    payload: dict[str, Any] = field(default_factory=dict)
    certificates: list[dict] = field(default_factory=list)
    trace: list[dict] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)
    probabilistic: bool = False

    def to_json(self, include_trace: bool = True) -> str:
        doc = {
            "schema_version": SCHEMA_VERSION,
            "command": self.command,
            "source": self.source,
            "seed": self.seed,
            "verdict": self.verdict,
            "payload": self.payload,
            "certificates": self.certificates,
            "warnings": self.warnings,
            "probabilistic": self.probabilistic,
        }
        if include_trace:
            doc["trace"] = self.trace
        return json.dumps(doc, sort_keys=True, indent=2)

    def human(self, include_trace: bool = False) -> str:
        lines = [f"[{self.command}] {self.source}: {self.verdict}"]
        for key in sorted(self.payload):
            value = self.payload[key]
            if isinstance(value, list):
                lines.append(f"  {key}:")
                for item in value:
                    lines.append(f"    - {item}")
            else:
                lines.append(f"  {key}: {value}")
        if self.probabilistic:
            lines.append("  note: some zero tests were probabilistic")
        for w in self.warnings:
            lines.append(f"  warning: {w}")
        if include_trace:
            lines.append("  trace:")
            for entry in self.trace:
                lines.append(f"    {entry}")
        return "\n".join(lines)
