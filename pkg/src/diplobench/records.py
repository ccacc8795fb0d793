"""Match logs: one JSON object per line, header first and summary last."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

SCHEMA = "diplobench.match/1"


class LogError(ValueError):
    pass


def dump_line(obj: dict) -> str:
    return json.dumps(obj, sort_keys=True, ensure_ascii=False) + "\n"


@dataclass
class MatchRecord:
    config: dict
    phases: list[dict] = field(default_factory=list)
    summary: Optional[dict] = None
    schema: str = SCHEMA
    start_state: Optional[dict] = None  # None means the standard opening

    @property
    def match_id(self) -> str:
        return self.config.get("match_id", "")

    def header(self) -> dict:
        head = {"type": "header", "schema": self.schema, "config": self.config}
        if self.start_state is not None:
            head["start_state"] = self.start_state
        return head

    def to_jsonl(self) -> str:
        lines = [dump_line(self.header())]
        lines += [dump_line(p) for p in self.phases]
        if self.summary is not None:
            lines.append(dump_line(self.summary))
        return "".join(lines)

    def phase(self, name: str) -> dict:
        for p in self.phases:
            if p["phase"] == name:
                return p
        raise KeyError(name)

    def phase_names(self) -> list[str]:
        return [p["phase"] for p in self.phases]

    @classmethod
    def from_jsonl(cls, text: str) -> "MatchRecord":
        rows = [json.loads(line) for line in text.splitlines() if line.strip()]
        if not rows or rows[0].get("type") != "header":
            raise LogError("log does not start with a header line")
        schema = rows[0].get("schema")
        if schema != SCHEMA:
            raise LogError(f"unsupported log schema {schema!r} (expected {SCHEMA})")
        record = cls(config=rows[0]["config"], schema=schema, start_state=rows[0].get("start_state"))
        for row in rows[1:]:
            kind = row.get("type")
            if kind == "phase":
                record.phases.append(row)
            elif kind == "summary":
                record.summary = row
            else:
                raise LogError(f"unknown log line type {kind!r}")
        return record

    @classmethod
    def load(cls, path: Union[str, Path]) -> "MatchRecord":
        return cls.from_jsonl(Path(path).read_text())

    def save(self, path: Union[str, Path]) -> None:
        Path(path).write_text(self.to_jsonl())


def log_schema(path: Union[str, Path]) -> Optional[str]:
    with open(path) as fh:
        first = fh.readline()
    try:
        return json.loads(first).get("schema")
    except (ValueError, AttributeError):
        return None
