"""Line-delimited dataset persistence.

A dataset file holds one JSON document per line with keys
``scene_id, observed, future, future_modes, centerlines``. Floats are
serialized at full precision, so write -> read is an exact round trip.
Each written artifact gets a ``<path>.meta.json`` sidecar carrying the
resolved configuration and seed for provenance.
"""

from __future__ import annotations

import json
import os
from typing import Iterable, Optional

from .types import SceneRecord


class MalformedLineError(ValueError):
    """A dataset line failed to parse; carries the 1-based line number."""

    def __init__(self, line_number: int, reason: str):
        self.line_number = line_number
        super().__init__(f"line {line_number}: {reason}")


def write_dataset(records: Iterable[SceneRecord], path: str, meta: Optional[dict] = None) -> None:
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(record.to_json())
            fh.write("\n")
    if meta is not None:
        write_meta(path, meta)


def read_dataset(path: str) -> list[SceneRecord]:
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_number, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                doc = json.loads(line)
                records.append(SceneRecord.from_dict(doc))
            except MalformedLineError:
                raise
            except (json.JSONDecodeError, ValueError, KeyError, TypeError) as exc:
                raise MalformedLineError(line_number, str(exc)) from exc
    return records


def write_meta(path: str, meta: dict) -> None:
    with open(meta_path(path), "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_meta(path: str) -> Optional[dict]:
    mp = meta_path(path)
    if not os.path.exists(mp):
        return None
    with open(mp, "r", encoding="utf-8") as fh:
        return json.load(fh)


def meta_path(path: str) -> str:
    return path + ".meta.json"


def write_jsonl(rows: Iterable[dict], path: str, meta: Optional[dict] = None) -> None:
    """Write generic line-delimited documents (predictions, reports, logs)."""
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row))
            fh.write("\n")
    if meta is not None:
        write_meta(path, meta)


def read_jsonl(path: str) -> list[dict]:
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_number, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rows.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise MalformedLineError(line_number, str(exc)) from exc
    return rows
