"""Schema-versioned metrics files: CSV with a ``# v=N`` header line, JSON and JSONL with a "v" field."""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path

SCHEMA_VERSION = 1


class SchemaError(ValueError):
    pass


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return v


def csv_text(fields, rows) -> str:
    buf = io.StringIO()
    buf.write(f"# v={SCHEMA_VERSION}\n")
    w = csv.DictWriter(buf, fieldnames=list(fields), extrasaction="ignore", lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: _fmt(r.get(k, "")) for k in fields})
    return buf.getvalue()


def write_csv(path: str | Path, fields, rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(csv_text(fields, rows))
    return path


def read_csv(path: str | Path) -> list[dict]:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0].strip() != f"# v={SCHEMA_VERSION}":
        raise SchemaError(f"{path}: missing or unsupported schema header (expected '# v={SCHEMA_VERSION}')")
    return list(csv.DictReader(lines[1:]))


def json_text(obj: dict) -> str:
    return json.dumps({"v": SCHEMA_VERSION, **obj}, sort_keys=True, indent=2) + "\n"


def write_json(path: str | Path, obj: dict) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json_text(obj))
    return path


def _check(obj: dict, where) -> dict:
    if obj.get("v") != SCHEMA_VERSION:
        raise SchemaError(f"{where}: unsupported schema version {obj.get('v')!r}")
    return obj


def read_json(path: str | Path) -> dict:
    return _check(json.loads(Path(path).read_text()), path)


def jsonl_text(records) -> str:
    return "".join(json.dumps({"v": SCHEMA_VERSION, **r}, sort_keys=True) + "\n" for r in records)


def write_jsonl(path: str | Path, records) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(jsonl_text(records))
    return path


def read_jsonl(path: str | Path) -> list[dict]:
    return [_check(json.loads(line), path) for line in Path(path).read_text().splitlines() if line.strip()]
