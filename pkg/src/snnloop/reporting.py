"""Writers for report artifacts.

CSV files start with one ``#`` comment line carrying the config hash, the
master seed and the full config JSON.  JSON files carry the same data under
a top-level ``"meta"`` key.  Writes go through a temporary file and a rename
so a failed run never leaves a half-written artifact behind.
"""

from __future__ import annotations

import csv
import io
import json
import os
from pathlib import Path
from typing import Iterable, Optional, Sequence

HEADER_PREFIX = "# snnloop"


def make_meta(config_json: str, config_hash: str, seed: int, **extra) -> dict:
    return {"config_hash": config_hash, "seed": int(seed), "config": json.loads(config_json), **extra}


def header_line(meta: dict) -> str:
    cfg = json.dumps(meta["config"], sort_keys=True, separators=(",", ":"))
    return f"{HEADER_PREFIX} config_hash={meta['config_hash']} seed={meta['seed']} config={cfg}"


def parse_header(line: str) -> dict:
    """Inverse of :func:`header_line`."""
    if not line.startswith(HEADER_PREFIX):
        raise ValueError("not an artifact header line")
    rest = line[len(HEADER_PREFIX):].strip()
    h, s, c = rest.split(" ", 2)
    return {"config_hash": h.split("=", 1)[1], "seed": int(s.split("=", 1)[1]),
            "config": json.loads(c.split("=", 1)[1])}


def _atomic_write(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def _fmt(v):
    # repr keeps full double precision; ints and strings pass through
    if isinstance(v, float):
        return repr(v)
    return v


def write_csv(path, columns: Sequence[str], rows: Iterable[Sequence], meta: Optional[dict] = None) -> None:
    buf = io.StringIO()
    if meta is not None:
        buf.write(header_line(meta) + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    _atomic_write(path, buf.getvalue())


def read_csv(path) -> tuple[Optional[dict], list[dict]]:
    """Return ``(meta, rows)``; values stay strings."""
    lines = Path(path).read_text().splitlines()
    meta = None
    if lines and lines[0].startswith("#"):
        meta = parse_header(lines[0])
        lines = lines[1:]
    return meta, list(csv.DictReader(lines))


def write_json(path, payload: dict, meta: Optional[dict] = None) -> None:
    doc = dict(payload)
    if meta is not None:
        doc = {"meta": meta, **doc}
    _atomic_write(path, json.dumps(doc, indent=2, sort_keys=False) + "\n")
