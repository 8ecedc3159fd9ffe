"""Small file helpers: atomic writes, CSV tables and ``key = value`` files."""
from __future__ import annotations

import csv
import io
import os
from pathlib import Path


def atomic_write_text(path, text):
    """Write ``text`` to ``path`` through a temporary file and ``os.replace``."""
    path = Path(path)
    tmp = path.with_name(f".{path.name}.tmp{os.getpid()}")
    with open(tmp, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_csv(path, header, rows):
    """Atomically write a CSV table with a header row."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    atomic_write_text(path, buf.getvalue())


def read_csv(path):
    """Return ``(header, rows)`` with every field as a string."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty table")
    return rows[0], rows[1:]


def parse_key_values(text, source="<string>"):
    """Parse ``key = value`` lines; ``#`` starts a comment.

    Values are returned as strings. Duplicate keys are an error.
    """
    out = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{source}:{n}: expected 'key = value', got {raw!r}")
        k, v = (s.strip() for s in line.split("=", 1))
        if not k:
            raise ValueError(f"{source}:{n}: empty key")
        if k in out:
            raise ValueError(f"{source}:{n}: duplicate key {k!r}")
        out[k] = v
    return out


def read_key_values(path):
    return parse_key_values(Path(path).read_text(encoding="utf-8"), str(path))


def format_key_values(items, comments=()):
    lines = [f"# {c}" for c in comments]
    lines += [f"{k} = {_fmt(v)}" for k, v in items]
    return "\n".join(lines) + "\n"
