"""Deterministic serialization shared by the command-line tools.

Every artifact starts with a header (tool version, config hash, seed and
the canonical config).  CSV files carry it as ``#`` comment lines that the
readers in this package skip; JSON files carry it as top-level keys next to
``schema_version``.  Floats are written with ten significant digits so
outputs are byte-stable.
"""

from __future__ import annotations

import hashlib
import io
import json
import math
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__

SCHEMA_VERSION = 1
FLOAT_FORMAT = "%.10g"


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def canonical_json(obj) -> str:
    return json.dumps(clean(obj), sort_keys=True, separators=(",", ":"))


def config_hash(config: dict) -> str:
    """Stable digest of a config dict (flags plus input digests)."""
    return hashlib.sha256(canonical_json(config).encode()).hexdigest()[:16]


def clean(obj):
    """Convert to JSON-ready builtins; floats rounded to ten significant digits, NaN to null."""
    if isinstance(obj, dict):
        return {str(k): clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [clean(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if not math.isfinite(x):
            return None
        return float(FLOAT_FORMAT % x)
    if isinstance(obj, pd.DataFrame):
        return [clean(r) for r in obj.to_dict(orient="records")]
    if isinstance(obj, Path):
        return str(obj)
    if obj is None or isinstance(obj, str):
        return obj
    return str(obj)


class Header:
    def __init__(self, command: str, config: dict, seed: int):
        self.command = command
        self.config = clean(config)
        self.seed = int(seed)
        self.hash = config_hash({"command": command, "config": self.config})

    def csv_lines(self) -> str:
        return (f"# tool: clickpersist {__version__}\n"
                f"# command: {self.command}\n"
                f"# config_hash: {self.hash}\n"
                f"# seed: {self.seed}\n"
                f"# config: {canonical_json(self.config)}\n")

    def json_fields(self) -> dict:
        return {"schema_version": SCHEMA_VERSION, "tool": "clickpersist", "version": __version__,
                "command": self.command, "config_hash": self.hash, "seed": self.seed, "config": self.config}


def frame_csv(frame: pd.DataFrame, header: Header | None = None, index: bool = False) -> str:
    body = frame.to_csv(index=index, lineterminator="\n", na_rep="", float_format=FLOAT_FORMAT)
    return (header.csv_lines() if header else "") + body


def write_text(path, text: str) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        fh.write(text)
    return path


def write_csv(path, frame: pd.DataFrame, header: Header, index: bool = False) -> Path:
    return write_text(path, frame_csv(frame, header, index))


def write_json(path, payload: dict, header: Header) -> Path:
    doc = {**header.json_fields(), **clean(payload)}
    return write_text(path, json.dumps(doc, indent=2, sort_keys=True) + "\n")


def strip_header(text: str) -> str:
    """Drop leading ``#`` comment lines (the artifact header)."""
    lines = text.splitlines(keepends=True)
    i = 0
    while i < len(lines) and lines[i].startswith("#"):
        i += 1
    return "".join(lines[i:])


def open_text(path_or_buffer) -> io.StringIO:
    """Read a path or buffer and return its contents, header removed, as a buffer."""
    if isinstance(path_or_buffer, (str, Path)):
        text = Path(path_or_buffer).read_text()
    else:
        text = path_or_buffer.read()
    return io.StringIO(strip_header(text))
