"""JSONL turn manifests: streaming readers, writers and the schema validator."""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass
from pathlib import Path
from typing import IO, Iterable, Iterator

from .dialogue.records import Session, sessions_from_rows, turn_from_json
from .errors import ParseError
from .tensor import read_clce_header

SPEAKERS = ("user", "agent")


@dataclass(frozen=True)
class Diagnostic:
    severity: str  # "error" | "warning"
    line: int
    field: str | None
    message: str

    def to_dict(self) -> dict:
        return {"severity": self.severity, "line": self.line, "field": self.field, "message": self.message}

    def __str__(self) -> str:
        where = f"line {self.line}" + (f", field '{self.field}'" if self.field else "")
        return f"{self.severity}: {where}: {self.message}"


def iter_json_lines(path: str | os.PathLike) -> Iterator[tuple[int, dict]]:
    """Yield ``(line_number, object)`` for every non-blank line."""
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from exc
            if not isinstance(obj, dict):
                raise ParseError(f"{path}:{lineno}: expected a JSON object")
            yield lineno, obj


def iter_turn_rows(path: str | os.PathLike):
    """Yield ``(session_id, turn_index, EventRecord, raw)`` per manifest line."""
    for lineno, obj in iter_json_lines(path):
        try:
            sid, tidx, record = turn_from_json(obj, default_id=f"e{lineno:06d}")
        except ParseError as exc:
            raise ParseError(f"{path}:{lineno}: {exc}") from exc
        yield sid, tidx, record, obj


def iter_sessions_from_manifest(path: str | os.PathLike) -> Iterator[Session]:
    """Stream sessions from a manifest whose lines are grouped by session_id."""
    pending: list = []
    current = object()
    for row in iter_turn_rows(path):
        if pending and row[0] != current:
            yield from sessions_from_rows(pending)
            pending = []
        current = row[0]
        pending.append(row)
    if pending:
        yield from sessions_from_rows(pending)


def write_json_lines(fh: IO[str], rows: Iterable[dict]) -> int:
    n = 0
    for row in rows:
        fh.write(json.dumps(row, sort_keys=True) + "\n")
        n += 1
    return n


def resolve_ref(ref: str, manifest_path: str | os.PathLike) -> Path:
    p = Path(ref)
    return p if p.is_absolute() else Path(manifest_path).parent / p


def _is_number(x) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool) and math.isfinite(x)


def validate_manifest(path: str | os.PathLike, expected_dim: int | None = None) -> list[Diagnostic]:
    """Check every line against the turn schema; never raises on bad content.

    Embedding files are opened header-only. Their column count must agree
    with ``expected_dim`` or, if not given, with the first file seen.
    """
    diags: list[Diagnostic] = []
    dim = expected_dim
    dim_source = "expected_dim"

    def err(line, fld, msg, severity="error"):
        diags.append(Diagnostic(severity, line, fld, msg))

    try:
        fh = open(path)
    except OSError as exc:
        return [Diagnostic("error", 0, None, f"cannot read manifest: {exc}")]
    with fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                err(lineno, None, f"invalid JSON: {exc.msg}")
                continue
            if not isinstance(obj, dict):
                err(lineno, None, "expected a JSON object")
                continue

            for fld in ("timestamp_s", "speaker", "transcript"):
                if fld not in obj:
                    err(lineno, fld, "required field is missing")
            if "timestamp_s" in obj and not _is_number(obj["timestamp_s"]):
                err(lineno, "timestamp_s", "must be a finite number")
            speaker = obj.get("speaker")
            if "speaker" in obj and speaker not in SPEAKERS:
                err(lineno, "speaker", f"must be one of {SPEAKERS}, got {speaker!r}")
            if "transcript" in obj:
                if not isinstance(obj["transcript"], str):
                    err(lineno, "transcript", "must be a string")
                elif speaker == "user" and not obj["transcript"].strip():
                    err(lineno, "transcript", "user turns need a non-empty transcript")
            if obj.get("session_id") is not None and not isinstance(obj["session_id"], str):
                err(lineno, "session_id", "must be a string")
            tidx = obj.get("turn_index")
            if tidx is not None and (not isinstance(tidx, int) or isinstance(tidx, bool) or tidx < 0):
                err(lineno, "turn_index", "must be a non-negative integer")
            wer_value = obj.get("wer")
            if wer_value is not None and (not _is_number(wer_value) or wer_value < 0):
                err(lineno, "wer", "must be a non-negative number")
            hyps = obj.get("hyp_transcripts")
            if hyps is not None:
                if not isinstance(hyps, list):
                    err(lineno, "hyp_transcripts", "must be a list")
                else:
                    for h in hyps:
                        ok = isinstance(h, str) or (
                            isinstance(h, list) and len(h) == 2 and isinstance(h[0], str)
                            and (h[1] is None or _is_number(h[1]))
                        ) or (isinstance(h, dict) and isinstance(h.get("text"), str))
                        if not ok:
                            err(lineno, "hyp_transcripts", f"unrecognized hypothesis entry {h!r}")
                            break
            if obj.get("labels") is not None and not isinstance(obj["labels"], list):
                err(lineno, "labels", "must be a list")

            ref = obj.get("embedding_ref")
            if ref is None:
                continue
            if not isinstance(ref, str):
                err(lineno, "embedding_ref", "must be a string path")
                continue
            target = resolve_ref(ref, path)
            if not target.exists():
                err(lineno, "embedding_ref", f"file not found: {target}")
                continue
            try:
                rows, cols, present = read_clce_header(target)
            except ParseError as exc:
                err(lineno, "embedding_ref", str(exc))
                continue
            if present != rows * cols:
                err(
                    lineno, "embedding_ref",
                    f"dimension mismatch: {target.name} declares {rows}x{cols} "
                    f"({rows * cols} floats) but holds {present}",
                )
            elif rows < 1:
                err(lineno, "embedding_ref", f"{target.name} has no frames")
            if dim is None:
                dim, dim_source = cols, f"line {lineno}"
            elif cols != dim:
                err(
                    lineno, "embedding_ref",
                    f"dimension mismatch: {target.name} has k={cols}, expected {dim} (from {dim_source})",
                )
    return diags
