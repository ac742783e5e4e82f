"""Turn, session and label records plus their JSONL encoding."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum
from typing import Any

from ..errors import ParseError


class Speaker(str, Enum):
    USER = "user"
    AGENT = "agent"


@dataclass(frozen=True)
class Hypothesis:
    text: str
    score: float | None = None


@dataclass(frozen=True)
class EventRecord:
    """One timestamped utterance. ``transcript`` is the reference text."""

    event_id: str
    timestamp_s: float
    speaker: Speaker
    transcript: str
    embedding_ref: str | None = None
    hypotheses: tuple[Hypothesis, ...] = ()
    wer: float | None = None
    labels: tuple[dict, ...] = ()

    def __post_init__(self):
        if not math.isfinite(self.timestamp_s):
            raise ValueError(f"event {self.event_id}: timestamp must be finite")
        if self.speaker is Speaker.USER and not self.transcript.strip():
            raise ValueError(f"event {self.event_id}: user turns need a transcript")

    @property
    def is_user(self) -> bool:
        return self.speaker is Speaker.USER

    def with_labels(self, *labels: dict) -> "EventRecord":
        return replace(self, labels=self.labels + tuple(labels))


@dataclass
class Session:
    session_id: str
    turns: list[EventRecord]
    rho_final_s: float = 90.0

    def user_turns(self) -> list[EventRecord]:
        return [t for t in self.turns if t.is_user]


class RephraseKind(str, Enum):
    REPEAT = "repeat"
    REPHRASE = "rephrase"


@dataclass(frozen=True)
class RephraseLabel:
    turn_id: str  # the restating turn
    kind: RephraseKind
    source_turn_id: str  # the turn that triggered it (member of R)

    def to_dict(self) -> dict:
        return {"turn_id": self.turn_id, "kind": self.kind.value, "source_turn_id": self.source_turn_id}


# --- JSONL encoding -----------------------------------------------------------

REQUIRED_FIELDS = ("timestamp_s", "speaker", "transcript")


def _parse_hypotheses(raw) -> tuple[Hypothesis, ...]:
    out = []
    for item in raw or ():
        if isinstance(item, str):
            out.append(Hypothesis(item))
        elif isinstance(item, (list, tuple)) and len(item) == 2:
            out.append(Hypothesis(str(item[0]), None if item[1] is None else float(item[1])))
        elif isinstance(item, dict) and "text" in item:
            score = item.get("score")
            out.append(Hypothesis(str(item["text"]), None if score is None else float(score)))
        else:
            raise ParseError(f"unrecognized hypothesis entry {item!r}")
    return tuple(out)


def turn_from_json(obj: dict[str, Any], default_id: str) -> tuple[str | None, int | None, EventRecord]:
    """Decode one manifest line into ``(session_id, turn_index, record)``."""
    missing = [f for f in REQUIRED_FIELDS if f not in obj]
    if missing:
        raise ParseError(f"missing field(s): {', '.join(missing)}")
    session_id = obj.get("session_id")
    turn_index = obj.get("turn_index")
    event_id = obj.get("event_id")
    if event_id is None:
        event_id = f"{session_id}:{turn_index}" if session_id is not None and turn_index is not None else default_id
    try:
        record = EventRecord(
            event_id=str(event_id),
            timestamp_s=float(obj["timestamp_s"]),
            speaker=Speaker(obj["speaker"]),
            transcript=str(obj["transcript"]),
            embedding_ref=obj.get("embedding_ref"),
            hypotheses=_parse_hypotheses(obj.get("hyp_transcripts")),
            wer=None if obj.get("wer") is None else float(obj["wer"]),
            labels=tuple(obj.get("labels") or ()),
        )
    except (TypeError, ValueError) as exc:
        raise ParseError(str(exc)) from exc
    return (None if session_id is None else str(session_id)), turn_index, record


def turn_to_json(session_id: str | None, turn_index: int | None, turn: EventRecord) -> dict:
    return {
        "session_id": session_id,
        "turn_index": turn_index,
        "event_id": turn.event_id,
        "speaker": turn.speaker.value,
        "timestamp_s": turn.timestamp_s,
        "transcript": turn.transcript,
        "hyp_transcripts": [[h.text, h.score] for h in turn.hypotheses],
        "wer": turn.wer,
        "embedding_ref": turn.embedding_ref,
        "labels": list(turn.labels),
    }


def session_to_json(session: Session) -> list[dict]:
    rows = []
    for idx, turn in enumerate(session.turns):
        row = turn_to_json(session.session_id, idx, turn)
        row["rho_final_s"] = session.rho_final_s
        rows.append(row)
    return rows


def sessions_from_rows(rows) -> list[Session]:
    """Group decoded ``(session_id, turn_index, record, extra)`` rows by session id.

    Sessions keep first-appearance order; turns are ordered by turn_index
    when present, else by timestamp.
    """
    grouped: dict[str, list] = {}
    rho: dict[str, float] = {}
    for session_id, turn_index, record, extra in rows:
        if session_id is None:
            raise ParseError(f"turn {record.event_id} has no session_id")
        grouped.setdefault(session_id, []).append((turn_index, record))
        if "rho_final_s" in extra:
            rho[session_id] = float(extra["rho_final_s"])
    sessions = []
    for sid, items in grouped.items():
        items.sort(key=lambda it: (it[0] if it[0] is not None else math.inf, it[1].timestamp_s))
        sessions.append(Session(sid, [rec for _, rec in items], rho.get(sid, 90.0)))
    return sessions

