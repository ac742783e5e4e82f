"""Synthetic repeat/rephrase injection into clean dialogues."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Mapping

import numpy as np

from ..errors import EmptyErrorPool
from .records import EventRecord, RephraseKind, RephraseLabel, Session, Speaker
from .rephrase import Rephraser, template_rephrase

DEFAULT_ERROR_RESPONSES = (
    "I'm sorry, I don't understand.",
    "Sorry, I didn't catch that.",
    "I'm not sure what you mean.",
    "Sorry, can you say that again?",
)


@dataclass(frozen=True)
class InjectionConfig:
    wer_candidate_threshold: float = 0.15
    injection_rate: float = 0.20
    repeat_vs_rephrase_split: float = 0.5  # probability of a verbatim repeat
    rng_seed: int = 0
    error_response_pool: tuple[str, ...] = field(default=DEFAULT_ERROR_RESPONSES)

    def __post_init__(self):
        for name in ("wer_candidate_threshold", "injection_rate", "repeat_vs_rephrase_split"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {v}")
        object.__setattr__(self, "error_response_pool", tuple(self.error_response_pool))


def _turn_wer(turn: EventRecord, per_turn_wer: Mapping[str, float]) -> float:
    if turn.event_id in per_turn_wer:
        return per_turn_wer[turn.event_id]
    return turn.wer if turn.wer is not None else 0.0


def injection_count(n_candidates: int, rate: float) -> int:
    # the epsilon keeps e.g. 0.29 * 100 = 28.999999999999996 from flooring to 28
    return min(n_candidates, math.floor(rate * n_candidates + 1e-9))


@dataclass(frozen=True)
class InjectionSite:
    session_index: int
    turn_index: int  # the source (highest-WER user turn)
    kind: RephraseKind
    order: int  # position among selected sessions; drives the error-response rotation


def candidate_turn(session: Session, per_turn_wer: Mapping[str, float], threshold: float) -> int | None:
    """Index of the highest-WER user turn above ``threshold`` (earliest on ties)."""
    best, best_wer = None, -math.inf
    for t_idx, turn in enumerate(session.turns):
        if turn.is_user:
            w = _turn_wer(turn, per_turn_wer)
            if w > threshold and w > best_wer:
                best, best_wer = t_idx, w
    return best


def select_sites(candidates: list[tuple[int, int]], cfg: InjectionConfig) -> dict[int, InjectionSite]:
    """Seeded draw over ``(session_index, turn_index)`` candidates, keyed by session index."""
    rng = np.random.default_rng(cfg.rng_seed)
    n_pick = injection_count(len(candidates), cfg.injection_rate)
    picked = sorted(rng.choice(len(candidates), size=n_pick, replace=False).tolist()) if n_pick else []
    sites = {}
    for order, c_idx in enumerate(picked):
        s_idx, t_idx = candidates[c_idx]
        is_repeat = bool(rng.random() < cfg.repeat_vs_rephrase_split)
        kind = RephraseKind.REPEAT if is_repeat else RephraseKind.REPHRASE
        sites[s_idx] = InjectionSite(s_idx, t_idx, kind, order)
    return sites


def apply_site(
    session: Session, site: InjectionSite, cfg: InjectionConfig, rephraser: Rephraser
) -> tuple[Session, RephraseLabel]:
    turns = list(session.turns)
    t_idx, kind = site.turn_index, site.kind
    source = turns[t_idx]

    anchor = t_idx + 1 if t_idx + 1 < len(turns) and not turns[t_idx + 1].is_user else t_idx
    t0 = turns[anchor].timestamp_s
    t1 = turns[anchor + 1].timestamp_s if anchor + 1 < len(turns) else t0 + 3.0
    error_turn = EventRecord(
        event_id=f"{source.event_id}+err",
        timestamp_s=t0 + (t1 - t0) / 3.0,
        speaker=Speaker.AGENT,
        transcript=cfg.error_response_pool[site.order % len(cfg.error_response_pool)],
    )
    is_repeat = kind is RephraseKind.REPEAT
    restated = EventRecord(
        event_id=f"{source.event_id}+{kind.value}",
        timestamp_s=t0 + 2.0 * (t1 - t0) / 3.0,
        speaker=Speaker.USER,
        transcript=source.transcript if is_repeat else rephraser(source.transcript),
        # no new audio exists: the restatement reuses the source's frames
        embedding_ref=source.embedding_ref,
        labels=({"kind": kind.value, "role": "restatement", "pair": source.event_id},),
    )
    turns[t_idx] = source.with_labels({"kind": kind.value, "role": "source", "pair": restated.event_id})
    turns[anchor + 1 : anchor + 1] = [error_turn, restated]
    return replace(session, turns=turns), RephraseLabel(restated.event_id, kind, source.event_id)


def inject_errors(
    sessions: list[Session],
    per_turn_wer: Mapping[str, float],
    cfg: InjectionConfig = InjectionConfig(),
    rephraser: Rephraser = template_rephrase,
) -> tuple[list[Session], list[RephraseLabel]]:
    """Insert an agent error turn plus a repeat or rephrase into selected sessions.

    Candidates are sessions with at least one user turn whose WER exceeds
    the threshold; ``floor(rate * |candidates|)`` of them are drawn without
    replacement. In each, the highest-WER user turn (earliest on ties) is
    the source. Both new turns go immediately after the agent turn that
    follows the source, or directly after the source if no agent reply
    follows it. Turn WERs come from ``per_turn_wer`` (keyed by event_id),
    falling back to the turn's own ``wer`` field.
    """
    if not cfg.error_response_pool:
        raise EmptyErrorPool("error_response_pool is empty")
    candidates = []
    for s_idx, session in enumerate(sessions):
        t_idx = candidate_turn(session, per_turn_wer, cfg.wer_candidate_threshold)
        if t_idx is not None:
            candidates.append((s_idx, t_idx))
    sites = select_sites(candidates, cfg)

    out, labels = list(sessions), []
    for s_idx in sorted(sites):
        out[s_idx], label = apply_site(sessions[s_idx], sites[s_idx], cfg, rephraser)
        labels.append(label)
    return out, labels
