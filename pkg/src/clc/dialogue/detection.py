"""Repeat/rephrase detection by semantic vector matching."""

from __future__ import annotations

from typing import Callable, Mapping

import numpy as np

from ..errors import MissingEmbedding
from ..metrics import align_text, normalize_text
from .embedding import cosine
from .records import RephraseKind, RephraseLabel, Session

# absorbs rounding when identical vectors are compared at threshold 1.0
COSINE_SLACK = 1e-12


def detect_repeat_rephrase(
    session: Session,
    embeddings: Mapping[str, np.ndarray] | Callable[[str], np.ndarray],
    similarity_threshold: float,
) -> list[RephraseLabel]:
    """Label each user turn that restates the previous user turn.

    ``embeddings`` maps event_id to a vector, or is a callable taking the
    turn and returning one.
    """
    if not 0.0 < similarity_threshold <= 1.0:
        raise ValueError(f"similarity_threshold must be in (0, 1], got {similarity_threshold}")
    users = session.user_turns()

    def lookup(turn):
        if callable(embeddings):
            return embeddings(turn)
        try:
            return embeddings[turn.event_id]
        except KeyError:
            raise MissingEmbedding(f"no embedding for user turn {turn.event_id}") from None

    vectors = [lookup(t) for t in users]
    labels = []
    for a in range(len(users) - 1):
        first, second = users[a], users[a + 1]
        if cosine(vectors[a], vectors[a + 1]) + COSINE_SLACK < similarity_threshold:
            continue
        same = normalize_text(first.transcript) == normalize_text(second.transcript)
        kind = RephraseKind.REPEAT if same else RephraseKind.REPHRASE
        labels.append(RephraseLabel(second.event_id, kind, first.event_id))
    return labels


def filter_high_deletion(
    turns: list[tuple[str, str]], deletion_rate_threshold: float = 0.5
) -> tuple[list[int], list[int]]:
    """Split turn indices into ``(kept, dropped)`` by deletions / reference length."""
    kept, dropped = [], []
    for idx, (ref, hyp) in enumerate(turns):
        result = align_text(ref, hyp)
        rate = result.deletions / result.ref_len if result.ref_len else 0.0
        (dropped if rate > deletion_rate_threshold else kept).append(idx)
    return kept, dropped
