"""Recursive session construction from a timestamped interaction stream."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Iterable, Iterator

from .records import EventRecord, Session

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SessionBuilderConfig:
    rho_initial_s: float = 90.0
    rho_floor_s: float = 15.0
    max_utterances: int = 5

    def __post_init__(self):
        if self.rho_floor_s <= 0:
            raise ValueError("rho_floor_s must be positive")
        if self.rho_initial_s < self.rho_floor_s:
            raise ValueError("rho_initial_s must be >= rho_floor_s")
        if self.max_utterances < 1:
            raise ValueError("max_utterances must be >= 1")


def _closure(times: list[float], seed: int, rho: float) -> tuple[int, int]:
    """Index range ``[lo, hi)`` reachable from ``seed`` by hops of at most ``rho``.

    ``times`` is sorted, so the transitive closure is the contiguous run
    around the seed with every consecutive gap <= rho.
    """
    lo = seed
    while lo > 0 and times[lo] - times[lo - 1] <= rho:
        lo -= 1
    hi = seed + 1
    while hi < len(times) and times[hi] - times[hi - 1] <= rho:
        hi += 1
    return lo, hi


def _sessions_for_segment(pool: list[EventRecord], cfg: SessionBuilderConfig) -> Iterator[tuple[list[EventRecord], float]]:
    """Greedy seeding over a time-sorted pool; yields ``(turns, rho_final)``."""
    pool = list(pool)
    while pool:
        times = [e.timestamp_s for e in pool]
        seed = 0  # earliest unassigned event
        rho = cfg.rho_initial_s
        lo, hi = _closure(times, seed, rho)
        while hi - lo > cfg.max_utterances and rho > cfg.rho_floor_s:
            rho = max(rho / 2.0, cfg.rho_floor_s)
            lo, hi = _closure(times, seed, rho)
        members = list(range(lo, hi))
        if len(members) > cfg.max_utterances:
            log.warning(
                "session seeded at t=%.3f still has %d utterances at the %.1fs floor; "
                "keeping the %d closest to the seed",
                times[seed], len(members), rho, cfg.max_utterances,
            )
            # stable sort: equal distances keep the earlier event
            members.sort(key=lambda idx: abs(times[idx] - times[seed]))
            members = sorted(members[: cfg.max_utterances])
        chosen = set(members)
        yield [pool[i] for i in members], rho
        pool = [e for i, e in enumerate(pool) if i not in chosen]


def iter_sessions(
    events: Iterable[EventRecord],
    cfg: SessionBuilderConfig = SessionBuilderConfig(),
    *,
    id_prefix: str = "s",
) -> Iterator[Session]:
    """Stream sessions from events already sorted by timestamp.

    A gap wider than ``rho_initial_s`` can never be bridged, so the stream
    is cut there and each segment is processed independently; memory is
    bounded by the longest segment rather than the whole stream.
    """
    counter = 0
    segment: list[EventRecord] = []
    last = None

    def flush():
        nonlocal counter
        for turns, rho in _sessions_for_segment(segment, cfg):
            yield Session(f"{id_prefix}{counter:06d}", turns, rho)
            counter += 1

    for event in events:
        if last is not None and event.timestamp_s < last:
            raise ValueError("iter_sessions needs events sorted by timestamp")
        if last is not None and event.timestamp_s - last > cfg.rho_initial_s:
            yield from flush()
            segment = []
        segment.append(event)
        last = event.timestamp_s
    yield from flush()


def build_sessions(
    events: Iterable[EventRecord], cfg: SessionBuilderConfig = SessionBuilderConfig()
) -> list[Session]:
    """Group events into sessions; input order does not matter.

    The earliest unassigned event seeds each session. Membership is the
    transitive closure of "within rho seconds of a member"; while the
    session exceeds ``max_utterances`` rho is halved (clamped at the floor)
    and the closure recomputed around the same seed. If the floor is
    reached and the session is still too large, the ``max_utterances``
    events nearest the seed are kept and the rest return to the pool.
    """
    ordered = sorted(enumerate(events), key=lambda pair: (pair[1].timestamp_s, pair[0]))
    return list(iter_sessions((e for _, e in ordered), cfg))
