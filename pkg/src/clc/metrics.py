"""Word-level alignment, WER/SER, relative improvement and oracle WER."""

from __future__ import annotations

import re
import string
from dataclasses import asdict, dataclass
from typing import Iterable, Sequence

from .errors import EmptyCorpus, EmptyNBest, ZeroBaseline

_PUNCT = re.compile(f"[{re.escape(string.punctuation)}]")


def normalize_text(text: str) -> str:
    """Lowercase, drop punctuation, collapse whitespace.

    Apostrophes are removed rather than split on, so "don't" -> "dont".
    """
    return " ".join(_PUNCT.sub("", text.lower()).split())


def tokenize(text: str, normalize: bool = True) -> list[str]:
    return (normalize_text(text) if normalize else text).split()


@dataclass(frozen=True)
class AlignmentResult:
    substitutions: int
    deletions: int
    insertions: int
    hits: int
    ref_len: int

    @property
    def errors(self) -> int:
        return self.substitutions + self.deletions + self.insertions

    @property
    def wer(self) -> float:
        if self.ref_len == 0:
            return 0.0 if self.errors == 0 else float("inf")
        return self.errors / self.ref_len

    def to_dict(self) -> dict:
        return {**asdict(self), "errors": self.errors, "wer": self.wer}


def align(ref: Sequence[str], hyp: Sequence[str]) -> AlignmentResult:
    """Unit-cost Levenshtein alignment over words.

    On backtrace ties the preferred operation is substitution, then
    deletion, then insertion (hits are always taken when possible).
    """
    n, m = len(ref), len(hyp)
    # dist[i][j]: edit distance between ref[:i] and hyp[:j]
    dist = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(1, n + 1):
        dist[i][0] = i
    for j in range(1, m + 1):
        dist[0][j] = j
    for i in range(1, n + 1):
        row, prev = dist[i], dist[i - 1]
        r = ref[i - 1]
        for j in range(1, m + 1):
            diag = prev[j - 1] + (0 if r == hyp[j - 1] else 1)
            row[j] = min(diag, prev[j] + 1, row[j - 1] + 1)

    subs = dels = ins = hits = 0
    i, j = n, m
    while i > 0 or j > 0:
        if i > 0 and j > 0:
            match = ref[i - 1] == hyp[j - 1]
            if dist[i][j] == dist[i - 1][j - 1] + (0 if match else 1):
                if match:
                    hits += 1
                else:
                    subs += 1
                i, j = i - 1, j - 1
                continue
        if i > 0 and dist[i][j] == dist[i - 1][j] + 1:
            dels += 1
            i -= 1
        else:
            ins += 1
            j -= 1
    return AlignmentResult(subs, dels, ins, hits, n)


def align_text(ref: str, hyp: str, normalize: bool = True) -> AlignmentResult:
    return align(tokenize(ref, normalize), tokenize(hyp, normalize))


def wer(ref: str, hyp: str, normalize: bool = True) -> float:
    return align_text(ref, hyp, normalize).wer


@dataclass(frozen=True)
class CorpusScore:
    wer: float
    ser: float
    n_utterances: int
    n_ref_words: int
    n_errors: int
    alignments: tuple[AlignmentResult, ...] = ()

    def to_dict(self, per_utt: bool = False) -> dict:
        out = {
            "wer": self.wer,
            "ser": self.ser,
            "n_utterances": self.n_utterances,
            "n_ref_words": self.n_ref_words,
            "n_errors": self.n_errors,
        }
        if per_utt:
            out["per_utt"] = [a.to_dict() for a in self.alignments]
        return out


def score_alignments(alignments: Iterable[AlignmentResult]) -> CorpusScore:
    alignments = tuple(alignments)
    if not alignments:
        raise EmptyCorpus("cannot score an empty corpus")
    ref_words = sum(a.ref_len for a in alignments)
    errors = sum(a.errors for a in alignments)
    if ref_words == 0:
        pooled = 0.0 if errors == 0 else float("inf")
    else:
        pooled = errors / ref_words
    ser = sum(a.errors > 0 for a in alignments) / len(alignments)
    return CorpusScore(pooled, ser, len(alignments), ref_words, errors, alignments)


def corpus_score(pairs: Iterable[tuple[str, str]], normalize: bool = True) -> CorpusScore:
    """Pooled WER (total errors / total reference words) and SER."""
    return score_alignments(align_text(ref, hyp, normalize) for ref, hyp in pairs)


def relative_improvement(baseline: float, system: float) -> float:
    """Percent relative improvement; positive means ``system`` is better."""
    if baseline <= 0:
        raise ZeroBaseline(f"baseline must be positive, got {baseline}")
    return 100.0 * (baseline - system) / baseline


def oracle_alignment(ref: Sequence[str], nbest: Sequence[Sequence[str]]) -> tuple[int, AlignmentResult]:
    """Best hypothesis index and its alignment; ties keep the lowest index."""
    if not nbest:
        raise EmptyNBest("oracle WER needs at least one hypothesis")
    best_idx, best = 0, align(ref, nbest[0])
    for k in range(1, len(nbest)):
        cand = align(ref, nbest[k])
        if cand.errors < best.errors:
            best_idx, best = k, cand
    return best_idx, best


def oracle_wer(ref: Sequence[str], nbest: Sequence[Sequence[str]]) -> float:
    return oracle_alignment(ref, nbest)[1].wer
