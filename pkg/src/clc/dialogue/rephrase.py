"""Deterministic template rephraser used when no language model is plugged in."""

from __future__ import annotations

import re
from typing import Callable, Mapping

from ..errors import EmptyText, NoTemplateApplies
from ..metrics import normalize_text

Rephraser = Callable[[str], str]

FALLBACK_PREFIX = "I meant: "

# (pattern, replacement) applied to the lowercased, punctuation-free text;
# the first template that changes the text wins.
TEMPLATES: tuple[tuple[str, str], ...] = (
    (r"^are there (.+)$", r"is there any \1"),
    (r"^is there (?!any )(.+)$", r"are there any \1"),
    (r"^can you (.+)$", r"could you please \1"),
    (r"^could you (.+)$", r"can you \1"),
    (r"^what is (.+)$", r"tell me \1"),
    (r"^what's (.+)$", r"tell me \1"),
    (r"^i want (?:to )?(.+)$", r"i would like \1"),
    (r"^i need (.+)$", r"i am looking for \1"),
    (r"^turn on (.+)$", r"switch on \1"),
    (r"^turn off (.+)$", r"switch off \1"),
    (r"^play (.+)$", r"put on \1"),
    (r"^find (.+)$", r"search for \1"),
    (r"^book (.+)$", r"make a reservation for \1"),
    (r"^show me (.+)$", r"let me see \1"),
    (r"^how (?:much|many) (.+)$", r"what is the number of \1"),
    (r"\bplease\b\s*", ""),
    (r"\bthanks\b", "thank you"),
    (r"\bcheap\b", "inexpensive"),
    (r"\bexpensive\b", "pricey"),
    (r"\brestaurant\b", "place to eat"),
    (r"\bhotel\b", "place to stay"),
)
_COMPILED = tuple((re.compile(p), r) for p, r in TEMPLATES)


def apply_templates(text: str) -> str:
    """First template rewrite that differs from the input, or NoTemplateApplies."""
    base = normalize_text(text)
    for pattern, repl in _COMPILED:
        out = " ".join(pattern.sub(repl, base).split())
        if out and out != base and out != text:
            return out
    raise NoTemplateApplies(f"no template matches {text!r}")


class TemplateRephraser:
    """Callable rephraser: exact mapping table first, then templates, then a prefix.

    The mapping is keyed by normalized text, so "Are there noisy neighbors?"
    and "are there noisy neighbors" share one entry.
    """

    def __init__(self, mapping: Mapping[str, str] | None = None):
        self.mapping = {normalize_text(k): v for k, v in (mapping or {}).items()}

    def __call__(self, text: str) -> str:
        if not text or not text.strip():
            raise EmptyText("cannot rephrase empty text")
        mapped = self.mapping.get(normalize_text(text))
        if mapped is not None and mapped != text:
            return mapped
        try:
            return apply_templates(text)
        except NoTemplateApplies:
            return FALLBACK_PREFIX + text


def template_rephrase(text: str) -> str:
    return TemplateRephraser()(text)
