"""Session building, repeat/rephrase detection and error injection."""

from .detection import detect_repeat_rephrase, filter_high_deletion
from .embedding import EmbeddingTable, HashingTextEmbedder, cosine
from .injection import InjectionConfig, inject_errors
from .records import EventRecord, Hypothesis, RephraseKind, RephraseLabel, Session, Speaker
from .rephrase import TemplateRephraser, template_rephrase
from .sessions import SessionBuilderConfig, build_sessions, iter_sessions

__all__ = [
    "EmbeddingTable",
    "EventRecord",
    "HashingTextEmbedder",
    "Hypothesis",
    "InjectionConfig",
    "RephraseKind",
    "RephraseLabel",
    "Session",
    "SessionBuilderConfig",
    "Speaker",
    "TemplateRephraser",
    "build_sessions",
    "cosine",
    "detect_repeat_rephrase",
    "filter_high_deletion",
    "inject_errors",
    "iter_sessions",
    "template_rephrase",
]
