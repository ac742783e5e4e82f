"""Contrastive fine-tuning losses for conversational ASR and their data tooling."""

from .heads import HeadParams, head_backward, head_forward
from .losses import (
    Label,
    LossConfig,
    NBestBatch,
    PfBatch,
    info_nce_row,
    nbest_loss,
    overall_loss,
    pf_loss,
    pf_loss_chunked,
)
from .metrics import align, corpus_score, oracle_wer, relative_improvement

__version__ = "0.1.0"

__all__ = [
    "HeadParams",
    "Label",
    "LossConfig",
    "NBestBatch",
    "PfBatch",
    "align",
    "corpus_score",
    "head_backward",
    "head_forward",
    "info_nce_row",
    "nbest_loss",
    "oracle_wer",
    "overall_loss",
    "pf_loss",
    "pf_loss_chunked",
    "relative_improvement",
]
