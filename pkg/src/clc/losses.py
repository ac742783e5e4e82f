"""Past-Future and N-best contrastive losses with hand-derived gradients.

All ops take raw (un-normalized) head outputs and semantic embeddings,
L2-normalize them internally, and return gradients w.r.t. the raw inputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np

from .errors import (
    BadChunkSize,
    BatchTooSmall,
    NoAlternativeHypothesis,
    NonFinite,
    NotNormalized,
    ShapeMismatch,
)
from .tensor import as_matrix, as_vector, l2_normalize_rows, log_sum_exp, log_sum_exp_rows, normalize_backward

NORM_TOL = 1e-6


@dataclass(frozen=True)
class LossConfig:
    alpha: float = 1.0
    beta: float = 0.7
    tau: float = 0.1
    gamma: float = 0.1
    kappa: float = 1.0
    lam: float = 1.0
    delta: float = 1.0
    # Not from the method itself: replaces the max in the negative term with a
    # log-sum-exp over the non-top hypotheses.
    smooth_negative: bool = False

    def __post_init__(self):
        for name in ("alpha", "beta", "tau", "gamma", "kappa", "lam", "delta"):
            value = getattr(self, name)
            if not math.isfinite(value):
                raise NonFinite(f"{name} must be finite, got {value}")
            if value < 0:
                raise ValueError(f"{name} must be non-negative, got {value}")
        if self.tau <= 0:
            raise ValueError(f"tau must be positive, got {self.tau}")

    @classmethod
    def from_dict(cls, data: dict) -> "LossConfig":
        data = dict(data)
        if "lambda" in data:
            data["lam"] = data.pop("lambda")
        return cls(**data)

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "beta": self.beta,
            "tau": self.tau,
            "gamma": self.gamma,
            "kappa": self.kappa,
            "lambda": self.lam,
            "delta": self.delta,
            "smooth_negative": self.smooth_negative,
        }


class Label(str, Enum):
    REPHRASE = "rephrase"  # member of R: triggered a repeat/rephrase
    SUCCESS = "success"  # member of S


@dataclass
class PfBatch:
    current: np.ndarray  # (N, d)
    past: np.ndarray
    future: np.ndarray

    def __post_init__(self):
        self.current = as_matrix(self.current)
        self.past = as_matrix(self.past)
        self.future = as_matrix(self.future)
        if not (self.current.shape == self.past.shape == self.future.shape):
            raise ShapeMismatch(
                f"current {self.current.shape}, past {self.past.shape} and "
                f"future {self.future.shape} must match"
            )

    @property
    def size(self) -> int:
        return self.current.shape[0]


@dataclass
class PfGrads:
    current: np.ndarray
    past: np.ndarray
    future: np.ndarray


@dataclass
class NBestBatch:
    current: np.ndarray  # (N, d)
    hypotheses: list[np.ndarray]  # N arrays of shape (K_i, d); row 0 is the top-1
    labels: list[Label]

    def __post_init__(self):
        self.current = as_matrix(self.current)
        self.hypotheses = [as_matrix(h) for h in self.hypotheses]
        self.labels = [Label(lab) for lab in self.labels]
        n, d = self.current.shape
        if len(self.hypotheses) != n or len(self.labels) != n:
            raise ShapeMismatch(
                f"{n} current vectors but {len(self.hypotheses)} hypothesis sets "
                f"and {len(self.labels)} labels"
            )
        for i, hyp in enumerate(self.hypotheses):
            if hyp.shape[0] < 1 or hyp.shape[1] != d:
                raise ShapeMismatch(f"hypothesis set {i} has shape {hyp.shape}, expected (K>=1, {d})")
            if self.labels[i] is Label.REPHRASE and hyp.shape[0] < 2:
                raise NoAlternativeHypothesis(
                    f"sample {i} is in the rephrase set but has only one hypothesis"
                )


@dataclass
class NBestGrads:
    current: np.ndarray
    hypotheses: list[np.ndarray]


def info_nce_row(anchor, candidates, positive_index: int, tau: float) -> float:
    """``-log softmax(anchor . candidates / tau)[positive_index]`` for unit vectors."""
    anchor = as_vector(anchor)
    candidates = as_matrix(candidates)
    if candidates.shape[1] != anchor.shape[0]:
        raise ShapeMismatch(f"anchor dim {anchor.shape[0]} vs candidates {candidates.shape}")
    if not 0 <= positive_index < candidates.shape[0]:
        raise IndexError(f"positive_index {positive_index} out of range")
    norms = np.concatenate([[np.linalg.norm(anchor)], np.linalg.norm(candidates, axis=1)])
    if np.any(np.abs(norms - 1.0) > NORM_TOL):
        raise NotNormalized(f"inputs must be unit vectors; norms {norms}")
    logits = candidates @ anchor / tau
    return max(log_sum_exp(logits) - float(logits[positive_index]), 0.0)


def pairwise_info_nce(anchors, candidates, tau: float) -> np.ndarray:
    """Full ``L^{i,j}`` matrix over raw inputs; only its diagonal feeds ``pf_loss``."""
    a, _ = l2_normalize_rows(anchors)
    c, _ = l2_normalize_rows(candidates)
    logits = a @ c.T / tau
    return log_sum_exp_rows(logits)[:, None] - logits


def _contrast_diag(a: np.ndarray, c: np.ndarray, tau: float, weight: float):
    """Mean diagonal InfoNCE of unit rows ``a`` vs ``c`` scaled by ``weight``.

    Returns ``(value, grad_a, grad_c)`` w.r.t. the unit rows.
    """
    n = a.shape[0]
    logits = a @ c.T / tau
    lse = log_sum_exp_rows(logits)
    value = weight * float(np.sum(lse - np.diag(logits))) / n
    probs = np.exp(logits - lse[:, None])
    probs[np.diag_indices(n)] -= 1.0
    g_logits = probs * (weight / (n * tau))
    return value, g_logits @ c, g_logits.T @ a


def pf_loss(batch: PfBatch, cfg: LossConfig) -> tuple[float, PfGrads]:
    """Weighted sum of current->future and current->past InfoNCE, batch-averaged."""
    n = batch.size
    if n < 2:
        raise BatchTooSmall(f"past-future loss needs N >= 2, got {n}")
    cur, cur_norm = l2_normalize_rows(batch.current)
    fut, fut_norm = l2_normalize_rows(batch.future)
    past, past_norm = l2_normalize_rows(batch.past)

    v_f, gc_f, g_fut = _contrast_diag(cur, fut, cfg.tau, cfg.alpha)
    v_p, gc_p, g_past = _contrast_diag(cur, past, cfg.tau, cfg.beta)

    grads = PfGrads(
        current=normalize_backward(cur, cur_norm, gc_f + gc_p),
        past=normalize_backward(past, past_norm, g_past),
        future=normalize_backward(fut, fut_norm, g_fut),
    )
    return v_f + v_p, grads


class WorkspaceCounter:
    """Tracks the largest similarity block allocated by the chunked path."""

    def __init__(self):
        self.peak = 0
        self.blocks = 0

    def record(self, block: np.ndarray) -> None:
        self.blocks += 1
        self.peak = max(self.peak, block.size)


def _chunked_contrast(a, c, tau, weight, chunk, counter):
    n, d = a.shape
    # Row tiles are capped at d rows so no tile exceeds chunk * d similarities.
    row_step = max(1, min(chunk, d))
    lse = np.empty(n, dtype=a.dtype)
    diag = np.empty(n, dtype=a.dtype)
    col_starts = range(0, n, chunk)

    # pass 1: streaming log-sum-exp per row
    for r0 in range(0, n, row_step):
        rows = slice(r0, min(r0 + row_step, n))
        run_max = np.full(rows.stop - r0, -np.inf, dtype=a.dtype)
        run_sum = np.zeros(rows.stop - r0, dtype=a.dtype)
        for c0 in col_starts:
            cols = slice(c0, min(c0 + chunk, n))
            block = a[rows] @ c[cols].T / tau
            counter.record(block)
            new_max = np.maximum(run_max, block.max(axis=1))
            run_sum = run_sum * np.exp(run_max - new_max) + np.exp(block - new_max[:, None]).sum(axis=1)
            run_max = new_max
        lse[rows] = run_max + np.log(run_sum)
        diag[rows] = np.einsum("ij,ij->i", a[rows], c[rows]) / tau

    value = weight * float(np.sum(lse - diag)) / n
    g_a = np.zeros_like(a)
    g_c = np.zeros_like(c)
    scale = weight / (n * tau)

    # pass 2: gradient accumulation, one tile at a time
    for r0 in range(0, n, row_step):
        rows = slice(r0, min(r0 + row_step, n))
        for c0 in col_starts:
            cols = slice(c0, min(c0 + chunk, n))
            block = a[rows] @ c[cols].T / tau
            counter.record(block)
            probs = np.exp(block - lse[rows, None])
            lo, hi = max(r0, c0), min(rows.stop, cols.stop)
            if lo < hi:
                idx = np.arange(lo, hi)
                probs[idx - r0, idx - c0] -= 1.0
            probs *= scale
            g_a[rows] += probs @ c[cols]
            g_c[cols] += probs.T @ a[rows]
    return value, g_a, g_c


def pf_loss_chunked(
    batch: PfBatch,
    cfg: LossConfig,
    chunk_size: int,
    counter: WorkspaceCounter | None = None,
) -> tuple[float, PfGrads]:
    """Same result as :func:`pf_loss`, computed over column chunks in two passes.

    The first pass builds every row's log-sum-exp with a streaming max; the
    second recomputes each similarity tile and accumulates gradients. The
    full N x N similarity matrix is never held in memory.
    """
    n = batch.size
    if n < 2:
        raise BatchTooSmall(f"past-future loss needs N >= 2, got {n}")
    if not isinstance(chunk_size, (int, np.integer)) or not 1 <= chunk_size <= n:
        raise BadChunkSize(f"chunk_size must be in [1, {n}], got {chunk_size!r}")
    counter = counter if counter is not None else WorkspaceCounter()

    cur, cur_norm = l2_normalize_rows(batch.current)
    fut, fut_norm = l2_normalize_rows(batch.future)
    past, past_norm = l2_normalize_rows(batch.past)

    v_f, gc_f, g_fut = _chunked_contrast(cur, fut, cfg.tau, cfg.alpha, chunk_size, counter)
    v_p, gc_p, g_past = _chunked_contrast(cur, past, cfg.tau, cfg.beta, chunk_size, counter)

    grads = PfGrads(
        current=normalize_backward(cur, cur_norm, gc_f + gc_p),
        past=normalize_backward(past, past_norm, g_past),
        future=normalize_backward(fut, fut_norm, g_fut),
    )
    return v_f + v_p, grads


def nbest_terms(batch: NBestBatch, cfg: LossConfig) -> list[float]:
    """Unweighted per-sample loss: L_neg for rephrase samples, L_pos otherwise."""
    return _nbest(batch, cfg)[2]


def nbest_loss(batch: NBestBatch, cfg: LossConfig) -> tuple[float, NBestGrads]:
    value, grads, _ = _nbest(batch, cfg)
    return value, grads


def _nbest(batch: NBestBatch, cfg: LossConfig):
    n = batch.current.shape[0]
    n_rephrase = sum(lab is Label.REPHRASE for lab in batch.labels)
    n_success = n - n_rephrase
    cur, cur_norm = l2_normalize_rows(batch.current)

    value = 0.0
    terms = []
    g_cur = np.zeros_like(cur)
    g_hyps = []
    for i in range(n):
        phi, phi_norm = l2_normalize_rows(batch.hypotheses[i])
        logits = phi @ cur[i] / cfg.tau
        lse = log_sum_exp(logits)
        probs = np.exp(logits - lse)
        target = np.zeros_like(probs)
        if batch.labels[i] is Label.REPHRASE:
            weight = cfg.gamma / n_rephrase
            if cfg.smooth_negative:
                rest = logits[1:]
                rest_lse = log_sum_exp(rest)
                term = lse - rest_lse
                target[1:] = np.exp(rest - rest_lse)
            else:
                # argmax returns the lowest index among tied maxima
                j = 1 + int(np.argmax(logits[1:]))
                term = lse - float(logits[j])
                target[j] = 1.0
        else:
            weight = cfg.kappa / n_success
            term = lse - float(logits[0])
            target[0] = 1.0
        term = max(term, 0.0)
        terms.append(term)
        value += weight * term

        g_logits = (probs - target) * (weight / cfg.tau)
        g_cur[i] = g_logits @ phi
        g_phi_unit = np.outer(g_logits, cur[i])
        g_hyps.append(normalize_backward(phi, phi_norm, g_phi_unit))

    grads = NBestGrads(current=normalize_backward(cur, cur_norm, g_cur), hypotheses=g_hyps)
    return value, grads, terms


def overall_loss(l_asr: float, l_pf: float, l_nbest: float, cfg: LossConfig) -> float:
    for name, v in (("l_asr", l_asr), ("l_pf", l_pf), ("l_nbest", l_nbest)):
        if not math.isfinite(v):
            raise NonFinite(f"{name} is not finite: {v}")
    return l_asr + cfg.lam * l_pf + cfg.delta * l_nbest


def grad_norms(grads: PfGrads | NBestGrads) -> dict[str, float]:
    if isinstance(grads, PfGrads):
        return {
            "current": float(np.linalg.norm(grads.current)),
            "past": float(np.linalg.norm(grads.past)),
            "future": float(np.linalg.norm(grads.future)),
        }
    hyp_sq = sum(float(np.sum(g * g)) for g in grads.hypotheses)
    return {"current": float(np.linalg.norm(grads.current)), "hypotheses": math.sqrt(hyp_sq)}


def labels_from_strings(values: Sequence[str]) -> list[Label]:
    return [Label(v) for v in values]
