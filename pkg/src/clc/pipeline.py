"""End-to-end run: sessions -> injection/detection -> batches -> losses -> report."""

from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .config import RunConfig
from .dialogue import (
    EmbeddingTable,
    HashingTextEmbedder,
    TemplateRephraser,
    build_sessions,
    detect_repeat_rephrase,
    inject_errors,
)
from .dialogue.records import EventRecord, Session, session_to_json
from .errors import ClcError, EmptyCorpus, MissingEmbedding, ShapeMismatch
from .heads import HeadParamGrads, HeadParams, head_backward, head_forward, load_head_checkpoint
from .losses import (
    Label,
    NBestBatch,
    PfBatch,
    grad_norms,
    nbest_loss,
    overall_loss,
    pf_loss,
    pf_loss_chunked,
)
from .manifest import iter_turn_rows, resolve_ref
from .metrics import align, oracle_alignment, score_alignments, tokenize
from .tensor import dtype_for, read_clce

log = logging.getLogger(__name__)

ROLES = ("current", "past", "future")

REPORT_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["version", "status", "config", "sessions", "sets", "losses", "grad_norms", "metrics"],
    "properties": {
        "version": {"const": 1},
        "status": {"const": "ok"},
        "config": {"type": "object"},
        "sessions": {
            "type": "object",
            "required": ["count", "turns", "injected", "labels"],
            "properties": {
                "count": {"type": "integer", "minimum": 0},
                "turns": {"type": "integer", "minimum": 0},
                "injected": {"type": "integer", "minimum": 0},
                "labels": {
                    "type": "array",
                    "items": {
                        "type": "object",
                        "required": ["turn_id", "kind", "source_turn_id", "origin"],
                        "properties": {
                            "kind": {"enum": ["repeat", "rephrase"]},
                            "origin": {"enum": ["injected", "detected"]},
                        },
                    },
                },
            },
        },
        "sets": {
            "type": "object",
            "required": ["r_size", "s_size", "pf_batch_size", "nbest_batch_size"],
            "additionalProperties": {"type": "integer", "minimum": 0},
        },
        "losses": {
            "type": "object",
            "required": ["pf", "nbest", "asr", "overall"],
            "properties": {
                "pf": {"type": ["number", "null"]},
                "nbest": {"type": ["number", "null"]},
                "asr": {"type": "number"},
                "overall": {"type": "number"},
            },
        },
        "grad_norms": {
            "type": "object",
            "additionalProperties": {
                "type": "object",
                "additionalProperties": {"type": "number", "minimum": 0},
            },
        },
        "metrics": {
            "type": "object",
            "required": ["wer", "ser", "oracle_wer", "n_utterances"],
            "properties": {
                "wer": {"type": ["number", "null"]},
                "ser": {"type": ["number", "null"]},
                "oracle_wer": {"type": ["number", "null"]},
                "n_utterances": {"type": "integer", "minimum": 0},
                "repeat_rephrase": {"type": ["object", "null"]},
            },
        },
    },
}


@dataclass
class PipelineResult:
    exit_code: int
    report: dict
    sessions: list[Session]


def turn_wer(turn: EventRecord) -> float:
    if turn.wer is not None:
        return turn.wer
    if turn.hypotheses:
        return align(tokenize(turn.transcript), tokenize(turn.hypotheses[0].text)).wer
    return 0.0


class FrameStore:
    """Loads CLCE frame files on demand, checking the embedding width."""

    def __init__(self, manifest_path: str | os.PathLike, mode: str):
        self.manifest_path = manifest_path
        self.mode = mode
        self.k: int | None = None
        self._cache: dict[str, np.ndarray] = {}

    def get(self, ref: str) -> np.ndarray:
        if ref not in self._cache:
            path = resolve_ref(ref, self.manifest_path)
            if not path.exists():
                raise MissingEmbedding(f"embedding file not found: {path}")
            frames = read_clce(path, self.mode)
            if self.k is None:
                self.k = frames.shape[1]
            elif frames.shape[1] != self.k:
                raise ShapeMismatch(f"{path} has k={frames.shape[1]}, expected {self.k}")
            self._cache[ref] = frames
        return self._cache[ref]


def _init_heads(cfg: RunConfig, k: int, dtype) -> dict[str, HeadParams]:
    if cfg.heads_checkpoint:
        heads = load_head_checkpoint(cfg.heads_checkpoint)
        missing = set(ROLES) - set(heads)
        if missing:
            raise ShapeMismatch(f"head checkpoint lacks {sorted(missing)}")
    else:
        heads = {
            role: HeadParams.init(k, cfg.head_dim, cfg.hidden_dim, seed=cfg.seed + i, dropout_rate=cfg.dropout_rate)
            for i, role in enumerate(ROLES)
        }
    for role, params in heads.items():
        if params.in_dim != k:
            raise ShapeMismatch(f"head '{role}' expects k={params.in_dim}, frames have k={k}")
    return {role: params.replace(**{n: t.astype(dtype) for n, t in params.tensors().items()}) for role, params in heads.items()}


def _text_embedder(cfg: RunConfig):
    hashing = HashingTextEmbedder(cfg.head_dim)
    if cfg.semantic_table:
        return EmbeddingTable.load(cfg.semantic_table, fallback=hashing)
    return hashing


def _rephraser(cfg: RunConfig):
    if cfg.rephrase_table:
        with open(cfg.rephrase_table) as fh:
            return TemplateRephraser(json.load(fh))
    return TemplateRephraser()


def _round(x: float) -> float:
    # fixed 12 significant digits keep the report stable across BLAS builds
    return float(f"{x:.12g}")


def _rounded(obj):
    if isinstance(obj, float):
        return _round(obj)
    if isinstance(obj, dict):
        return {k: _rounded(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_rounded(v) for v in obj]
    return obj


def _portable_config(cfg: RunConfig) -> dict:
    """Config echo with paths reduced to basenames so reports do not depend on cwd."""
    out = cfg.to_dict()
    for name in ("heads_checkpoint", "semantic_table", "rephrase_table", "input"):
        if out[name]:
            out[name] = os.path.basename(out[name])
    out["output"] = None
    return out


def _head_outputs(heads, frames_by_role, dtype):
    """Forward every sample through its role's head; keeps traces for backward."""
    outs, traces = {}, {}
    for role in ROLES:
        rows, tr = [], []
        for frames in frames_by_role[role]:
            out, trace = head_forward(heads[role], frames, "eval")
            rows.append(out)
            tr.append(trace)
        outs[role] = np.stack(rows).astype(dtype, copy=False) if rows else np.zeros((0, 0), dtype)
        traces[role] = tr
    return outs, traces


def _backprop_heads(heads, traces, grads_by_role):
    norms = {}
    for role, grad_rows in grads_by_role.items():
        total = HeadParamGrads.zeros_like(heads[role])
        for trace, g in zip(traces[role], grad_rows):
            total = total + head_backward(heads[role], trace, g)[0]
        norms[role] = {n: float(np.linalg.norm(t)) for n, t in total.tensors().items()}
    return norms


def run_pipeline(cfg: RunConfig) -> PipelineResult:
    """Run every stage on ``cfg.input`` and return the report (nothing is written)."""
    if not cfg.input:
        raise ClcError("run_pipeline needs an input manifest")
    dtype = dtype_for(cfg.mode)
    events = [record for _, _, record, _ in iter_turn_rows(cfg.input)]
    if not events:
        raise EmptyCorpus(f"{cfg.input}: no turns")

    sessions = build_sessions(events, cfg.session)
    per_turn_wer = {t.event_id: turn_wer(t) for s in sessions for t in s.turns if t.is_user}
    injected = []
    if cfg.inject:
        injection = replace(cfg.injection, rng_seed=cfg.seed)
        sessions, injected = inject_errors(sessions, per_turn_wer, injection, _rephraser(cfg))

    embed = _text_embedder(cfg)
    label_rows = [{**lab.to_dict(), "origin": "injected"} for lab in injected]
    seen = {(lab.turn_id, lab.source_turn_id) for lab in injected}
    for session in sessions:
        for lab in detect_repeat_rephrase(session, lambda t: embed(t.transcript), cfg.similarity_threshold):
            if (lab.turn_id, lab.source_turn_id) not in seen:
                seen.add((lab.turn_id, lab.source_turn_id))
                label_rows.append({**lab.to_dict(), "origin": "detected"})
    r_sources = {row["source_turn_id"] for row in label_rows}

    store = FrameStore(cfg.input, cfg.mode)
    pf_frames = {role: [] for role in ROLES}
    nb_frames, nb_hyps, nb_labels = [], [], []
    skipped_no_alt = 0
    for session in sessions:
        framed = [(i, t) for i, t in enumerate(session.turns) if t.embedding_ref]
        for pos, (_, turn) in enumerate(framed):
            if not turn.is_user:
                continue
            current = store.get(turn.embedding_ref)
            past = [store.get(t.embedding_ref) for _, t in framed[:pos]]
            future = [store.get(t.embedding_ref) for _, t in framed[pos + 1 :]]
            if past and (future or cfg.mask_future):
                pf_frames["current"].append(current)
                pf_frames["past"].append(np.concatenate(past))
                # masked future: placeholder rows, weighted out below
                pf_frames["future"].append(np.concatenate(future) if future else current)
            if turn.hypotheses:
                label = Label.REPHRASE if turn.event_id in r_sources else Label.SUCCESS
                if label is Label.REPHRASE and len(turn.hypotheses) < 2:
                    skipped_no_alt += 1
                    continue
                nb_frames.append(current)
                nb_hyps.append(np.stack([embed(h.text) for h in turn.hypotheses]).astype(dtype))
                nb_labels.append(label)

    loss_cfg = replace(cfg.loss, alpha=0.0) if cfg.mask_future else cfg.loss
    report_norms: dict[str, dict] = {}
    l_pf = l_nb = None
    n_pf = len(pf_frames["current"])
    if store.k is not None and (n_pf >= 2 or nb_frames):
        heads = _init_heads(cfg, store.k, dtype)
        if n_pf >= 2:
            outs, traces = _head_outputs(heads, pf_frames, dtype)
            batch = PfBatch(**outs)
            if cfg.chunk_size:
                l_pf, pf_grads = pf_loss_chunked(batch, loss_cfg, min(cfg.chunk_size, n_pf))
            else:
                l_pf, pf_grads = pf_loss(batch, loss_cfg)
            report_norms["pf_outputs"] = grad_norms(pf_grads)
            head_norms = _backprop_heads(heads, traces, {r: getattr(pf_grads, r) for r in ROLES})
            for role, norms in head_norms.items():
                report_norms[f"pf_head_{role}"] = norms
        if nb_frames:
            outs, traces = _head_outputs(heads, {"current": nb_frames, "past": [], "future": []}, dtype)
            nb_batch = NBestBatch(outs["current"], nb_hyps, nb_labels)
            l_nb, nb_grads = nbest_loss(nb_batch, loss_cfg)
            report_norms["nbest_outputs"] = grad_norms(nb_grads)
            report_norms["nbest_head_current"] = _backprop_heads(
                heads, traces, {"current": nb_grads.current}
            )["current"]

    overall = overall_loss(cfg.l_asr, l_pf or 0.0, l_nb or 0.0, cfg.loss)

    scored = [t for s in sessions for t in s.turns if t.is_user and t.hypotheses]
    metrics: dict = {"wer": None, "ser": None, "oracle_wer": None, "n_utterances": len(scored), "repeat_rephrase": None}
    if scored:
        refs = [tokenize(t.transcript) for t in scored]
        top1 = score_alignments(align(r, tokenize(t.hypotheses[0].text)) for r, t in zip(refs, scored))
        oracle = score_alignments(
            oracle_alignment(r, [tokenize(h.text) for h in t.hypotheses])[1] for r, t in zip(refs, scored)
        )
        metrics.update(wer=top1.wer, ser=top1.ser, oracle_wer=oracle.wer)
        in_r = [a for a, t in zip(top1.alignments, scored) if t.event_id in r_sources]
        if in_r:
            sl = score_alignments(in_r)
            metrics["repeat_rephrase"] = {"wer": sl.wer, "ser": sl.ser, "n_utterances": sl.n_utterances}

    n_r = sum(lab is Label.REPHRASE for lab in nb_labels)
    report = {
        "version": 1,
        "status": "ok",
        "config": _portable_config(cfg),
        "sessions": {
            "count": len(sessions),
            "turns": sum(len(s.turns) for s in sessions),
            "injected": len(injected),
            "labels": label_rows,
        },
        "sets": {
            "r_size": n_r,
            "s_size": len(nb_labels) - n_r,
            "pf_batch_size": n_pf,
            "nbest_batch_size": len(nb_labels),
            "skipped_no_alternative": skipped_no_alt,
        },
        "losses": {"pf": l_pf, "nbest": l_nb, "asr": cfg.l_asr, "overall": overall},
        "future_masked": cfg.mask_future,
        "grad_norms": report_norms,
        "metrics": metrics,
    }
    return PipelineResult(0, _rounded(report), sessions)


def write_report(report: dict, path: str | os.PathLike) -> None:
    """Write atomically so a failed run never leaves a partial file behind."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    tmp.replace(path)


def sessions_jsonl(sessions: list[Session]) -> list[dict]:
    return [row for s in sessions for row in session_to_json(s)]
