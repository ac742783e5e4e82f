"""Command-line entry point: ``clc <subcommand> [flags]``."""

from __future__ import annotations

import argparse
import contextlib
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import gradcheck
from .config import RunConfig
from .dialogue import (
    EmbeddingTable,
    HashingTextEmbedder,
    TemplateRephraser,
    build_sessions,
    detect_repeat_rephrase,
    filter_high_deletion,
    iter_sessions,
)
from .dialogue.injection import apply_site, candidate_turn, select_sites
from .dialogue.records import session_to_json
from .errors import ClcError, EmptyCorpus, EmptyErrorPool, ParseError
from .losses import (
    NBestBatch,
    PfBatch,
    WorkspaceCounter,
    grad_norms,
    nbest_loss,
    overall_loss,
    pf_loss,
    pf_loss_chunked,
)
from .manifest import (
    iter_json_lines,
    iter_sessions_from_manifest,
    iter_turn_rows,
    resolve_ref,
    validate_manifest,
    write_json_lines,
)
from .metrics import align, oracle_alignment, relative_improvement, score_alignments, tokenize
from .pipeline import run_pipeline, turn_wer, write_report
from .tensor import read_clce

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_USAGE = 2
EXIT_PARSE = ParseError.exit_code
EXIT_SHAPE = 4
EXIT_MISSING_EMBEDDING = 5
EXIT_EMPTY = EmptyCorpus.exit_code
EXIT_CHECK_FAILED = 7

EPILOG = """\
exit codes:
  0  success
  1  other error
  2  usage error
  3  parse failure (bad JSON, schema, config) or validation errors
  4  shape mismatch (embedding widths, head/frames dimensions)
  5  missing embedding (file or vector)
  6  empty corpus
  7  gradient check failed

environment:
  CLC_LOG   log level (DEBUG, INFO, WARNING, ...; default WARNING)
"""

log = logging.getLogger("clc")


# --- helpers ------------------------------------------------------------------


@contextlib.contextmanager
def _output(path: str | None):
    """Yield a text handle; files are written to a temp name and renamed on success."""
    if path is None or path == "-":
        yield sys.stdout
        return
    target = Path(path)
    tmp = target.with_name(target.name + ".tmp")
    try:
        with open(tmp, "w") as fh:
            yield fh
        tmp.replace(target)
    finally:
        if tmp.exists():
            tmp.unlink()


def _emit_json(obj, path: str | None = None) -> None:
    with _output(path) as fh:
        fh.write(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _require_input(args) -> str:
    path = args.input or args.cfg.input
    if not path:
        raise ParseError("--in is required")
    return path


def _load_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    return cfg.with_overrides(
        seed=args.seed,
        mode=args.mode,
        chunk_size=args.chunk_size,
        mask_future=True if args.mask_future else None,
        input=args.input,
        output=args.out,
    )


def _text_embedder(cfg: RunConfig):
    hashing = HashingTextEmbedder(cfg.head_dim)
    return EmbeddingTable.load(cfg.semantic_table, hashing) if cfg.semantic_table else hashing


# --- subcommands --------------------------------------------------------------


def cmd_build_sessions(args) -> int:
    cfg = args.cfg
    records = (rec for _, _, rec, _ in iter_turn_rows(_require_input(args)))
    sessions = iter_sessions(records, cfg.session) if args.assume_sorted else build_sessions(records, cfg.session)
    n = 0
    with _output(args.out) as fh:
        for session in sessions:
            n += write_json_lines(fh, session_to_json(session))
    log.info("wrote %d turns", n)
    return EXIT_OK


def cmd_detect(args) -> int:
    cfg = args.cfg
    embed = _text_embedder(cfg)
    threshold = args.threshold if args.threshold is not None else cfg.similarity_threshold
    n_labels = 0
    with _output(args.out) as fh:
        for session in iter_sessions_from_manifest(_require_input(args)):
            labels = detect_repeat_rephrase(session, lambda t: embed(t.transcript), threshold)
            n_labels += len(labels)
            by_turn: dict[str, list] = {}
            for lab in labels:
                by_turn.setdefault(lab.turn_id, []).append(
                    {"kind": lab.kind.value, "role": "restatement", "pair": lab.source_turn_id}
                )
                by_turn.setdefault(lab.source_turn_id, []).append(
                    {"kind": lab.kind.value, "role": "source", "pair": lab.turn_id}
                )
            turns = [t.with_labels(*by_turn.get(t.event_id, ())) for t in session.turns]
            write_json_lines(fh, session_to_json(replace(session, turns=turns)))
    log.info("detected %d repeat/rephrase pairs", n_labels)
    return EXIT_OK


def cmd_inject(args) -> int:
    cfg = args.cfg
    path = _require_input(args)
    injection = cfg.injection
    if not injection.error_response_pool:
        raise EmptyErrorPool("error_response_pool is empty")

    # pass 1 keeps only candidate coordinates, pass 2 rewrites session by session
    candidates = []
    for s_idx, session in enumerate(iter_sessions_from_manifest(path)):
        wers = {t.event_id: turn_wer(t) for t in session.turns if t.is_user}
        t_idx = candidate_turn(session, wers, injection.wer_candidate_threshold)
        if t_idx is not None:
            candidates.append((s_idx, t_idx))
    sites = select_sites(candidates, injection)

    rephraser = TemplateRephraser(json.loads(Path(cfg.rephrase_table).read_text()) if cfg.rephrase_table else None)
    labels = []
    with _output(args.out) as fh:
        for s_idx, session in enumerate(iter_sessions_from_manifest(path)):
            if s_idx in sites:
                session, label = apply_site(session, sites[s_idx], injection, rephraser)
                labels.append(label.to_dict())
            write_json_lines(fh, session_to_json(session))
    summary = {"candidates": len(candidates), "injected": len(labels), "labels": labels}
    if args.labels_out:
        _emit_json(summary, args.labels_out)
    elif args.out not in (None, "-"):
        _emit_json(summary)
    return EXIT_OK


def _ref_hyp(obj: dict) -> tuple[str, str]:
    ref = obj.get("ref", obj.get("transcript"))
    if "hyp" in obj:
        hyp = obj["hyp"]
    else:
        hyps = obj.get("nbest") or obj.get("hyp_transcripts") or []
        first = hyps[0] if hyps else ""
        hyp = first[0] if isinstance(first, list) else first
    if ref is None:
        raise ParseError("line has neither 'ref' nor 'transcript'")
    return ref, hyp


def cmd_filter(args) -> int:
    threshold = args.deletion_threshold if args.deletion_threshold is not None else args.cfg.deletion_threshold
    kept = dropped = 0
    with _output(args.out) as fh, _output(args.dropped_out) if args.dropped_out else contextlib.nullcontext() as dfh:
        for _, obj in iter_json_lines(_require_input(args)):
            keep_idx, _ = filter_high_deletion([_ref_hyp(obj)], threshold)
            if keep_idx:
                kept += 1
                fh.write(json.dumps(obj, sort_keys=True) + "\n")
            else:
                dropped += 1
                if dfh is not None:
                    dfh.write(json.dumps(obj, sort_keys=True) + "\n")
    log.info("kept %d, dropped %d", kept, dropped)
    return EXIT_OK


def _hyp_texts(obj: dict) -> list[str]:
    hyps = obj.get("nbest") or obj.get("hyp_transcripts") or []
    return [h[0] if isinstance(h, list) else (h["text"] if isinstance(h, dict) else h) for h in hyps]


def cmd_score(args) -> int:
    per_utt, top1, oracle = [], [], []
    for lineno, obj in iter_json_lines(_require_input(args)):
        ref, hyp = _ref_hyp(obj)
        ref_words = tokenize(ref)
        result = align(ref_words, tokenize(hyp))
        top1.append(result)
        entry = {"line": lineno, **result.to_dict()}
        nbest = _hyp_texts(obj)
        if nbest:
            idx, best = oracle_alignment(ref_words, [tokenize(h) for h in nbest])
            oracle.append(best)
            entry.update(oracle_wer=best.wer, oracle_index=idx)
        labels = obj.get("labels")
        if labels:
            entry["labels"] = labels
        per_utt.append(entry)
    score = score_alignments(top1)
    report = {**score.to_dict(), "per_utt": per_utt}
    if oracle:
        report["oracle_wer"] = score_alignments(oracle).wer
    _emit_json(report, args.out)
    return EXIT_OK


def _slice(report: dict) -> tuple[float, float] | None:
    rows = [u for u in report.get("per_utt", []) if u.get("labels")]
    if not rows:
        return None
    words = sum(u["ref_len"] for u in rows)
    errors = sum(u["errors"] for u in rows)
    return (errors / words if words else 0.0), sum(u["errors"] > 0 for u in rows) / len(rows)


def cmd_compare(args) -> int:
    base = json.loads(Path(args.baseline).read_text())
    system = json.loads(Path(args.system).read_text())
    out = {
        "overall": {
            "werr": relative_improvement(base["wer"], system["wer"]),
            "serr": relative_improvement(base["ser"], system["ser"]) if base["ser"] > 0 else None,
        }
    }
    b_slice, s_slice = _slice(base), _slice(system)
    if b_slice and s_slice:
        out["repeat_rephrase"] = {
            "werr": relative_improvement(b_slice[0], s_slice[0]) if b_slice[0] > 0 else None,
            "serr": relative_improvement(b_slice[1], s_slice[1]) if b_slice[1] > 0 else None,
        }
    _emit_json(out, args.out)
    return EXIT_OK


def _load_rows(section, base: str, mode: str) -> np.ndarray:
    """A batch field is one CLCE path (N x d) or a list of paths stacked by rows."""
    paths = [section] if isinstance(section, str) else list(section)
    return np.concatenate([read_clce(resolve_ref(p, base), mode) for p in paths])


def cmd_loss_eval(args) -> int:
    cfg = args.cfg
    path = _require_input(args)
    try:
        manifest = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    loss_cfg = replace(cfg.loss, alpha=0.0) if cfg.mask_future else cfg.loss
    out: dict = {}
    if "pf" in manifest:
        section = manifest["pf"]
        batch = PfBatch(**{role: _load_rows(section[role], path, cfg.mode) for role in ("current", "past", "future")})
        if cfg.chunk_size:
            counter = WorkspaceCounter()
            value, grads = pf_loss_chunked(batch, loss_cfg, min(cfg.chunk_size, batch.size), counter)
            out["pf_workspace_peak"] = counter.peak
        else:
            value, grads = pf_loss(batch, loss_cfg)
        out["pf"] = {"loss": value, "grad_norms": grad_norms(grads), "n": batch.size}
    if "nbest" in manifest:
        section = manifest["nbest"]
        batch = NBestBatch(
            current=_load_rows(section["current"], path, cfg.mode),
            hypotheses=[_load_rows(h, path, cfg.mode) for h in section["hypotheses"]],
            labels=section["labels"],
        )
        value, grads = nbest_loss(batch, loss_cfg)
        out["nbest"] = {"loss": value, "grad_norms": grad_norms(grads), "n": len(batch.labels)}
    if not out:
        raise ParseError(f"{path}: batch manifest needs a 'pf' or 'nbest' section")
    l_pf = out.get("pf", {}).get("loss", 0.0)
    l_nb = out.get("nbest", {}).get("loss", 0.0)
    out["overall"] = overall_loss(cfg.l_asr, l_pf, l_nb, loss_cfg)
    _emit_json(out, args.out)
    return EXIT_OK


def cmd_grad_check(args) -> int:
    seeds = range(args.seed or 0, (args.seed or 0) + args.seeds)
    reports = gradcheck.run_suite(seeds, args.cfg.loss)
    failed = [r for r in reports if not r.passed]
    summary = {
        "checks": len(reports),
        "failed": len(failed),
        "worst": max(r.worst for r in reports),
        "tolerance": gradcheck.REL_TOL,
        "reports": [r.to_dict() for r in reports] if args.verbose else [r.to_dict() for r in failed],
    }
    _emit_json(summary, args.out)
    return EXIT_CHECK_FAILED if failed else EXIT_OK


def cmd_run_pipeline(args) -> int:
    cfg = args.cfg
    if not cfg.input:
        raise ParseError("--in (or 'input' in --config) is required")
    result = run_pipeline(cfg)
    if args.sessions_out:
        with _output(args.sessions_out) as fh:
            for session in result.sessions:
                write_json_lines(fh, session_to_json(session))
    if cfg.output:
        write_report(result.report, cfg.output)
    else:
        _emit_json(result.report)
    return result.exit_code


def cmd_validate(args) -> int:
    diags = validate_manifest(_require_input(args), args.expected_dim)
    with _output(args.out) as fh:
        for d in diags:
            fh.write(json.dumps(d.to_dict(), sort_keys=True) + "\n")
    for d in diags:
        log.warning("%s", d)
    return EXIT_PARSE if any(d.severity == "error" for d in diags) else EXIT_OK


# --- parser -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("global options")
    g.add_argument("--config", help="RunConfig JSON file")
    g.add_argument("--seed", type=int, help="seed for every stochastic step")
    g.add_argument("--mode", choices=["verify", "fast"], help="float64 (verify) or float32 (fast)")
    g.add_argument("--in", dest="input", help="input file")
    g.add_argument("--out", help="output file (default stdout)")
    g.add_argument("--chunk-size", type=int, help="evaluate the past-future loss in column chunks")
    g.add_argument("--mask-future", action="store_true", help="drop the future term (evaluation runs)")

    parser = argparse.ArgumentParser(
        prog="clc",
        description="Contrastive conversation losses and dialogue data tooling.",
        epilog=EPILOG,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_):
        p = sub.add_parser(name, parents=[common], help=help_, epilog=EPILOG,
                           formatter_class=argparse.RawDescriptionHelpFormatter)
        p.set_defaults(func=func)
        return p

    p = add("build-sessions", cmd_build_sessions, "group a timestamped turn stream into sessions")
    p.add_argument("--assume-sorted", action="store_true", help="stream input already sorted by timestamp")
    p = add("detect", cmd_detect, "label repeats and rephrases between consecutive user turns")
    p.add_argument("--threshold", type=float, help="cosine threshold (default from config)")
    p = add("inject", cmd_inject, "insert synthetic error responses plus repeats/rephrases")
    p.add_argument("--labels-out", help="write the injection summary here")
    p = add("filter", cmd_filter, "drop turns whose hypothesis deletes too much of the reference")
    p.add_argument("--deletion-threshold", type=float)
    p.add_argument("--dropped-out", help="write dropped lines here")
    add("score", cmd_score, "WER/SER report from {ref, hyp | nbest} lines")
    p = add("compare", cmd_compare, "WERR/SERR between two score reports")
    p.add_argument("baseline")
    p.add_argument("system")
    add("loss-eval", cmd_loss_eval, "evaluate losses on a batch manifest of CLCE files")
    p = add("grad-check", cmd_grad_check, "finite-difference gradient checks")
    p.add_argument("--seeds", type=int, default=20, help="number of seeds (default 20)")
    p.add_argument("--verbose", action="store_true", help="include passing reports")
    p = add("run-pipeline", cmd_run_pipeline, "sessions -> inject/detect -> batches -> losses")
    p.add_argument("--sessions-out", help="also write the final sessions JSONL")
    p = add("validate", cmd_validate, "schema-check a turn manifest")
    p.add_argument("--expected-dim", type=int, help="required embedding width k")
    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(
        level=os.environ.get("CLC_LOG", "WARNING").upper(),
        format="%(levelname)s %(name)s: %(message)s",
    )
    args = build_parser().parse_args(argv)
    try:
        args.cfg = _load_config(args)
        return args.func(args)
    except ClcError as exc:
        log.error("%s", exc)
        return exc.exit_code
    except (OSError, ValueError) as exc:
        log.error("%s", exc)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
