"""Acceptance criteria, one test per criterion.

Each test records its outcome; the terminal summary prints one
``criterion N: PASS|FAIL`` line per criterion after the run.
"""

import json
import math
import time

import jsonschema
import numpy as np
import pytest

from clc.config import RunConfig
from clc.dialogue import (
    EventRecord,
    HashingTextEmbedder,
    InjectionConfig,
    RephraseKind,
    Speaker,
    build_sessions,
    detect_repeat_rephrase,
    inject_errors,
)
from clc.dialogue.records import session_to_json
from clc.gradcheck import run_suite
from clc.losses import (
    Label,
    LossConfig,
    NBestBatch,
    PfBatch,
    WorkspaceCounter,
    info_nce_row,
    nbest_loss,
    pf_loss,
    pf_loss_chunked,
)
from clc.metrics import align, align_text, corpus_score, oracle_wer, relative_improvement
from clc.pipeline import REPORT_SCHEMA, run_pipeline
from conftest import ACCEPTANCE
from oracles import edit_distance, sessions_oracle, synthetic_sessions


@pytest.fixture
def record(request):
    """Yield a setter for the criterion description; the outcome is stored on teardown."""
    num = int(request.node.name.split("_")[1])
    state = {"desc": request.node.name}

    def set_desc(text):
        state["desc"] = text

    yield set_desc
    call = getattr(request.node, "rep_call", None)
    ACCEPTANCE[num] = (bool(call and call.passed), state["desc"])


def test_1_gradient_correctness(record):
    start = time.perf_counter()
    reports = run_suite(range(20))
    elapsed = time.perf_counter() - start
    worst = max(r.worst for r in reports)
    families = {r.name.split("[")[0].split("(")[0] for r in reports}
    record(f"gradient check, 20 seeds, {len(reports)} checks, worst rel. error {worst:.2e}, {elapsed:.1f}s")
    assert all(r.passed for r in reports), [r.to_dict() for r in reports if not r.passed]
    assert worst < 1e-6
    assert len(families) >= 3
    assert elapsed < 30.0


def test_2_chunked_equivalence(record):
    start = time.perf_counter()
    d = 8
    cfg = LossConfig()
    worst = 0.0
    for n in (8, 64, 512):
        rng = np.random.default_rng(n)
        batch = PfBatch(rng.normal(size=(n, d)), rng.normal(size=(n, d)), rng.normal(size=(n, d)))
        v0, g0 = pf_loss(batch, cfg)
        for chunk in sorted({1, 7, n // 2, n}):
            counter = WorkspaceCounter()
            v1, g1 = pf_loss_chunked(batch, cfg, chunk, counter)
            diffs = [abs(v1 - v0)] + [
                float(np.max(np.abs(getattr(g1, r) - getattr(g0, r)))) for r in ("current", "past", "future")
            ]
            worst = max(worst, *diffs)
            assert max(diffs) <= 1e-10, (n, chunk, diffs)
            assert counter.peak <= chunk * d, (n, chunk, counter.peak)
    elapsed = time.perf_counter() - start
    record(f"chunked vs naive, N in (8, 64, 512), max abs diff {worst:.1e}, {elapsed:.1f}s")
    assert elapsed < 60.0


def test_3_closed_form_values(record):
    e = math.e
    row = info_nce_row([1.0, 0.0], [[1.0, 0.0], [0.0, 1.0]], 0, 1.0)
    neg, _ = nbest_loss(
        NBestBatch([[1.0, 0.0]], [[[1.0, 0.0], [0.0, 1.0]]], [Label.REPHRASE]),
        LossConfig(tau=1.0, gamma=1.0),
    )
    eye = np.eye(2)
    pf, _ = pf_loss(PfBatch(eye, eye, eye), LossConfig(alpha=1.0, beta=1.0, tau=1.0))
    record(f"closed forms: {row:.7f}, {neg:.7f}, {pf:.7f}")
    assert abs(row - 0.313262) < 1e-6 and abs(row - math.log((e + 1) / e)) < 1e-12
    assert abs(neg - 1.313262) < 1e-6 and abs(neg - math.log(e + 1)) < 1e-12
    assert abs(pf - 0.626524) < 1e-6


def test_4_table_arithmetic(record):
    value = relative_improvement(11.13, 8.99)
    record(f"relative improvement 11.13 -> 8.99 = {value:.4f}%")
    assert abs(value - 19.22) <= 0.01


def test_5_session_builder_oracle(record):
    def events(times):
        return [EventRecord(f"e{i}", float(t), Speaker.AGENT, "") for i, t in enumerate(times)]

    rng = np.random.default_rng(5)
    for _ in range(200):
        n = int(rng.integers(1, 51))
        scale = float(rng.choice([20.0, 60.0, 200.0]))
        times = rng.permutation(np.round(np.cumsum(rng.uniform(0, scale, n)), 1)).tolist()
        got = [[int(t.event_id[1:]) for t in s.turns] for s in build_sessions(events(times))]
        assert got == [m for m, _ in sessions_oracle(times)], times
    worked = build_sessions(events([0, 30, 80, 200]))
    assert [[t.timestamp_s for t in s.turns] for s in worked] == [[0, 30, 80], [200]]
    trunc = build_sessions(events([10 * i for i in range(7)]))
    assert [t.timestamp_s for t in trunc[0].turns] == [0, 10, 20, 30, 40]
    record("session builder matches brute-force closure on 200 streams; worked examples hold")


def test_6_injection(record):
    sessions, wers = synthetic_sessions(100, n_clean=25, seed=6)
    cfg = InjectionConfig(rng_seed=6)

    def dump(result):
        out, labels = result
        return json.dumps([[session_to_json(s) for s in out], [l.to_dict() for l in labels]], sort_keys=True)

    first = inject_errors(sessions, wers, cfg)
    second = inject_errors(sessions, wers, cfg)
    out, labels = first
    modified = [i for i, (a, b) in enumerate(zip(sessions, out)) if a.turns != b.turns]
    assert len(modified) == 20 and len(labels) == 20
    assert all(len(out[i].turns) == len(sessions[i].turns) + 2 for i in modified)
    assert all(wers[l.source_turn_id] > 0.15 for l in labels)
    assert dump(first) == dump(second)

    repeats = inject_errors(sessions, wers, InjectionConfig(rng_seed=6, repeat_vs_rephrase_split=1.0))
    emb = HashingTextEmbedder(64)
    found = {
        (lab.turn_id, lab.source_turn_id)
        for s in repeats[0]
        for lab in detect_repeat_rephrase(s, lambda t: emb(t.transcript), 0.99)
    }
    assert all(l.kind is RephraseKind.REPEAT for l in repeats[1])
    assert all((l.turn_id, l.source_turn_id) in found for l in repeats[1])
    record("100 candidates -> 20 modified (+2 turns each), deterministic, all repeats detected at 0.99")


def test_7_metrics(record):
    r = align_text("turn on the lights", "turn off the lights")
    assert (r.substitutions, r.deletions, r.insertions, r.wer) == (1, 0, 0, 0.25)
    assert align_text("same words here", "same words here").errors == 0
    r = align("a b c".split(), ["b"])
    assert (r.substitutions, r.deletions, r.insertions) == (0, 2, 0)

    rng = np.random.default_rng(7)
    vocab = "a b c d e f g".split()
    pairs = [
        (" ".join(rng.choice(vocab, rng.integers(1, 9))), " ".join(rng.choice(vocab, rng.integers(0, 9))))
        for _ in range(1000)
    ]
    pooled = corpus_score(pairs).wer
    recomputed = sum(edit_distance(a.split(), b.split()) for a, b in pairs) / sum(len(a.split()) for a, _ in pairs)
    assert pooled == recomputed

    for _ in range(200):
        ref = list(rng.choice(vocab, rng.integers(1, 7)))
        nbest = [list(rng.choice(vocab, rng.integers(0, 7))) for _ in range(int(rng.integers(1, 5)))]
        assert oracle_wer(ref, nbest) == min(align(ref, h).wer for h in nbest)
    record("DP examples exact; pooled WER over 1,000 pairs; oracle WER is the minimum")


def test_8_loss_invariants(record):
    cfg = LossConfig()
    worst = 0.0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        n, d = int(rng.integers(2, 9)), int(rng.integers(2, 7))
        pf = PfBatch(rng.normal(size=(n, d)), rng.normal(size=(n, d)), rng.normal(size=(n, d)))
        hyps = [rng.normal(size=(int(rng.integers(2, 5)), d)) for _ in range(n)]
        labels = [Label.REPHRASE if rng.random() < 0.5 else Label.SUCCESS for _ in range(n)]
        nb = NBestBatch(rng.normal(size=(n, d)), hyps, labels)
        v_pf, v_nb = pf_loss(pf, cfg)[0], nbest_loss(nb, cfg)[0]
        assert v_pf >= 0.0 and v_nb >= 0.0

        s = rng.uniform(0.01, 100.0, size=(n, 1))
        scaled_pf = PfBatch(pf.current * s, pf.past * s[::-1], pf.future * 3.0)
        scaled_nb = NBestBatch(nb.current * s, [h * float(s[i, 0]) for i, h in enumerate(hyps)], labels)
        p = rng.permutation(n)
        perm_pf = PfBatch(pf.current[p], pf.past[p], pf.future[p])
        perm_nb = NBestBatch(nb.current[p], [hyps[i] for i in p], [labels[i] for i in p])
        diffs = [
            abs(pf_loss(scaled_pf, cfg)[0] - v_pf),
            abs(nbest_loss(scaled_nb, cfg)[0] - v_nb),
            abs(pf_loss(perm_pf, cfg)[0] - v_pf),
            abs(nbest_loss(perm_nb, cfg)[0] - v_nb),
        ]
        worst = max(worst, *diffs)
        assert max(diffs) <= 1e-10, (seed, diffs)
    record(f"non-negativity, scale and permutation invariance on 100 batches, max diff {worst:.1e}")


def test_9_end_to_end(record, fixture_corpus):
    start = time.perf_counter()
    cfg = RunConfig.load(fixture_corpus / "config.json")
    first = run_pipeline(cfg)
    second = run_pipeline(cfg)
    elapsed = time.perf_counter() - start
    jsonschema.validate(first.report, REPORT_SCHEMA)
    a = json.dumps(first.report, sort_keys=True)
    assert a == json.dumps(second.report, sort_keys=True)
    assert first.exit_code == 0 and first.report["sets"]["r_size"] == 1
    record(f"fixture pipeline: schema-valid, deterministic, R-set size 1, {elapsed:.2f}s for two runs")
    assert elapsed < 10.0
