import json
import shutil
import subprocess

import numpy as np
import pytest

from clc.cli import main
from clc.tensor import write_clce


def run(*argv):
    return main([str(a) for a in argv])


def read_jsonl(path):
    return [json.loads(line) for line in path.read_text().splitlines()]


@pytest.fixture
def turns(fixture_corpus):
    return fixture_corpus / "turns.jsonl"


class TestSessionsCommands:
    def test_build_sessions(self, turns, tmp_path):
        out = tmp_path / "s.jsonl"
        assert run("build-sessions", "--in", turns, "--out", out) == 0
        rows = read_jsonl(out)
        assert len(rows) == 12 and len({r["session_id"] for r in rows}) == 3

    def test_build_sessions_streaming_agrees(self, turns, tmp_path):
        run("build-sessions", "--in", turns, "--out", tmp_path / "a.jsonl")
        run("build-sessions", "--assume-sorted", "--in", turns, "--out", tmp_path / "b.jsonl")
        assert (tmp_path / "a.jsonl").read_text() == (tmp_path / "b.jsonl").read_text()

    def test_inject_then_detect(self, fixture_corpus, turns, tmp_path):
        sessions, injected, detected = tmp_path / "s.jsonl", tmp_path / "i.jsonl", tmp_path / "d.jsonl"
        cfg = fixture_corpus / "config.json"
        run("build-sessions", "--in", turns, "--out", sessions)
        assert run("inject", "--config", cfg, "--in", sessions, "--out", injected,
                   "--labels-out", tmp_path / "labels.json") == 0
        summary = json.loads((tmp_path / "labels.json").read_text())
        assert summary["candidates"] == 1 and summary["injected"] == 1
        assert len(read_jsonl(injected)) == 14
        assert run("detect", "--config", cfg, "--in", injected, "--out", detected, "--threshold", "0.99") == 0
        restated = [r for r in read_jsonl(detected) if r["event_id"] == "t00+repeat"]
        assert {"kind": "repeat", "role": "restatement", "pair": "t00"} in restated[0]["labels"]

    def test_inject_is_deterministic(self, fixture_corpus, turns, tmp_path):
        run("build-sessions", "--in", turns, "--out", tmp_path / "s.jsonl")
        for name in ("a", "b"):
            run("inject", "--seed", 5, "--in", tmp_path / "s.jsonl", "--out", tmp_path / f"{name}.jsonl")
        assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()


class TestScoring:
    def test_filter(self, tmp_path):
        src = tmp_path / "pairs.jsonl"
        src.write_text(
            '{"ref": "turn on the kitchen lights", "hyp": "turn lights"}\n'
            '{"ref": "play jazz", "hyp": "play jazz"}\n'
        )
        assert run("filter", "--in", src, "--out", tmp_path / "k.jsonl", "--dropped-out", tmp_path / "d.jsonl") == 0
        assert [r["ref"] for r in read_jsonl(tmp_path / "k.jsonl")] == ["play jazz"]
        assert len(read_jsonl(tmp_path / "d.jsonl")) == 1

    def test_score_and_compare(self, tmp_path):
        base, system = tmp_path / "b.jsonl", tmp_path / "s.jsonl"
        base.write_text(
            '{"ref": "a b c d", "hyp": "a x c y", "labels": [{"kind": "repeat"}]}\n'
            '{"ref": "e f", "nbest": ["e g", "e f"]}\n'
        )
        system.write_text('{"ref": "a b c d", "hyp": "a b c y", "labels": [{"kind": "repeat"}]}\n{"ref": "e f", "hyp": "e f"}\n')
        assert run("score", "--in", base, "--out", tmp_path / "b.json") == 0
        assert run("score", "--in", system, "--out", tmp_path / "s.json") == 0
        b = json.loads((tmp_path / "b.json").read_text())
        assert b["wer"] == pytest.approx(3 / 6) and b["ser"] == 1.0
        assert b["oracle_wer"] == pytest.approx(0.0)
        assert run("compare", tmp_path / "b.json", tmp_path / "s.json", "--out", tmp_path / "c.json") == 0
        c = json.loads((tmp_path / "c.json").read_text())
        assert c["overall"]["werr"] == pytest.approx(100 * (0.5 - 1 / 6) / 0.5)
        assert c["repeat_rephrase"]["werr"] == pytest.approx(50.0)

    def test_empty_score_input(self, tmp_path):
        (tmp_path / "e.jsonl").write_text("")
        assert run("score", "--in", tmp_path / "e.jsonl", "--out", tmp_path / "r.json") == 6
        assert not (tmp_path / "r.json").exists()


class TestLossCommands:
    def test_loss_eval(self, tmp_path):
        e = np.eye(2)
        for name in ("c", "p", "f"):
            write_clce(tmp_path / f"{name}.clce", e)
        write_clce(tmp_path / "h.clce", e)
        (tmp_path / "batch.json").write_text(json.dumps({
            "pf": {"current": "c.clce", "past": "p.clce", "future": "f.clce"},
            "nbest": {"current": ["c.clce"], "hypotheses": ["h.clce", "h.clce"], "labels": ["success", "rephrase"]},
        }))
        (tmp_path / "cfg.json").write_text(json.dumps({"loss": {"tau": 1.0, "beta": 1.0, "gamma": 1.0}}))
        assert run("loss-eval", "--config", tmp_path / "cfg.json", "--in", tmp_path / "batch.json",
                   "--chunk-size", 1, "--out", tmp_path / "o.json") == 0
        out = json.loads((tmp_path / "o.json").read_text())
        assert out["pf"]["loss"] == pytest.approx(0.6265233750364457, abs=1e-7)  # float32 storage
        assert out["pf_workspace_peak"] == 1
        # sample 2 has current e2 and sims (0, 1): L_neg = ln(1 + e) - 1, equal to the L_pos of sample 1
        assert out["nbest"]["n"] == 2
        assert out["nbest"]["loss"] == pytest.approx(0.6265233750364457, abs=1e-7)

    def test_loss_eval_shape_mismatch(self, tmp_path):
        write_clce(tmp_path / "a.clce", np.ones((2, 3)))
        write_clce(tmp_path / "b.clce", np.ones((2, 4)))
        (tmp_path / "batch.json").write_text(json.dumps({"pf": {"current": "a.clce", "past": "a.clce", "future": "b.clce"}}))
        assert run("loss-eval", "--in", tmp_path / "batch.json") == 4

    def test_grad_check(self, capsys):
        assert run("grad-check", "--seeds", 1) == 0
        summary = json.loads(capsys.readouterr().out)
        assert summary["failed"] == 0 and summary["checks"] == 5


class TestPipelineCommands:
    def test_run_pipeline(self, fixture_corpus, tmp_path):
        report = tmp_path / "r.json"
        assert run("run-pipeline", "--config", fixture_corpus / "config.json", "--out", report,
                   "--sessions-out", tmp_path / "s.jsonl") == 0
        assert json.loads(report.read_text())["sets"]["r_size"] == 1
        assert len(read_jsonl(tmp_path / "s.jsonl")) == 14

    def test_empty_manifest(self, tmp_path):
        (tmp_path / "e.jsonl").write_text("")
        assert run("run-pipeline", "--in", tmp_path / "e.jsonl", "--out", tmp_path / "r.json") == 6
        assert list(tmp_path.iterdir()) == [tmp_path / "e.jsonl"]

    def test_missing_embedding_exit(self, fixture_corpus, tmp_path):
        (fixture_corpus / "frames" / "turn04.clce").unlink()
        assert run("run-pipeline", "--config", fixture_corpus / "config.json", "--out", tmp_path / "r.json") == 5

    def test_validate(self, fixture_corpus, turns, tmp_path):
        assert run("validate", "--in", turns, "--out", tmp_path / "d.jsonl") == 0
        assert (tmp_path / "d.jsonl").read_text() == ""
        assert run("validate", "--in", turns, "--expected-dim", 7, "--out", tmp_path / "d.jsonl") == 3

    def test_bad_json_exit(self, tmp_path):
        (tmp_path / "x.jsonl").write_text("{oops\n")
        assert run("build-sessions", "--in", tmp_path / "x.jsonl") == 3

    def test_usage_error(self):
        with pytest.raises(SystemExit) as exc:
            run("no-such-command")
        assert exc.value.code == 2


@pytest.mark.skipif(shutil.which("clc") is None, reason="console script not installed")
def test_console_script(fixture_corpus):
    proc = subprocess.run(
        ["clc", "run-pipeline", "--config", str(fixture_corpus / "config.json")],
        capture_output=True, text=True, check=False,
    )
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["status"] == "ok"
