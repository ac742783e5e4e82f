"""The bundled 12-turn demo corpus (three sessions, random CLCE frames).

``write_fixture_corpus`` regenerates the exact files shipped under
``clc/data/fixture``; the test suite checks the two stay identical.
"""

from __future__ import annotations

import json
import os
from importlib import resources
from pathlib import Path

import numpy as np

from .tensor import write_clce

FRAME_DIM = 4

# (timestamp, speaker, transcript, hypotheses); only session A's first user
# turn has WER above 15%, so it is the single injection candidate.
TURNS = [
    (0.0, "user", "are there any cheap restaurants in the north part of town", [
        "are there any sheep rest ants in the north part of town",
        "are there any cheap restaurants in the north part of town",
        "our there any cheap restaurant in north town",
    ]),
    (4.0, "agent", "there are three cheap restaurants in the north", []),
    (11.0, "user", "book a table at the first one for two people", [
        "book a table at the first one for two people",
        "book a table at the first one for to people",
    ]),
    (15.0, "agent", "your table is booked for tonight", []),
    (200.0, "user", "what is the weather like in seattle tomorrow", [
        "what is the weather like in seattle tomorrow",
        "what is the whether like in seattle tomorrow",
    ]),
    (203.5, "agent", "tomorrow in seattle expect light rain", []),
    (210.0, "user", "do i need an umbrella", [
        "do i need an umbrella",
        "do i need and umbrella",
    ]),
    (213.0, "agent", "yes you should bring an umbrella", []),
    (400.0, "user", "set an alarm for seven thirty", [
        "set an alarm for seven thirty",
        "set an alarm for seventy thirty",
    ]),
    (402.0, "agent", "alarm set for seven thirty", []),
    (409.0, "user", "and turn off the living room lights", [
        "and turn off the living room lights",
        "and turn of the living room lights",
    ]),
    (411.0, "agent", "okay the living room lights are off", []),
]

CONFIG = {
    "seed": 7,
    "head_dim": 8,
    "similarity_threshold": 0.9,
    "injection": {"injection_rate": 1.0, "repeat_vs_rephrase_split": 1.0},
    "input": "turns.jsonl",
}


def write_fixture_corpus(out_dir: str | os.PathLike) -> Path:
    out = Path(out_dir)
    (out / "frames").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(20240401)
    lines = []
    for idx, (ts, speaker, text, hyps) in enumerate(TURNS):
        ref = f"frames/turn{idx:02d}.clce"
        n_frames = int(rng.integers(3, 7))
        write_clce(out / ref, rng.normal(size=(n_frames, FRAME_DIM)))
        lines.append({
            "event_id": f"t{idx:02d}",
            "timestamp_s": ts,
            "speaker": speaker,
            "transcript": text,
            "hyp_transcripts": hyps,
            "embedding_ref": ref,
        })
    with open(out / "turns.jsonl", "w") as fh:
        for line in lines:
            fh.write(json.dumps(line, sort_keys=True) + "\n")
    (out / "config.json").write_text(json.dumps(CONFIG, indent=2, sort_keys=True) + "\n")
    return out


def fixture_dir() -> Path:
    return Path(str(resources.files("clc") / "data" / "fixture"))
