"""Constructed corpora with scripted models whose outcomes are known in advance.

``rescue_scenario``
    Every sample asks for a nationality. The standard pathway ties the
    correct answer ``a`` with a wrong answer ``w`` at 5.0; the shuffled
    pathway sees the same logits plus a +4 bias on ``w``. In half the samples
    ``w`` has the lower token id, so lowest-index greedy is wrong there and
    right elsewhere (accuracy exactly 0.5). Gating ``{a, w}`` makes the
    removed share larger on ``w`` (bigger gate, bigger conflict logit), so
    pivot-gated decoding answers ``a`` every time.

``reduction_scenario``
    An image-blind model with random logits keyed on the last token, for
    checking that contrast with identical pathways and no pivots leaves
    greedy output unchanged.

Run ``python -m pivotdecode.scenarios OUT_DIR`` to write the rescue
scenario (corpus, model spec, config) to disk.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import numpy as np

from .adapters import EOS, ScriptedModel, Vocabulary
from .core import DecodeConfig, dumps_config
from .corpus import ConflictSample, write_corpus
from .pivots import PivotSpan, ReasoningChain
from .shuffle import grid_to_json

NATIONALITIES = (
    "Italian", "Spanish", "French", "German", "Dutch", "Greek", "Polish", "Danish",
    "Swedish", "Irish", "Austrian", "Belgian", "Czech", "Finnish", "Norwegian", "Swiss",
)
FILLER = ("The", "artist", "of", "work", "was", "born", "and", "lived", "in", "city", "painted", "this")
STRUCT = ("Context", "Question", "Answer", "What", "nationality", "is", "the", "creator",
          ":", "?", ".", "[", "]", "1", "2", "3", "4", "5")

TIE_LOGIT = 5.0
CONFLICT_BIAS = 4.0
EOS_LOGIT = 10.0


def _sorted_grid(rng: np.random.Generator, n: int = 16, d: int = 8) -> np.ndarray:
    # Strictly increasing first coordinate: any non-identity permutation
    # breaks the lexicographic order the scripted model keys on.
    grid = rng.uniform(0.0, 1.0, size=(n, d))
    grid[:, 0] = np.arange(n) + rng.uniform(0.0, 0.5, size=n)
    return grid


def rescue_scenario(n_samples: int = 100, seed: int = 0):
    """Return ``(model, samples)`` for the conflict-rescue check."""
    rng = np.random.default_rng(seed)
    qids = [f"q{i}" for i in range(n_samples)]
    vocab = Vocabulary.with_specials(STRUCT + FILLER + NATIONALITIES + tuple(qids))
    V = len(vocab)
    eos = vocab.id(EOS)
    chain = ReasoningChain(("artwork", "artist", "nationality"), ("created_by", "nationality_of"))
    default = np.zeros(V)
    default[eos] = EOS_LOGIT
    rules = []
    samples = []
    for i, qid in enumerate(qids):
        a, w = rng.choice(len(NATIONALITIES), size=2, replace=False)
        a, w = NATIONALITIES[a], NATIONALITIES[w]
        ia, iw = vocab.id(a), vocab.id(w)
        # Alternate which answer wins the lowest-index tie-break.
        if (iw < ia) != (i % 2 == 0):
            a, w = w, a
            ia, iw = iw, ia
        std = rng.uniform(-2.0, 0.0, size=V)
        std[eos] = -2.0
        std[ia] = std[iw] = TIE_LOGIT
        conf = std.copy()
        conf[iw] += CONFLICT_BIAS
        question = f"What nationality is the creator of work {qid} ?"
        suffix = [vocab.tokens[t] for t in vocab.tokenize(f"{qid} ? Answer :")]
        rules.append({"suffix": suffix, "image": "ordered", "logits": std.tolist()})
        rules.append({"suffix": suffix, "image": "shuffled", "logits": conf.tolist()})

        passages = [f"The artist of work {qid} was {a} and lived in this city ."]
        for j in range(4):
            passages.append(f"The artist of work {qid} was {w} and painted this work ." if j % 2 == 0
                            else f"The artist of work {qid} was born in this city .")
        spans = [
            PivotSpan.locate(0, passages[0], a, "nationality"),
            PivotSpan.locate(1, passages[1], w, "nationality"),
            PivotSpan.locate(3, passages[3], w, "nationality"),
        ]
        samples.append(ConflictSample(
            sample_id=f"rescue-{i:03d}",
            question=question,
            answer=a,
            passages=tuple(passages),
            chain=chain,
            spans=tuple(spans),
            conflict_label="high-conflict",
            image=grid_to_json(_sorted_grid(rng)),
        ).validate())
    model = ScriptedModel.from_dict({"vocab": list(vocab.tokens), "default": default.tolist(), "rules": rules})
    return model, samples


def reduction_scenario(n_samples: int = 50, seed: int = 1):
    """Return ``(model, samples)``: image-blind random next-token logits."""
    rng = np.random.default_rng(seed)
    qids = [f"q{i}" for i in range(n_samples)]
    vocab = Vocabulary.with_specials(STRUCT + FILLER + NATIONALITIES + tuple(qids))
    V = len(vocab)
    eos = vocab.id(EOS)
    rules = []
    for t in vocab.tokens:
        logits = rng.normal(0.0, 1.0, size=V)
        logits[eos] -= 2.0
        rules.append({"suffix": [t], "logits": logits.tolist()})
    default = rng.normal(0.0, 1.0, size=V)
    model = ScriptedModel.from_dict({"vocab": list(vocab.tokens), "default": default.tolist(), "rules": rules})
    chain = ReasoningChain(("artwork", "artist", "nationality"), ("created_by", "nationality_of"))
    samples = []
    for i, qid in enumerate(qids):
        passages = tuple(f"The artist of work {qid} lived in this city ." for _ in range(5))
        samples.append(ConflictSample(
            sample_id=f"reduce-{i:03d}",
            question=f"What nationality is the creator of work {qid} ?",
            answer="Italian",
            passages=passages,
            chain=chain,
            image=grid_to_json(_sorted_grid(rng, n=4, d=3)) if i % 2 else None,
        ).validate())
    return model, samples


def write_rescue_scenario(out_dir: str | Path, n_samples: int = 100, seed: int = 0) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    model, samples = rescue_scenario(n_samples, seed)
    paths = {"corpus": out / "corpus.jsonl", "model": out / "model.json", "config": out / "decode.cfg"}
    write_corpus(samples, paths["corpus"])
    paths["model"].write_text(json.dumps(model.to_dict()), encoding="utf-8")
    paths["config"].write_text(dumps_config(DecodeConfig()), encoding="utf-8")
    return paths


if __name__ == "__main__":
    if len(sys.argv) != 2:
        sys.exit("usage: python -m pivotdecode.scenarios OUT_DIR")
    for name, path in write_rescue_scenario(sys.argv[1]).items():
        print(f"{name}: {path}")
