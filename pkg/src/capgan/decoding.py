"""Caption generation: greedy, multinomial sampling, and beam search.

All strategies work on any model exposing ``encode(features, feat_lengths,
z)`` and ``step_logits(features, feat_lengths, z, prefix, memory=...)``.
Sequences are token-id lists that start with <sos> and end with <eos>
unless the length cap cut them off. Every caption carries at least one
content word: <eos> is forbidden as the first emission so downstream
consumers never see an empty caption.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .text import EOS, PAD, SOS


@dataclass
class DecodeConfig:
    mode: str = "beam"  # greedy | sample | beam
    beam_size: int = 5
    max_length: int = 22
    temperature: float = 1.0
    seed: int = 0
    n_captions: int = 5

    def __post_init__(self):
        if self.beam_size < 1:
            raise ValueError("beam_size must be >= 1")
        if self.temperature <= 0:
            raise ValueError("temperature must be > 0")


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def _forbid_markers(logits: np.ndarray) -> np.ndarray:
    # pad and sos are never legal continuations
    out = logits.copy()
    out[..., PAD] = -1e9
    out[..., SOS] = -1e9
    return out


def rollout(
    model,
    features: np.ndarray,
    feat_lengths: np.ndarray,
    z: np.ndarray,
    mode: str = "greedy",
    rng: np.random.Generator | None = None,
    temperature: float = 1.0,
    max_length: int = 22,
):
    """Batched autoregressive decode.

    Returns (sequences, step_log_probs): per row, the token ids including
    markers and the log-probability of each emitted token under the
    (temperature-scaled) sampling distribution.
    """
    if mode not in ("greedy", "sample"):
        raise ValueError(f"unknown rollout mode {mode!r}")
    if mode == "sample" and rng is None:
        raise ValueError("sampling requires an rng")
    batch = features.shape[0]
    memory = model.encode(features, feat_lengths, z)
    prefix = np.full((batch, 1), SOS, dtype=np.int64)
    alive = np.ones(batch, dtype=bool)
    log_probs: list[list[float]] = [[] for _ in range(batch)]

    for step in range(max_length + 1):  # content tokens plus a final eos slot
        if not alive.any():
            break
        logits = _forbid_markers(
            model.step_logits(features, feat_lengths, z, prefix, memory=memory)
        )
        if step == 0:
            logits[..., EOS] = -1e9  # minimum caption length of one word
        logp = _log_softmax(logits / temperature)
        if mode == "greedy":
            chosen = logp.argmax(axis=-1)
        else:
            cumulative = np.cumsum(np.exp(logp), axis=-1)
            cumulative[:, -1] = 1.0
            draws = rng.random((batch, 1))
            chosen = (cumulative < draws).sum(axis=-1)
        chosen = np.where(alive, chosen, PAD)
        for b in range(batch):
            if alive[b]:
                log_probs[b].append(float(logp[b, chosen[b]]))
        prefix = np.concatenate([prefix, chosen[:, None]], axis=1)
        alive &= chosen != EOS

    sequences = []
    for b in range(batch):
        row = [SOS] + [int(t) for t in prefix[b, 1:] if t != PAD]
        sequences.append(row)
    return sequences, log_probs


def greedy_decode(model, features, feat_lengths, z, max_length: int = 22) -> list[int]:
    seqs, _ = rollout(model, features, feat_lengths, z, "greedy", max_length=max_length)
    return seqs[0]


def sample_decode(model, features, feat_lengths, z, rng, temperature: float = 1.0,
                  max_length: int = 22):
    seqs, logps = rollout(
        model, features, feat_lengths, z, "sample", rng=rng,
        temperature=temperature, max_length=max_length,
    )
    return seqs[0], logps[0]


def beam_decode(model, features, feat_lengths, z, beam_size: int = 5,
                max_length: int = 22):
    """Length-normalized beam search over a single clip.

    Returns up to beam_size distinct (sequence, score) pairs, best first;
    score is mean log-probability per emitted token.
    """
    if features.shape[0] != 1:
        raise ValueError("beam_decode works on a single clip")
    memory = model.encode(features, feat_lengths, z)
    live = [([SOS], 0.0)]  # (tokens, total log-prob)
    finished: list[tuple[list[int], float]] = []

    for step in range(max_length + 1):
        if not live:
            break
        prefix = np.array([tokens for tokens, _ in live], dtype=np.int64)
        n_live = len(live)
        feats_rep = np.repeat(features, n_live, axis=0)
        lens_rep = np.repeat(feat_lengths, n_live, axis=0)
        z_rep = np.repeat(z, n_live, axis=0)
        mem_rep = None  # memory rows must match the hypothesis batch
        logits = _forbid_markers(
            model.step_logits(feats_rep, lens_rep, z_rep, prefix, memory=mem_rep)
        )
        if step == 0:
            logits[..., EOS] = -1e9  # minimum caption length of one word
        logp = _log_softmax(logits)
        vocab = logp.shape[-1]

        candidates = []
        for i, (tokens, total) in enumerate(live):
            for tok in range(vocab):
                candidates.append((tokens + [tok], total + logp[i, tok]))
        candidates.sort(key=lambda c: c[1] / (len(c[0]) - 1), reverse=True)

        live = []
        for tokens, total in candidates:
            if len(live) >= beam_size:
                break
            if tokens[-1] == EOS:
                finished.append((tokens, total))
            else:
                live.append((tokens, total))
    finished.extend(live)  # length-capped hypotheses count as complete
    finished.sort(key=lambda c: c[1] / (len(c[0]) - 1), reverse=True)
    out = []
    seen = set()
    for tokens, total in finished:
        key = tuple(tokens)
        if key in seen:
            continue
        seen.add(key)
        out.append((tokens, total / (len(tokens) - 1)))
        if len(out) == beam_size:
            break
    return out


def generate_diverse_set(model, features, feat_lengths, config: DecodeConfig,
                         rng: np.random.Generator, mode: str = "gan"):
    """n captions for one clip.

    gan: fresh noise vector per caption, beam top-1 each (duplicates kept).
    mle: zero noise, the beam's top-n distinct hypotheses.
    Returns (sequences, scores, underfilled_flag).
    """
    noise_dim = model.config.noise_dim
    if mode == "gan":
        sequences, scores = [], []
        for _ in range(config.n_captions):
            z = rng.standard_normal((1, noise_dim))
            ranked = beam_decode(
                model, features, feat_lengths, z,
                beam_size=config.beam_size, max_length=config.max_length,
            )
            sequences.append(ranked[0][0])
            scores.append(ranked[0][1])
        return sequences, scores, False
    if mode == "mle":
        z = np.zeros((1, noise_dim))
        ranked = beam_decode(
            model, features, feat_lengths, z,
            beam_size=max(config.beam_size, config.n_captions),
            max_length=config.max_length,
        )
        ranked = ranked[: config.n_captions]
        sequences = [tokens for tokens, _ in ranked]
        scores = [score for _, score in ranked]
        return sequences, scores, len(sequences) < config.n_captions
    raise ValueError(f"unknown generation mode {mode!r}")


# -- caption files ------------------------------------------------------------


def write_captions(path, rows: list[dict]) -> None:
    """JSON-lines: {clip_id, captions: [str], scores: [float]}."""
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def read_captions(path) -> list[dict]:
    rows = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line:
            rows.append(json.loads(line))
    return rows
