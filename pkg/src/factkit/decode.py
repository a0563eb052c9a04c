"""Decoding strategies over a pluggable next-token scorer.

A scorer maps a token-id prefix to a :class:`ScorerDistribution` over the
vocabulary (one index of which is end-of-sequence).  Three strategies are
implemented: unnormalized beam search, nucleus (top-p) sampling, and delayed
beam search (top-k sampling for a fixed number of steps, then beam search
from that single prefix).

Conventions shared by all strategies:
  * returned sequences never include the EOS token;
  * beam scores are cumulative log-probabilities including the EOS step;
  * ties are broken toward the lexicographically smaller token sequence, so
    every strategy is deterministic given (scorer, config, seed).
"""

from __future__ import annotations

import json
import math
import random
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol, Sequence

from . import textops
from .errors import FactkitError, SchemaError

STRATEGIES = ("beam", "nucleus", "delayed_beam")

_SUM_TOLERANCE = 1e-9


@dataclass(frozen=True)
class ScorerDistribution:
    probs: tuple[float, ...]
    eos_id: int

    def validate(self) -> None:
        if not 0 <= self.eos_id < len(self.probs):
            raise FactkitError("eos_id out of range")
        if any(p < 0 for p in self.probs):
            raise FactkitError("probabilities must be non-negative")
        if abs(sum(self.probs) - 1.0) > _SUM_TOLERANCE:
            raise FactkitError(f"probabilities sum to {sum(self.probs)!r}, not 1")


class Scorer(Protocol):
    vocab_size: int
    eos_id: int

    def distribution(self, prefix: tuple[int, ...]) -> ScorerDistribution: ...


@dataclass(frozen=True)
class DecodeConfig:
    strategy: str = "beam"
    beam_size: int = 5
    p: float = 0.9
    k: int = 10
    delay_steps: int = 5
    max_len: int = 32
    seed: int = 0

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise FactkitError(f"unknown strategy {self.strategy!r}")
        if self.beam_size < 1:
            raise FactkitError("beam_size must be >= 1")
        if not 0 < self.p <= 1:
            raise FactkitError("p must be in (0, 1]")
        if self.k < 1:
            raise FactkitError("k must be >= 1")
        if self.delay_steps < 0:
            raise FactkitError("delay_steps must be >= 0")
        if self.max_len < 0:
            raise FactkitError("max_len must be >= 0")


class TableScorer:
    """Scorer backed by an explicit prefix -> distribution table.

    The table must cover every prefix reachable under the decoding budget;
    a missing prefix is an error, never a silent fallback.
    """

    def __init__(self, vocab_size: int, eos_id: int,
                 table: dict[tuple[int, ...], Sequence[float]],
                 vocab: Sequence[str] | None = None):
        self.vocab_size = vocab_size
        self.eos_id = eos_id
        self.vocab = list(vocab) if vocab is not None else None
        self._table: dict[tuple[int, ...], ScorerDistribution] = {}
        for prefix, probs in table.items():
            if len(probs) != vocab_size:
                raise FactkitError(
                    f"prefix {prefix}: expected {vocab_size} probabilities, got {len(probs)}")
            dist = ScorerDistribution(tuple(float(p) for p in probs), eos_id)
            dist.validate()
            self._table[tuple(prefix)] = dist

    def distribution(self, prefix: tuple[int, ...]) -> ScorerDistribution:
        try:
            return self._table[tuple(prefix)]
        except KeyError:
            raise FactkitError(f"scorer undefined for prefix {tuple(prefix)}") from None

    @classmethod
    def from_json(cls, path: str | Path) -> "TableScorer":
        """Load ``{"vocab": [...], "eos": id, "distributions": {"0 2": [...]}}``.

        Distribution keys are space-joined token ids; "" keys the empty prefix.
        """
        try:
            payload = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise SchemaError(f"scorer table: invalid JSON: {exc.msg}") from exc
        for field in ("vocab", "eos", "distributions"):
            if field not in payload:
                raise SchemaError(f"scorer table: missing field {field}")
        vocab = [str(w) for w in payload["vocab"]]
        table = {}
        for key, probs in payload["distributions"].items():
            prefix = tuple(int(t) for t in key.split()) if key else ()
            table[prefix] = probs
        return cls(len(vocab), int(payload["eos"]), table, vocab=vocab)


class BigramScorer:
    """Additively smoothed bigram model counted from a text corpus (0.1 per cell).

    Each input line is one sequence; the vocabulary is the sorted set of
    lowercased tokens plus a final EOS id.  The next-token distribution
    depends only on the last prefix token.
    """

    START = -1

    def __init__(self, vocab: list[str], counts: dict[int, Counter],
                 smoothing: float = 0.1):
        self.vocab = vocab
        self.vocab_size = len(vocab) + 1
        self.eos_id = len(vocab)
        self._counts = counts
        self._smoothing = smoothing

    @classmethod
    def fit(cls, text: str, smoothing: float = 0.1) -> "BigramScorer":
        lines = [line for line in text.splitlines() if line.strip()]
        if not lines:
            raise FactkitError("bigram corpus is empty")
        sequences = [[t.text.lower() for t in textops.tokenize(line)] for line in lines]
        vocab = sorted({tok for seq in sequences for tok in seq})
        ids = {tok: i for i, tok in enumerate(vocab)}
        eos = len(vocab)
        counts: dict[int, Counter] = {}
        for seq in sequences:
            prev = cls.START
            for tok in seq:
                counts.setdefault(prev, Counter())[ids[tok]] += 1
                prev = ids[tok]
            counts.setdefault(prev, Counter())[eos] += 1
        return cls(vocab, counts, smoothing)

    def distribution(self, prefix: tuple[int, ...]) -> ScorerDistribution:
        prev = prefix[-1] if prefix else self.START
        row = self._counts.get(prev, Counter())
        total = sum(row.values()) + self._smoothing * self.vocab_size
        probs = tuple((row.get(t, 0) + self._smoothing) / total
                      for t in range(self.vocab_size))
        return ScorerDistribution(probs, self.eos_id)

    def words(self, token_ids: Sequence[int]) -> list[str]:
        return [self.vocab[t] for t in token_ids]


def _beam_from(scorer: Scorer, prefix: tuple[int, ...], beam_size: int,
               budget: int) -> tuple[list[int], float]:
    """Beam-search continuation of ``prefix`` for at most ``budget`` tokens.

    EOS extensions compete for beam slots like any token; a kept hypothesis
    that ended in EOS is retired (its slot is not refilled), which makes
    beam_size=1 coincide with greedy argmax decoding.  The best-scoring
    complete hypothesis (retired, or still open at the budget) wins, ties
    going to the lexicographically smaller suffix with finished ahead of
    open ones.
    """
    if budget == 0:
        return [], 0.0
    beams: list[tuple[tuple[int, ...], float]] = [((), 0.0)]
    finished: list[tuple[float, tuple[int, ...], int]] = []
    for _ in range(budget):
        # (suffix, score, 0 finished / 1 open); finished keep the suffix
        # without EOS but their score includes the EOS step.
        candidates: list[tuple[tuple[int, ...], float, int]] = []
        for seq, logp in beams:
            dist = scorer.distribution(prefix + seq)
            for tok, p in enumerate(dist.probs):
                if p <= 0.0:
                    continue
                score = logp + math.log(p)
                if tok == dist.eos_id:
                    candidates.append((seq, score, 0))
                else:
                    candidates.append((seq + (tok,), score, 1))
        candidates.sort(key=lambda c: (-c[1], c[0], c[2]))
        beams = []
        for seq, score, flag in candidates[:beam_size]:
            if flag == 0:
                finished.append((score, seq, 0))
            else:
                beams.append((seq, score))
        if not beams:
            break
    pool = finished + [(logp, seq, 1) for seq, logp in beams]
    if not pool:
        return [], 0.0
    best = min(pool, key=lambda item: (-item[0], item[1], item[2]))
    return list(best[1]), best[0]


def beam_search(scorer: Scorer, config: DecodeConfig) -> tuple[list[int], float]:
    """Length-unnormalized beam search; returns (tokens, total log-probability)."""
    return _beam_from(scorer, (), config.beam_size, config.max_len)


def _nucleus(probs: Sequence[float], p: float) -> list[int]:
    """Smallest set of highest-probability tokens with cumulative mass >= p."""
    order = sorted(range(len(probs)), key=lambda t: (-probs[t], t))
    chosen: list[int] = []
    cumulative = 0.0
    for tok in order:
        if probs[tok] <= 0.0:
            break
        chosen.append(tok)
        cumulative += probs[tok]
        if cumulative >= p - 1e-12:
            break
    return chosen


def _sample_among(probs: Sequence[float], allowed: Sequence[int],
                  rng: random.Random) -> int:
    mass = sum(probs[t] for t in allowed)
    u = rng.random() * mass
    acc = 0.0
    for tok in allowed:
        acc += probs[tok]
        if u < acc:
            return tok
    return allowed[-1]


def nucleus_sample(scorer: Scorer, config: DecodeConfig,
                   rng: random.Random) -> list[int]:
    """Top-p sampling: renormalize inside the nucleus, stop at EOS or max_len."""
    seq: list[int] = []
    for _ in range(config.max_len):
        dist = scorer.distribution(tuple(seq))
        nucleus = _nucleus(dist.probs, config.p)
        tok = _sample_among(dist.probs, nucleus, rng)
        if tok == dist.eos_id:
            break
        seq.append(tok)
    return seq


def _top_k(probs: Sequence[float], k: int) -> list[int]:
    order = sorted(range(len(probs)), key=lambda t: (-probs[t], t))
    return [t for t in order[:k] if probs[t] > 0.0]


def delayed_beam_search(scorer: Scorer, config: DecodeConfig,
                        rng: random.Random) -> list[int]:
    """Sample one top-k trajectory for delay_steps tokens, then beam search on."""
    prefix: list[int] = []
    for _ in range(min(config.delay_steps, config.max_len)):
        dist = scorer.distribution(tuple(prefix))
        tok = _sample_among(dist.probs, _top_k(dist.probs, config.k), rng)
        if tok == dist.eos_id:
            return prefix
        prefix.append(tok)
    if len(prefix) >= config.max_len:
        return prefix
    suffix, _ = _beam_from(scorer, tuple(prefix), config.beam_size,
                           config.max_len - len(prefix))
    return prefix + suffix


def sequence_logprob(scorer: Scorer, tokens: Sequence[int],
                     closed: bool = True) -> float:
    """Log-probability of a token sequence; ``closed`` adds the EOS step."""
    logp = 0.0
    prefix: tuple[int, ...] = ()
    for tok in tokens:
        dist = scorer.distribution(prefix)
        p = dist.probs[tok]
        if p <= 0.0:
            return float("-inf")
        logp += math.log(p)
        prefix += (tok,)
    if closed:
        dist = scorer.distribution(prefix)
        p = dist.probs[dist.eos_id]
        logp += math.log(p) if p > 0.0 else float("-inf")
    return logp
