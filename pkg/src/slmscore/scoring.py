"""Utterance scoring: the average log-probability of a token sequence.

The score of an utterance is the arithmetic mean of the per-token
conditional natural-log probabilities under a unit LM, so exp(-score) is the
utterance's per-token perplexity and higher scores mean closer-to-natural
speech. EOS is modeled by every backend but excluded from the average by
default; ``include_eos`` folds it into both the sum and the denominator.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

from .audio_io import CANONICAL_RATE, load_wav, resample_linear
from .errors import ComponentMismatch, InvariantViolation, SlmsError
from .features import LogMelConfig, read_features
from .manifest import EvalManifest, ManifestRow
from .quantizer import Codebook
from .tokenizer import POLICIES, TokenSequence, tokenize
from .ulm.base import UnitLM


@dataclass(frozen=True)
class ScoreReport:
    """One successfully scored utterance."""

    utt_id: str
    score: float
    num_tokens: int
    policy: str
    temperature: float

    def __post_init__(self):
        if self.num_tokens < 1:
            raise InvariantViolation("num_tokens must be >= 1")
        if not math.isfinite(self.score):
            raise InvariantViolation(f"score must be finite, got {self.score}")
        if self.temperature == 1.0 and self.score > 0:
            raise InvariantViolation(
                f"score {self.score} > 0 at temperature 1 (log-probabilities)"
            )


@dataclass(frozen=True)
class ScoreError:
    """A per-utterance failure, kept explicit rather than dropped."""

    utt_id: str
    error: str

    @property
    def status(self) -> str:
        return f"error:{self.error.split(':', 1)[0]}"


ScoreRow = Union[ScoreReport, ScoreError]


def speechlm_score(
    ts: TokenSequence,
    lm: UnitLM,
    temperature: float = 1.0,
    include_eos: bool = False,
) -> ScoreReport:
    """Mean conditional log-probability of the sequence (nats per token).

    With ``include_eos`` the end-of-utterance term joins both the sum and the
    denominator. Summation runs sequentially over positions.
    """
    logprobs = lm.token_logprobs(ts, temperature=temperature, include_eos=include_eos)
    total = 0.0
    for value in logprobs:  # fixed order: independent of any batching upstream
        total += float(value)
    return ScoreReport(
        utt_id=ts.utt_id,
        score=total / logprobs.size,
        num_tokens=int(ts.tokens.size),
        policy=ts.policy,
        temperature=temperature,
    )


def _score_row(
    row: ManifestRow,
    cb: Codebook,
    lm: UnitLM,
    policy: str,
    temperature: float,
    include_eos: bool,
    logmel: LogMelConfig,
    resample: str,
    peak_normalize: bool,
) -> ScoreRow:
    try:
        if row.path.endswith(".slmf"):
            source = read_features(row.path)
        else:
            wave = load_wav(row.path, peak_normalize=peak_normalize)
            if wave.sample_rate != CANONICAL_RATE:
                if resample == "error":
                    raise InvariantViolation(
                        f"{row.path}: sample rate {wave.sample_rate} != {CANONICAL_RATE} "
                        "and resampling is disabled"
                    )
                wave = resample_linear(wave, CANONICAL_RATE)
            source = wave
        ts = tokenize(source, cb, policy=policy, utt_id=row.utt_id, logmel=logmel)
        return speechlm_score(ts, lm, temperature=temperature, include_eos=include_eos)
    except (SlmsError, OSError) as exc:
        return ScoreError(utt_id=row.utt_id, error=f"{type(exc).__name__}: {exc}")


def score_corpus(
    manifest: EvalManifest,
    cb: Codebook,
    lm: UnitLM,
    policy: str = "dedup",
    temperature: float = 1.0,
    include_eos: bool = False,
    logmel: LogMelConfig = LogMelConfig(),
    resample: str = "on",
    peak_normalize: bool = False,
    workers: int = 1,
) -> list[ScoreRow]:
    """Score every manifest row; returns reports sorted by utt_id.

    Component consistency is checked before any scoring: the codebook
    vocabulary must match the LM's, and the requested policy must match the
    LM's training policy. Per-utterance failures become ScoreError rows.
    Results are independent of worker count.
    """
    if policy not in POLICIES:
        raise InvariantViolation(f"unknown policy {policy!r}")
    if cb.vocab_size != lm.vocab.size:
        raise ComponentMismatch(
            f"codebook has V={cb.vocab_size} but LM vocabulary is {lm.vocab.size}"
        )
    if lm.policy is not None and lm.policy != policy:
        raise ComponentMismatch(
            f"requested policy {policy!r} but LM was trained with {lm.policy!r}"
        )
    rows = sorted(manifest.rows, key=lambda r: r.utt_id)

    def work(row: ManifestRow) -> ScoreRow:
        return _score_row(
            row, cb, lm, policy, temperature, include_eos, logmel, resample, peak_normalize
        )

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(work, rows))
    else:
        results = [work(row) for row in rows]
    return results


SCORES_FIELDS = ["utt_id", "score", "num_tokens", "status"]


def write_scores_csv(rows: list[ScoreRow], path) -> None:
    """Scores CSV: utt_id,score,num_tokens,status with 9-significant-digit scores."""
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(SCORES_FIELDS)
        for row in rows:
            if isinstance(row, ScoreReport):
                writer.writerow([row.utt_id, f"{row.score:.9g}", row.num_tokens, "ok"])
            else:
                writer.writerow([row.utt_id, "", 0, row.status])


def read_scores_csv(path) -> dict[str, Optional[float]]:
    """utt_id -> score mapping; failed rows map to None."""
    path = Path(path)
    scores: dict[str, Optional[float]] = {}
    with open(path, newline="", encoding="utf-8") as handle:
        reader = csv.DictReader(handle)
        missing = [f for f in SCORES_FIELDS if f not in (reader.fieldnames or [])]
        if missing:
            raise InvariantViolation(f"{path}: scores CSV missing columns {missing}")
        for record in reader:
            utt_id = record["utt_id"]
            if utt_id in scores:
                raise InvariantViolation(f"{path}: duplicate utt_id {utt_id!r}")
            if record["status"] == "ok":
                scores[utt_id] = float(record["score"])
            else:
                scores[utt_id] = None
    return scores
