"""Discrete token sequences and the repeated-token policy.

Two policies exist end to end: ``dedup`` collapses runs of identical
consecutive tokens to a single occurrence, ``keep_repeats`` retains them
(preserving implicit duration information). The policy travels with every
TokenSequence and is cross-checked against the LM's training policy at
scoring time; a mismatch is an error, not a warning, because a dedup-trained
LM scoring repeated-token streams silently corrupts results.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Union

import numpy as np

from .audio_io import Waveform
from .errors import EmptyInput, InvariantViolation, TokenOutOfRange
from .features import FeatureSequence, LogMelConfig, extract_logmel
from .quantizer import Codebook, assign

POLICY_DEDUP = "dedup"
POLICY_KEEP_REPEATS = "keep_repeats"
POLICIES = (POLICY_DEDUP, POLICY_KEEP_REPEATS)


def policy_of(dedup_applied: bool) -> str:
    return POLICY_DEDUP if dedup_applied else POLICY_KEEP_REPEATS


@dataclass(frozen=True)
class TokenSequence:
    """Unit ids in [0, V) with vocabulary size, dedup provenance and utt id."""

    tokens: np.ndarray
    vocab_size: int
    dedup_applied: bool = False
    utt_id: str = ""

    def __post_init__(self):
        tokens = np.asarray(self.tokens, dtype=np.int64)
        object.__setattr__(self, "tokens", tokens)
        if tokens.ndim != 1 or tokens.size == 0:
            raise EmptyInput("token sequence must be non-empty and 1-D")
        if self.vocab_size < 1:
            raise InvariantViolation("vocab_size must be >= 1")
        if tokens.min() < 0 or tokens.max() >= self.vocab_size:
            raise TokenOutOfRange(
                f"tokens outside [0, {self.vocab_size}) in utterance {self.utt_id!r}"
            )
        if self.dedup_applied and tokens.size > 1 and np.any(tokens[1:] == tokens[:-1]):
            raise InvariantViolation(
                "dedup_applied sequence contains equal consecutive tokens"
            )

    @property
    def policy(self) -> str:
        return policy_of(self.dedup_applied)

    def __len__(self) -> int:
        return self.tokens.size


def dedup(ts: TokenSequence) -> TokenSequence:
    """Collapse runs of equal consecutive tokens to one occurrence (idempotent)."""
    tokens = ts.tokens
    keep = np.ones(tokens.size, dtype=bool)
    keep[1:] = tokens[1:] != tokens[:-1]
    return TokenSequence(
        tokens=tokens[keep],
        vocab_size=ts.vocab_size,
        dedup_applied=True,
        utt_id=ts.utt_id,
    )


def tokenize(
    source: Union[Waveform, FeatureSequence],
    cb: Codebook,
    policy: str = POLICY_DEDUP,
    utt_id: str = "",
    logmel: LogMelConfig = LogMelConfig(),
) -> TokenSequence:
    """Map audio or precomputed features to a token sequence.

    A Waveform is first run through the built-in log-mel encoder; a
    FeatureSequence is quantized directly. With ``keep_repeats`` the output
    length equals the frame count; ``dedup`` can only shorten it.
    """
    if policy not in POLICIES:
        raise InvariantViolation(f"unknown policy {policy!r}; expected one of {POLICIES}")
    fs = extract_logmel(source, logmel) if isinstance(source, Waveform) else source
    ts = TokenSequence(
        tokens=assign(fs, cb),
        vocab_size=cb.vocab_size,
        dedup_applied=False,
        utt_id=utt_id,
    )
    return dedup(ts) if policy == POLICY_DEDUP else ts


def write_tokens(sequences: Iterable[TokenSequence], path) -> None:
    """Token corpus file: one utterance per line, ``utt_id<TAB>t1 t2 t3 ...``."""
    lines = []
    for ts in sequences:
        lines.append(f"{ts.utt_id}\t{' '.join(str(t) for t in ts.tokens)}\n")
    Path(path).write_text("".join(lines), encoding="utf-8")


def read_tokens(path, vocab_size: int, policy: str) -> list[TokenSequence]:
    """Read a token corpus file, validating ids against ``vocab_size``.

    The text format records neither V nor policy, so both are supplied by the
    caller (the CLI takes them as flags).
    """
    if policy not in POLICIES:
        raise InvariantViolation(f"unknown policy {policy!r}; expected one of {POLICIES}")
    sequences = []
    with open(path, encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            utt_id, _, payload = line.partition("\t")
            if not payload:
                raise InvariantViolation(
                    f"{path}:{lineno}: expected 'utt_id<TAB>tokens'"
                )
            tokens = np.array([int(t) for t in payload.split()], dtype=np.int64)
            sequences.append(
                TokenSequence(
                    tokens=tokens,
                    vocab_size=vocab_size,
                    dedup_applied=(policy == POLICY_DEDUP),
                    utt_id=utt_id,
                )
            )
    return sequences
