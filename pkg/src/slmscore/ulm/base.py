"""Shared contract for autoregressive unit language models.

Every backend produces, for each position i of a token sequence, the full
log-probability row over the V+1 outcomes (units 0..V-1 plus EOS at index V)
conditioned on the preceding tokens. BOS is a conditioning symbol only and is
never predicted; EOS is predicted but never conditioned on.

Temperature is defined identically for all backends: unit-level
probabilities are raised to 1/temperature and renormalized over the V+1
support (done in log space), so temperature 1 is exactly the untempered
model and the large-temperature limit is uniform.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..errors import InvariantViolation, PolicyMismatch, TokenOutOfRange
from ..tokenizer import POLICIES, TokenSequence


@dataclass(frozen=True)
class Vocabulary:
    """V unit ids in [0, V); BOS and EOS live outside the unit range."""

    size: int

    def __post_init__(self):
        if self.size < 1:
            raise InvariantViolation("vocabulary size must be >= 1")

    @property
    def bos_id(self) -> int:
        return self.size

    @property
    def eos_id(self) -> int:
        return self.size + 1

    @property
    def num_outcomes(self) -> int:
        """Size of every conditional distribution: units plus EOS."""
        return self.size + 1


@dataclass(frozen=True)
class TrainConfig:
    backend: str = "ngram"
    # ngram backend
    order: int = 3
    discount: float = 0.75
    # rnn backend
    embed_dim: int = 64
    hidden_dim: int = 128
    lr: float = 0.002
    dropout: float = 0.2
    epochs: int = 40
    bptt_len: int = 128
    grad_clip: float = 5.0
    batch_size: int = 32
    seed: int = 0

    def __post_init__(self):
        if self.backend not in ("ngram", "rnn"):
            raise InvariantViolation(f"unknown backend {self.backend!r}")
        if self.order < 1:
            raise InvariantViolation("order must be >= 1")
        if not (0.0 < self.discount < 1.0):
            raise InvariantViolation("discount must be in (0, 1)")
        if self.lr <= 0:
            raise InvariantViolation("lr must be > 0")
        if self.epochs < 1:
            raise InvariantViolation("epochs must be >= 1")
        if self.embed_dim < 1 or self.hidden_dim < 1:
            raise InvariantViolation("embed_dim and hidden_dim must be >= 1")
        if self.bptt_len < 1 or self.batch_size < 1:
            raise InvariantViolation("bptt_len and batch_size must be >= 1")


def log_softmax(z: np.ndarray) -> np.ndarray:
    m = z.max(axis=-1, keepdims=True)
    return z - m - np.log(np.exp(z - m).sum(axis=-1, keepdims=True))


def _logsumexp(z: np.ndarray) -> np.ndarray:
    m = z.max(axis=-1, keepdims=True)
    return m + np.log(np.exp(z - m).sum(axis=-1, keepdims=True))


class UnitLM:
    """Base class: owns validation and the temperature contract.

    Subclasses implement ``step_log_distributions``. ``policy`` is the dedup
    policy of the training corpus; None means unknown (foreign model file),
    which disables the mismatch check.
    """

    backend = "base"

    def __init__(self, vocab: Vocabulary, policy: Optional[str]):
        if policy is not None and policy not in POLICIES:
            raise InvariantViolation(f"unknown policy {policy!r}")
        self.vocab = vocab
        self.policy = policy

    def step_log_distributions(self, tokens: np.ndarray, include_eos: bool = False) -> np.ndarray:
        """(n, V+1) natural-log probability rows; row i conditions on tokens[:i].

        n is len(tokens), plus one trailing EOS-prediction row when
        ``include_eos`` is set.
        """
        raise NotImplementedError

    def _validate(self, ts: TokenSequence, temperature: float) -> None:
        if temperature <= 0:
            raise InvariantViolation(f"temperature must be > 0, got {temperature}")
        if self.policy is not None and ts.policy != self.policy:
            raise PolicyMismatch(
                f"sequence {ts.utt_id!r} has policy {ts.policy!r} but the LM "
                f"was trained with {self.policy!r}"
            )
        if int(ts.tokens.max()) >= self.vocab.size:
            raise TokenOutOfRange(
                f"token {int(ts.tokens.max())} >= model vocabulary {self.vocab.size}"
            )

    def token_logprobs(
        self, ts: TokenSequence, temperature: float = 1.0, include_eos: bool = False
    ) -> np.ndarray:
        """ln p(d_i | d_<i) for each token, optionally plus the EOS term."""
        self._validate(ts, temperature)
        rows = self.step_log_distributions(ts.tokens, include_eos=include_eos)
        targets = ts.tokens
        if include_eos:
            targets = np.concatenate([targets, [self.vocab.size]])
        idx = np.arange(targets.size)
        if temperature == 1.0:
            return rows[idx, targets]
        scaled = rows / temperature
        scaled = scaled - _logsumexp(scaled)
        return scaled[idx, targets]


def cond_logprobs(lm: UnitLM, ts: TokenSequence, temperature: float = 1.0) -> np.ndarray:
    """Per-token conditional natural-log probabilities, length T."""
    return lm.token_logprobs(ts, temperature=temperature, include_eos=False)


class UniformModel(UnitLM):
    """Maximum-entropy baseline: every outcome gets probability 1/(V+1)."""

    backend = "uniform"

    def __init__(self, vocab: Vocabulary, policy: Optional[str] = None):
        super().__init__(vocab, policy)

    def step_log_distributions(self, tokens: np.ndarray, include_eos: bool = False) -> np.ndarray:
        n = tokens.size + (1 if include_eos else 0)
        return np.full((n, self.vocab.num_outcomes), -np.log(self.vocab.num_outcomes))
