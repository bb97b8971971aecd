"""Count-based n-gram unit LM with interpolated absolute discounting.

For a context h with total count c(h), N1+(h) distinct continuations and
discount 0 < delta < 1:

    p(w|h) = max(c(h,w) - delta, 0) / c(h)
             + delta * N1+(h) / c(h) * p(w|h')

recursing on the shortened context h' down to a uniform 1/(V+1) base over
units plus EOS. A context with zero count backs off to h' with full weight.
Every sequence is padded with (order-1) BOS symbols and terminated by one
EOS event, and counts are accumulated at all orders 1..n from the same
events, so conditional distributions sum to one by construction.
"""

from __future__ import annotations

from collections import defaultdict
from typing import Optional, Sequence

import numpy as np

from ..errors import EmptyCorpus, InvariantViolation, TokenOutOfRange
from ..tokenizer import TokenSequence
from .base import UnitLM, Vocabulary


class NgramModel(UnitLM):
    """Trained count tables plus the discounted-interpolation evaluator.

    ``counts[k]`` maps a length-k context tuple (ids, possibly containing
    BOS) to a dict of continuation counts over units and EOS; ``totals[k]``
    holds c(h). Outcome index V stands for EOS in all probability vectors.
    """

    backend = "ngram"

    def __init__(self, vocab: Vocabulary, order: int, discount: float, policy: Optional[str]):
        super().__init__(vocab, policy)
        if order < 1:
            raise InvariantViolation("order must be >= 1")
        if not (0.0 < discount < 1.0):
            raise InvariantViolation("discount must be in (0, 1)")
        self.order = order
        self.discount = discount
        self.counts: list[dict[tuple, dict[int, int]]] = [
            defaultdict(dict) for _ in range(order)
        ]
        self.totals: list[dict[tuple, int]] = [defaultdict(int) for _ in range(order)]

    # -- training ----------------------------------------------------------

    def _accumulate(self, tokens: np.ndarray) -> None:
        bos = self.vocab.bos_id
        stream = [bos] * (self.order - 1) + [int(t) for t in tokens]
        events = [int(t) for t in tokens] + [self.vocab.eos_id]
        for j, w in enumerate(events):
            pos = (self.order - 1) + j  # index of w in the conceptual stream
            for k in range(self.order):
                ctx = tuple(stream[pos - k : pos])
                table = self.counts[k][ctx]
                table[w] = table.get(w, 0) + 1
                self.totals[k][ctx] += 1

    # -- evaluation --------------------------------------------------------

    def _outcome_index(self, w: int) -> int:
        return self.vocab.size if w == self.vocab.eos_id else w

    def prob_vector(self, context: tuple) -> np.ndarray:
        """p(. | context) over V+1 outcomes; context is the last <= order-1 ids."""
        context = tuple(context)[max(0, len(context) - (self.order - 1)) :]
        n_out = self.vocab.num_outcomes
        p = np.full(n_out, 1.0 / n_out)
        for k in range(len(context) + 1):
            ctx = context[len(context) - k :]
            total = self.totals[k].get(ctx, 0)
            if total == 0:
                continue  # unseen context: keep the shortened-context estimate
            table = self.counts[k][ctx]
            interp = self.discount * len(table) / total
            p = interp * p
            for w, cnt in table.items():
                p[self._outcome_index(w)] += max(cnt - self.discount, 0.0) / total
        return p

    def _context_at(self, tokens: np.ndarray, i: int) -> tuple:
        span = self.order - 1
        if span == 0:
            return ()
        pad = max(0, span - i)
        ctx = (self.vocab.bos_id,) * pad + tuple(int(t) for t in tokens[i - (span - pad) : i])
        return ctx

    def step_log_distributions(self, tokens: np.ndarray, include_eos: bool = False) -> np.ndarray:
        n = tokens.size + (1 if include_eos else 0)
        rows = np.empty((n, self.vocab.num_outcomes))
        for i in range(n):
            rows[i] = np.log(self.prob_vector(self._context_at(tokens, i)))
        return rows


def train_ngram(
    corpus: Sequence[TokenSequence],
    vocab: Vocabulary,
    order: int = 3,
    discount: float = 0.75,
) -> NgramModel:
    """Accumulate count tables over a token corpus.

    All sequences must share one dedup policy, which is recorded on the model
    and enforced at scoring time.
    """
    if not corpus:
        raise EmptyCorpus("n-gram training needs at least one sequence")
    policies = {ts.policy for ts in corpus}
    if len(policies) != 1:
        raise InvariantViolation(f"corpus mixes dedup policies: {sorted(policies)}")
    model = NgramModel(vocab, order, discount, policy=policies.pop())
    for ts in corpus:
        if int(ts.tokens.max()) >= vocab.size:
            raise TokenOutOfRange(
                f"utterance {ts.utt_id!r} has token >= vocabulary {vocab.size}"
            )
        model._accumulate(ts.tokens)
    return model
