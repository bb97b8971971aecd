"""Autoregressive unit language models: n-gram and LSTM backends.

Both backends expose one contract: per-step natural-log conditional
distributions over V units plus EOS, with shared temperature semantics.
``save_lm``/``load_lm`` dispatch on file content: ARPA text for n-gram
models, the ``SLMR`` binary for the LSTM.
"""

from __future__ import annotations

from pathlib import Path

from ..errors import BadMagic
from .arpa import ArpaModel, read_arpa, write_arpa
from .base import TrainConfig, UniformModel, UnitLM, Vocabulary, cond_logprobs
from .ngram import NgramModel, train_ngram
from .rnn import RNN_MAGIC, RnnModel, gradcheck_rnn, load_rnn, save_rnn, train_rnn

__all__ = [
    "ArpaModel",
    "NgramModel",
    "RnnModel",
    "TrainConfig",
    "UniformModel",
    "UnitLM",
    "Vocabulary",
    "cond_logprobs",
    "gradcheck_rnn",
    "load_lm",
    "read_arpa",
    "save_lm",
    "train_ngram",
    "train_rnn",
    "write_arpa",
]


def save_lm(model: UnitLM, path) -> None:
    """Persist a trained model: ARPA text for n-gram, SLMR binary for rnn."""
    if isinstance(model, NgramModel):
        write_arpa(model, path)
    elif isinstance(model, RnnModel):
        save_rnn(model, path)
    else:
        raise TypeError(f"cannot serialize model of type {type(model).__name__}")


def load_lm(path) -> UnitLM:
    """Load a model file, sniffing SLMR magic bytes vs ARPA text."""
    path = Path(path)
    head = path.read_bytes()[:4]
    if head == RNN_MAGIC:
        return load_rnn(path)
    try:
        return read_arpa(path)
    except UnicodeDecodeError as exc:
        raise BadMagic(f"{path}: neither SLMR binary nor ARPA text") from exc
