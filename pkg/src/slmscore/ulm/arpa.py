"""ARPA text serialization for the n-gram backend.

An interpolated absolute-discount model converts exactly to back-off form:
each seen n-gram (h, w) stores its interpolated probability, and the backoff
weight of a context h is its interpolation weight delta * N1+(h) / c(h).
Contexts that only ever appear as prefixes (the all-BOS runs) get the
conventional -99 pseudo log10 probability. Units are written as decimal
strings with "<s>" / "</s>" for BOS and EOS; probabilities are log10 in the
file and converted to natural log on load.

Lines before the ``\\data\\`` marker are free-form header comments; this
module records the training policy and vocabulary size there so loaded
models stay self-describing.
"""

from __future__ import annotations

import math
from pathlib import Path
from typing import Optional

import numpy as np

from ..errors import BadMagic, InvariantViolation, MalformedArpa
from .base import UnitLM, Vocabulary
from .ngram import NgramModel

_LN10 = math.log(10.0)
_PSEUDO_LOG10 = -99.0

BOS_WORD = "<s>"
EOS_WORD = "</s>"


def _render(word_id: int, vocab: Vocabulary) -> str:
    if word_id == vocab.bos_id:
        return BOS_WORD
    if word_id == vocab.eos_id:
        return EOS_WORD
    return str(word_id)


def write_arpa(model: NgramModel, path) -> None:
    """Write the model in standard ARPA form (lossless for cond_logprobs)."""
    vocab = model.vocab
    sections: list[list[str]] = []
    for k in range(1, model.order + 1):
        grams: dict[tuple, float] = {}
        for ctx in sorted(model.counts[k - 1]):
            p = model.prob_vector(ctx)
            for w in sorted(model.counts[k - 1][ctx]):
                grams[ctx + (w,)] = p[model._outcome_index(w)]
        if k < model.order:
            bos_run = (vocab.bos_id,) * k
            if model.totals[k].get(bos_run, 0) > 0 and bos_run not in grams:
                grams[bos_run] = None  # context-only entry
        lines = []
        for gram in sorted(grams):
            prob = grams[gram]
            log10p = _PSEUDO_LOG10 if prob is None else math.log10(prob)
            words = " ".join(_render(w, vocab) for w in gram)
            total = model.totals[k].get(gram, 0) if k < model.order else 0
            if total > 0:
                bow = model.discount * len(model.counts[k][gram]) / total
                lines.append(f"{log10p:.12g}\t{words}\t{math.log10(bow):.12g}")
            else:
                lines.append(f"{log10p:.12g}\t{words}")
        sections.append(lines)

    out = [
        "# slmscore unit language model",
        f"# policy: {model.policy}",
        f"# vocab-size: {vocab.size}",
        "",
        "\\data\\",
    ]
    out += [f"ngram {k}={len(lines)}" for k, lines in enumerate(sections, start=1)]
    for k, lines in enumerate(sections, start=1):
        out += ["", f"\\{k}-grams:"]
        out += lines
    out += ["", "\\end\\", ""]
    Path(path).write_text("\n".join(out), encoding="utf-8")


class ArpaModel(UnitLM):
    """Back-off n-gram evaluator loaded from an ARPA file.

    p(w|h) is the stored probability when (h, w) is listed, otherwise
    bow(h) * p(w|h') with bow defaulting to 1 for unlisted contexts.
    """

    backend = "ngram"

    def __init__(
        self,
        vocab: Vocabulary,
        order: int,
        tables: list[dict[tuple, tuple[float, float]]],
        policy: Optional[str],
    ):
        super().__init__(vocab, policy)
        self.order = order
        self.tables = tables  # tables[k]: k-gram tuple -> (ln_p, ln_bow)
        # per-context index of listed continuations, split out for vector fills
        self._children: list[dict[tuple, tuple[np.ndarray, np.ndarray]]] = []
        for k in range(order):
            grouped: dict[tuple, tuple[list, list]] = {}
            for gram, (ln_p, _) in self.tables[k].items():
                ctx, w = gram[:-1], gram[-1]
                if w == vocab.bos_id:
                    continue  # BOS is never an outcome
                idx = vocab.size if w == vocab.eos_id else w
                grouped.setdefault(ctx, ([], []))[0].append(idx)
                grouped[ctx][1].append(ln_p)
            self._children.append(
                {ctx: (np.array(i), np.array(p)) for ctx, (i, p) in grouped.items()}
            )
        base = np.full(vocab.num_outcomes, -np.inf)
        idx, lnp = self._children[0].get((), (np.array([], dtype=int), np.array([])))
        base[idx] = lnp
        self._unigram_vec = base

    def log_prob_vector(self, context: tuple) -> np.ndarray:
        context = tuple(context)[max(0, len(context) - (self.order - 1)) :]
        if not context:
            return self._unigram_vec.copy()
        vec = self.log_prob_vector(context[1:])
        entry = self.tables[len(context) - 1].get(context)
        vec += entry[1] if entry is not None else 0.0
        hit = self._children[len(context)].get(context)
        if hit is not None:
            vec[hit[0]] = hit[1]
        return vec

    def _context_at(self, tokens: np.ndarray, i: int) -> tuple:
        span = self.order - 1
        if span == 0:
            return ()
        pad = max(0, span - i)
        return (self.vocab.bos_id,) * pad + tuple(int(t) for t in tokens[i - (span - pad) : i])

    def step_log_distributions(self, tokens: np.ndarray, include_eos: bool = False) -> np.ndarray:
        n = tokens.size + (1 if include_eos else 0)
        rows = np.empty((n, self.vocab.num_outcomes))
        for i in range(n):
            rows[i] = self.log_prob_vector(self._context_at(tokens, i))
        return rows


def _parse_word(word: str) -> tuple[int, int]:
    """Returns (id placeholder, kind): kind 0 unit, 1 bos, 2 eos."""
    if word == BOS_WORD:
        return -1, 1
    if word == EOS_WORD:
        return -2, 2
    try:
        unit = int(word)
    except ValueError as exc:
        raise MalformedArpa(f"non-numeric unit token {word!r}") from exc
    if unit < 0:
        raise MalformedArpa(f"negative unit id {unit}")
    return unit, 0


def read_arpa(path) -> ArpaModel:
    """Parse an ARPA file written by this module (or any standard one)."""
    path = Path(path)
    lines = path.read_text(encoding="utf-8").splitlines()

    policy = None
    declared_vocab = None
    pos = 0
    while pos < len(lines) and lines[pos].strip() != "\\data\\":
        header = lines[pos].strip()
        if header.startswith("# policy:"):
            policy = header.split(":", 1)[1].strip()
        elif header.startswith("# vocab-size:"):
            declared_vocab = int(header.split(":", 1)[1].strip())
        pos += 1
    if pos == len(lines):
        raise BadMagic(f"{path}: no \\data\\ section; not an ARPA file")
    pos += 1

    declared: dict[int, int] = {}
    while pos < len(lines):
        line = lines[pos].strip()
        pos += 1
        if not line:
            continue
        if line.startswith("ngram "):
            spec = line[len("ngram ") :]
            k_str, _, count_str = spec.partition("=")
            try:
                declared[int(k_str)] = int(count_str)
            except ValueError as exc:
                raise MalformedArpa(f"{path}: bad ngram declaration {line!r}") from exc
        else:
            pos -= 1
            break
    if not declared or sorted(declared) != list(range(1, len(declared) + 1)):
        raise MalformedArpa(f"{path}: ngram orders must be contiguous from 1")
    order = max(declared)

    raw_grams: list[list[tuple[float, list, float]]] = [[] for _ in range(order)]
    current = None
    for line in lines[pos:]:
        line = line.strip()
        if not line:
            continue
        if line == "\\end\\":
            current = "done"
            continue
        if line.startswith("\\") and line.endswith("-grams:"):
            current = int(line[1:].split("-")[0])
            continue
        if current == "done":
            raise MalformedArpa(f"{path}: content after \\end\\")
        if current is None:
            raise MalformedArpa(f"{path}: n-gram entry outside any section: {line!r}")
        fields = line.split()
        if len(fields) == current + 2:
            bow10 = float(fields[-1])
            words = fields[1:-1]
        elif len(fields) == current + 1:
            bow10 = 0.0
            words = fields[1:]
        else:
            raise MalformedArpa(
                f"{path}: expected {current}-gram line, got {len(fields)} fields: {line!r}"
            )
        raw_grams[current - 1].append((float(fields[0]), words, bow10))
    if current != "done":
        raise MalformedArpa(f"{path}: missing \\end\\ marker")

    for k in range(1, order + 1):
        if len(raw_grams[k - 1]) != declared[k]:
            raise MalformedArpa(
                f"{path}: section {k} declares {declared[k]} entries "
                f"but lists {len(raw_grams[k - 1])}"
            )

    max_unit = -1
    parsed: list[list[tuple[float, list, float]]] = []
    for k in range(order):
        rows = []
        for log10p, words, bow10 in raw_grams[k]:
            kinds = [_parse_word(w) for w in words]
            for unit, kind in kinds:
                if kind == 0:
                    max_unit = max(max_unit, unit)
            rows.append((log10p, kinds, bow10))
        parsed.append(rows)
    if max_unit < 0:
        raise MalformedArpa(f"{path}: no unit tokens found")

    vocab = Vocabulary(declared_vocab if declared_vocab is not None else max_unit + 1)
    if max_unit >= vocab.size:
        raise InvariantViolation(
            f"{path}: unit id {max_unit} >= declared vocab size {vocab.size}"
        )

    tables: list[dict[tuple, tuple[float, float]]] = [{} for _ in range(order)]
    for k in range(order):
        for log10p, kinds, bow10 in parsed[k]:
            gram = tuple(
                vocab.bos_id if kind == 1 else vocab.eos_id if kind == 2 else unit
                for unit, kind in kinds
            )
            tables[k][gram] = (log10p * _LN10, bow10 * _LN10)
    return ArpaModel(vocab, order, tables, policy)
