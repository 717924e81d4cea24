"""SQuAD-format ingestion, tokenization, answer alignment, GloVe loading,
and padded/masked batch construction.

Tokenization is lowercased and whitespace-driven, with leading and trailing
punctuation peeled off as single-character tokens (so quotes survive as
tokens) while interior punctuation stays put, keeping numerals like 11:28
and scores like 10-7 intact. Every token remembers its character span in the
original text, which is what answer alignment and answer reconstruction use.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .autodiff import ConfigError

__all__ = [
    "Token", "QAExample", "EmbeddingTable", "Batch", "DatasetStats",
    "ParseError", "SchemaError", "AlignmentError", "GloveFormatError",
    "EmptyDatasetError", "PAD_ID", "UNK_ID",
    "tokenize", "load_squad", "align_answer", "load_glove",
    "build_batches", "prepare_for_training", "dataset_stats",
]

log = logging.getLogger(__name__)

PAD_ID = 0
UNK_ID = 1


class ParseError(ValueError):
    """Input file is not valid JSON."""


class SchemaError(ValueError):
    """Input JSON is missing a required SQuAD field."""


class AlignmentError(ValueError):
    """A character-offset answer cannot be covered by a token range."""


class GloveFormatError(ValueError):
    """An embedding file line has the wrong number of fields."""


class EmptyDatasetError(ValueError):
    """An operation that needs examples received none."""


class Token(NamedTuple):
    text: str    # lowercased
    start: int   # char offsets [start, end) into the original string
    end: int


@dataclass
class QAExample:
    qid: str
    context_text: str
    context_tokens: list[Token]
    question_text: str
    question_tokens: list[Token]
    answer_texts: list[str]
    gold_span: tuple[int, int] | None = None  # inclusive token range


@dataclass
class EmbeddingTable:
    """Word vectors with reserved rows: PAD=0 (zeros), UNK=1 (mean vector)."""

    dim: int
    word_to_id: dict[str, int]
    matrix: np.ndarray

    def id_of(self, word: str) -> int:
        return self.word_to_id.get(word, UNK_ID)

    def ids(self, tokens) -> np.ndarray:
        return np.array([self.id_of(t.text) for t in tokens], dtype=np.int64)

    @property
    def vocab_size(self) -> int:
        return self.matrix.shape[0]


@dataclass
class Batch:
    context_ids: np.ndarray     # (B, Lc) int64
    context_mask: np.ndarray    # (B, Lc) float64, 1 for real tokens
    question_ids: np.ndarray    # (B, Lq)
    question_mask: np.ndarray
    gold_starts: np.ndarray     # (B,) int64
    gold_ends: np.ndarray
    qids: list[str]

    @property
    def size(self) -> int:
        return self.context_ids.shape[0]


@dataclass
class DatasetStats:
    example_count: int
    answer_under_20_fraction: float
    context_under_300_fraction: float
    answer_length_hist: list[int] = field(default_factory=list)
    context_length_hist: list[int] = field(default_factory=list)


def tokenize(text: str) -> list[Token]:
    """Lowercased tokens with original-string character spans."""
    tokens: list[Token] = []
    n = len(text)
    i = 0
    while i < n:
        if text[i].isspace():
            i += 1
            continue
        j = i
        while j < n and not text[j].isspace():
            j += 1
        _split_chunk(text, i, j, tokens)
        i = j
    return tokens


def _split_chunk(text: str, start: int, stop: int, out: list[Token]) -> None:
    # peel leading/trailing non-alphanumerics one char at a time; interior
    # punctuation (11:28, 10-7, don't) is left alone
    left, right = start, stop
    while left < right and not text[left].isalnum():
        left += 1
    while right > left and not text[right - 1].isalnum():
        right -= 1
    for k in range(start, left):
        out.append(Token(text[k].lower(), k, k + 1))
    if left < right:
        out.append(Token(text[left:right].lower(), left, right))
    for k in range(right, stop):
        out.append(Token(text[k].lower(), k, k + 1))


def align_answer(context_tokens: list[Token], answer_text: str,
                 answer_start: int) -> tuple[int, int]:
    """Smallest inclusive token range whose char span covers the answer."""
    answer_end = answer_start + len(answer_text)
    if not context_tokens or answer_start < 0 or answer_end > context_tokens[-1].end:
        raise AlignmentError(
            f"answer offset [{answer_start}, {answer_end}) outside tokenized context")
    start_tok = None
    end_tok = None
    for i, tok in enumerate(context_tokens):
        if start_tok is None and tok.end > answer_start:
            start_tok = i
        if tok.start < answer_end:
            end_tok = i
    if (start_tok is None or end_tok is None or start_tok > end_tok
            or context_tokens[start_tok].start > answer_start
            or context_tokens[end_tok].end < answer_end):
        raise AlignmentError(
            f"answer {answer_text!r} at offset {answer_start} is not coverable")
    return start_tok, end_tok


def _require(mapping, key, where):
    try:
        return mapping[key]
    except (KeyError, TypeError):
        raise SchemaError(f"missing field {key!r} in {where}") from None


def load_squad(path) -> list[QAExample]:
    """Parse a SQuAD v1.1 JSON file into tokenized, aligned examples.

    All listed answers are retained; the gold token span is aligned from the
    first answer. Examples whose first answer cannot be aligned keep
    gold_span=None and are counted in a warning.
    """
    with open(path, encoding="utf-8") as handle:
        try:
            raw = json.load(handle)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: {exc}") from None
    examples: list[QAExample] = []
    unaligned = 0
    for article in _require(raw, "data", str(path)):
        for paragraph in _require(article, "paragraphs", "article"):
            context = _require(paragraph, "context", "paragraph")
            context_tokens = tokenize(context)
            for qa in _require(paragraph, "qas", "paragraph"):
                qid = _require(qa, "id", "qa entry")
                question = _require(qa, "question", f"qa {qid}")
                answers = _require(qa, "answers", f"qa {qid}")
                texts = [_require(a, "text", f"answer of qa {qid}") for a in answers]
                gold = None
                if answers:
                    first = answers[0]
                    try:
                        gold = align_answer(context_tokens, first["text"],
                                            _require(first, "answer_start",
                                                     f"answer of qa {qid}"))
                    except AlignmentError:
                        unaligned += 1
                examples.append(QAExample(
                    qid=qid,
                    context_text=context,
                    context_tokens=context_tokens,
                    question_text=question,
                    question_tokens=tokenize(question),
                    answer_texts=texts,
                    gold_span=gold,
                ))
    if unaligned:
        log.warning("%d examples had unalignable first answers", unaligned)
    return examples


def load_glove(path, dim: int) -> EmbeddingTable:
    """Read `word f1 ... fdim` lines; prepend PAD (zeros) and UNK (mean)."""
    words: list[str] = []
    rows: list[np.ndarray] = []
    with open(path, encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            parts = line.rstrip("\n").split(" ")
            if len(parts) != dim + 1:
                raise GloveFormatError(
                    f"{path}:{lineno}: expected {dim} floats, got {len(parts) - 1}")
            words.append(parts[0])
            rows.append(np.array(parts[1:], dtype=np.float64))
    matrix = np.zeros((len(rows) + 2, dim))
    if rows:
        stacked = np.stack(rows)
        matrix[2:] = stacked
        matrix[UNK_ID] = stacked.mean(axis=0)
    word_to_id = {w: i + 2 for i, w in enumerate(words)}
    return EmbeddingTable(dim=dim, word_to_id=word_to_id, matrix=matrix)


def prepare_for_training(examples, context_cap: int) -> tuple[list[QAExample], int]:
    """Keep examples whose gold span survives context truncation.

    Returns (kept, dropped_count); dropped examples either lack a gold span
    or have one clipped away by the cap (a clamped label would be wrong).
    """
    kept = []
    dropped = 0
    for ex in examples:
        if ex.gold_span is None or ex.gold_span[1] >= context_cap:
            dropped += 1
        else:
            kept.append(ex)
    return kept, dropped


def build_batches(examples, table: EmbeddingTable, batch_size: int,
                  context_cap: int = 300, shuffle_seed: int | None = None,
                  training: bool = True) -> list[Batch]:
    """Pad/mask examples into batches; deterministic order given the seed.

    In training mode, examples without a usable gold span under the cap are
    dropped first (see prepare_for_training). Padding goes to each batch's
    own max context/question length.
    """
    if batch_size < 1:
        raise ConfigError(f"batch_size must be >= 1, got {batch_size}")
    examples = list(examples)
    if training:
        examples, dropped = prepare_for_training(examples, context_cap)
        if dropped:
            log.info("dropped %d examples with no gold span under cap %d",
                     dropped, context_cap)
    if shuffle_seed is not None:
        order = np.random.default_rng(shuffle_seed).permutation(len(examples))
        examples = [examples[i] for i in order]
    batches = []
    for lo in range(0, len(examples), batch_size):
        chunk = examples[lo:lo + batch_size]
        batches.append(_assemble(chunk, table, context_cap))
    return batches


def _assemble(chunk, table, context_cap) -> Batch:
    ctoks = [ex.context_tokens[:context_cap] for ex in chunk]
    qtoks = [ex.question_tokens for ex in chunk]
    max_c = max(len(t) for t in ctoks)
    max_q = max(max(len(t) for t in qtoks), 1)
    n = len(chunk)
    context_ids = np.full((n, max_c), PAD_ID, dtype=np.int64)
    context_mask = np.zeros((n, max_c))
    question_ids = np.full((n, max_q), PAD_ID, dtype=np.int64)
    question_mask = np.zeros((n, max_q))
    gold_starts = np.zeros(n, dtype=np.int64)
    gold_ends = np.zeros(n, dtype=np.int64)
    for b, ex in enumerate(chunk):
        context_ids[b, :len(ctoks[b])] = table.ids(ctoks[b])
        context_mask[b, :len(ctoks[b])] = 1.0
        question_ids[b, :len(qtoks[b])] = table.ids(qtoks[b])
        question_mask[b, :len(qtoks[b])] = 1.0
        if ex.gold_span is not None and ex.gold_span[1] < context_cap:
            gold_starts[b], gold_ends[b] = ex.gold_span
    return Batch(context_ids, context_mask, question_ids, question_mask,
                 gold_starts, gold_ends, [ex.qid for ex in chunk])


def _answer_token_length(ex: QAExample) -> int:
    if ex.gold_span is not None:
        return ex.gold_span[1] - ex.gold_span[0] + 1
    return max(len(tokenize(ex.answer_texts[0])), 1) if ex.answer_texts else 1


def dataset_stats(examples) -> DatasetStats:
    """Answer/context length fractions and 10-bucket histograms."""
    examples = list(examples)
    if not examples:
        raise EmptyDatasetError("dataset_stats needs at least one example")
    answer_lens = np.array([_answer_token_length(ex) for ex in examples])
    context_lens = np.array([len(ex.context_tokens) for ex in examples])
    answer_hist = [0] * 10   # buckets of 2 tokens; last bucket is >= 19
    context_hist = [0] * 10  # buckets of 50 tokens; last bucket is >= 451
    for length in answer_lens:
        answer_hist[min((length - 1) // 2, 9)] += 1
    for length in context_lens:
        context_hist[min((length - 1) // 50, 9)] += 1
    return DatasetStats(
        example_count=len(examples),
        answer_under_20_fraction=float((answer_lens < 20).mean()),
        context_under_300_fraction=float((context_lens < 300).mean()),
        answer_length_hist=answer_hist,
        context_length_hist=context_hist,
    )
