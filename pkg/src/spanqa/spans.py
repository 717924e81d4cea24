"""Answer-span selection from start/end probability distributions.

The smart-span score divides the start*end probability product by a
log-length penalty, so among spans with similar products the shorter one
wins. ``best_span`` is the vectorized production path; ``oracle_best_span``
is a deliberately plain O(L^2) scan kept independent for cross-checking.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .autodiff import DegenerateMaskError

__all__ = ["SpanPrediction", "SpanOrderingError", "smart_span_score",
           "best_span", "oracle_best_span", "raw_product_span", "span_text"]


class SpanOrderingError(ValueError):
    """A span was requested with start > end."""


@dataclass
class SpanPrediction:
    start: int
    end: int  # inclusive
    score: float
    answer_text: str = ""


def smart_span_score(p_s: float, p_e: float, start: int, end: int,
                     log_base: float = math.e) -> float:
    """p_s * p_e / (log(end - start + 1) + 1); natural log by default."""
    if start > end:
        raise SpanOrderingError(f"span start {start} > end {end}")
    return p_s * p_e / (math.log(end - start + 1, log_base) + 1.0)


def span_text(tokens, text: str, start: int, end: int) -> str:
    """Original-case substring covered by tokens[start..end], via char offsets."""
    return text[tokens[start].start:tokens[end].end]


def _prepare(p_start, p_end, mask):
    ps = np.asarray(p_start, dtype=np.float64)
    pe = np.asarray(p_end, dtype=np.float64)
    m = np.asarray(mask, dtype=np.float64)
    if not (ps.shape == pe.shape == m.shape) or ps.ndim != 1:
        raise ValueError(
            f"expected matching 1-D inputs, got {ps.shape}, {pe.shape}, {m.shape}")
    if not (m > 0).any():
        raise DegenerateMaskError("all positions are masked")
    return ps, pe, m > 0


def _finish(pred: SpanPrediction, tokens, text):
    if tokens is not None and text is not None:
        pred.answer_text = span_text(tokens, text, pred.start, pred.end)
    return pred


def best_span(p_start, p_end, mask, max_len: int = 20, log_base: float = math.e,
              tokens=None, text=None) -> SpanPrediction:
    """Argmax of the smart-span score over unmasked pairs with
    start <= end < start + max_len; ties go to the smaller start, then end."""
    ps, pe, keep = _prepare(p_start, p_end, mask)
    length = len(ps)
    prod = np.outer(np.where(keep, ps, 0.0), np.where(keep, pe, 0.0))
    span_len = np.arange(length)[None, :] - np.arange(length)[:, None] + 1
    valid = (span_len >= 1) & (span_len <= max_len) & np.outer(keep, keep)
    if not valid.any():
        raise DegenerateMaskError("no unmasked start/end pair available")
    penalty = np.log(np.clip(span_len, 1, None)) / math.log(log_base) + 1.0
    scores = np.where(valid, prod / penalty, -1.0)
    flat = int(scores.argmax())  # row-major argmax = earliest start, then end
    s, e = divmod(flat, length)
    return _finish(SpanPrediction(s, e, smart_span_score(ps[s], pe[e], s, e,
                                                         log_base)), tokens, text)


def oracle_best_span(p_start, p_end, mask, log_base: float = math.e,
                     tokens=None, text=None) -> SpanPrediction:
    """Exhaustive scan over every ordered pair, no length cap; same tie-break."""
    ps, pe, keep = _prepare(p_start, p_end, mask)
    best = None
    for s in range(len(ps)):
        if not keep[s]:
            continue
        for e in range(s, len(ps)):
            if not keep[e]:
                continue
            score = smart_span_score(ps[s], pe[e], s, e, log_base)
            if best is None or score > best.score:
                best = SpanPrediction(s, e, score)
    if best is None:
        raise DegenerateMaskError("no unmasked start/end pair available")
    return _finish(best, tokens, text)


def raw_product_span(p_start, p_end, mask, max_len: int = 20,
                     tokens=None, text=None) -> SpanPrediction:
    """Argmax of the plain p_start * p_end product (the un-penalized baseline)."""
    ps, pe, keep = _prepare(p_start, p_end, mask)
    length = len(ps)
    prod = np.outer(np.where(keep, ps, 0.0), np.where(keep, pe, 0.0))
    span_len = np.arange(length)[None, :] - np.arange(length)[:, None] + 1
    valid = (span_len >= 1) & (span_len <= max_len) & np.outer(keep, keep)
    if not valid.any():
        raise DegenerateMaskError("no unmasked start/end pair available")
    scores = np.where(valid, prod, -1.0)
    flat = int(scores.argmax())
    s, e = divmod(flat, length)
    return _finish(SpanPrediction(s, e, float(ps[s] * pe[e])), tokens, text)
