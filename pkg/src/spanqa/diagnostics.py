"""Gradient-check harness: per-op probes and an end-to-end check of the full
loss on a tiny model. Backs the `qa gradcheck` command and the test suite."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from . import model as qa_model
from .data import Batch, EmbeddingTable

__all__ = ["OP_THRESHOLD", "END_TO_END_THRESHOLD", "op_gradcheck_cases",
           "make_tiny_problem", "end_to_end_gradcheck", "run_gradcheck_suite"]

OP_THRESHOLD = 1e-4
END_TO_END_THRESHOLD = 1e-3


def op_gradcheck_cases(seed: int = 0):
    """(name, scalar function, probe input) for every differentiable op."""
    rng = np.random.default_rng(seed)
    right = rng.normal(size=(4, 5))
    batched = rng.normal(size=(2, 3, 4))
    mask = np.ones((3, 6))
    mask[0, 4:] = 0.0
    mask[2, 2:] = 0.0
    gold = np.array([1, 0, 1])
    weights = np.arange(18.0).reshape(3, 6)
    bias_weights = rng.normal(size=(3, 5))

    def total(x):
        return ad.reduce_sum(x)

    return [
        ("matmul", lambda t: total(ad.matmul(t, right)), rng.normal(size=(3, 4))),
        ("bmm", lambda t: total(ad.bmm(t, batched)), rng.normal(size=(2, 4, 3))),
        ("add", lambda t: total(ad.add(t, right)), rng.normal(size=(4, 5))),
        ("sub", lambda t: total(ad.sub(right, t)), rng.normal(size=(4, 5))),
        ("mul", lambda t: total(ad.mul(t, right)), rng.normal(size=(4, 5))),
        ("tanh", lambda t: total(ad.tanh(t)), rng.normal(size=(4, 4))),
        ("sigmoid", lambda t: total(ad.sigmoid(t)), rng.normal(size=(4, 4))),
        ("relu", lambda t: total(ad.relu(t)), rng.normal(size=(4, 4))),
        ("concat", lambda t: total(ad.concat([t, ad.Tensor(right)], axis=0)),
         rng.normal(size=(2, 5))),
        ("slice", lambda t: total(ad.slice_axis(t, 1, 1, 3)), rng.normal(size=(3, 5))),
        ("reshape", lambda t: total(ad.mul(ad.reshape(t, (6, 2)), np.arange(12.0).reshape(6, 2))),
         rng.normal(size=(3, 4))),
        ("transpose", lambda t: total(ad.mul(ad.transpose(t), np.arange(12.0).reshape(4, 3))),
         rng.normal(size=(3, 4))),
        ("sum", lambda t: ad.reduce_sum(t), rng.normal(size=(3, 3))),
        ("max", lambda t: total(ad.reduce_max(t, axis=1)), rng.normal(size=(4, 6))),
        ("add_bias", lambda t: total(ad.mul(ad.add_bias(t, np.arange(5.0)), bias_weights)),
         rng.normal(size=(3, 5))),
        ("mul_bias", lambda t: total(ad.mul_bias(t, np.arange(1.0, 6.0))),
         rng.normal(size=(3, 2, 5))),
        ("swap_last2", lambda t: total(ad.mul(ad.swap_last2(t), np.arange(24.0).reshape(2, 4, 3))),
         rng.normal(size=(2, 3, 4))),
        ("expand_batch", lambda t: total(ad.mul(ad.expand_batch(t, 3), np.arange(24.0).reshape(3, 2, 4))),
         rng.normal(size=(2, 4))),
        ("repeat_axis", lambda t: total(ad.mul(ad.repeat_axis(t, 1, 4), np.arange(24.0).reshape(2, 4, 3))),
         rng.normal(size=(2, 1, 3))),
        ("masked_softmax", lambda t: total(ad.mul(ad.masked_softmax(t, mask), weights)),
         rng.normal(size=(3, 6))),
        ("cross_entropy", lambda t: ad.cross_entropy(t, gold, mask),
         rng.random((3, 6)) * 0.8 + 0.1),
        ("dropout", lambda t: total(ad.dropout(t, 0.4, training=True, seed=99)),
         rng.normal(size=(5, 5))),
    ]


def make_tiny_problem(seed: int = 0, hidden: int = 4, embed_dim: int = 6,
                      context_len: int = 7, question_len: int = 5,
                      batch_size: int = 2, dropout: float = 0.0):
    """A deterministic miniature model, embedding table, and batch."""
    config = qa_model.ModelConfig(hidden_size=hidden, dropout_rate=dropout,
                                  embedding_dim=embed_dim, context_cap=context_len,
                                  seed=seed)
    rng = np.random.default_rng(seed + 1)
    vocab = 20
    matrix = rng.normal(size=(vocab, embed_dim)) * 0.5
    matrix[0] = 0.0
    table = EmbeddingTable(
        dim=embed_dim,
        word_to_id={f"w{i}": i + 2 for i in range(vocab - 2)},
        matrix=matrix,
    )
    context_mask = np.ones((batch_size, context_len))
    question_mask = np.ones((batch_size, question_len))
    for row in range(1, batch_size):
        context_mask[row, context_len - row:] = 0.0
        question_mask[row, question_len - row:] = 0.0
    context_ids = rng.integers(2, vocab, size=(batch_size, context_len))
    question_ids = rng.integers(2, vocab, size=(batch_size, question_len))
    context_ids[context_mask == 0] = 0
    question_ids[question_mask == 0] = 0
    lengths = context_mask.sum(axis=1).astype(np.int64)
    gold_starts = rng.integers(0, lengths // 2 + 1)
    gold_ends = gold_starts + rng.integers(0, 2, size=batch_size)
    gold_ends = np.minimum(gold_ends, lengths - 1)
    batch = Batch(context_ids.astype(np.int64), context_mask,
                  question_ids.astype(np.int64), question_mask,
                  gold_starts.astype(np.int64), gold_ends.astype(np.int64),
                  [f"tiny{i}" for i in range(batch_size)])
    params = qa_model.init_params(config)
    return config, params, table, batch


def end_to_end_gradcheck(seed: int = 0, coords_per_tensor: int | None = 4,
                         eps: float = 1e-5):
    """Worst relative gradcheck error of the full loss over each parameter.

    `coords_per_tensor` limits the finite-difference probes per tensor
    (None checks every coordinate). Dropout stays off: the probe must be
    deterministic.
    """
    config, params, table, batch = make_tiny_problem(seed=seed)
    results = []
    for name in params:
        def run(t, _name=name):
            mixed = dict(params)
            mixed[_name] = t
            out = qa_model.forward(batch, mixed, table, config, training=False)
            return qa_model.loss(out, batch.gold_starts, batch.gold_ends,
                                 batch.context_mask)

        err = ad.grad_check(run, params[name], eps=eps, coords=coords_per_tensor,
                            seed=seed)
        results.append((name, err))
    return results


def run_gradcheck_suite(seed: int = 0, extra_cases=None,
                        coords_per_tensor: int | None = 4):
    """All per-op checks plus the end-to-end check.

    Returns (rows, all_ok) where each row is (name, worst_error, threshold).
    """
    rows = []
    cases = op_gradcheck_cases(seed)
    if extra_cases:
        cases = cases + list(extra_cases)
    for name, func, probe in cases:
        rows.append((name, ad.grad_check(func, probe, eps=1e-5), OP_THRESHOLD))
    worst = max(err for _, err in
                end_to_end_gradcheck(seed, coords_per_tensor=coords_per_tensor))
    rows.append(("end_to_end", worst, END_TO_END_THRESHOLD))
    all_ok = all(err < threshold for _, err, threshold in rows)
    return rows, all_ok
