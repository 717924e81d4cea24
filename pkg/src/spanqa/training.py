"""Training loop pieces: Adam with global-norm gradient clipping, a single
deterministic train step, and the epoch/iteration driver used by the CLI.

All randomness is derived from counters: batch order comes from a per-epoch
seed sequence and dropout masks from (seed, iteration, call index), so a run
can be resumed from a checkpoint and retrace the identical trajectory.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field

import numpy as np

from . import model as qa_model
from .autodiff import Graph
from .data import Batch, EmbeddingTable, build_batches, prepare_for_training
from .metrics import evaluate
from .spans import best_span

__all__ = ["AdamState", "TrainLogRecord", "TrainingDivergedError",
           "init_optimizer", "clip_global_norm", "train_step", "train",
           "predict_answers", "SHUFFLE_STREAM"]

MAX_GRAD_NORM = 5.0
SHUFFLE_STREAM = 1  # spawn-key namespace separating batch order from dropout


class TrainingDivergedError(RuntimeError):
    """The loss went non-finite; the message names the first bad tensor."""


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class TrainLogRecord:
    iteration: int
    train_loss: float
    seconds: float
    dev_f1: float | None = None
    dev_em: float | None = None

    def to_json(self) -> str:
        payload = {"iteration": self.iteration, "train_loss": self.train_loss,
                   "seconds": self.seconds}
        if self.dev_f1 is not None:
            payload["dev_f1"] = self.dev_f1
            payload["dev_em"] = self.dev_em
        return json.dumps(payload, sort_keys=True)


def init_optimizer(params: dict[str, np.ndarray]) -> AdamState:
    return AdamState(m={k: np.zeros_like(v) for k, v in params.items()},
                     v={k: np.zeros_like(v) for k, v in params.items()})


def clip_global_norm(grads: dict[str, np.ndarray],
                     max_norm: float = MAX_GRAD_NORM) -> float:
    """Scale all gradients in place so the global L2 norm is <= max_norm."""
    total = float(np.sqrt(sum(float((g * g).sum()) for g in grads.values())))
    if total > max_norm:
        scale = max_norm / total
        for g in grads.values():
            g *= scale
    return total


def train_step(params: dict[str, np.ndarray], batch: Batch,
               table: EmbeddingTable, state: AdamState,
               config: qa_model.ModelConfig, lr: float = 1e-3) -> float:
    """Forward, backward, clip, Adam update. Mutates params and state."""
    graph = Graph()
    leaves = {name: graph.leaf(value, requires_grad=True)
              for name, value in params.items()}
    out = qa_model.forward(batch, leaves, table, config, training=True,
                           step=state.step)
    loss = qa_model.loss(out, batch.gold_starts, batch.gold_ends,
                         batch.context_mask)
    loss_value = loss.item()
    if not np.isfinite(loss_value):
        culprit = graph.first_nonfinite()
        where = f"op '{culprit[1]}' (node {culprit[0]})" if culprit else "loss"
        raise TrainingDivergedError(
            f"non-finite loss at optimizer step {state.step}; first bad tensor: {where}")
    grad_map = graph.backward(loss)
    grads = {name: grad_map[leaf.node_id] for name, leaf in leaves.items()}
    clip_global_norm(grads)
    state.step += 1
    t = state.step
    for name in params:
        g = grads[name]
        state.m[name] = state.beta1 * state.m[name] + (1 - state.beta1) * g
        state.v[name] = state.beta2 * state.v[name] + (1 - state.beta2) * (g * g)
        m_hat = state.m[name] / (1 - state.beta1 ** t)
        v_hat = state.v[name] / (1 - state.beta2 ** t)
        params[name] -= lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return loss_value


def epoch_order(seed: int, epoch: int, count: int) -> np.ndarray:
    """Deterministic example permutation for one epoch."""
    rng = np.random.default_rng(
        np.random.SeedSequence(seed, spawn_key=(SHUFFLE_STREAM, epoch)))
    return rng.permutation(count)


def _epoch_batches(examples, table, config, batch_size, epoch):
    order = epoch_order(config.seed, epoch, len(examples))
    shuffled = [examples[i] for i in order]
    return build_batches(shuffled, table, batch_size,
                         context_cap=config.context_cap, training=True)


def predict_answers(examples, params, table, config: qa_model.ModelConfig,
                    batch_size: int = 40, max_answer_len: int = 20) -> dict[str, str]:
    """Decode best spans for every example; returns {qid: answer text}."""
    by_qid = {ex.qid: ex for ex in examples}
    predictions: dict[str, str] = {}
    batches = build_batches(examples, table, batch_size,
                            context_cap=config.context_cap, training=False)
    for batch in batches:
        out = qa_model.forward(batch, params, table, config, training=False)
        p_start, p_end = out.p_start.data, out.p_end.data
        for row, qid in enumerate(batch.qids):
            ex = by_qid[qid]
            tokens = ex.context_tokens[:config.context_cap]
            pred = best_span(p_start[row], p_end[row], batch.context_mask[row],
                             max_len=max_answer_len, tokens=tokens,
                             text=ex.context_text)
            predictions[qid] = pred.answer_text
    return predictions


@dataclass
class TrainResult:
    params: dict[str, np.ndarray]
    state: AdamState
    records: list[TrainLogRecord] = field(default_factory=list)
    dropped_examples: int = 0
    best_dev_f1: float | None = None


def train(train_examples, table: EmbeddingTable, config: qa_model.ModelConfig,
          *, iters: int, batch_size: int = 40, lr: float = 1e-3,
          dev_examples=None, eval_every: int = 500, max_answer_len: int = 20,
          params: dict[str, np.ndarray] | None = None,
          state: AdamState | None = None, log_handle=None,
          on_improve=None) -> TrainResult:
    """Run `iters` optimizer steps over shuffled batches.

    Resumable: passing params/state from a checkpoint continues the exact
    trajectory because batch order and dropout depend only on (seed, step).
    `on_improve(result)` fires when dev F1 improves; dev decoding happens
    every `eval_every` iterations when dev_examples is given.
    """
    usable, dropped = prepare_for_training(train_examples, config.context_cap)
    if not usable:
        raise ValueError("no trainable examples after truncation filtering")
    if params is None:
        params = qa_model.init_params(config)
    if state is None:
        state = init_optimizer(params)
    result = TrainResult(params=params, state=state, dropped_examples=dropped)

    batches: list[Batch] = []
    per_epoch = max(1, (len(usable) + batch_size - 1) // batch_size)
    while state.step < iters:
        epoch, offset = divmod(state.step, per_epoch)
        if not batches or offset == 0:
            batches = _epoch_batches(usable, table, config, batch_size, epoch)
        tick = time.perf_counter()
        loss_value = train_step(params, batches[offset], table, state, config, lr)
        record = TrainLogRecord(iteration=state.step, train_loss=loss_value,
                                seconds=time.perf_counter() - tick)
        if dev_examples is not None and state.step % eval_every == 0:
            predictions = predict_answers(dev_examples, params, table, config,
                                          batch_size, max_answer_len)
            report = evaluate(predictions, dev_examples)
            record.dev_f1, record.dev_em = report.f1, report.em
            if result.best_dev_f1 is None or report.f1 > result.best_dev_f1:
                result.best_dev_f1 = report.f1
                if on_improve is not None:
                    on_improve(result)
        result.records.append(record)
        if log_handle is not None:
            log_handle.write(record.to_json() + "\n")
            log_handle.flush()
    return result
