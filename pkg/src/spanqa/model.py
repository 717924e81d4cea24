"""The 6-layer span-prediction network: frozen embeddings, a shared 2-layer
BiLSTM encoder over context and question, bidirectional attention, a start
decoder, an end decoder that consumes the start decoder's hidden states (so
the end distribution is conditioned on start evidence), and per-position FC
heads feeding masked softmaxes.

Parameters live in a plain name -> ndarray dict. ``forward`` accepts either
ndarrays (inference; no tape is recorded) or graph-leaf Tensors (training),
which is how the training loop gets named gradients back.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict

import numpy as np

from . import autodiff as ad
from .autodiff import ConfigError, Tensor
from .data import Batch, EmbeddingTable

__all__ = ["ModelConfig", "ForwardOutput", "init_params", "param_count",
           "param_shapes", "embed", "bilstm", "bidaf_attention",
           "start_decoder", "end_decoder", "forward", "loss"]


@dataclass
class ModelConfig:
    hidden_size: int = 150
    dropout_rate: float = 0.2
    embedding_dim: int = 100
    encoder_layers: int = 2
    context_cap: int = 300
    seed: int = 0

    def __post_init__(self):
        if self.hidden_size < 1:
            raise ConfigError(f"hidden_size must be >= 1, got {self.hidden_size}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")
        if self.embedding_dim < 1:
            raise ConfigError(f"embedding_dim must be >= 1, got {self.embedding_dim}")
        if self.encoder_layers < 1:
            raise ConfigError(f"encoder_layers must be >= 1, got {self.encoder_layers}")
        if self.seed < 0:
            raise ConfigError(f"seed must be non-negative, got {self.seed}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, payload: dict) -> "ModelConfig":
        return cls(**payload)


@dataclass
class ForwardOutput:
    p_start: Tensor    # (B, Lc) masked distribution per row
    p_end: Tensor
    attention: Tensor  # (B, Lc, 8h), kept for decoding diagnostics


def param_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Insertion-ordered name -> shape map for every trainable tensor."""
    h, d = config.hidden_size, config.embedding_dim
    shapes: dict[str, tuple[int, ...]] = {}

    def lstm(prefix, in_dim):
        for direction in ("fwd", "bwd"):
            shapes[f"{prefix}.{direction}.W"] = (4 * h, in_dim + h)
            shapes[f"{prefix}.{direction}.b"] = (4 * h,)

    in_dim = d
    for layer in range(config.encoder_layers):
        lstm(f"encoder.l{layer}", in_dim)
        in_dim = 2 * h
    shapes["attention.w_sim"] = (6 * h,)
    lstm("start_decoder", 8 * h)
    lstm("end_decoder", 10 * h)
    for head in ("start_head", "end_head"):
        shapes[f"{head}.W1"] = (h, 10 * h)
        shapes[f"{head}.b1"] = (h,)
        shapes[f"{head}.W2"] = (1, h)
        shapes[f"{head}.b2"] = (1,)
    return shapes


def _xavier_limit(shape) -> float:
    if len(shape) == 1:
        fan_in, fan_out = shape[0], 1
    else:
        fan_out, fan_in = shape
    return math.sqrt(6.0 / (fan_in + fan_out))


def init_params(config: ModelConfig) -> dict[str, np.ndarray]:
    """Xavier-uniform matrices, zero biases except LSTM forget gates at 1.0."""
    rng = np.random.default_rng(config.seed)
    h = config.hidden_size
    params: dict[str, np.ndarray] = {}
    for name, shape in param_shapes(config).items():
        if name.endswith(".b") or name.endswith(".b1") or name.endswith(".b2"):
            value = np.zeros(shape)
            if name.endswith(".b"):
                value[h:2 * h] = 1.0  # forget gate, gate order i|f|o|g
        else:
            limit = _xavier_limit(shape)
            value = rng.uniform(-limit, limit, size=shape)
        params[name] = value
    return params


def param_count(params: dict[str, np.ndarray]) -> int:
    """Total trainable elements (the frozen embedding table is not in params)."""
    return sum(int(np.prod(v.shape)) for v in params.values())


def embed(ids: np.ndarray, table: EmbeddingTable) -> Tensor:
    """Frozen lookup: (B, L) int ids -> detached (B, L, d) tensor.

    The result never joins a gradient path, so no gradient can reach the
    table.
    """
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= table.vocab_size):
        raise IndexError(
            f"embedding id out of range [0, {table.vocab_size}) in lookup")
    return Tensor(table.matrix[ids])


class _SeedStream:
    """Deterministic per-call dropout seeds derived from (seed, step, index)."""

    def __init__(self, seed: int, step: int):
        self._seed = seed
        self._step = step
        self._index = 0

    def __call__(self) -> int:
        ss = np.random.SeedSequence(self._seed, spawn_key=(self._step, self._index))
        self._index += 1
        return int(ss.generate_state(1, dtype=np.uint64)[0])


def _as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _time_steps(x: Tensor, length: int) -> list[Tensor]:
    """Split (B, L, n) into L detached-or-graph (B, n) tensors."""
    batch, _, width = x.shape
    if x.graph is None:
        return [Tensor(x.data[:, t, :]) for t in range(length)]
    return [ad.reshape(ad.slice_axis(x, 1, t, t + 1), (batch, width))
            for t in range(length)]


def _lstm_direction(steps, weight, bias, mask, hidden_size, reverse: bool):
    """One LSTM pass; masked steps keep state and emit zeros.

    steps: list of (B, in) tensors. weight (4h, in+h), bias (4h,); gates are
    sliced in i|f|o|g order from [x_t ; h_prev] @ W^T + b.
    """
    h = hidden_size
    batch, length = mask.shape
    w_t = ad.transpose(weight)
    full_rows = mask.all(axis=0)
    h_prev = np.zeros((batch, h))
    c_prev = np.zeros((batch, h))
    outputs: list[Tensor | None] = [None] * length
    order = range(length - 1, -1, -1) if reverse else range(length)
    for t in order:
        z = ad.add_bias(ad.matmul(ad.concat([steps[t], h_prev], axis=1), w_t), bias)
        i_gate = ad.sigmoid(ad.slice_axis(z, 1, 0, h))
        f_gate = ad.sigmoid(ad.slice_axis(z, 1, h, 2 * h))
        o_gate = ad.sigmoid(ad.slice_axis(z, 1, 2 * h, 3 * h))
        g_gate = ad.tanh(ad.slice_axis(z, 1, 3 * h, 4 * h))
        c_new = ad.add(ad.mul(f_gate, c_prev), ad.mul(i_gate, g_gate))
        h_new = ad.mul(o_gate, ad.tanh(c_new))
        if full_rows[t]:
            outputs[t] = h_new
            h_prev, c_prev = h_new, c_new
        else:
            live = np.repeat(mask[:, t:t + 1], h, axis=1)
            dead = 1.0 - live
            h_live = ad.mul(h_new, live)
            outputs[t] = h_live
            h_prev = ad.add(h_live, ad.mul(h_prev, dead))
            c_prev = ad.add(ad.mul(c_new, live), ad.mul(c_prev, dead))
    return outputs


def bilstm(inputs: Tensor, layer_params, mask: np.ndarray, *, hidden_size: int,
           dropout_rate: float = 0.0, training: bool = False,
           seeds: _SeedStream | None = None) -> Tensor:
    """Stacked bidirectional LSTM: (B, L, in) -> (B, L, 2h).

    layer_params is a list (one entry per layer) of dicts mapping "fwd"/"bwd"
    to (W, b). Layer k+1 consumes layer k's output; dropout is applied to
    each layer's input steps while training.
    """
    mask = np.asarray(mask, dtype=np.float64)
    batch, length, _ = inputs.shape
    if mask.shape != (batch, length):
        raise ad.DimensionError(
            f"bilstm: mask shape {mask.shape} does not match input {inputs.shape}")
    steps = _time_steps(inputs, length)
    for layer in layer_params:
        if dropout_rate > 0.0 and training:
            steps = [ad.dropout(x, dropout_rate, training, seeds()) for x in steps]
        fwd = _lstm_direction(steps, _as_tensor(layer["fwd"][0]),
                              _as_tensor(layer["fwd"][1]), mask, hidden_size, False)
        bwd = _lstm_direction(steps, _as_tensor(layer["bwd"][0]),
                              _as_tensor(layer["bwd"][1]), mask, hidden_size, True)
        steps = [ad.concat([f, b], axis=1) for f, b in zip(fwd, bwd)]
    stacked = [ad.reshape(s, (batch, 1, 2 * hidden_size)) for s in steps]
    return ad.concat(stacked, axis=1)


def bidaf_attention(context: Tensor, question: Tensor, w_sim,
                    context_mask: np.ndarray, question_mask: np.ndarray) -> Tensor:
    """Bidirectional attention: (B,Lc,2h) x (B,Lq,2h) -> (B,Lc,8h).

    Similarity S[i,j] = w_sim . [c_i ; q_j ; c_i*q_j], decomposed into three
    terms so no (Lc*Lq x 6h) tensor is ever built. Context-to-question rows
    attend over unmasked question positions; question-to-context takes the
    per-row max similarity, attends over unmasked context positions, and
    broadcasts the summary to every position. Output rows are
    [c ; u~ ; c*u~ ; c*h~].
    """
    w_sim = _as_tensor(w_sim)
    batch, lc, two_h = context.shape
    lq = question.shape[1]
    if w_sim.shape != (3 * two_h,):
        raise ad.DimensionError(
            f"bidaf: w_sim shape {w_sim.shape} does not match 3*{two_h}")
    w_c = ad.reshape(ad.slice_axis(w_sim, 0, 0, two_h), (two_h, 1))
    w_q = ad.reshape(ad.slice_axis(w_sim, 0, two_h, 2 * two_h), (two_h, 1))
    w_m = ad.slice_axis(w_sim, 0, 2 * two_h, 3 * two_h)

    s_context = ad.bmm(context, ad.expand_batch(w_c, batch))        # (B,Lc,1)
    s_question = ad.reshape(ad.bmm(question, ad.expand_batch(w_q, batch)),
                            (batch, 1, lq))
    s_cross = ad.bmm(ad.mul_bias(context, w_m), ad.swap_last2(question))
    sim = ad.add(ad.add(ad.repeat_axis(s_context, 2, lq),
                        ad.repeat_axis(s_question, 1, lc)), s_cross)  # (B,Lc,Lq)

    q_mask3 = np.broadcast_to(np.asarray(question_mask)[:, None, :],
                              (batch, lc, lq)).copy()
    c2q = ad.masked_softmax(sim, q_mask3)
    u_tilde = ad.bmm(c2q, question)                                  # (B,Lc,2h)

    blocked = ad.add(sim, (q_mask3 - 1.0) * 1e30)
    row_best = ad.reduce_max(blocked, axis=2)                        # (B,Lc)
    q2c = ad.masked_softmax(row_best, context_mask)
    h_tilde = ad.repeat_axis(ad.bmm(ad.reshape(q2c, (batch, 1, lc)), context),
                             1, lc)                                  # (B,Lc,2h)

    return ad.concat([context, u_tilde, ad.mul(context, u_tilde),
                      ad.mul(context, h_tilde)], axis=2)


def _head_logits(attention_out, decoder_out, head, *, dropout_rate, training,
                 seeds):
    """Per-position logit: FC2(relu(FC1([G_i ; M_i]))), dropout on FC1 input."""
    batch, length, _ = attention_out.shape
    features = ad.concat([attention_out, decoder_out], axis=2)   # (B,L,10h)
    if dropout_rate > 0.0 and training:
        features = ad.dropout(features, dropout_rate, training, seeds())
    w1, b1, w2, b2 = (_as_tensor(head[k]) for k in ("W1", "b1", "W2", "b2"))
    hidden = ad.relu(ad.add_bias(
        ad.bmm(features, ad.expand_batch(ad.transpose(w1), batch)), b1))
    logits = ad.add_bias(
        ad.bmm(hidden, ad.expand_batch(ad.transpose(w2), batch)), b2)
    return ad.reshape(logits, (batch, length))


def start_decoder(attention_out: Tensor, decoder_params, head_params,
                  mask: np.ndarray, *, hidden_size: int, dropout_rate: float = 0.0,
                  training: bool = False, seeds=None):
    """1-layer BiLSTM over G plus the start head -> (M_start, start_logits)."""
    m_start = bilstm(attention_out, [decoder_params], mask,
                     hidden_size=hidden_size, dropout_rate=dropout_rate,
                     training=training, seeds=seeds)
    logits = _head_logits(attention_out, m_start, head_params,
                          dropout_rate=dropout_rate, training=training, seeds=seeds)
    return m_start, logits


def end_decoder(attention_out: Tensor, m_start: Tensor, decoder_params,
                head_params, mask: np.ndarray, *, hidden_size: int,
                dropout_rate: float = 0.0, training: bool = False, seeds=None):
    """Conditioning decoder: BiLSTM over [G ; M_start] plus the end head."""
    conditioned = ad.concat([attention_out, m_start], axis=2)    # (B,Lc,10h)
    m_end = bilstm(conditioned, [decoder_params], mask, hidden_size=hidden_size,
                   dropout_rate=dropout_rate, training=training, seeds=seeds)
    logits = _head_logits(attention_out, m_end, head_params,
                          dropout_rate=dropout_rate, training=training, seeds=seeds)
    return m_end, logits


def _layer_group(params, prefix):
    return {"fwd": (params[f"{prefix}.fwd.W"], params[f"{prefix}.fwd.b"]),
            "bwd": (params[f"{prefix}.bwd.W"], params[f"{prefix}.bwd.b"])}


def _head_group(params, prefix):
    return {k: params[f"{prefix}.{k}"] for k in ("W1", "b1", "W2", "b2")}


def forward(batch: Batch, params, table: EmbeddingTable, config: ModelConfig,
            training: bool = False, step: int = 0) -> ForwardOutput:
    """Embed -> encode -> attend -> decode start -> decode end -> softmax.

    params values may be ndarrays (detached run) or Tensors on one graph
    (differentiable run). `step` varies the dropout masks between training
    iterations while keeping them reproducible.
    """
    pt = {name: _as_tensor(value) for name, value in params.items()}
    seeds = _SeedStream(config.seed, step)
    h = config.hidden_size
    rate = config.dropout_rate if training else 0.0

    encoder = [_layer_group(pt, f"encoder.l{k}") for k in range(config.encoder_layers)]
    context = bilstm(embed(batch.context_ids, table), encoder, batch.context_mask,
                     hidden_size=h, dropout_rate=rate, training=training, seeds=seeds)
    question = bilstm(embed(batch.question_ids, table), encoder, batch.question_mask,
                      hidden_size=h, dropout_rate=rate, training=training, seeds=seeds)

    attention_out = bidaf_attention(context, question, pt["attention.w_sim"],
                                    batch.context_mask, batch.question_mask)

    m_start, start_logits = start_decoder(
        attention_out, _layer_group(pt, "start_decoder"), _head_group(pt, "start_head"),
        batch.context_mask, hidden_size=h, dropout_rate=rate, training=training,
        seeds=seeds)
    _, end_logits = end_decoder(
        attention_out, m_start, _layer_group(pt, "end_decoder"),
        _head_group(pt, "end_head"), batch.context_mask, hidden_size=h,
        dropout_rate=rate, training=training, seeds=seeds)

    return ForwardOutput(
        p_start=ad.masked_softmax(start_logits, batch.context_mask),
        p_end=ad.masked_softmax(end_logits, batch.context_mask),
        attention=attention_out,
    )


def loss(out: ForwardOutput, gold_starts, gold_ends, mask) -> Tensor:
    """Batch-mean start cross-entropy plus batch-mean end cross-entropy."""
    return ad.add(ad.cross_entropy(out.p_start, gold_starts, mask),
                  ad.cross_entropy(out.p_end, gold_ends, mask))
