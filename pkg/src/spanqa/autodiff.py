"""Dense float64 tensors with reverse-mode automatic differentiation.

A ``Graph`` is an append-only tape: every op pushes one node holding its
parents and a backward closure, so reverse iteration over node ids is already
a topological order. Tensors detached from any graph are plain immutable
values; ops on them compute forward results only, which keeps inference and
finite-difference probes cheap.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Graph",
    "Tensor",
    "DimensionError",
    "DegenerateMaskError",
    "LabelError",
    "ConfigError",
    "set_debug",
    "matmul",
    "bmm",
    "add",
    "sub",
    "mul",
    "tanh",
    "sigmoid",
    "relu",
    "elementwise",
    "concat",
    "slice_axis",
    "reshape",
    "transpose",
    "reduce_sum",
    "reduce_max",
    "add_bias",
    "mul_bias",
    "swap_last2",
    "expand_batch",
    "repeat_axis",
    "masked_softmax",
    "cross_entropy",
    "dropout",
    "grad_check",
]

LOG_CLAMP = 1e-30


class DimensionError(ValueError):
    """Operand shapes are incompatible for the requested op."""


class DegenerateMaskError(ValueError):
    """A mask row leaves no position unmasked."""


class LabelError(ValueError):
    """A gold label index is masked or out of range."""


class ConfigError(ValueError):
    """An op was configured with an invalid hyperparameter."""


_debug = False


def set_debug(flag: bool) -> None:
    """Enable per-op finite-value assertions (slow; for tests)."""
    global _debug
    _debug = bool(flag)


class _Node:
    __slots__ = ("op", "parents", "out", "backward", "requires_grad")

    def __init__(self, op, parents, out, backward, requires_grad):
        self.op = op
        self.parents = parents
        self.out = out
        self.backward = backward
        self.requires_grad = requires_grad


class Graph:
    """Append-only computation tape. One instance per forward/backward pass."""

    def __init__(self):
        self._nodes: list[_Node] = []

    def __len__(self) -> int:
        return len(self._nodes)

    def leaf(self, data, requires_grad: bool = False) -> "Tensor":
        """Register an input tensor as a graph leaf and return its handle."""
        arr = _as_array(data)
        node_id = self._push("leaf", (), arr, None, requires_grad)
        return Tensor(arr, graph=self, node_id=node_id, requires_grad=requires_grad)

    def _push(self, op, parents, out, backward, requires_grad) -> int:
        if _debug and not np.all(np.isfinite(out)):
            raise FloatingPointError(f"non-finite values in output of op '{op}'")
        self._nodes.append(_Node(op, parents, out, backward, requires_grad))
        return len(self._nodes) - 1

    def first_nonfinite(self):
        """(node_id, op) of the first node with a NaN/Inf output, or None."""
        for i, node in enumerate(self._nodes):
            if not np.all(np.isfinite(node.out)):
                return i, node.op
        return None

    def backward(self, root: "Tensor") -> dict[int, np.ndarray]:
        """Reverse-accumulate gradients of a scalar root.

        Returns {node_id: gradient}; every requires_grad leaf appears in the
        map, with zeros if no path connects it to the root.
        """
        if root.graph is not self:
            raise ValueError("root tensor does not belong to this graph")
        if root.data.shape != ():
            raise DimensionError(
                f"backward root must be scalar, got shape {root.data.shape}"
            )
        grads: dict[int, np.ndarray] = {root.node_id: np.array(1.0)}
        for nid in range(root.node_id, -1, -1):
            g = grads.get(nid)
            if g is None:
                continue
            node = self._nodes[nid]
            if node.backward is None:
                continue
            for pid, pg in zip(node.parents, node.backward(g)):
                if pg is None or not self._nodes[pid].requires_grad:
                    continue
                if pid in grads:
                    grads[pid] = grads[pid] + pg
                else:
                    grads[pid] = pg
        for nid, node in enumerate(self._nodes):
            if node.op == "leaf" and node.requires_grad and nid not in grads:
                grads[nid] = np.zeros_like(node.out)
        return grads


class Tensor:
    """A float64 ndarray, optionally bound to a node of a Graph."""

    __slots__ = ("data", "graph", "node_id", "requires_grad")

    def __init__(self, data, graph: Graph | None = None, node_id: int | None = None,
                 requires_grad: bool = False):
        self.data = _as_array(data)
        self.graph = graph
        self.node_id = node_id
        self.requires_grad = requires_grad

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        tag = "" if self.graph is None else f", node_id={self.node_id}"
        return f"Tensor(shape={self.shape}{tag})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)


def _as_array(data) -> np.ndarray:
    arr = np.asarray(data, dtype=np.float64)
    return arr


def _lift(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=np.float64))


def _common_graph(tensors) -> Graph | None:
    graph = None
    for t in tensors:
        if t.graph is None:
            continue
        if graph is None:
            graph = t.graph
        elif graph is not t.graph:
            raise ValueError("operands belong to different graphs")
    return graph


def _apply(op, inputs, out, backward):
    """Record one op on the inputs' shared graph; detached inputs stay detached."""
    graph = _common_graph(inputs)
    if graph is None:
        if _debug and not np.all(np.isfinite(out)):
            raise FloatingPointError(f"non-finite values in output of op '{op}'")
        return Tensor(out)
    parent_ids = []
    requires_grad = False
    for t in inputs:
        if t.graph is None:
            t.graph = graph
            t.node_id = graph._push("leaf", (), t.data, None, t.requires_grad)
        parent_ids.append(t.node_id)
        requires_grad = requires_grad or graph._nodes[t.node_id].requires_grad
    node_id = graph._push(op, tuple(parent_ids), out,
                          backward if requires_grad else None, requires_grad)
    return Tensor(out, graph=graph, node_id=node_id, requires_grad=requires_grad)


# ---------------------------------------------------------------------------
# ops
# ---------------------------------------------------------------------------


def matmul(a, b) -> Tensor:
    """Matrix product of 2-D tensors: (m,k) @ (k,n) -> (m,n)."""
    a, b = _lift(a), _lift(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    out = a.data @ b.data
    ad, bd = a.data, b.data

    def backward(g):
        return g @ bd.T, ad.T @ g

    return _apply("matmul", (a, b), out, backward)


def bmm(a, b) -> Tensor:
    """Batched matrix product: (B,m,k) @ (B,k,n) -> (B,m,n)."""
    a, b = _lift(a), _lift(b)
    if (a.ndim != 3 or b.ndim != 3 or a.shape[0] != b.shape[0]
            or a.shape[2] != b.shape[1]):
        raise DimensionError(f"bmm: incompatible shapes {a.shape} and {b.shape}")
    out = a.data @ b.data
    ad, bd = a.data, b.data

    def backward(g):
        return g @ bd.transpose(0, 2, 1), ad.transpose(0, 2, 1) @ g

    return _apply("bmm", (a, b), out, backward)


def _binary_shapes(op, a, b):
    """Same-shape or scalar-broadcast; anything else is a dimension error."""
    if a.shape == b.shape or a.shape == () or b.shape == ():
        return
    raise DimensionError(f"{op}: incompatible shapes {a.shape} and {b.shape}")


def _reduce_to(g, shape):
    if shape == () and g.shape != ():
        return np.array(g.sum())
    return g


def add(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    _binary_shapes("add", a, b)
    out = a.data + b.data

    def backward(g):
        return _reduce_to(g, a.shape), _reduce_to(g, b.shape)

    return _apply("add", (a, b), out, backward)


def sub(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    _binary_shapes("sub", a, b)
    out = a.data - b.data

    def backward(g):
        return _reduce_to(g, a.shape), _reduce_to(-g, b.shape)

    return _apply("sub", (a, b), out, backward)


def mul(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    _binary_shapes("mul", a, b)
    out = a.data * b.data
    ad, bd = a.data, b.data

    def backward(g):
        return _reduce_to(g * bd, a.shape), _reduce_to(g * ad, b.shape)

    return _apply("mul", (a, b), out, backward)


def tanh(x) -> Tensor:
    x = _lift(x)
    out = np.tanh(x.data)

    def backward(g):
        return (g * (1.0 - out * out),)

    return _apply("tanh", (x,), out, backward)


def sigmoid(x) -> Tensor:
    x = _lift(x)
    xd = x.data
    out = np.where(xd >= 0, 1.0 / (1.0 + np.exp(-np.abs(xd))),
                   np.exp(-np.abs(xd)) / (1.0 + np.exp(-np.abs(xd))))

    def backward(g):
        return (g * out * (1.0 - out),)

    return _apply("sigmoid", (x,), out, backward)


def relu(x) -> Tensor:
    """max(x, 0); the subgradient at exactly 0 is 0."""
    x = _lift(x)
    out = np.maximum(x.data, 0.0)
    xd = x.data

    def backward(g):
        return (g * (xd > 0),)

    return _apply("relu", (x,), out, backward)


_ELEMENTWISE = {"add": add, "mul": mul, "sub": sub}
_UNARY = {"tanh": tanh, "sigmoid": sigmoid, "relu": relu}


def elementwise(op_tag: str, *args) -> Tensor:
    """Dispatch a pointwise op by tag: add/mul/sub (binary), tanh/sigmoid/relu (unary)."""
    if op_tag in _ELEMENTWISE:
        if len(args) != 2:
            raise TypeError(f"{op_tag} takes 2 arguments, got {len(args)}")
        return _ELEMENTWISE[op_tag](*args)
    if op_tag in _UNARY:
        if len(args) != 1:
            raise TypeError(f"{op_tag} takes 1 argument, got {len(args)}")
        return _UNARY[op_tag](*args)
    raise ValueError(f"unknown elementwise op tag: {op_tag!r}")


def concat(tensors, axis: int) -> Tensor:
    """Concatenate along an axis; backward slices the gradient back apart."""
    tensors = [_lift(t) for t in tensors]
    if not tensors:
        raise DimensionError("concat: need at least one tensor")
    ref = tensors[0].shape
    for t in tensors[1:]:
        if t.ndim != len(ref) or any(
                t.shape[i] != ref[i] for i in range(t.ndim) if i != axis):
            raise DimensionError(
                f"concat: incompatible shapes {[t.shape for t in tensors]} on axis {axis}")
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _apply("concat", tuple(tensors), out, backward)


def slice_axis(x, axis: int, start: int, stop: int) -> Tensor:
    """Contiguous slice [start, stop) along one axis."""
    x = _lift(x)
    if not (0 <= start < stop <= x.shape[axis]):
        raise DimensionError(
            f"slice_axis: range [{start}, {stop}) invalid for shape {x.shape} axis {axis}")
    index = tuple(slice(None) if i != axis else slice(start, stop)
                  for i in range(x.ndim))
    out = x.data[index].copy()
    full_shape = x.shape

    def backward(g):
        gx = np.zeros(full_shape)
        gx[index] = g
        return (gx,)

    return _apply("slice", (x,), out, backward)


def reshape(x, shape) -> Tensor:
    x = _lift(x)
    shape = tuple(shape)
    if int(np.prod(shape, dtype=np.int64)) != x.data.size:
        raise DimensionError(f"reshape: cannot view {x.shape} as {shape}")
    out = x.data.reshape(shape)
    old = x.shape

    def backward(g):
        return (g.reshape(old),)

    return _apply("reshape", (x,), out, backward)


def transpose(x) -> Tensor:
    """2-D transpose."""
    x = _lift(x)
    if x.ndim != 2:
        raise DimensionError(f"transpose: expected 2-D tensor, got shape {x.shape}")
    out = x.data.T.copy()

    def backward(g):
        return (g.T,)

    return _apply("transpose", (x,), out, backward)


def reduce_sum(x) -> Tensor:
    """Sum of all elements -> scalar."""
    x = _lift(x)
    out = np.array(x.data.sum())
    shape = x.shape

    def backward(g):
        return (np.full(shape, float(g)),)

    return _apply("sum", (x,), out, backward)


def reduce_max(x, axis: int) -> Tensor:
    """Max along one axis; the subgradient routes to the first argmax."""
    x = _lift(x)
    out = x.data.max(axis=axis)
    idx = np.expand_dims(x.data.argmax(axis=axis), axis)
    shape = x.shape

    def backward(g):
        gx = np.zeros(shape)
        np.put_along_axis(gx, idx, np.expand_dims(g, axis), axis)
        return (gx,)

    return _apply("max", (x,), out, backward)


def add_bias(x, b) -> Tensor:
    """x (..., n) + b (n,), broadcasting b over all leading axes."""
    x, b = _lift(x), _lift(b)
    if b.ndim != 1 or x.shape[-1] != b.shape[0]:
        raise DimensionError(f"add_bias: incompatible shapes {x.shape} and {b.shape}")
    out = x.data + b.data
    lead = tuple(range(x.ndim - 1))

    def backward(g):
        return g, g.sum(axis=lead)

    return _apply("add_bias", (x, b), out, backward)


def mul_bias(x, b) -> Tensor:
    """x (..., n) * b (n,), broadcasting b over all leading axes."""
    x, b = _lift(x), _lift(b)
    if b.ndim != 1 or x.shape[-1] != b.shape[0]:
        raise DimensionError(f"mul_bias: incompatible shapes {x.shape} and {b.shape}")
    out = x.data * b.data
    xd, bd = x.data, b.data
    lead = tuple(range(x.ndim - 1))

    def backward(g):
        return g * bd, (g * xd).sum(axis=lead)

    return _apply("mul_bias", (x, b), out, backward)


def swap_last2(x) -> Tensor:
    """Swap the last two axes (batched transpose)."""
    x = _lift(x)
    if x.ndim < 2:
        raise DimensionError(f"swap_last2: need >= 2 axes, got shape {x.shape}")
    out = np.swapaxes(x.data, -1, -2).copy()

    def backward(g):
        return (np.swapaxes(g, -1, -2),)

    return _apply("swap_last2", (x,), out, backward)


def expand_batch(x, batch: int) -> Tensor:
    """Tile x to a leading batch axis: shape S -> (batch,) + S."""
    x = _lift(x)
    out = np.broadcast_to(x.data, (batch,) + x.shape).copy()

    def backward(g):
        return (g.sum(axis=0),)

    return _apply("expand_batch", (x,), out, backward)


def repeat_axis(x, axis: int, count: int) -> Tensor:
    """Repeat a size-1 axis `count` times."""
    x = _lift(x)
    if x.shape[axis] != 1:
        raise DimensionError(
            f"repeat_axis: axis {axis} of shape {x.shape} must have size 1")
    out = np.repeat(x.data, count, axis=axis)

    def backward(g):
        return (g.sum(axis=axis, keepdims=True),)

    return _apply("repeat_axis", (x,), out, backward)


def _mask_array(mask, shape) -> np.ndarray:
    m = mask.data if isinstance(mask, Tensor) else np.asarray(mask, dtype=np.float64)
    if m.shape != shape:
        raise DimensionError(f"mask shape {m.shape} does not match data shape {shape}")
    return m.astype(np.float64)


def masked_softmax(logits, mask) -> Tensor:
    """Row softmax over the last axis restricted to mask==1 positions.

    Masked positions come out exactly 0; each row of unmasked probabilities
    sums to 1. Stable via per-row max subtraction over the unmasked entries.
    """
    logits = _lift(logits)
    m = _mask_array(mask, logits.shape)
    keep = m > 0
    if not keep.any(axis=-1).all():
        raise DegenerateMaskError("masked_softmax: a row is fully masked")
    neg = np.where(keep, logits.data, -np.inf)
    rowmax = neg.max(axis=-1, keepdims=True)
    exps = np.exp(neg - rowmax)
    out = exps / exps.sum(axis=-1, keepdims=True)

    def backward(g):
        inner = (g * out).sum(axis=-1, keepdims=True)
        return (out * (g - inner),)

    return _apply("masked_softmax", (logits,), out, backward)


def cross_entropy(probs, gold, mask) -> Tensor:
    """Mean over rows of -ln(probs[b, gold_b]), clamping the probability at 1e-30.

    probs (B, L) must hold per-row distributions; gold (B,) integer indices
    must land on mask==1 positions.
    """
    probs = _lift(probs)
    if probs.ndim != 2:
        raise DimensionError(f"cross_entropy: expected 2-D probs, got {probs.shape}")
    batch, length = probs.shape
    gold = np.asarray(gold, dtype=np.int64)
    if gold.shape != (batch,):
        raise LabelError(f"cross_entropy: gold shape {gold.shape} != ({batch},)")
    if (gold < 0).any() or (gold >= length).any():
        raise LabelError(f"cross_entropy: gold index out of range for L={length}")
    m = _mask_array(mask, probs.shape)
    rows = np.arange(batch)
    if (m[rows, gold] <= 0).any():
        bad = int(rows[m[rows, gold] <= 0][0])
        raise LabelError(f"cross_entropy: gold index {int(gold[bad])} is masked in row {bad}")
    p = probs.data[rows, gold]
    clamped = np.maximum(p, LOG_CLAMP)
    out = np.array(-np.log(clamped).mean())
    live = p >= LOG_CLAMP

    def backward(g):
        gp = np.zeros((batch, length))
        gp[rows, gold] = -float(g) / (batch * clamped) * live
        return (gp,)

    return _apply("cross_entropy", (probs,), out, backward)


def dropout(x, rate: float, training: bool, seed: int) -> Tensor:
    """Inverted dropout: zero with probability `rate`, scale survivors by 1/(1-rate).

    Identity when not training or rate == 0; the mask is drawn from a
    generator seeded with `seed`, so a fixed seed fixes the mask.
    """
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout rate must be in [0, 1), got {rate}")
    x = _lift(x)
    if not training or rate == 0.0:
        return x
    rng = np.random.default_rng(seed)
    scale = (rng.random(x.shape) >= rate) / (1.0 - rate)
    out = x.data * scale

    def backward(g):
        return (g * scale,)

    return _apply("dropout", (x,), out, backward)


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------


def grad_check(f, x, eps: float = 1e-5, coords: int | None = None,
               seed: int = 0) -> float:
    """Max relative error between backprop and central finite differences.

    `f` maps a Tensor to a scalar Tensor using ops from this module. Every
    coordinate of x is probed unless `coords` limits the check to a random
    sample. Relative error per coordinate: |a - n| / max(|a|, |n|, 1e-8).
    """
    if eps <= 0:
        raise ConfigError("grad_check eps must be positive")
    xd = _as_array(x).copy()
    graph = Graph()
    xt = graph.leaf(xd, requires_grad=True)
    out = f(xt)
    analytic = graph.backward(out)[xt.node_id].ravel()

    flat_ids = np.arange(xd.size)
    if coords is not None and coords < xd.size:
        flat_ids = np.random.default_rng(seed).choice(xd.size, size=coords,
                                                      replace=False)
    worst = 0.0
    flat = xd.ravel()
    for i in flat_ids:
        orig = flat[i]
        flat[i] = orig + eps
        hi = f(Tensor(xd.copy())).item()
        flat[i] = orig - eps
        lo = f(Tensor(xd.copy())).item()
        flat[i] = orig
        numeric = (hi - lo) / (2.0 * eps)
        a = analytic[i]
        err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
        worst = max(worst, err)
    return worst
