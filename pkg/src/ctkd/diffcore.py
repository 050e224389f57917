"""Dense-tensor engine with reverse-mode automatic differentiation.

Tensors wrap float64 numpy arrays.  Ops build a graph of backward closures;
``backpropagate`` walks it in reverse topological order.  A ``Tape`` records
executed ops (and owns the RNG for stochastic ops like dropout) so a forward
pass can be replayed bit-identically from its seed.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field

import numpy as np


class DiffcoreError(Exception):
    pass


class DimensionError(DiffcoreError):
    """Input shapes invalid for the requested op."""


class NumericError(DiffcoreError):
    """An op produced NaN/Inf from finite inputs."""


class ContractError(DiffcoreError):
    """An API precondition was violated."""


_state = threading.local()


def _active_tape():
    return getattr(_state, "tape", None)


def _grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


class no_grad:
    """Context manager disabling graph construction (and tape recording)."""

    def __enter__(self):
        self._prev = _grad_enabled()
        _state.grad_enabled = False
        return self

    def __exit__(self, *exc):
        _state.grad_enabled = self._prev
        return False


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name
        self._parents: tuple = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(data, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=True, name=name)


class Tape:
    """Ordered record of executed ops plus the RNG seed for stochastic ops.

    Ops are recorded in execution order (hence topologically).  ``replay``
    re-executes every recorded op from its parents' current data with the RNG
    reset to the seed, returning the recomputed forward values.
    """

    def __init__(self, seed: int = 0):
        self.seed = int(seed)
        self.rng = np.random.default_rng(self.seed)
        self.records: list[tuple[str, tuple, dict, Tensor]] = []
        self._replaying = False

    def __enter__(self):
        stack = getattr(_state, "tape_stack", None)
        if stack is None:
            stack = _state.tape_stack = []
        stack.append(getattr(_state, "tape", None))
        _state.tape = self
        return self

    def __exit__(self, *exc):
        _state.tape = _state.tape_stack.pop()
        return False

    def replay(self) -> list[np.ndarray]:
        """Re-execute recorded ops; returns recomputed output arrays in order."""
        saved_rng = self.rng
        self.rng = np.random.default_rng(self.seed)
        self._replaying = True
        outs = []
        try:
            with self:
                for kind, parents, attrs, _out in self.records:
                    outs.append(_DISPATCH[kind](*parents, **attrs).data)
        finally:
            self._replaying = False
            self.rng = saved_rng
        return outs


def _node(kind: str, parents: tuple, out_data: np.ndarray, backward, attrs: dict | None = None) -> Tensor:
    if not np.all(np.isfinite(out_data)):
        raise NumericError(f"non-finite output from op '{kind}'")
    requires = _grad_enabled() and any(p.requires_grad for p in parents)
    out = Tensor(out_data, requires_grad=requires)
    if requires:
        out._parents = parents
        out._backward = backward
        tape = _active_tape()
        if tape is not None and not tape._replaying:
            tape.records.append((kind, parents, attrs or {}, out))
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcast gradient back to the original operand shape."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise / arithmetic


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data + b.data

    def bwd(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _node("add", (a, b), out, bwd)


def multiply(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data * b.data

    def bwd(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _node("multiply", (a, b), out, bwd)


def scale(x, factor: float) -> Tensor:
    x = as_tensor(x)
    factor = float(factor)

    def bwd(g):
        return (g * factor,)

    return _node("scale", (x,), x.data * factor, bwd, {"factor": factor})


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")
    out = a.data @ b.data

    def bwd(g):
        ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape)
        gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
        return ga, gb

    return _node("matmul", (a, b), out, bwd)


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    out = 1.0 / (1.0 + np.exp(-x.data))

    def bwd(g):
        return (g * out * (1.0 - out),)

    return _node("sigmoid", (x,), out, bwd)


def tanh(x) -> Tensor:
    x = as_tensor(x)
    out = np.tanh(x.data)

    def bwd(g):
        return (g * (1.0 - out * out),)

    return _node("tanh", (x,), out, bwd)


def relu(x) -> Tensor:
    x = as_tensor(x)
    out = np.maximum(x.data, 0.0)

    def bwd(g):
        return (g * (x.data > 0.0),)

    return _node("relu", (x,), out, bwd)


def swish(x) -> Tensor:
    """x * sigmoid(x)."""
    x = as_tensor(x)
    s = 1.0 / (1.0 + np.exp(-x.data))
    out = x.data * s

    def bwd(g):
        return (g * (s + x.data * s * (1.0 - s)),)

    return _node("swish", (x,), out, bwd)


def glu(x) -> Tensor:
    """Gated linear unit over the last axis: first half gated by sigmoid(second half)."""
    x = as_tensor(x)
    if x.shape[-1] % 2 != 0:
        raise DimensionError(f"glu: last extent must be even, got {x.shape}")
    m = x.shape[-1] // 2
    a, b = x.data[..., :m], x.data[..., m:]
    s = 1.0 / (1.0 + np.exp(-b))
    out = a * s

    def bwd(g):
        return (np.concatenate([g * s, g * a * s * (1.0 - s)], axis=-1),)

    return _node("glu", (x,), out, bwd)


# ---------------------------------------------------------------------------
# normalization / distributions


def softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def bwd(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        return ((g - dot) * out,)

    return _node("softmax", (x,), out, bwd, {"axis": axis})


def log_softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    m = x.data.max(axis=axis, keepdims=True)
    shifted = x.data - m
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse

    def bwd(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return _node("log_softmax", (x,), out, bwd, {"axis": axis})


def layer_norm(x, gain, bias, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then scale and shift."""
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    if gain.shape != x.shape[-1:] or bias.shape != x.shape[-1:]:
        raise DimensionError(
            f"layer_norm: gain/bias {gain.shape}/{bias.shape} must match last extent of {x.shape}"
        )
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out = xhat * gain.data + bias.data

    def bwd(g):
        axes = tuple(range(g.ndim - 1))
        ggain = (g * xhat).sum(axis=axes)
        gbias = g.sum(axis=axes)
        gxhat = g * gain.data
        n = x.shape[-1]
        gx = inv * (
            gxhat
            - gxhat.mean(axis=-1, keepdims=True)
            - xhat * (gxhat * xhat).mean(axis=-1, keepdims=True)
        )
        return gx, ggain, gbias

    return _node("layer_norm", (x, gain, bias), out, bwd, {"eps": eps})


def linear(x, weight, bias=None) -> Tensor:
    """x @ weight (+ bias). weight has shape (in, out)."""
    x, weight = as_tensor(x), as_tensor(weight)
    if x.shape[-1] != weight.shape[0]:
        raise DimensionError(f"linear: input {x.shape} vs weight {weight.shape}")
    out = x.data @ weight.data
    if bias is not None:
        bias = as_tensor(bias)
        out = out + bias.data

    def bwd(g):
        gx = g @ weight.data.T
        gw = x.data.reshape(-1, x.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        if bias is None:
            return gx, gw
        gb = g.reshape(-1, g.shape[-1]).sum(axis=0)
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _node("linear", parents, out, bwd)


# ---------------------------------------------------------------------------
# shape manipulation


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    shape = tuple(int(s) for s in shape)
    out = x.data.reshape(shape)

    def bwd(g):
        return (g.reshape(x.shape),)

    return _node("reshape", (x,), out, bwd, {"shape": shape})


def transpose(x, axes) -> Tensor:
    x = as_tensor(x)
    axes = tuple(int(a) for a in axes)
    out = np.transpose(x.data, axes)
    inverse = tuple(np.argsort(axes))

    def bwd(g):
        return (np.transpose(g, inverse),)

    return _node("transpose", (x,), out, bwd, {"axes": axes})


def concat(*tensors, axis: int = 0) -> Tensor:
    parts = tuple(as_tensor(t) for t in tensors)
    out = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.shape[axis] for p in parts]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        return tuple(np.split(g, splits, axis=axis))

    return _node("concat", parts, out, bwd, {"axis": axis})


def slice_(x, starts, stops) -> Tensor:
    """Slice per axis; None in starts/stops means the full extent."""
    x = as_tensor(x)
    starts = tuple(starts)
    stops = tuple(stops)
    if len(starts) != x.ndim or len(stops) != x.ndim:
        raise DimensionError(f"slice: need {x.ndim} (start, stop) pairs for shape {x.shape}")
    key = tuple(slice(a, b) for a, b in zip(starts, stops))
    out = x.data[key].copy()

    def bwd(g):
        gx = np.zeros_like(x.data)
        gx[key] = g
        return (gx,)

    return _node("slice", (x,), out, bwd, {"starts": starts, "stops": stops})


def embedding_lookup(table, ids) -> Tensor:
    table = as_tensor(table)
    ids = np.asarray(ids, dtype=np.int64)
    if table.ndim != 2:
        raise DimensionError(f"embedding_lookup: table must be 2-d, got {table.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise DimensionError(
            f"embedding_lookup: id out of range [0, {table.shape[0]}) in {ids.tolist()}"
        )
    out = table.data[ids]

    def bwd(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids, g)
        return (gt,)

    return _node("embedding_lookup", (table,), out, bwd, {"ids": ids})


# ---------------------------------------------------------------------------
# sequence ops


def depthwise_conv1d_causal(x, weight, bias=None) -> Tensor:
    """Per-channel causal 1-d convolution.

    x: (T, C), weight: (K, C).  The input is left-padded with K-1 zeros so
    output frame t depends only on input frames <= t.
    """
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise DimensionError(f"depthwise_conv1d_causal: x {x.shape} vs weight {weight.shape}")
    t_len, channels = x.shape
    k = weight.shape[0]
    padded = np.vstack([np.zeros((k - 1, channels)), x.data])
    out = np.zeros((t_len, channels))
    for j in range(k):
        out += padded[j : j + t_len] * weight.data[j]
    if bias is not None:
        bias = as_tensor(bias)
        out = out + bias.data

    def bwd(g):
        gw = np.zeros_like(weight.data)
        gpad = np.zeros_like(padded)
        for j in range(k):
            gw[j] = (padded[j : j + t_len] * g).sum(axis=0)
            gpad[j : j + t_len] += g * weight.data[j]
        gx = gpad[k - 1 :]
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=0)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _node("depthwise_conv1d_causal", parents, out, bwd)


def max_pool1d_time(x, window: int = 2) -> Tensor:
    """Non-overlapping max pool over the time (first) axis; trailing remainder dropped."""
    x = as_tensor(x)
    if x.ndim != 2:
        raise DimensionError(f"max_pool1d_time: expected 2-d (T, C), got {x.shape}")
    window = int(window)
    t_out = x.shape[0] // window
    if t_out == 0:
        raise DimensionError(f"max_pool1d_time: {x.shape[0]} frames < window {window}")
    blocks = x.data[: t_out * window].reshape(t_out, window, x.shape[1])
    arg = blocks.argmax(axis=1)
    out = np.take_along_axis(blocks, arg[:, None, :], axis=1)[:, 0, :]

    def bwd(g):
        gb = np.zeros_like(blocks)
        np.put_along_axis(gb, arg[:, None, :], g[:, None, :], axis=1)
        gx = np.zeros_like(x.data)
        gx[: t_out * window] = gb.reshape(t_out * window, x.shape[1])
        return (gx,)

    return _node("max_pool1d_time", (x,), out, bwd, {"window": window})


def dropout(x, rate: float, training: bool = True) -> Tensor:
    """Inverted dropout: scales kept units by 1/(1-rate) at train time."""
    x = as_tensor(x)
    if not 0.0 <= rate < 1.0:
        raise ContractError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    tape = _active_tape()
    if tape is None:
        raise ContractError("dropout requires an active Tape for seeded randomness")
    mask = (tape.rng.random(x.shape) >= rate) / (1.0 - rate)
    out = x.data * mask

    def bwd(g):
        return (g * mask,)

    return _node("dropout", (x,), out, bwd, {"rate": rate, "training": training})


# ---------------------------------------------------------------------------
# reductions


def sum_(x, axis=None) -> Tensor:
    x = as_tensor(x)
    out = x.data.sum(axis=axis)

    def bwd(g):
        if axis is None:
            return (np.broadcast_to(g, x.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), x.shape).copy(),)

    return _node("sum", (x,), out, bwd, {"axis": axis})


def mean_(x, axis=None) -> Tensor:
    x = as_tensor(x)
    out = x.data.mean(axis=axis)
    count = x.size if axis is None else x.shape[axis]

    def bwd(g):
        if axis is None:
            return (np.broadcast_to(g / count, x.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis) / count, x.shape).copy(),)

    return _node("mean", (x,), out, bwd, {"axis": axis})


_DISPATCH = {
    "matmul": matmul,
    "add": add,
    "multiply": multiply,
    "scale": scale,
    "concat": concat,
    "slice": slice_,
    "embedding_lookup": embedding_lookup,
    "linear": linear,
    "layer_norm": layer_norm,
    "softmax": softmax,
    "log_softmax": log_softmax,
    "sigmoid": sigmoid,
    "tanh": tanh,
    "swish": swish,
    "glu": glu,
    "relu": relu,
    "depthwise_conv1d_causal": depthwise_conv1d_causal,
    "max_pool1d_time": max_pool1d_time,
    "dropout": dropout,
    "sum": sum_,
    "mean": mean_,
    "reshape": reshape,
    "transpose": transpose,
}


def apply(op_kind: str, inputs, attrs: dict | None = None) -> Tensor:
    """Dispatch by op name; `inputs` are tensors, `attrs` op-specific keywords."""
    if op_kind not in _DISPATCH:
        raise ContractError(f"unknown op_kind '{op_kind}'")
    return _DISPATCH[op_kind](*inputs, **(attrs or {}))


def custom_node(kind: str, parents: tuple, out_data, backward) -> Tensor:
    """Insert an externally computed value with a hand-written backward rule.

    Used by losses whose gradients come from their own dynamic programs.
    """
    return _node(kind, tuple(parents), np.asarray(out_data, dtype=np.float64), backward)


# ---------------------------------------------------------------------------
# backpropagation


def _toposort(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen and p.requires_grad:
                stack.append((p, False))
    return order


def backpropagate(loss: Tensor) -> dict[Tensor, np.ndarray]:
    """Accumulate gradients of a scalar loss into every reachable tensor.

    Returns a map from leaf tensors (requires_grad, no parents) to their
    gradient arrays.
    """
    if loss.size != 1:
        raise ContractError(f"loss must be scalar, got shape {loss.shape}")
    order = _toposort(loss)
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backward is None or node.grad is None:
            continue
        grads = node._backward(node.grad)
        for p, gp in zip(node._parents, grads):
            if gp is None or not p.requires_grad:
                continue
            if p.grad is None:
                p.grad = np.zeros_like(p.data)
            p.grad += gp
    return {
        n: n.grad
        for n in order
        if n.requires_grad and not n._parents and n.grad is not None
    }


def zero_grads(params) -> None:
    values = params.values() if isinstance(params, dict) else params
    for p in values:
        p.zero_grad()


# ---------------------------------------------------------------------------
# gradient checking


@dataclass
class GradCheckReport:
    tolerance: float
    max_rel_error: dict = field(default_factory=dict)
    failures: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failures

    @property
    def worst(self) -> float:
        return max(self.max_rel_error.values()) if self.max_rel_error else 0.0


def check_gradients(fn, params: dict, epsilon: float = 1e-5, tolerance: float = 1e-4) -> GradCheckReport:
    """Compare analytic gradients of ``fn()`` against central finite differences.

    ``fn`` must be a zero-argument callable returning a scalar Tensor, reading
    the parameters in ``params`` by reference and deterministic between calls
    (stochastic ops need a fixed tape seed).
    """
    if epsilon <= 0:
        raise ContractError("epsilon must be positive")
    first = fn().item()
    if fn().item() != first:
        raise ContractError("function is stochastic: fix the tape seed before gradient checking")

    zero_grads(params)
    loss = fn()
    backpropagate(loss)

    report = GradCheckReport(tolerance=tolerance)
    for name, p in params.items():
        analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
        worst = 0.0
        flat = p.data.reshape(-1)
        aflat = analytic.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + epsilon
            up = fn().item()
            flat[i] = orig - epsilon
            down = fn().item()
            flat[i] = orig
            numeric = (up - down) / (2.0 * epsilon)
            denom = max(1.0, abs(numeric), abs(aflat[i]))
            worst = max(worst, abs(numeric - aflat[i]) / denom)
        report.max_rel_error[name] = worst
        if worst > tolerance:
            report.failures.append(name)
    return report
