"""Parameterized layers: dense, stacked LSTM, dropout and batch normalization.

Layers own plain numpy arrays.  A forward call registers those arrays as
named parameter leaves on a :class:`~fdin.autodiff.Graph` and returns the
output node, so gradients come back keyed by the same names used in
checkpoints.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Graph, Node, real_dtype


@dataclass
class DenseLayer:
    name: str
    weight: np.ndarray  # [out, in]
    bias: np.ndarray | None  # [out]; None for layers feeding batchnorm
    activation: str = "none"

    def __post_init__(self):
        if self.weight.ndim != 2 or (self.bias is not None and self.bias.shape != (self.weight.shape[0],)):
            raise ValueError(f"{self.name}: weight {self.weight.shape} and bias {self.bias.shape} disagree")
        if self.activation not in ("none", "relu"):
            raise ValueError(f"{self.name}: unknown activation {self.activation!r}")

    @classmethod
    def init(cls, name: str, n_in: int, n_out: int, rng: np.random.Generator,
             activation: str = "none", bias: bool = True) -> "DenseLayer":
        limit = np.sqrt(6.0 / (n_in + n_out))
        w = rng.uniform(-limit, limit, size=(n_out, n_in)).astype(real_dtype())
        return cls(name, w, np.zeros(n_out, dtype=real_dtype()) if bias else None, activation)

    @property
    def n_in(self) -> int:
        return self.weight.shape[1]

    @property
    def n_out(self) -> int:
        return self.weight.shape[0]

    def parameters(self):
        yield f"{self.name}.weight", self.weight
        if self.bias is not None:
            yield f"{self.name}.bias", self.bias


def dense_forward(g: Graph, layer: DenseLayer, x: Node, width: int | None = None) -> Node:
    """Affine map over the last axis plus optional ReLU.

    ``width`` is the known input width; it is checked eagerly so mistakes
    surface at build time rather than inside the tape.
    """
    if width is not None and width != layer.n_in:
        raise ValueError(f"{layer.name}: input width {width} != layer input {layer.n_in}")
    w = _leaf(g, f"{layer.name}.weight", layer.weight)
    out = g.matmul(x, w, transpose_b=True)
    if layer.bias is not None:
        out = g.add(out, _leaf(g, f"{layer.name}.bias", layer.bias))
    if layer.activation == "relu":
        out = g.relu(out)
    return out


@dataclass
class LstmCell:
    name: str
    w_x: np.ndarray  # [4h, in], gate order i, f, g, o
    w_h: np.ndarray  # [4h, h]
    bias: np.ndarray  # [4h]

    @property
    def hidden(self) -> int:
        return self.w_h.shape[1]

    @property
    def n_in(self) -> int:
        return self.w_x.shape[1]

    def parameters(self):
        yield f"{self.name}.w_x", self.w_x
        yield f"{self.name}.w_h", self.w_h
        yield f"{self.name}.bias", self.bias


@dataclass
class LstmStack:
    name: str
    cells: list[LstmCell] = field(default_factory=list)

    def __post_init__(self):
        prev = None
        for cell in self.cells:
            h = cell.hidden
            if cell.w_x.shape[0] != 4 * h or cell.w_h.shape != (4 * h, h) or cell.bias.shape != (4 * h,):
                raise ValueError(f"{cell.name}: inconsistent gate parameter shapes")
            if prev is not None and cell.n_in != prev:
                raise ValueError(f"{cell.name}: input size {cell.n_in} != previous hidden {prev}")
            prev = h

    @classmethod
    def init(cls, name: str, n_in: int, hidden: list[int], rng: np.random.Generator,
             scale: float = 0.08, forget_bias: float = 1.0) -> "LstmStack":
        cells = []
        for k, h in enumerate(hidden):
            dt = real_dtype()
            bias = np.zeros(4 * h, dtype=dt)
            bias[h:2 * h] = forget_bias
            cells.append(LstmCell(
                f"{name}.{k}",
                rng.uniform(-scale, scale, size=(4 * h, n_in)).astype(dt),
                rng.uniform(-scale, scale, size=(4 * h, h)).astype(dt),
                bias,
            ))
            n_in = h
        return cls(name, cells)

    @property
    def hidden(self) -> int:
        return self.cells[-1].hidden

    def parameters(self):
        for cell in self.cells:
            yield from cell.parameters()


def lstm_cell_step(g: Graph, w_x: Node, w_h: Node, b: Node, hidden: int,
                   x: Node, h: Node, c: Node) -> tuple[Node, Node]:
    gates = g.add(g.add(g.matmul(x, w_x, transpose_b=True), g.matmul(h, w_h, transpose_b=True)), b)
    # one sigmoid over all gates; the candidate block of it goes unused
    act = g.sigmoid(gates)
    i = g.slice(act, (Ellipsis, slice(0, hidden)))
    f = g.slice(act, (Ellipsis, slice(hidden, 2 * hidden)))
    o = g.slice(act, (Ellipsis, slice(3 * hidden, 4 * hidden)))
    cand = g.tanh(g.slice(gates, (Ellipsis, slice(2 * hidden, 3 * hidden))))
    c = g.add(g.mul(f, c), g.mul(i, cand))
    h = g.mul(o, g.tanh(c))
    return h, c


def lstm_forward(g: Graph, stack: LstmStack, x: Node, t_len: int, batch: int,
                 fused: bool = True) -> Node:
    """Run the stack over ``x`` (``[T, batch, in]``) from zero state.

    Returns the top layer's final hidden state ``[batch, hidden]``.  The
    sequence length is the first axis of ``x``; padding must be trimmed by
    the caller.  ``fused=False`` unrolls the recurrence into elementary ops
    (slow; kept as a reference for the fused kernel).
    """
    if t_len < 1:
        raise ValueError(f"{stack.name}: empty sequence")
    seq = x
    for cell in stack.cells:
        w_x = _leaf(g, f"{cell.name}.w_x", cell.w_x)
        w_h = _leaf(g, f"{cell.name}.w_h", cell.w_h)
        b = _leaf(g, f"{cell.name}.bias", cell.bias)
        if fused:
            seq = g.lstm_sequence(seq, w_x, w_h, b)
        else:
            seq = _unrolled_layer(g, cell, seq, w_x, w_h, b, t_len, batch)
    return g.slice(seq, (-1,))


def _unrolled_layer(g: Graph, cell: LstmCell, seq: Node, w_x: Node, w_h: Node, b: Node,
                    t_len: int, batch: int) -> Node:
    dt = real_dtype()
    h = g.const(np.zeros((batch, cell.hidden), dtype=dt))
    c = g.const(np.zeros((batch, cell.hidden), dtype=dt))
    outs = []
    for t in range(t_len):
        h, c = lstm_cell_step(g, w_x, w_h, b, cell.hidden, g.slice(seq, (t,)), h, c)
        outs.append(g.reshape(h, (1, batch, cell.hidden)))
    return g.concat(outs, axis=0)


def dropout_apply(g: Graph, x: Node, rate: float, seed: int, training: bool) -> Node:
    """Inverted dropout; identity when not training or ``rate == 0``."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    return g.dropout(x, rate, seed, training=True)


@dataclass
class BatchNorm:
    name: str
    scale: np.ndarray
    shift: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.9
    eps: float = 1e-5

    def __post_init__(self):
        if self.eps <= 0:
            raise ValueError("epsilon must be positive")
        if np.any(self.running_var < 0):
            raise ValueError("running variance must be non-negative")

    @classmethod
    def init(cls, name: str, features: int, momentum: float = 0.9, eps: float = 1e-5) -> "BatchNorm":
        dt = real_dtype()
        return cls(name, np.ones(features, dtype=dt), np.zeros(features, dtype=dt),
                   np.zeros(features, dtype=dt), np.ones(features, dtype=dt), momentum, eps)

    def parameters(self):
        yield f"{self.name}.scale", self.scale
        yield f"{self.name}.shift", self.shift

    def buffers(self):
        yield f"{self.name}.running_mean", self.running_mean
        yield f"{self.name}.running_var", self.running_var


@dataclass
class PendingStats:
    """Deferred running-statistics update for one training-mode batchnorm node."""

    bn: BatchNorm
    node: Node
    input_node: Node

    def apply(self, g: Graph) -> None:
        x = g.value(self.input_node)
        m = self.bn.momentum
        self.bn.running_mean[...] = m * self.bn.running_mean + (1 - m) * x.mean(axis=0)
        self.bn.running_var[...] = m * self.bn.running_var + (1 - m) * x.var(axis=0)


def batchnorm_forward(g: Graph, bn: BatchNorm, x: Node, training: bool,
                      pending: list[PendingStats] | None = None) -> Node:
    """Normalize ``x`` ([batch, features]).

    In training mode the running statistics are updated only once the graph
    has been evaluated: the caller passes ``pending`` and applies each entry
    after ``forward``.  Without ``pending`` the running stats stay untouched.
    """
    scale = _leaf(g, f"{bn.name}.scale", bn.scale)
    shift = _leaf(g, f"{bn.name}.shift", bn.shift)
    out = g.batchnorm(x, scale, shift, training=training, eps=bn.eps,
                      running_mean=bn.running_mean, running_var=bn.running_var)
    if training and pending is not None:
        pending.append(PendingStats(bn, out, x))
    return out


def _leaf(g: Graph, name: str, value: np.ndarray) -> Node:
    # layers may be applied more than once per graph (e.g. per-region loops)
    if name in g._params:
        return g.param_node(name)
    return g.param(name, value)


def count_parameters(*layers) -> int:
    return sum(arr.size for layer in layers for _, arr in layer.parameters())
