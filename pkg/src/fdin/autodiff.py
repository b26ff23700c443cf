"""Dense tensors and a small reverse-mode differentiation engine.

Graphs are recorded first and evaluated later: every op call appends a node,
``Graph.forward`` evaluates all nodes in order and caches their values, and
``Graph.backward`` walks the tape in reverse.  Leaves are either parameters
(named, gradients reported) or inputs/constants (no gradient report).

The op set is deliberately narrow; it covers the dense, recurrent, relational
and estimation layers of the model plus the two training losses.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np

# "extended" is the platform long double (80-bit on x86-64); used only to sharpen finite differences
_DTYPES = {"float64": np.float64, "float32": np.float32, "extended": np.longdouble}
_precision = "float64"


def set_precision(name: str) -> None:
    """Set the global real type (``"float64"``, ``"float32"`` or ``"extended"``)."""
    global _precision
    if name not in _DTYPES:
        raise ValueError(f"unknown precision {name!r}; expected one of {sorted(_DTYPES)}")
    _precision = name


def get_precision() -> str:
    return _precision


def real_dtype() -> type:
    return _DTYPES[_precision]


class GraphError(RuntimeError):
    """Raised for malformed graphs, shape mismatches and misuse of the tape."""

    def __init__(self, message: str, node: "Node | None" = None):
        if node is not None:
            message = f"node {node.id} ({node.op}): {message}"
        super().__init__(message)
        self.node = node


def check_finite(value: np.ndarray, what: str = "tensor") -> None:
    """Raise ``FloatingPointError`` if ``value`` holds NaN or Inf."""
    if not np.all(np.isfinite(value)):
        raise FloatingPointError(f"{what} contains non-finite values")


@dataclass(eq=False)
class Node:
    id: int
    op: str
    inputs: tuple[int, ...]
    attrs: dict[str, Any] = field(default_factory=dict)
    name: str | None = None  # parameter name for parameter leaves

    @property
    def is_leaf(self) -> bool:
        return self.op in ("param", "input")


# ---------------------------------------------------------------------------
# op kernels: forward(values, attrs) -> (out, cache)
#             backward(grad, values, out, cache, attrs) -> tuple of input grads
# ---------------------------------------------------------------------------


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _add_fwd(v, a):
    return v[0] + v[1], None


def _add_bwd(g, v, out, cache, a):
    return _unbroadcast(g, v[0].shape), _unbroadcast(g, v[1].shape)


def _sub_fwd(v, a):
    return v[0] - v[1], None


def _sub_bwd(g, v, out, cache, a):
    return _unbroadcast(g, v[0].shape), -_unbroadcast(g, v[1].shape)


def _mul_fwd(v, a):
    return v[0] * v[1], None


def _mul_bwd(g, v, out, cache, a, needs=(True, True)):
    ga = _unbroadcast(g * v[1], v[0].shape) if needs[0] else None
    gb = _unbroadcast(g * v[0], v[1].shape) if needs[1] else None
    return ga, gb


def _matmul_fwd(v, a):
    x, w = v
    if w.ndim != 2:
        raise ValueError(f"right operand must be 2-D, got shape {w.shape}")
    wm = w.T if a["transpose_b"] else w
    if x.shape[-1] != wm.shape[0]:
        raise ValueError(f"inner dimensions differ: {x.shape} @ {wm.shape}")
    return x @ wm, None


def _matmul_bwd(g, v, out, cache, a, needs=(True, True)):
    x, w = v
    wm = w.T if a["transpose_b"] else w
    gx = g @ wm.T if needs[0] else None
    gw = None
    if needs[1]:
        x2 = x.reshape(-1, x.shape[-1])
        g2 = g.reshape(-1, g.shape[-1])
        gw = x2.T @ g2
        if a["transpose_b"]:
            gw = gw.T
    return gx, gw


def _concat_fwd(v, a):
    return np.concatenate(v, axis=a["axis"]), None


def _concat_bwd(g, v, out, cache, a):
    axis = a["axis"]
    splits = np.cumsum([x.shape[axis] for x in v])[:-1]
    return tuple(np.split(g, splits, axis=axis))


def _slice_fwd(v, a):
    return v[0][a["key"]], None


def _slice_bwd(g, v, out, cache, a):
    grad = np.zeros_like(v[0])
    if a["basic"]:
        grad[a["key"]] = g
    else:
        np.add.at(grad, a["key"], g)
    return (grad,)


def _reshape_fwd(v, a):
    return v[0].reshape(a["shape"]), None


def _reshape_bwd(g, v, out, cache, a):
    return (g.reshape(v[0].shape),)


def _sigmoid_fwd(v, a):
    # tanh form is overflow-free
    return 0.5 * (1.0 + np.tanh(0.5 * v[0])), None


def _sigmoid_bwd(g, v, out, cache, a):
    return (g * out * (1.0 - out),)


def _tanh_fwd(v, a):
    return np.tanh(v[0]), None


def _tanh_bwd(g, v, out, cache, a):
    return (g * (1.0 - out * out),)


def _relu_fwd(v, a):
    return np.maximum(v[0], 0.0), None


def _relu_bwd(g, v, out, cache, a):
    return (g * (v[0] > 0),)


def _softmax_fwd(v, a):
    x = v[0]
    z = x - x.max(axis=a["axis"], keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=a["axis"], keepdims=True), None


def _softmax_bwd(g, v, out, cache, a):
    dot = (g * out).sum(axis=a["axis"], keepdims=True)
    return (out * (g - dot),)


def _dropout_fwd(v, a):
    rate = a["rate"]
    if not a["training"] or rate == 0.0:
        return v[0], None
    rng = np.random.default_rng(a["seed"])
    mask = (rng.random(v[0].shape) >= rate).astype(v[0].dtype) / (1.0 - rate)
    return v[0] * mask, mask


def _dropout_bwd(g, v, out, cache, a):
    return (g if cache is None else g * cache,)


def _sum_fwd(v, a):
    return np.asarray(v[0].sum(axis=a["axis"], keepdims=a["keepdims"])), None


def _expand_reduced(g, shape, axis, keepdims):
    if axis is None:
        return np.broadcast_to(g.reshape((1,) * len(shape)), shape)
    if not keepdims:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, shape)


def _sum_bwd(g, v, out, cache, a):
    return (np.array(_expand_reduced(g, v[0].shape, a["axis"], a["keepdims"])),)


def _mean_fwd(v, a):
    return np.asarray(v[0].mean(axis=a["axis"], keepdims=a["keepdims"])), None


def _mean_bwd(g, v, out, cache, a):
    x = v[0]
    count = x.size if a["axis"] is None else np.prod([x.shape[i] for i in np.atleast_1d(a["axis"])])
    return (np.array(_expand_reduced(g, x.shape, a["axis"], a["keepdims"])) / count,)


def _sqerr_fwd(v, a):
    pred, target = v
    if pred.shape != target.shape:
        raise ValueError(f"prediction {pred.shape} and target {target.shape} differ")
    diff = pred - target
    return np.asarray(np.mean(diff * diff)), diff


def _sqerr_bwd(g, v, out, cache, a):
    grad = g * 2.0 * cache / cache.size
    return grad, -grad


def _xent_fwd(v, a):
    logits = v[0]
    labels = a["labels"]
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ValueError(f"logits {logits.shape} do not match labels {labels.shape}")
    if labels.min() < 0 or labels.max() >= logits.shape[1]:
        raise ValueError(f"class id out of range [0, {logits.shape[1]})")
    z = logits - logits.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - logsum
    rows = np.arange(len(labels))
    return np.asarray(-logp[rows, labels].mean()), np.exp(logp)


def _xent_bwd(g, v, out, cache, a):
    labels = a["labels"]
    grad = cache.copy()
    grad[np.arange(len(labels)), labels] -= 1.0
    return (g * grad / len(labels),)


def _batchnorm_fwd(v, a):
    x, scale, shift = v
    if a["training"]:
        if x.shape[0] < 2:
            raise ValueError("batch normalization in training mode needs batch >= 2")
        mu = x.mean(axis=0)
        var = x.var(axis=0)
    else:
        mu, var = a["running_mean"], a["running_var"]
    inv = 1.0 / np.sqrt(var + a["eps"])
    xhat = (x - mu) * inv
    return xhat * scale + shift, (xhat, inv, mu, var)


def _batchnorm_bwd(g, v, out, cache, a):
    x, scale, shift = v
    xhat, inv, _, _ = cache
    gshift = g.sum(axis=0)
    gscale = (g * xhat).sum(axis=0)
    gxhat = g * scale
    if a["training"]:
        n = x.shape[0]
        gx = inv / n * (n * gxhat - gxhat.sum(axis=0) - xhat * (gxhat * xhat).sum(axis=0))
    else:
        gx = gxhat * inv
    return gx, gscale, gshift


def _sig(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _lstm_fwd(v, a):
    x, w_x, w_h, b = v
    if x.ndim != 3:
        raise ValueError(f"sequence input must be [T, batch, features], got {x.shape}")
    t_len, m, _ = x.shape
    hid = w_h.shape[1]
    if w_x.shape != (4 * hid, x.shape[2]) or w_h.shape != (4 * hid, hid) or b.shape != (4 * hid,):
        raise ValueError(f"gate parameters {w_x.shape}, {w_h.shape}, {b.shape} do not fit "
                         f"input width {x.shape[2]} and hidden size {hid}")
    if t_len < 1:
        raise ValueError("empty sequence")
    pre = x @ w_x.T + b
    hs = np.zeros((t_len + 1, m, hid), dtype=x.dtype)
    cs = np.zeros((t_len + 1, m, hid), dtype=x.dtype)
    acts = np.empty((t_len, m, 4 * hid), dtype=x.dtype)
    tcs = np.empty((t_len, m, hid), dtype=x.dtype)
    for t in range(t_len):
        z = pre[t] + hs[t] @ w_h.T
        act = acts[t]
        act[:, :2 * hid] = _sig(z[:, :2 * hid])
        act[:, 2 * hid:3 * hid] = np.tanh(z[:, 2 * hid:3 * hid])
        act[:, 3 * hid:] = _sig(z[:, 3 * hid:])
        cs[t + 1] = act[:, hid:2 * hid] * cs[t] + act[:, :hid] * act[:, 2 * hid:3 * hid]
        tcs[t] = np.tanh(cs[t + 1])
        hs[t + 1] = act[:, 3 * hid:] * tcs[t]
    return hs[1:], (hs, cs, acts, tcs)


def _lstm_bwd(g, v, out, cache, a):
    x, w_x, w_h, b = v
    hs, cs, acts, tcs = cache
    t_len, m, hid = g.shape
    dz = np.empty_like(acts)
    dh_next = np.zeros((m, hid), dtype=g.dtype)
    dc_next = np.zeros((m, hid), dtype=g.dtype)
    for t in range(t_len - 1, -1, -1):
        act = acts[t]
        i, f = act[:, :hid], act[:, hid:2 * hid]
        cand, o = act[:, 2 * hid:3 * hid], act[:, 3 * hid:]
        dh = g[t] + dh_next
        dc = dh * o * (1.0 - tcs[t] * tcs[t]) + dc_next
        d = dz[t]
        d[:, :hid] = dc * cand * i * (1.0 - i)
        d[:, hid:2 * hid] = dc * cs[t] * f * (1.0 - f)
        d[:, 2 * hid:3 * hid] = dc * i * (1.0 - cand * cand)
        d[:, 3 * hid:] = dh * tcs[t] * o * (1.0 - o)
        dc_next = dc * f
        dh_next = d @ w_h
    dz2 = dz.reshape(-1, 4 * hid)
    gx = dz @ w_x
    gw_x = dz2.T @ x.reshape(-1, x.shape[2])
    gw_h = dz2.T @ hs[:-1].reshape(-1, hid)
    return gx, gw_x, gw_h, dz2.sum(axis=0)


_OPS: dict[str, tuple[Callable, Callable]] = {
    "add": (_add_fwd, _add_bwd),
    "sub": (_sub_fwd, _sub_bwd),
    "mul": (_mul_fwd, _mul_bwd),
    "matmul": (_matmul_fwd, _matmul_bwd),
    "concat": (_concat_fwd, _concat_bwd),
    "slice": (_slice_fwd, _slice_bwd),
    "reshape": (_reshape_fwd, _reshape_bwd),
    "sigmoid": (_sigmoid_fwd, _sigmoid_bwd),
    "tanh": (_tanh_fwd, _tanh_bwd),
    "relu": (_relu_fwd, _relu_bwd),
    "softmax": (_softmax_fwd, _softmax_bwd),
    "dropout": (_dropout_fwd, _dropout_bwd),
    "sum": (_sum_fwd, _sum_bwd),
    "mean": (_mean_fwd, _mean_bwd),
    "squared_error": (_sqerr_fwd, _sqerr_bwd),
    "softmax_cross_entropy": (_xent_fwd, _xent_bwd),
    "batchnorm": (_batchnorm_fwd, _batchnorm_bwd),
    "lstm_sequence": (_lstm_fwd, _lstm_bwd),
}

SUPPORTED_OPS = tuple(sorted(_OPS))


def _is_basic_key(key) -> bool:
    items = key if isinstance(key, tuple) else (key,)
    return all(isinstance(k, (int, slice)) or k is Ellipsis or k is None for k in items)


class Graph:
    """A recorded expression graph over numpy arrays.

    Build with the op methods (each returns the new node), call
    :meth:`forward` to evaluate, then :meth:`backward` for gradients of a
    scalar root.  Leaves may be rebound between forward passes, which is how
    finite-difference checks re-evaluate the same graph.
    """

    def __init__(self) -> None:
        self.nodes: list[Node] = []
        self.values: dict[int, np.ndarray] = {}
        self.grads: dict[int, np.ndarray] = {}
        self._leaves: dict[int, np.ndarray] = {}
        self._caches: dict[int, Any] = {}
        self._params: dict[str, int] = {}
        self._evaluated = False

    # -- construction -----------------------------------------------------

    def _add(self, op: str, inputs: Sequence[Node], name: str | None = None, **attrs) -> Node:
        for x in inputs:
            if not isinstance(x, Node) or x.id >= len(self.nodes) or self.nodes[x.id] is not x:
                raise GraphError(f"input to {op} does not belong to this graph")
        node = Node(len(self.nodes), op, tuple(x.id for x in inputs), attrs, name)
        self.nodes.append(node)
        self._evaluated = False
        return node

    def param(self, name: str, value: np.ndarray) -> Node:
        """Leaf whose gradient is reported by :meth:`backward` under ``name``."""
        if name in self._params:
            raise GraphError(f"duplicate parameter name {name!r}")
        node = self._add("param", (), name=name)
        self._leaves[node.id] = np.asarray(value, dtype=real_dtype())
        self._params[name] = node.id
        return node

    def input(self, value: np.ndarray | None = None, shape: tuple[int, ...] | None = None) -> Node:
        """Non-parameter leaf; may be created unbound and bound later."""
        node = self._add("input", (), shape=shape)
        if value is not None:
            self._leaves[node.id] = np.asarray(value, dtype=real_dtype())
        return node

    const = input

    def bind(self, node: Node, value: np.ndarray) -> None:
        if not node.is_leaf:
            raise GraphError("only leaves can be bound", node)
        self._leaves[node.id] = np.asarray(value, dtype=real_dtype())
        self._evaluated = False

    def param_node(self, name: str) -> Node:
        return self.nodes[self._params[name]]

    @property
    def param_names(self) -> list[str]:
        return list(self._params)

    def add(self, a: Node, b: Node) -> Node:
        return self._add("add", (a, b))

    def sub(self, a: Node, b: Node) -> Node:
        return self._add("sub", (a, b))

    def mul(self, a: Node, b: Node) -> Node:
        return self._add("mul", (a, b))

    def matmul(self, a: Node, b: Node, transpose_b: bool = False) -> Node:
        """``a @ b`` (or ``a @ b.T``); ``a`` may carry leading batch dims, ``b`` is 2-D."""
        return self._add("matmul", (a, b), transpose_b=transpose_b)

    def concat(self, xs: Sequence[Node], axis: int = -1) -> Node:
        return self._add("concat", tuple(xs), axis=axis)

    def slice(self, a: Node, key) -> Node:
        """numpy-style indexing; advanced (gather) keys accumulate on backward."""
        return self._add("slice", (a,), key=key, basic=_is_basic_key(key))

    def reshape(self, a: Node, shape: tuple[int, ...]) -> Node:
        return self._add("reshape", (a,), shape=tuple(shape))

    def sigmoid(self, a: Node) -> Node:
        return self._add("sigmoid", (a,))

    def tanh(self, a: Node) -> Node:
        return self._add("tanh", (a,))

    def relu(self, a: Node) -> Node:
        return self._add("relu", (a,))

    def softmax(self, a: Node, axis: int = -1) -> Node:
        return self._add("softmax", (a,), axis=axis)

    def dropout(self, a: Node, rate: float, seed: int, training: bool) -> Node:
        if not 0.0 <= rate < 1.0:
            raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
        return self._add("dropout", (a,), rate=float(rate), seed=int(seed), training=bool(training))

    def sum(self, a: Node, axis=None, keepdims: bool = False) -> Node:
        return self._add("sum", (a,), axis=axis, keepdims=keepdims)

    def mean(self, a: Node, axis=None, keepdims: bool = False) -> Node:
        return self._add("mean", (a,), axis=axis, keepdims=keepdims)

    def squared_error(self, pred: Node, target: Node) -> Node:
        """Mean of squared differences (scalar)."""
        return self._add("squared_error", (pred, target))

    def softmax_cross_entropy(self, logits: Node, labels: np.ndarray) -> Node:
        """Mean of ``-log softmax(logits)[label]`` over rows (scalar)."""
        return self._add("softmax_cross_entropy", (logits,), labels=np.asarray(labels, dtype=np.int64))

    def batchnorm(self, x: Node, scale: Node, shift: Node, *, training: bool, eps: float,
                  running_mean: np.ndarray | None = None, running_var: np.ndarray | None = None) -> Node:
        """Per-feature normalization over axis 0, then affine ``scale``/``shift``."""
        if not training and (running_mean is None or running_var is None):
            raise GraphError("inference-mode batchnorm needs running statistics")
        return self._add("batchnorm", (x, scale, shift), training=training, eps=eps,
                         running_mean=running_mean, running_var=running_var)

    def lstm_sequence(self, x: Node, w_x: Node, w_h: Node, b: Node) -> Node:
        """Fused LSTM layer over ``x`` ([T, batch, in]) from zero state.

        Gate order in the stacked weights is input, forget, candidate, output.
        Returns every step's hidden state, ``[T, batch, hidden]``.
        """
        return self._add("lstm_sequence", (x, w_x, w_h, b))

    # -- evaluation -------------------------------------------------------

    def forward(self, root: Node | None = None) -> np.ndarray:
        """Evaluate every node; return the value of ``root`` (default: last node)."""
        if not self.nodes:
            raise GraphError("empty graph")
        values: dict[int, np.ndarray] = {}
        caches: dict[int, Any] = {}
        for node in self.nodes:
            if node.is_leaf:
                if node.id not in self._leaves:
                    raise GraphError("leaf is not bound", node)
                values[node.id] = self._leaves[node.id]
                continue
            fwd = _OPS[node.op][0]
            args = [values[i] for i in node.inputs]
            try:
                out, cache = fwd(args, node.attrs)
            except (ValueError, IndexError) as exc:
                shapes = ", ".join(str(x.shape) for x in args)
                raise GraphError(f"{exc} (input shapes {shapes})", node) from exc
            values[node.id] = out
            caches[node.id] = cache
        self.values = values
        self._caches = caches
        self.grads = {}
        self._evaluated = True
        root = self.nodes[-1] if root is None else root
        return values[root.id]

    def _needs_grad(self) -> list[bool]:
        """Whether each node depends on at least one parameter."""
        needs = []
        for node in self.nodes:
            if node.op == "param":
                needs.append(True)
            elif node.op == "input":
                needs.append(False)
            else:
                needs.append(any(needs[i] for i in node.inputs))
        return needs

    def value(self, node: Node) -> np.ndarray:
        if not self._evaluated:
            raise GraphError("graph has not been evaluated")
        return self.values[node.id]

    def backward(self, root: Node | None = None) -> dict[str, np.ndarray]:
        """Gradients of scalar ``root`` w.r.t. every parameter leaf, keyed by name."""
        if not self._evaluated:
            raise GraphError("backward called before forward")
        root = self.nodes[-1] if root is None else root
        rv = self.values[root.id]
        if rv.size != 1:
            raise GraphError(f"backward needs a scalar root, got shape {rv.shape}", root)
        needs_grad = self._needs_grad()
        grads: dict[int, np.ndarray] = {root.id: np.ones_like(rv)}
        owned: set[int] = set()  # grads we allocated and may update in place

        def accumulate(i: int, gi: np.ndarray) -> None:
            if i not in grads:
                grads[i] = gi
            elif i in owned:
                grads[i] += gi
            else:
                grads[i] = grads[i] + gi
                owned.add(i)

        for node in reversed(self.nodes[: root.id + 1]):
            g = grads.get(node.id)
            if g is None or node.is_leaf:
                continue
            if node.op == "slice" and node.attrs["basic"]:
                # scatter straight into the parent's buffer
                i = node.inputs[0]
                if not needs_grad[i]:
                    continue
                if i not in owned:
                    buf = np.zeros_like(self.values[i])
                    if i in grads:
                        buf += grads[i]
                    grads[i] = buf
                    owned.add(i)
                grads[i][node.attrs["key"]] += g
                continue
            bwd = _OPS[node.op][1]
            args = [self.values[i] for i in node.inputs]
            if node.op in ("matmul", "mul"):
                needs = tuple(needs_grad[i] for i in node.inputs)
                in_grads = bwd(g, args, self.values[node.id], self._caches[node.id], node.attrs, needs)
            else:
                in_grads = bwd(g, args, self.values[node.id], self._caches[node.id], node.attrs)
            for i, gi in zip(node.inputs, in_grads):
                if gi is None or not needs_grad[i]:
                    continue
                accumulate(i, gi)
        self.grads = grads
        out = {}
        for name, nid in self._params.items():
            g = grads.get(nid)
            out[name] = np.zeros_like(self._leaves[nid]) if g is None else np.asarray(g).reshape(self._leaves[nid].shape)
        return out


# ---------------------------------------------------------------------------
# finite-difference check
# ---------------------------------------------------------------------------


@dataclass
class GradCheckReport:
    """Per-parameter worst relative error between backward and central differences."""

    max_rel_error: dict[str, float]
    tol: float
    step: float
    excluded: dict[str, int]
    kink_nodes: list[int]

    @property
    def passed(self) -> bool:
        return all(err <= self.tol for err in self.max_rel_error.values())

    @property
    def worst(self) -> float:
        return max(self.max_rel_error.values(), default=0.0)

    def summary(self) -> str:
        lines = [f"grad_check step={self.step:g} tol={self.tol:g} -> {'PASS' if self.passed else 'FAIL'}"]
        for name, err in self.max_rel_error.items():
            skip = self.excluded.get(name, 0)
            lines.append(f"  {name}: {err:.3e}" + (f" ({skip} kink components excluded)" if skip else ""))
        return "\n".join(lines)


def relative_error(a: np.ndarray, b: np.ndarray, eps: float = 1e-8) -> np.ndarray:
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), eps)


def _relu_signs(graph: Graph) -> list[np.ndarray]:
    return [np.sign(graph.values[n.inputs[0]]) for n in graph.nodes if n.op == "relu"]


def grad_check(graph: Graph, step: float = 1e-3, tol: float = 1e-4,
               root: Node | None = None, params: Sequence[str] | None = None,
               max_components: int | None = None, seed: int = 0) -> GradCheckReport:
    """Compare :meth:`Graph.backward` against central differences.

    Components whose perturbation moves any ReLU input across (or off) zero
    are excluded, since the analytic derivative there is a subgradient.
    ``max_components`` samples at most that many components per parameter.
    """
    graph.forward(root)
    analytic = graph.backward(root)
    base_signs = _relu_signs(graph)
    kinks = [n.id for n, s in zip([n for n in graph.nodes if n.op == "relu"], base_signs) if np.any(s == 0)]
    rng = np.random.default_rng(seed)
    names = list(analytic) if params is None else list(params)
    errors: dict[str, float] = {}
    excluded: dict[str, int] = {}

    def crossed() -> bool:
        return any(not np.array_equal(a, b) for a, b in zip(base_signs, _relu_signs(graph)))

    for name in names:
        node = graph.param_node(name)
        base = graph._leaves[node.id].copy()
        flat_idx = np.arange(base.size)
        if max_components is not None and base.size > max_components:
            flat_idx = rng.choice(base.size, size=max_components, replace=False)
        worst = 0.0
        skipped = 0
        for k in flat_idx:
            idx = np.unravel_index(k, base.shape)
            pert = base.copy()
            pert[idx] = base[idx] + step
            graph.bind(node, pert)
            f_plus = np.array(graph.forward(root))
            kink = crossed()
            pert[idx] = base[idx] - step
            graph.bind(node, pert)
            f_minus = np.array(graph.forward(root))
            kink = kink or crossed()
            if kink:
                skipped += 1
                continue
            numeric = (f_plus - f_minus) / (2.0 * step)
            err = float(relative_error(np.float64(analytic[name][idx]), np.float64(numeric)))
            worst = max(worst, err)
        graph.bind(node, base)
        errors[name] = worst
        if skipped:
            excluded[name] = skipped
    graph.forward(root)
    graph.backward(root)
    return GradCheckReport(errors, tol, step, excluded, kinks)
