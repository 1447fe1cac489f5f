"""Minimal define-by-run reverse-mode differentiation over dense float64 arrays.

Operations executed while a :class:`Graph` is active are appended to that
graph's tape; :meth:`Graph.backward` then walks the tape in reverse append
order.  With no active graph (or when no input requires a gradient) operations
are plain numpy evaluations and nothing is recorded, which is how inference
runs.

Tensors are rank 1 or rank 2.  Rank-2 tensors are treated as a batch of rows:
``softmax``, ``concat`` and ``slice_last`` act along the last axis, so the
same model code runs for a single window (rank 1) or a mini-batch (rank 2).
The only broadcasting supported is tensor-with-Python-scalar.

>>> w = Tensor([1.0, 2.0, 3.0], requires_grad=True)
>>> with Graph() as g:
...     loss = tsum(w)
>>> g.backward(loss)
>>> w.grad
array([1., 1., 1.])
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from numbers import Real
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .errors import ContractError, ShapeError

_ACTIVE: list["Graph"] = []


class Tensor:
    """Dense float64 array that can take part in a differentiation graph."""

    __slots__ = ("data", "requires_grad", "grad", "_node", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1)
        if arr.ndim > 2:
            raise ShapeError(f"rank {arr.ndim} tensors are not supported (shape {arr.shape})")
        if arr.size == 0 or min(arr.shape) < 1:
            raise ContractError(f"tensor extents must all be >= 1, got shape {arr.shape}")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._node: Node | None = None
        self.name = name

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "Tensor":
        t = object.__new__(cls)
        t.data = arr
        t.requires_grad = False
        t.grad = None
        t._node = None
        t.name = None
        return t

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._node is None

    def zero_grad(self) -> None:
        self.grad = None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({np.array2string(self.data, precision=6)}{flag})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


@dataclass(eq=False)
class Node:
    op: str
    inputs: tuple[Tensor, ...]
    out: Tensor
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]


class Graph:
    """Append-only tape of recorded operations.

    Use as a context manager; every differentiable operation run inside the
    block is appended to :attr:`nodes`.  A graph is single-use in spirit but
    ``backward`` may be called more than once: leaf gradients accumulate.
    """

    def __init__(self) -> None:
        self.nodes: list[Node] = []

    def __enter__(self) -> "Graph":
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc) -> None:
        popped = _ACTIVE.pop()
        assert popped is self

    def __len__(self) -> int:
        return len(self.nodes)

    def backward(self, root: Tensor) -> None:
        """Accumulate d(root)/d(leaf) into ``leaf.grad`` for every leaf that
        requires a gradient.  ``root`` must hold exactly one element."""
        if root.size != 1:
            raise ContractError(f"backward needs a scalar root, got shape {root.shape}")
        if root._node is None:
            if root.requires_grad:
                _accumulate(root, np.ones_like(root.data))
            return
        pending: dict[int, np.ndarray] = {id(root): np.ones_like(root.data)}
        for node in reversed(self.nodes):
            g = pending.pop(id(node.out), None)
            if g is None:
                continue
            for t, gi in zip(node.inputs, node.backward(g)):
                if gi is None or not t.requires_grad:
                    continue
                if t._node is None:
                    _accumulate(t, gi)
                else:
                    key = id(t)
                    prev = pending.get(key)
                    pending[key] = gi if prev is None else prev + gi


def backward(graph: Graph, root: Tensor) -> None:
    graph.backward(root)


def zero_grad(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None


def active_graph() -> Graph | None:
    return _ACTIVE[-1] if _ACTIVE else None


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64, copy=True).reshape(t.data.shape)
    else:
        t.grad += g


def _record(op: str, inputs: tuple[Tensor, ...], out: np.ndarray, bwd) -> Tensor:
    res = Tensor._wrap(out)
    if _ACTIVE and any(t.requires_grad for t in inputs):
        res.requires_grad = True
        node = Node(op, inputs, res, bwd)
        res._node = node
        _ACTIVE[-1].nodes.append(node)
    return res


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# ---------------------------------------------------------------------------
# linear algebra


def _matmul_backward(g: np.ndarray, a: np.ndarray, b: np.ndarray):
    if a.ndim == 2 and b.ndim == 2:
        return g @ b.T, a.T @ g
    if a.ndim == 2:
        return np.outer(g, b), a.T @ g
    return b @ g, np.outer(a, g)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product.  Either operand may be rank 1 (matrix-vector)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim == 1 and b.data.ndim == 1:
        raise ShapeError(f"matmul needs at least one rank-2 operand, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[0]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} x {b.shape}")
    ad, bd = a.data, b.data
    # looked up at call time so tests can swap the rule out
    return _record("matmul", (a, b), ad @ bd, lambda g: _matmul_backward(g, ad, bd))


def affine(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """``x @ w.T + b`` for one input row (rank 1) or a batch of rows (rank 2)."""
    if w.data.ndim != 2 or x.shape[-1] != w.shape[1]:
        raise ShapeError(f"affine: input {x.shape} does not match weight {w.shape}")
    if b is not None and b.shape != (w.shape[0],):
        raise ShapeError(f"affine: bias {b.shape} does not match weight {w.shape}")
    xd, wd = x.data, w.data
    out = xd @ wd.T
    if b is not None:
        out = out + b.data

    def bwd(g):
        gx = g @ wd
        gw = np.outer(g, xd) if xd.ndim == 1 else g.T @ xd
        if b is None:
            return gx, gw
        gb = g if g.ndim == 1 else g.sum(axis=0)
        return gx, gw, gb

    inputs = (x, w) if b is None else (x, w, b)
    return _record("affine", inputs, out, bwd)


# ---------------------------------------------------------------------------
# elementwise


def _binary_operands(op: str, a, b):
    a_is, b_is = isinstance(a, Tensor), isinstance(b, Tensor)
    if a_is and b_is:
        if a.shape != b.shape:
            raise ShapeError(f"{op}: shapes differ: {a.shape} and {b.shape}")
        return a, b
    if a_is and isinstance(b, Real):
        return a, float(b)
    if b_is and isinstance(a, Real):
        return b, float(a)
    raise ShapeError(f"{op}: unsupported operands {type(a).__name__} and {type(b).__name__}")


def add(a, b) -> Tensor:
    a, b = _binary_operands("add", a, b)
    if isinstance(b, float):
        return _record("add", (a,), a.data + b, lambda g: (g,))
    return _record("add", (a, b), a.data + b.data, lambda g: (g, g))


def sub(a, b) -> Tensor:
    if isinstance(a, Tensor) and isinstance(b, Tensor):
        a, b = _binary_operands("sub", a, b)
        return _record("sub", (a, b), a.data - b.data, lambda g: (g, -g))
    if isinstance(a, Tensor):
        return add(a, -float(b))
    return add(mul(b, -1.0), a)


def mul(a, b) -> Tensor:
    a, b = _binary_operands("mul", a, b)
    if isinstance(b, float):
        k = b
        return _record("mul", (a,), a.data * k, lambda g: (g * k,))
    ad, bd = a.data, b.data
    return _record("mul", (a, b), ad * bd, lambda g: (g * bd, g * ad))


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return _record("tanh", (x,), y, lambda g: (g * (1.0 - y * y),))


def sigmoid(x: Tensor) -> Tensor:
    # tanh form never overflows
    y = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return _record("sigmoid", (x,), y, lambda g: (g * y * (1.0 - y),))


def relu(x: Tensor) -> Tensor:
    """max(x, 0); the derivative at exactly 0 is taken to be 0."""
    mask = x.data > 0.0
    return _record("relu", (x,), np.where(mask, x.data, 0.0), lambda g: (g * mask,))


def exp(x: Tensor) -> Tensor:
    y = np.exp(x.data)
    return _record("exp", (x,), y, lambda g: (g * y,))


def identity(x: Tensor) -> Tensor:
    return x


ELEMENTWISE: dict[str, Callable] = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "tanh": tanh,
    "sigmoid": sigmoid,
    "relu": relu,
    "exp": exp,
}


def elementwise(op: str, *args) -> Tensor:
    try:
        fn = ELEMENTWISE[op]
    except KeyError:
        raise ContractError(f"unknown elementwise op {op!r}") from None
    return fn(*args)


# ---------------------------------------------------------------------------
# reductions and structure


def softmax(v: Tensor) -> Tensor:
    """Softmax along the last axis, shifted by the row maximum."""
    z = v.data - v.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=-1, keepdims=True)

    def bwd(g):
        return (s * (g - (g * s).sum(axis=-1, keepdims=True)),)

    return _record("softmax", (v,), s, bwd)


def concat(*tensors: Tensor) -> Tensor:
    """Join along the last axis; rank-2 inputs are joined row by row."""
    if not tensors:
        raise ContractError("concat needs at least one tensor")
    ranks = {t.data.ndim for t in tensors}
    lead = {t.shape[:-1] for t in tensors}
    if len(ranks) != 1 or len(lead) != 1:
        raise ShapeError(f"concat: incompatible shapes {[t.shape for t in tensors]}")
    widths = [t.shape[-1] for t in tensors]
    cuts = np.cumsum(widths)[:-1]
    out = np.concatenate([t.data for t in tensors], axis=-1)
    return _record("concat", tuple(tensors), out, lambda g: np.split(g, cuts, axis=-1))


def slice_last(x: Tensor, start: int, stop: int) -> Tensor:
    """``x[..., start:stop]``."""
    width = x.shape[-1]
    if not 0 <= start < stop <= width:
        raise ContractError(f"slice [{start}:{stop}] out of range for last extent {width}")

    def bwd(g):
        full = np.zeros_like(x.data)
        full[..., start:stop] = g
        return (full,)

    return _record("slice", (x,), x.data[..., start:stop], bwd)


def weighted_sum(weights: Tensor, items: Sequence[Tensor]) -> Tensor:
    """``sum_k weights[..., k] * items[k]``.

    ``weights`` is (K,) or (B, K); every item is (m,) or (B, m) respectively.
    This is the attention context-vector primitive.
    """
    k = weights.shape[-1]
    if len(items) != k:
        raise ShapeError(f"weighted_sum: {k} weights for {len(items)} items")
    shape = items[0].shape
    if any(it.shape != shape for it in items) or shape[:-1] != weights.shape[:-1]:
        raise ShapeError(
            f"weighted_sum: weights {weights.shape} vs items {[it.shape for it in items]}"
        )
    w = weights.data
    stack = np.stack([it.data for it in items], axis=-2)  # (..., K, m)
    out = (w[..., :, None] * stack).sum(axis=-2)

    def bwd(g):
        gw = (stack * g[..., None, :]).sum(axis=-1)
        gi = w[..., :, None] * g[..., None, :]
        return (gw, *(gi[..., j, :] for j in range(k)))

    return _record("weighted_sum", (weights, *items), out, bwd)


def align_scores(query: Tensor, keys: Sequence[Tensor], w: Tensor, b: Tensor) -> Tensor:
    """Additive alignment energies before activation.

    Entry k is ``w @ [query; keys[k]] + b`` with ``w`` of shape ``(1, p + m)``
    and ``b`` of shape ``(1,)``: the same single-output dense layer applied to
    each query/key concatenation, evaluated in one step.  Output is ``(K,)``
    or ``(B, K)``.
    """
    p = query.shape[-1]
    m = keys[0].shape[-1]
    if w.shape != (1, p + m) or b.shape != (1,):
        raise ShapeError(f"align_scores: weight {w.shape}/bias {b.shape} for query {p} + key {m}")
    if any(k.shape != keys[0].shape for k in keys) or keys[0].shape[:-1] != query.shape[:-1]:
        raise ShapeError(
            f"align_scores: query {query.shape} vs keys {[k.shape for k in keys]}"
        )
    wq, wk = w.data[0, :p], w.data[0, p:]
    qd = query.data
    stack = np.stack([k.data for k in keys], axis=-2)  # (..., K, m)
    out = (stack @ wk) + (qd @ wq)[..., None] + b.data[0]
    nk = len(keys)

    def bwd(g):
        gsum = g.sum(axis=-1)
        gq = gsum[..., None] * wq
        gk = g[..., :, None] * wk
        if qd.ndim == 1:
            gw_q = gsum * qd
            gw_k = g @ stack
        else:
            gw_q = gsum @ qd
            gw_k = np.einsum("bk,bkm->m", g, stack)
        gw = np.concatenate([gw_q, gw_k])[None, :]
        gb = np.array([g.sum()])
        return (gq, *(gk[..., j, :] for j in range(nk)), gw, gb)

    return _record("align_scores", (query, *keys, w, b), out, bwd)


def tsum(x: Tensor) -> Tensor:
    """Sum of all entries, as a one-element tensor."""
    shape = x.data.shape
    return _record("sum", (x,), np.array([x.data.sum()]), lambda g: (np.full(shape, g[0]),))


def mean(x: Tensor) -> Tensor:
    n = x.size
    shape = x.data.shape
    return _record(
        "mean", (x,), np.array([x.data.sum() / n]), lambda g: (np.full(shape, g[0] / n),)
    )


# ---------------------------------------------------------------------------
# gradient checking


@dataclass
class GradCheckReport:
    errors: dict[str, float] = field(default_factory=dict)
    tol: float = 1e-4
    diagnostic: str | None = None

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return self.diagnostic is None and self.max_error <= self.tol

    def __str__(self) -> str:
        if self.diagnostic:
            return f"grad check FAILED: {self.diagnostic}"
        worst = max(self.errors, key=self.errors.get, default="-")
        verdict = "passed" if self.passed else "FAILED"
        return f"grad check {verdict}: max rel err {self.max_error:.3e} ({worst}), tol {self.tol:g}"


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> np.ndarray:
    """|a - n| / max(|a|, |n|, floor), elementwise."""
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / scale


def grad_check(
    f: Callable[[], Tensor],
    params: Mapping[str, Tensor] | Sequence[Tensor],
    h: float = 1e-5,
    tol: float = 1e-4,
    floor: float = 1e-6,
) -> GradCheckReport:
    """Compare analytic gradients of ``f()`` with central differences.

    ``f`` rebuilds the computation from scratch on each call and returns a
    scalar tensor; it must be deterministic.  Every entry of every parameter
    is perturbed, so keep dimensions small.
    """
    if not h > 0:
        raise ContractError(f"step h must be positive, got {h}")
    named = dict(params) if isinstance(params, Mapping) else {
        p.name or f"param{i}": p for i, p in enumerate(params)
    }
    report = GradCheckReport(tol=tol)
    zero_grad(named.values())
    with Graph() as g:
        loss = f()
    if loss.size != 1:
        raise ContractError(f"grad_check: f must return a scalar, got shape {loss.shape}")
    if not math.isfinite(loss.item()):
        report.diagnostic = f"loss is not finite ({loss.item()})"
        return report
    g.backward(loss)

    for name, p in named.items():
        analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
        numeric = np.empty_like(p.data)
        flat = p.data.reshape(-1)
        nflat = numeric.reshape(-1)
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + h
            up = f().item()
            flat[idx] = orig - h
            down = f().item()
            flat[idx] = orig
            if not (math.isfinite(up) and math.isfinite(down)):
                report.diagnostic = f"loss not finite while perturbing {name}[{idx}]"
                return report
            nflat[idx] = (up - down) / (2.0 * h)
        report.errors[name] = float(relative_error(analytic, numeric, floor).max())
    zero_grad(named.values())
    return report
