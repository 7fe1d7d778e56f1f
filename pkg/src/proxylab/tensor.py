"""Dense float64 tensors with reverse-mode automatic differentiation.

A Tensor wraps a numpy array together with the bookkeeping needed to
backpropagate through the op that produced it: the parent tensors and a
closure that maps the output gradient to parent gradients. Graphs are
built eagerly by the op functions and walked once, in reverse topological
order, by backward().

Matrix products are routed through np.einsum instead of the @ operator.
BLAS picks different kernels for different batch sizes, so row k of
A @ B is not always bit-identical to A[k:k+1] @ B; einsum uses one
reduction order regardless of shape, which keeps forward passes
bit-reproducible when batches are split or subsetted.

All data is float64. Scalars are represented as shape (1,) tensors.
"""

from __future__ import annotations

import itertools
import logging
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ContractError, DomainError, ShapeError

logger = logging.getLogger(__name__)

_uid_counter = itertools.count()

OP_KINDS = (
    "matmul",
    "add",
    "sub",
    "mul_elementwise",
    "scale",
    "neg",
    "relu",
    "tanh",
    "exp",
    "log",
    "sum",
    "mean",
    "softmax_rows",
    "log_softmax_rows",
    "l2_normalize_rows",
    "clamp",
)


def _as_f64(data) -> np.ndarray:
    arr = np.array(data, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if arr.size == 0:
        raise ShapeError("tensors must have at least one element")
    return np.ascontiguousarray(arr)


def _check_finite(op: str, data: np.ndarray) -> None:
    if not np.isfinite(data).all():
        raise DomainError(f"op '{op}' produced non-finite values")


class Tensor:
    """A float64 array plus the graph edge that produced it.

    grad is populated by backward(); it is None until then and is
    overwritten (not accumulated) by each backward call.
    """

    __slots__ = ("data", "grad", "op", "parents", "uid", "_vjp")

    def __init__(self, data):
        self.data = _as_f64(data)
        _check_finite("leaf", self.data)
        self.grad: np.ndarray | None = None
        self.op = "leaf"
        self.parents: tuple[Tensor, ...] = ()
        self.uid = next(_uid_counter)
        self._vjp: Callable[[np.ndarray], tuple[np.ndarray, ...]] | None = None

    @classmethod
    def _from_op(cls, data: np.ndarray, op: str, parents: Sequence["Tensor"],
                 vjp: Callable[[np.ndarray], tuple[np.ndarray, ...]]) -> "Tensor":
        out = cls.__new__(cls)
        out.data = np.ascontiguousarray(data)
        _check_finite(op, out.data)
        out.grad = None
        out.op = op
        out.parents = tuple(parents)
        out.uid = next(_uid_counter)
        out._vjp = vjp
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.size != 1:
            raise ContractError(f"item() requires a scalar tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def __float__(self) -> float:
        return self.item()

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op!r})"

    # operator sugar; the named module-level functions do the real work
    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        return sub(self, other)

    def __mul__(self, other: "Tensor") -> "Tensor":
        return mul(self, other)

    def __neg__(self) -> "Tensor":
        return neg(self)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    def matmul(self, other: "Tensor", transpose_b: bool = False) -> "Tensor":
        return matmul(self, other, transpose_b=transpose_b)

    def scale(self, factor: float) -> "Tensor":
        return scale(self, factor)

    def relu(self) -> "Tensor":
        return relu(self)

    def tanh(self) -> "Tensor":
        return tanh(self)

    def exp(self) -> "Tensor":
        return exp(self)

    def log(self) -> "Tensor":
        return log(self)

    def sum(self) -> "Tensor":
        return tsum(self)

    def mean(self) -> "Tensor":
        return tmean(self)

    def softmax_rows(self) -> "Tensor":
        return softmax_rows(self)

    def log_softmax_rows(self) -> "Tensor":
        return log_softmax_rows(self)

    def l2_normalize_rows(self) -> "Tensor":
        return l2_normalize_rows(self)

    def clamp(self, lo: float, hi: float) -> "Tensor":
        return clamp(self, lo, hi)


def _require_tensor(x, op: str) -> Tensor:
    if not isinstance(x, Tensor):
        raise ContractError(f"op '{op}' expects Tensor inputs, got {type(x).__name__}")
    return x


def matmul(a: Tensor, b: Tensor, transpose_b: bool = False) -> Tensor:
    _require_tensor(a, "matmul")
    _require_tensor(b, "matmul")
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(f"matmul requires 2-d operands, got {a.shape} and {b.shape}")
    inner_b = b.shape[1] if transpose_b else b.shape[0]
    if a.shape[1] != inner_b:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} vs {b.shape}"
                         f" (transpose_b={transpose_b})")
    if transpose_b:
        out = np.einsum("ij,kj->ik", a.data, b.data)
    else:
        out = np.einsum("ij,jk->ik", a.data, b.data)
    a_data, b_data = a.data, b.data

    def vjp(g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        if transpose_b:
            ga = np.einsum("mn,nk->mk", g, b_data)
            gb = np.einsum("mn,mk->nk", g, a_data)
        else:
            ga = np.einsum("mn,kn->mk", g, b_data)
            gb = np.einsum("mk,mn->kn", a_data, g)
        return ga, gb

    return Tensor._from_op(out, "matmul", (a, b), vjp)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; also accepts a (batch, n) + (n,) bias as second arg."""
    _require_tensor(a, "add")
    _require_tensor(b, "add")
    if a.shape == b.shape:
        broadcast = False
    elif a.data.ndim == 2 and b.data.ndim == 1 and a.shape[1] == b.shape[0]:
        broadcast = True
    else:
        raise ShapeError(f"add requires equal shapes or (m,n)+(n,), got {a.shape} and {b.shape}")
    out = a.data + b.data

    def vjp(g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        gb = g.sum(axis=0) if broadcast else g
        return g, gb

    return Tensor._from_op(out, "add", (a, b), vjp)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _require_tensor(a, "sub")
    _require_tensor(b, "sub")
    if a.shape != b.shape:
        raise ShapeError(f"sub requires equal shapes, got {a.shape} and {b.shape}")
    out = a.data - b.data

    def vjp(g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return g, -g

    return Tensor._from_op(out, "sub", (a, b), vjp)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _require_tensor(a, "mul")
    _require_tensor(b, "mul")
    if a.shape != b.shape:
        raise ShapeError(f"mul requires equal shapes, got {a.shape} and {b.shape}")
    out = a.data * b.data
    a_data, b_data = a.data, b.data

    def vjp(g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return g * b_data, g * a_data

    return Tensor._from_op(out, "mul_elementwise", (a, b), vjp)


def scale(a: Tensor, factor: float) -> Tensor:
    _require_tensor(a, "scale")
    factor = float(factor)
    if not np.isfinite(factor):
        raise DomainError("scale factor must be finite")
    out = a.data * factor

    def vjp(g: np.ndarray) -> tuple[np.ndarray]:
        return (g * factor,)

    return Tensor._from_op(out, "scale", (a,), vjp)


def neg(a: Tensor) -> Tensor:
    _require_tensor(a, "neg")

    def vjp(g: np.ndarray) -> tuple[np.ndarray]:
        return (-g,)

    return Tensor._from_op(-a.data, "neg", (a,), vjp)


def relu(a: Tensor) -> Tensor:
    _require_tensor(a, "relu")
    # subgradient at 0 is taken as 0
    mask = a.data > 0

    def vjp(g: np.ndarray) -> tuple[np.ndarray]:
        return (g * mask,)

    return Tensor._from_op(np.where(mask, a.data, 0.0), "relu", (a,), vjp)


def tanh(a: Tensor) -> Tensor:
    _require_tensor(a, "tanh")
    t = np.tanh(a.data)

    def vjp(g: np.ndarray) -> tuple[np.ndarray]:
        return (g * (1.0 - t * t),)

    return Tensor._from_op(t, "tanh", (a,), vjp)


def exp(a: Tensor) -> Tensor:
    _require_tensor(a, "exp")
    with np.errstate(over="ignore"):
        out = np.exp(a.data)
    if not np.isfinite(out).all():
        raise DomainError("exp overflowed to non-finite values")

    def vjp(g: np.ndarray) -> tuple[np.ndarray]:
        return (g * out,)

    return Tensor._from_op(out, "exp", (a,), vjp)


def log(a: Tensor) -> Tensor:
    _require_tensor(a, "log")
    if not (a.data > 0).all():
        raise DomainError("log requires strictly positive inputs")
    out = np.log(a.data)
    a_data = a.data

    def vjp(g: np.ndarray) -> tuple[np.ndarray]:
        return (g / a_data,)

    return Tensor._from_op(out, "log", (a,), vjp)


def tsum(a: Tensor) -> Tensor:
    _require_tensor(a, "sum")
    out = np.array([a.data.sum()])
    shape = a.data.shape

    def vjp(g: np.ndarray) -> tuple[np.ndarray]:
        return (np.full(shape, g.reshape(-1)[0]),)

    return Tensor._from_op(out, "sum", (a,), vjp)


def tmean(a: Tensor) -> Tensor:
    _require_tensor(a, "mean")
    out = np.array([a.data.mean()])
    shape = a.data.shape
    n = a.data.size

    def vjp(g: np.ndarray) -> tuple[np.ndarray]:
        return (np.full(shape, g.reshape(-1)[0] / n),)

    return Tensor._from_op(out, "mean", (a,), vjp)


def _rows_view(data: np.ndarray, op: str) -> np.ndarray:
    if data.ndim == 1:
        return data.reshape(1, -1)
    if data.ndim == 2:
        return data
    raise ShapeError(f"{op} requires a 1-d or 2-d tensor, got shape {data.shape}")


def softmax_rows(a: Tensor) -> Tensor:
    _require_tensor(a, "softmax_rows")
    z = _rows_view(a.data, "softmax_rows")
    shifted = z - z.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    p = e / e.sum(axis=1, keepdims=True)
    out = p.reshape(a.data.shape)

    def vjp(g: np.ndarray) -> tuple[np.ndarray]:
        g2 = g.reshape(p.shape)
        inner = (g2 * p).sum(axis=1, keepdims=True)
        return ((p * (g2 - inner)).reshape(a.data.shape),)

    return Tensor._from_op(out, "softmax_rows", (a,), vjp)


def log_softmax_rows(a: Tensor) -> Tensor:
    _require_tensor(a, "log_softmax_rows")
    z = _rows_view(a.data, "log_softmax_rows")
    shifted = z - z.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    out = (shifted - lse).reshape(a.data.shape)
    p = np.exp(shifted - lse)

    def vjp(g: np.ndarray) -> tuple[np.ndarray]:
        g2 = g.reshape(p.shape)
        return ((g2 - p * g2.sum(axis=1, keepdims=True)).reshape(a.data.shape),)

    return Tensor._from_op(out, "log_softmax_rows", (a,), vjp)


def l2_normalize_rows(a: Tensor) -> Tensor:
    _require_tensor(a, "l2_normalize_rows")
    z = _rows_view(a.data, "l2_normalize_rows")
    norms = np.sqrt((z * z).sum(axis=1, keepdims=True))
    zero = norms.reshape(-1) == 0.0
    if zero.any():
        logger.warning("l2_normalize_rows: %d all-zero row(s) left as zeros", int(zero.sum()))
    safe = np.where(norms == 0.0, 1.0, norms)
    y = z / safe
    out = y.reshape(a.data.shape)

    def vjp(g: np.ndarray) -> tuple[np.ndarray]:
        g2 = g.reshape(y.shape)
        proj = (g2 * y).sum(axis=1, keepdims=True)
        gx = (g2 - proj * y) / safe
        gx[zero] = 0.0
        return (gx.reshape(a.data.shape),)

    return Tensor._from_op(out, "l2_normalize_rows", (a,), vjp)


def clamp(a: Tensor, lo: float, hi: float) -> Tensor:
    _require_tensor(a, "clamp")
    lo, hi = float(lo), float(hi)
    if not (np.isfinite(lo) and np.isfinite(hi)) or lo > hi:
        raise ContractError(f"clamp bounds must be finite with lo <= hi, got [{lo}, {hi}]")
    # gradient passes through at the boundary values themselves
    mask = (a.data >= lo) & (a.data <= hi)

    def vjp(g: np.ndarray) -> tuple[np.ndarray]:
        return (g * mask,)

    return Tensor._from_op(np.clip(a.data, lo, hi), "clamp", (a,), vjp)


_DISPATCH = {
    "matmul": matmul,
    "add": add,
    "sub": sub,
    "mul_elementwise": mul,
    "scale": scale,
    "neg": neg,
    "relu": relu,
    "tanh": tanh,
    "exp": exp,
    "log": log,
    "sum": tsum,
    "mean": tmean,
    "softmax_rows": softmax_rows,
    "log_softmax_rows": log_softmax_rows,
    "l2_normalize_rows": l2_normalize_rows,
    "clamp": clamp,
}

_ARITY = {k: 2 for k in ("matmul", "add", "sub", "mul_elementwise")}
_ARITY.update({k: 1 for k in OP_KINDS if k not in _ARITY})


def apply(op_kind: str, inputs: Sequence[Tensor], **params) -> Tensor:
    """Uniform dispatch: apply('relu', [t]) == relu(t)."""
    if op_kind not in _DISPATCH:
        raise ContractError(f"unknown op kind '{op_kind}'")
    inputs = list(inputs)
    if len(inputs) != _ARITY[op_kind]:
        raise ContractError(f"op '{op_kind}' takes {_ARITY[op_kind]} input(s), got {len(inputs)}")
    return _DISPATCH[op_kind](*inputs, **params)


class ComputeGraph:
    """Tensors reachable from a root, ordered so parents precede children."""

    def __init__(self, nodes: list[Tensor], root: Tensor):
        self.nodes = nodes
        self.root = root

    @classmethod
    def from_root(cls, root: Tensor) -> "ComputeGraph":
        _require_tensor(root, "from_root")
        order: list[Tensor] = []
        visited: set[int] = set()
        # iterative post-order; recursion would overflow on deep chains
        stack: list[tuple[Tensor, bool]] = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if node.uid in visited:
                continue
            visited.add(node.uid)
            stack.append((node, True))
            for parent in node.parents:
                if parent.uid not in visited:
                    stack.append((parent, False))
        return cls(order, root)

    def __len__(self) -> int:
        return len(self.nodes)


def backward(root: Tensor) -> dict[int, np.ndarray]:
    """Reverse-mode sweep from a scalar root.

    Sets .grad on every tensor in the graph (overwriting any previous
    value) and returns a uid -> gradient mapping. Leaves not reachable
    from the root simply stay out of the mapping.
    """
    _require_tensor(root, "backward")
    if root.size != 1:
        raise ContractError(f"backward requires a scalar root, got shape {root.shape}")
    graph = ComputeGraph.from_root(root)
    grads: dict[int, np.ndarray] = {root.uid: np.ones_like(root.data)}
    for node in reversed(graph.nodes):
        g = grads.get(node.uid)
        if g is None or node._vjp is None:
            continue
        parent_grads = node._vjp(g)
        if len(parent_grads) != len(node.parents):
            raise ContractError(f"op '{node.op}' returned {len(parent_grads)} gradients "
                                f"for {len(node.parents)} parents")
        for parent, pg in zip(node.parents, parent_grads):
            if pg.shape != parent.shape:
                raise ShapeError(f"gradient shape {pg.shape} does not match parent "
                                 f"shape {parent.shape} in op '{node.op}'")
            prev = grads.get(parent.uid)
            # allocate on accumulation: stored arrays may alias vjp outputs
            grads[parent.uid] = pg if prev is None else prev + pg
    for node in graph.nodes:
        node.grad = grads.get(node.uid)
    return grads


def grad_check(loss_fn: Callable[[Tensor], Tensor], point: np.ndarray,
               h: float = 1e-5) -> float:
    """Max relative error between backward() and central differences.

    loss_fn must map a leaf tensor to a scalar tensor. Relative error per
    coordinate is |analytic - numeric| / max(1, |numeric|).
    """
    h = float(h)
    if h <= 0:
        raise ContractError("grad_check step h must be positive")
    x0 = _as_f64(point)
    leaf = Tensor(x0)
    out = loss_fn(leaf)
    _require_tensor(out, "grad_check")
    if out.size != 1:
        raise ContractError(f"loss_fn must return a scalar, got shape {out.shape}")
    backward(out)
    analytic = leaf.grad if leaf.grad is not None else np.zeros_like(x0)

    worst = 0.0
    flat = x0.reshape(-1)
    for i in range(flat.size):
        bump = np.zeros_like(flat)
        bump[i] = h
        fp = float(loss_fn(Tensor((flat + bump).reshape(x0.shape))))
        fm = float(loss_fn(Tensor((flat - bump).reshape(x0.shape))))
        numeric = (fp - fm) / (2.0 * h)
        err = abs(analytic.reshape(-1)[i] - numeric) / max(1.0, abs(numeric))
        worst = max(worst, err)
    return worst
