"""Dense float64 arrays with reverse-mode differentiation.

Defines the `Value` node (data + gradient accumulator + backward closure),
the primitive ops used across the model, an Adam optimizer, and a central
finite-difference gradient checker. Graphs are define-by-run: each op
computes its result eagerly and, when any input requires gradients, records
a closure that routes the output gradient to its parents.

Shape discipline is deliberately strict (rank <= 3, same-shape elementwise
ops). The only sanctioned broadcasts are a size-1 operand against any shape
and adding a bias row vector to a matrix. Anything else raises ShapeError.
"""

from __future__ import annotations

import math
from contextlib import contextmanager

import numpy as np

__all__ = [
    "Value",
    "ShapeError",
    "no_grad",
    "forward_eval",
    "backward_grad",
    "add",
    "sub",
    "neg",
    "mul",
    "matmul",
    "tanh",
    "sigmoid",
    "relu",
    "exp",
    "log",
    "softmax",
    "logsumexp",
    "log_softmax",
    "vsum",
    "vmean",
    "concat",
    "narrow",
    "flatten",
    "clip",
    "dot",
    "AdamState",
    "adam_step",
    "zero_grad",
    "clip_global_norm",
    "GradCheckReport",
    "grad_check",
    "uniform_init",
]

_MAX_RANK = 3


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible for an op."""


_grad_enabled = True


@contextmanager
def no_grad():
    """Skip graph construction inside the block (inference fast path)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def _as_array(data) -> np.ndarray:
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim > _MAX_RANK:
        raise ShapeError(f"rank {arr.ndim} exceeds maximum rank {_MAX_RANK}")
    return arr


class Value:
    """One node of the computation graph.

    `data` is a float64 ndarray (rank <= 3); `grad` is a same-shape
    accumulator, lazily allocated on the first backward contribution.
    Leaf nodes created with requires_grad=True are the learnable
    parameters; everything else inherits requires_grad from its parents.
    """

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, name=None, _parents=(), _backward=None):
        self.data = _as_array(data)
        self.grad = None
        if _grad_enabled:
            self.requires_grad = bool(requires_grad) or any(p.requires_grad for p in _parents)
        else:
            self.requires_grad = False if _parents else bool(requires_grad)
        self.name = name
        self._parents = _parents if self.requires_grad else ()
        self._backward = _backward if self.requires_grad else None

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() on non-scalar value of shape {self.data.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Value":
        """Same data, cut from the graph (no gradient flows through)."""
        return Value(self.data)

    def accumulate(self, g: np.ndarray):
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g

    def backward(self):
        backward_grad(self)

    # operator sugar; Python numbers become constant operands
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __neg__(self):
        return neg(self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Value(shape={self.data.shape}{tag}, requires_grad={self.requires_grad})"


def _coerce(x) -> Value:
    if isinstance(x, Value):
        return x
    return Value(np.asarray(x, dtype=np.float64))


def forward_eval(graph_root: Value) -> np.ndarray:
    """Data of the root. Forward results are computed eagerly at op
    creation, so this is a read; it exists to make the evaluation
    contract explicit."""
    return graph_root.data


def _topo_order(root: Value):
    order = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in visited:
                stack.append((parent, False))
    return order


def backward_grad(root: Value):
    """Reverse-mode sweep from a scalar root.

    Each node is visited exactly once in reverse topological order;
    gradients accumulate additively across multiple uses of a node.
    """
    if root.data.size != 1:
        raise ShapeError(f"backward requires a scalar root, got shape {root.data.shape}")
    if not root.requires_grad:
        return
    root.accumulate(np.ones_like(root.data))
    for node in reversed(_topo_order(root)):
        if node._backward is not None:
            node._backward(node.grad)


def make_op(out_data, parents, backward, name=None) -> Value:
    """Assemble an op node; the backward closure receives the output
    gradient and must push contributions into `parents` itself."""
    return Value(out_data, name=name, _parents=tuple(parents), _backward=backward)


# ---------------------------------------------------------------------------
# elementwise / broadcast helpers

def _reduce_to(g: np.ndarray, shape) -> np.ndarray:
    """Sum a gradient down to `shape` (undoes the sanctioned broadcasts)."""
    if g.shape == tuple(shape):
        return g
    target = np.empty(shape)
    if target.size == 1:
        return np.sum(g).reshape(shape)
    if g.ndim == 2 and len(shape) == 1 and g.shape[1] == shape[0]:
        return g.sum(axis=0)
    raise ShapeError(f"cannot reduce gradient {g.shape} to {shape}")


def _broadcast_ok(a: np.ndarray, b: np.ndarray, op: str):
    if a.shape == b.shape:
        return
    if a.size == 1 or b.size == 1:
        return
    # bias-row addition: (m, n) + (n,)
    if op == "add" and a.ndim == 2 and b.ndim == 1 and a.shape[1] == b.shape[0]:
        return
    raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}")


def add(a, b) -> Value:
    a, b = _coerce(a), _coerce(b)
    _broadcast_ok(a.data, b.data, "add")
    out_data = a.data + b.data

    def backward(g):
        if a.requires_grad:
            a.accumulate(_reduce_to(g, a.data.shape))
        if b.requires_grad:
            b.accumulate(_reduce_to(g, b.data.shape))

    return make_op(out_data, (a, b), backward, name="add")


def sub(a, b) -> Value:
    a, b = _coerce(a), _coerce(b)
    _broadcast_ok(a.data, b.data, "sub")
    out_data = a.data - b.data

    def backward(g):
        if a.requires_grad:
            a.accumulate(_reduce_to(g, a.data.shape))
        if b.requires_grad:
            b.accumulate(_reduce_to(-g, b.data.shape))

    return make_op(out_data, (a, b), backward, name="sub")


def neg(a) -> Value:
    a = _coerce(a)

    def backward(g):
        a.accumulate(-g)

    return make_op(-a.data, (a,), backward, name="neg")


def mul(a, b) -> Value:
    a, b = _coerce(a), _coerce(b)
    _broadcast_ok(a.data, b.data, "mul")
    out_data = a.data * b.data

    def backward(g):
        if a.requires_grad:
            a.accumulate(_reduce_to(g * b.data, a.data.shape))
        if b.requires_grad:
            b.accumulate(_reduce_to(g * a.data, b.data.shape))

    return make_op(out_data, (a, b), backward, name="mul")


def matmul(a, b) -> Value:
    a, b = _coerce(a), _coerce(b)
    if a.data.ndim != 2 or b.data.ndim not in (1, 2):
        raise ShapeError(f"matmul: unsupported ranks {a.data.shape} @ {b.data.shape}")
    if a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.data.shape} @ {b.data.shape}")
    out_data = a.data @ b.data

    def backward(g):
        if b.data.ndim == 1:
            if a.requires_grad:
                a.accumulate(np.outer(g, b.data))
            if b.requires_grad:
                b.accumulate(a.data.T @ g)
        else:
            if a.requires_grad:
                a.accumulate(g @ b.data.T)
            if b.requires_grad:
                b.accumulate(a.data.T @ g)

    return make_op(out_data, (a, b), backward, name="matmul")


def _unary(a, out_data, dfn, name) -> Value:
    def backward(g):
        a.accumulate(g * dfn())

    return make_op(out_data, (a,), backward, name=name)


def tanh(a) -> Value:
    a = _coerce(a)
    y = np.tanh(a.data)
    return _unary(a, y, lambda: 1.0 - y * y, "tanh")


def sigmoid(a) -> Value:
    a = _coerce(a)
    y = 1.0 / (1.0 + np.exp(-a.data))
    return _unary(a, y, lambda: y * (1.0 - y), "sigmoid")


def relu(a) -> Value:
    a = _coerce(a)
    y = np.maximum(a.data, 0.0)
    return _unary(a, y, lambda: (a.data > 0.0).astype(np.float64), "relu")


def exp(a) -> Value:
    a = _coerce(a)
    y = np.exp(a.data)
    return _unary(a, y, lambda: y, "exp")


def log(a) -> Value:
    a = _coerce(a)
    y = np.log(a.data)
    return _unary(a, y, lambda: 1.0 / a.data, "log")


def clip(a, lo: float, hi: float) -> Value:
    """Clamp to [lo, hi]; gradient passes only where unclamped."""
    a = _coerce(a)
    y = np.clip(a.data, lo, hi)
    inside = ((a.data > lo) & (a.data < hi)).astype(np.float64)
    return _unary(a, y, lambda: inside, "clip")


def softmax(a) -> Value:
    a = _coerce(a)
    if a.data.ndim != 1:
        raise ShapeError(f"softmax expects a vector, got shape {a.data.shape}")
    shifted = a.data - a.data.max()
    e = np.exp(shifted)
    y = e / e.sum()

    def backward(g):
        a.accumulate(y * (g - np.dot(g, y)))

    return make_op(y, (a,), backward, name="softmax")


def logsumexp(a) -> Value:
    a = _coerce(a)
    if a.data.ndim != 1:
        raise ShapeError(f"logsumexp expects a vector, got shape {a.data.shape}")
    m = a.data.max()
    e = np.exp(a.data - m)
    s = e.sum()
    out = np.asarray(m + np.log(s))

    def backward(g):
        a.accumulate(float(g) * (e / s))

    return make_op(out, (a,), backward, name="logsumexp")


def log_softmax(a) -> Value:
    return sub(a, logsumexp(a))


def vsum(a) -> Value:
    a = _coerce(a)

    def backward(g):
        a.accumulate(np.full(a.data.shape, float(g)))

    return make_op(np.asarray(a.data.sum()), (a,), backward, name="sum")


def vmean(a) -> Value:
    a = _coerce(a)
    n = a.data.size

    def backward(g):
        a.accumulate(np.full(a.data.shape, float(g) / n))

    return make_op(np.asarray(a.data.mean()), (a,), backward, name="mean")


def dot(a, b) -> Value:
    return vsum(mul(a, b))


def concat(values) -> Value:
    """Concatenate vectors (scalars are treated as 1-element vectors)."""
    vals = [_coerce(v) for v in values]
    parts = [v.data.reshape(-1) if v.data.ndim == 0 else v.data for v in vals]
    for v, p in zip(vals, parts):
        if p.ndim != 1:
            raise ShapeError(f"concat expects vectors, got shape {v.data.shape}")
    out_data = np.concatenate(parts)
    offsets = np.cumsum([0] + [p.shape[0] for p in parts])

    def backward(g):
        for v, lo, hi in zip(vals, offsets[:-1], offsets[1:]):
            if v.requires_grad:
                v.accumulate(g[lo:hi].reshape(v.data.shape))

    return make_op(out_data, vals, backward, name="concat")


def narrow(a, start: int, stop: int) -> Value:
    """Contiguous slice [start:stop) of a vector."""
    a = _coerce(a)
    if a.data.ndim != 1:
        raise ShapeError(f"narrow expects a vector, got shape {a.data.shape}")
    if not (0 <= start <= stop <= a.data.shape[0]):
        raise ShapeError(f"narrow [{start}:{stop}) out of bounds for length {a.data.shape[0]}")
    out_data = a.data[start:stop].copy()

    def backward(g):
        full = np.zeros_like(a.data)
        full[start:stop] = g
        a.accumulate(full)

    return make_op(out_data, (a,), backward, name="narrow")


def flatten(a) -> Value:
    a = _coerce(a)
    shape = a.data.shape

    def backward(g):
        a.accumulate(g.reshape(shape))

    return make_op(a.data.reshape(-1).copy(), (a,), backward, name="flatten")


# ---------------------------------------------------------------------------
# optimizer

class AdamState:
    """Adam moments keyed by parameter name (bias-corrected updates)."""

    def __init__(self, params: dict, learning_rate=0.002, beta1=0.9, beta2=0.999, epsilon=1e-8):
        self.learning_rate = float(learning_rate)
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.step_count = 0
        self.first_moment = {k: np.zeros_like(v.data) for k, v in params.items()}
        self.second_moment = {k: np.zeros_like(v.data) for k, v in params.items()}


def adam_step(params: dict, state: AdamState):
    """One Adam update over `params` (name -> Value); zeroes grads after.

    Every registered parameter must carry a gradient (zero_grad before
    backward guarantees this); a missing one means the graph was never
    run and is reported as an error.
    """
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** t
    bc2 = 1.0 - b2 ** t
    for name, p in params.items():
        if p.grad is None:
            raise ValueError(f"parameter {name!r} has no gradient; run backward first")
        m = state.first_moment[name]
        v = state.second_moment[name]
        m *= b1
        m += (1.0 - b1) * p.grad
        v *= b2
        v += (1.0 - b2) * p.grad * p.grad
        p.data -= state.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + state.epsilon)
        p.grad = np.zeros_like(p.data)


def zero_grad(params):
    vals = params.values() if isinstance(params, dict) else params
    for p in vals:
        p.grad = np.zeros_like(p.data)


def clip_global_norm(params, max_norm: float) -> float:
    """Scale all gradients so their global L2 norm is at most max_norm."""
    vals = list(params.values()) if isinstance(params, dict) else list(params)
    total = 0.0
    for p in vals:
        if p.grad is not None:
            total += float(np.sum(p.grad * p.grad))
    norm = math.sqrt(total)
    if norm > max_norm > 0:
        scale = max_norm / norm
        for p in vals:
            if p.grad is not None:
                p.grad *= scale
    return norm


# ---------------------------------------------------------------------------
# gradient checking

class GradCheckReport:
    """Per-leaf max relative error between analytic and numeric gradients."""

    def __init__(self, tol: float):
        self.tol = tol
        self.per_leaf = {}  # name -> max relative error
        self.non_finite = []

    @property
    def max_error(self) -> float:
        return max(self.per_leaf.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return not self.non_finite and self.max_error <= self.tol

    def failing_leaves(self):
        return sorted(k for k, v in self.per_leaf.items() if v > self.tol)

    def __repr__(self):
        status = "pass" if self.passed else "FAIL"
        worst = ", ".join(f"{k}={v:.2e}" for k, v in sorted(self.per_leaf.items(), key=lambda kv: -kv[1])[:3])
        return f"GradCheckReport({status}, tol={self.tol:g}, worst: {worst})"


def grad_check(f, leaves, step=1e-5, tol=1e-4, max_entries_per_leaf=None, rng=None) -> GradCheckReport:
    """Compare analytic gradients of the scalar f(.) against central
    finite differences at the current leaf values.

    `f` must rebuild its graph from the leaf Values on every call (the
    leaves are perturbed in place). `leaves` is a dict name -> Value or a
    sequence (named by position or Value.name). When a leaf is large,
    `max_entries_per_leaf` limits the check to a random subset of entries.

    Relative error uses denominator max(|analytic|, |numeric|, 1e-3) so
    near-zero gradients are judged on a scaled absolute error instead of
    amplified noise.
    """
    if isinstance(leaves, dict):
        named = list(leaves.items())
    else:
        named = [(v.name or f"leaf{i}", v) for i, v in enumerate(leaves)]
    rng = rng or np.random.default_rng(0)

    zero_grad([v for _, v in named])
    root = f()
    if root.data.size != 1:
        raise ShapeError("grad_check requires f to produce a scalar")
    backward_grad(root)
    analytic = {name: np.array(v.grad, copy=True) for name, v in named}

    report = GradCheckReport(tol)
    for name, leaf in named:
        flat = leaf.data.reshape(-1)
        n = flat.size
        if max_entries_per_leaf is not None and n > max_entries_per_leaf:
            idx = rng.choice(n, size=max_entries_per_leaf, replace=False)
        else:
            idx = range(n)
        worst = 0.0
        a_flat = analytic[name].reshape(-1)
        for i in idx:
            orig = flat[i]
            flat[i] = orig + step
            f_plus = f().item()
            flat[i] = orig - step
            f_minus = f().item()
            flat[i] = orig
            numeric = (f_plus - f_minus) / (2.0 * step)
            a = a_flat[i]
            if not (math.isfinite(a) and math.isfinite(numeric)):
                report.non_finite.append((name, int(i)))
                continue
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-3)
            worst = max(worst, err)
        report.per_leaf[name] = worst
    return report


# ---------------------------------------------------------------------------
# initialization

def uniform_init(rng: np.random.Generator, shape, fan_in, name=None) -> Value:
    """Weight leaf, uniform in [-1/sqrt(fan_in), +1/sqrt(fan_in)];
    a fractional fan_in realizes a gain over the plain rule."""
    bound = 1.0 / math.sqrt(fan_in) if fan_in > 0 else 1.0
    data = rng.uniform(-bound, bound, size=shape)
    return Value(data, requires_grad=True, name=name)
