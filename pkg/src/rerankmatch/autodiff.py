"""Minimal reverse-mode automatic differentiation over float64 numpy arrays.

Graphs are built define-by-run: every operation returns a new :class:`Node`
holding its value and a list of ``(parent, vjp)`` pairs, where ``vjp`` maps
the upstream gradient to the parent's gradient contribution. Calling
:func:`backward` on a scalar node walks the graph in reverse topological order.

Non-smooth points (``relu`` at 0, distances at 0) use a zero subgradient.
"""

import numpy as np
from scipy.spatial.distance import cdist

from .errors import ContractError, DegenerateRowError, ShapeError

NORM_EPS = 1e-12
SOFTPLUS_SWITCH = 30.0


def _as_array(value):
    return np.asarray(value, dtype=np.float64)


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Node:
    """A value in a differentiable computation graph.

    Leaves are created with ``requires_grad=True`` (parameters, inputs under
    test) or ``False`` (constants). ``grad`` is populated on leaves by
    :func:`backward` and accumulates across calls until :func:`zero_grad`.
    """

    __slots__ = ("value", "grad", "parents", "requires_grad", "name", "diagnostic")
    # make ndarray <op> Node dispatch to Node's reflected operators
    __array_ufunc__ = None

    def __init__(self, value, parents=(), requires_grad=False, name=None):
        self.value = _as_array(value)
        self.grad = None
        self.parents = tuple((p, fn) for p, fn in parents if p.requires_grad)
        self.requires_grad = bool(requires_grad) or bool(self.parents)
        self.name = name
        # set by loss functions that hit a documented degenerate case
        self.diagnostic = None

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Node{label}(shape={self.shape}, requires_grad={self.requires_grad})"

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    @property
    def is_leaf(self):
        return not self.parents

    def item(self):
        return float(self.value.reshape(-1)[0]) if self.value.size == 1 else self.value

    def detach(self):
        return Node(self.value)

    # arithmetic -------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, index):
        return take(self, index)

    @property
    def T(self):
        return transpose(self)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def as_node(x):
    return x if isinstance(x, Node) else Node(x)


def param(value, name=None):
    """Leaf node that receives gradients."""
    return Node(np.array(value, dtype=np.float64), requires_grad=True, name=name)


def const(value):
    return Node(value)


# elementwise --------------------------------------------------------------

def add(a, b):
    a, b = as_node(a), as_node(b)
    sa, sb = a.shape, b.shape
    return Node(a.value + b.value, [
        (a, lambda g: _unbroadcast(g, sa)),
        (b, lambda g: _unbroadcast(g, sb)),
    ])


def sub(a, b):
    a, b = as_node(a), as_node(b)
    sa, sb = a.shape, b.shape
    return Node(a.value - b.value, [
        (a, lambda g: _unbroadcast(g, sa)),
        (b, lambda g: _unbroadcast(-g, sb)),
    ])


def mul(a, b):
    a, b = as_node(a), as_node(b)
    av, bv = a.value, b.value
    return Node(av * bv, [
        (a, lambda g: _unbroadcast(g * bv, av.shape)),
        (b, lambda g: _unbroadcast(g * av, bv.shape)),
    ])


def div(a, b):
    a, b = as_node(a), as_node(b)
    av, bv = a.value, b.value
    out = av / bv
    return Node(out, [
        (a, lambda g: _unbroadcast(g / bv, av.shape)),
        (b, lambda g: _unbroadcast(-g * out / bv, bv.shape)),
    ])


def exp(x):
    x = as_node(x)
    out = np.exp(x.value)
    return Node(out, [(x, lambda g: g * out)])


def log(x):
    x = as_node(x)
    xv = x.value
    return Node(np.log(xv), [(x, lambda g: g / xv)])


def relu(x):
    x = as_node(x)
    active = x.value > 0
    return Node(np.where(active, x.value, 0.0), [(x, lambda g: g * active)])


def _sigmoid(v):
    return 0.5 * (1.0 + np.tanh(0.5 * v))


def softplus(x):
    """``ln(1 + exp(x))``; for ``x > 30`` evaluated as ``x + ln(1 + exp(-x))``."""
    x = as_node(x)
    v = x.value
    big = v > SOFTPLUS_SWITCH
    low = np.log1p(np.exp(np.minimum(v, SOFTPLUS_SWITCH)))
    high = v + np.log1p(np.exp(-np.maximum(v, SOFTPLUS_SWITCH)))
    out = np.where(big, high, low)
    return Node(out, [(x, lambda g: g * _sigmoid(v))])


# shape / reduction -----------------------------------------------------------

def sum_(x, axis=None, keepdims=False):
    x = as_node(x)
    shape = x.shape

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return np.broadcast_to(g, shape).copy()

    return Node(x.value.sum(axis=axis, keepdims=keepdims), [(x, vjp)])


def mean(x, axis=None, keepdims=False):
    x = as_node(x)
    count = x.value.size if axis is None else np.prod(
        [x.shape[a] for a in np.atleast_1d(axis)])
    return sum_(x, axis=axis, keepdims=keepdims) * (1.0 / count)


def reshape(x, shape):
    x = as_node(x)
    old = x.shape
    return Node(x.value.reshape(shape), [(x, lambda g: g.reshape(old))])


def transpose(x):
    x = as_node(x)
    return Node(x.value.T, [(x, lambda g: g.T)])


def take(x, index):
    """Basic or integer-array indexing; gradients scatter-add back."""
    x = as_node(x)
    shape = x.shape

    def vjp(g):
        out = np.zeros(shape)
        np.add.at(out, index, g)
        return out

    return Node(x.value[index], [(x, vjp)])


def concat(nodes, axis=0):
    nodes = [as_node(n) for n in nodes]
    sizes = np.cumsum([n.shape[axis] for n in nodes])[:-1]

    def make_vjp(i):
        return lambda g: np.split(g, sizes, axis=axis)[i]

    return Node(np.concatenate([n.value for n in nodes], axis=axis),
                [(n, make_vjp(i)) for i, n in enumerate(nodes)])


# linear algebra ------------------------------------------------------------

def matmul(a, b):
    a, b = as_node(a), as_node(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    av, bv = a.value, b.value
    return Node(av @ bv, [
        (a, lambda g: g @ bv.T),
        (b, lambda g: av.T @ g),
    ])


# row-wise ops on [n x C] -----------------------------------------------------

def _check_rows(x, op):
    if x.ndim != 2:
        raise ShapeError(f"{op}: expected a 2-D array, got shape {x.shape}")


def softmax(x):
    x = as_node(x)
    _check_rows(x, "softmax")
    z = x.value - x.value.max(axis=1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=1, keepdims=True)

    def vjp(g):
        return out * (g - (g * out).sum(axis=1, keepdims=True))

    return Node(out, [(x, vjp)])


def log_softmax(x):
    x = as_node(x)
    _check_rows(x, "log_softmax")
    z = x.value - x.value.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    out = z - lse
    probs = np.exp(out)

    def vjp(g):
        return g - probs * g.sum(axis=1, keepdims=True)

    return Node(out, [(x, vjp)])


def l2_normalize(x, eps=NORM_EPS):
    """Scale each row of ``x`` to unit Euclidean norm."""
    x = as_node(x)
    _check_rows(x, "l2_normalize")
    norms = np.sqrt((x.value ** 2).sum(axis=1, keepdims=True))
    bad = np.flatnonzero(norms[:, 0] <= eps)
    if bad.size:
        raise DegenerateRowError(bad[0], norms[bad[0], 0])
    out = x.value / norms

    def vjp(g):
        return (g - out * (g * out).sum(axis=1, keepdims=True)) / norms

    return Node(out, [(x, vjp)])


def norm(x, axis=-1):
    """Euclidean norm along ``axis``; zero subgradient where the norm is 0."""
    x = as_node(x)
    xv = x.value
    r = np.sqrt((xv ** 2).sum(axis=axis))

    def vjp(g):
        safe = np.where(r > 0, r, 1.0)
        scale = np.where(r > 0, g / safe, 0.0)
        return np.expand_dims(scale, axis) * xv

    return Node(r, [(x, vjp)])


def pairwise_distances(x):
    """Matrix of Euclidean distances between the rows of ``x`` ([n x d] -> [n x n]).

    Values come from explicit differences (no Gram-matrix cancellation).
    Zero distances, including the diagonal, get a zero subgradient.
    """
    x = as_node(x)
    _check_rows(x, "pairwise_distances")
    xv = x.value
    d = cdist(xv, xv) if xv.shape[0] else np.zeros((0, 0))

    def vjp(g):
        w = np.divide(g + g.T, d, out=np.zeros_like(d), where=d > 0)
        return w.sum(axis=1, keepdims=True) * xv - w @ xv

    return Node(d, [(x, vjp)])


def masked_logsumexp(x, mask):
    """Row-wise ``log(sum(exp(x[i, mask[i]])))`` for a [n x k] node.

    Rows whose mask is all False have no terms; they evaluate to 0 with zero
    gradient and callers are expected to exclude them.
    """
    x = as_node(x)
    _check_rows(x, "masked_logsumexp")
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != x.shape:
        raise ShapeError(f"masked_logsumexp: mask {mask.shape} vs values {x.shape}")
    has_any = mask.any(axis=1)
    masked = np.where(mask, x.value, -np.inf)
    top = np.where(has_any, masked.max(axis=1), 0.0)
    e = np.where(mask, np.exp(np.where(mask, x.value, 0.0) - top[:, None]), 0.0)
    total = e.sum(axis=1)
    out = np.where(has_any, top + np.log(np.where(has_any, total, 1.0)), 0.0)
    weights = np.divide(e, total[:, None], out=np.zeros_like(e), where=has_any[:, None])

    return Node(out, [(x, lambda g: g[:, None] * weights)])


# backward ------------------------------------------------------------------

def _topological_order(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        # reversed keeps the visiting order equal to a recursive DFS
        for parent, _ in reversed(node.parents):
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(root):
    """Accumulate d(root)/d(leaf) into ``leaf.grad`` for every leaf reachable from ``root``.

    Returns a dict mapping each leaf node to the gradient computed by this call.
    """
    if not isinstance(root, Node):
        raise ContractError("backward expects a Node")
    if root.value.size != 1:
        raise ContractError(f"backward needs a scalar root, got shape {root.shape}")
    grads = {id(root): np.ones_like(root.value)}
    leaves = {}
    for node in reversed(_topological_order(root)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.is_leaf:
            if node.requires_grad:
                leaves[node] = g
                node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, vjp in node.parents:
            contrib = vjp(g)
            key = id(parent)
            grads[key] = contrib if key not in grads else grads[key] + contrib
    return leaves


def zero_grad(nodes):
    for node in nodes:
        node.grad = None


def check_gradient(f, x, step=1e-5):
    """Compare reverse-mode gradients of ``f`` against central differences.

    ``f`` maps a :class:`Node` to a scalar :class:`Node`. Returns
    ``max_i |analytic_i - numeric_i| / max(1, |analytic_i|)``.
    """
    if not 0 < step <= 1e-2:
        raise ValueError(f"step must lie in (0, 1e-2], got {step}")
    x = np.array(x, dtype=np.float64)
    leaf = param(x)
    backward(f(leaf))
    analytic = leaf.grad if leaf.grad is not None else np.zeros_like(x)

    numeric = np.empty_like(x)
    flat, num_flat = x.reshape(-1), numeric.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        up = f(Node(x)).item()
        flat[i] = orig - step
        down = f(Node(x)).item()
        flat[i] = orig
        num_flat[i] = (up - down) / (2.0 * step)
    err = np.abs(analytic - numeric) / np.maximum(1.0, np.abs(analytic))
    return float(err.max()) if err.size else 0.0
