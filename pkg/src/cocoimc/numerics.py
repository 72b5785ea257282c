"""Dense float64 matrix ops with a small reverse-mode tape.

Every op accepts either plain 2-D ``numpy`` arrays or :class:`Var` nodes.
When no argument is a :class:`Var` the op is a pure numpy computation and
nothing is recorded; when any argument is a :class:`Var` the result is a new
node on that argument's :class:`Tape`.  Model code is therefore written once
and runs both with gradients (training) and without (inference, target
networks, finite differences).

Scalars are 1x1 matrices throughout.
"""

import numpy as np

__all__ = [
    "DimensionError",
    "DegenerateRowError",
    "ContractError",
    "GradientCheckError",
    "Tape",
    "Var",
    "as_matrix",
    "value_of",
    "matmul",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "relu",
    "softmax",
    "l2norm",
    "rowwise",
    "log",
    "clamp_min",
    "total",
    "sum_rows",
    "sum_cols",
    "mean",
    "transpose",
    "take_rows",
    "grad_check",
]


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class DegenerateRowError(ValueError):
    """A row cannot be normalized because its norm is zero."""


class ContractError(ValueError):
    """An input violates a documented precondition."""


class GradientCheckError(FloatingPointError):
    """Finite differences produced a non-finite loss.

    ``param`` is the position of the offending parameter and ``index`` the
    entry that was perturbed.
    """

    def __init__(self, message, param=None, index=None):
        super().__init__(message)
        self.param = param
        self.index = index


def as_matrix(x, name="x"):
    """Validate external input as a finite 2-D float64 array."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        bad = tuple(int(i) for i in np.argwhere(~np.isfinite(arr))[0])
        raise ValueError(f"{name} has a non-finite entry at {bad}")
    return arr


class Tape:
    """Ordered record of operations; creation order is a topological order."""

    def __init__(self):
        self.nodes = []

    def leaf(self, value):
        """Register a parameter; its gradient accumulates across backward calls."""
        node = Var(np.array(value, dtype=np.float64), self, leaf=True)
        node.grad = np.zeros_like(node.value)
        return node

    def backward(self, loss):
        """Propagate d(loss)/d(node) to every leaf recorded before ``loss``.

        Leaf gradients accumulate: calling ``backward`` twice without
        :meth:`zero_grad` doubles them.  Intermediate gradients are reset on
        every call.
        """
        if not isinstance(loss, Var) or loss.tape is not self:
            raise ContractError("loss is not a node of this tape")
        if loss.value.shape != (1, 1):
            raise ContractError(f"backward needs a 1x1 loss, got shape {loss.value.shape}")
        for node in self.nodes:
            if not node.leaf:
                node.grad = None
        loss.grad = np.ones((1, 1))
        stop = loss.index
        for node in reversed(self.nodes[: stop + 1]):
            if node.leaf or node.grad is None:
                continue
            parts = node.vjp(node.grad)
            for parent, g in zip(node.parents, parts):
                if not isinstance(parent, Var) or g is None:
                    continue
                g = _unbroadcast(g, parent.value.shape)
                if parent.grad is None:
                    parent.grad = g.copy()
                else:
                    parent.grad += g

    def zero_grad(self):
        for node in self.nodes:
            node.grad = np.zeros_like(node.value) if node.leaf else None


class Var:
    """A matrix value recorded on a :class:`Tape`."""

    __array_ufunc__ = None

    def __init__(self, value, tape, parents=(), vjp=None, leaf=False):
        self.value = value
        self.tape = tape
        self.parents = parents
        self.vjp = vjp
        self.leaf = leaf
        self.grad = None
        self.index = len(tape.nodes)
        tape.nodes.append(self)

    @property
    def shape(self):
        return self.value.shape

    @property
    def T(self):
        return transpose(self)

    def item(self):
        return float(self.value[0, 0])

    def __repr__(self):
        return f"Var(shape={self.value.shape}, leaf={self.leaf})"

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)


def value_of(x):
    """Underlying ndarray (or float) of ``x``."""
    return x.value if isinstance(x, Var) else x


def _tape_of(args):
    for a in args:
        if isinstance(a, Var):
            return a.tape
    return None


def _record(value, parents, vjp):
    tape = _tape_of(parents)
    if tape is None:
        return value
    return Var(value, tape, parents, vjp)


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    if shape == ():
        return np.array(g.sum())
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _shape(x):
    return np.shape(value_of(x))


def matmul(a, b):
    av, bv = value_of(a), value_of(b)
    if av.ndim != 2 or bv.ndim != 2 or av.shape[1] != bv.shape[0]:
        raise DimensionError(f"cannot multiply {av.shape} by {bv.shape}")
    return _record(av @ bv, (a, b), lambda g: (g @ bv.T, av.T @ g))


def _check_broadcast(op, a, b):
    try:
        np.broadcast_shapes(_shape(a), _shape(b))
    except ValueError:
        raise DimensionError(f"cannot {op} shapes {_shape(a)} and {_shape(b)}") from None


def add(a, b):
    _check_broadcast("add", a, b)
    return _record(value_of(a) + value_of(b), (a, b), lambda g: (g, g))


def sub(a, b):
    _check_broadcast("subtract", a, b)
    return _record(value_of(a) - value_of(b), (a, b), lambda g: (g, -g))


def mul(a, b):
    _check_broadcast("multiply", a, b)
    av, bv = value_of(a), value_of(b)
    return _record(av * bv, (a, b), lambda g: (g * bv, g * av))


def div(a, b):
    _check_broadcast("divide", a, b)
    av, bv = value_of(a), value_of(b)
    out = av / bv
    return _record(out, (a, b), lambda g: (g / bv, -g * out / bv))


def neg(a):
    return _record(-value_of(a), (a,), lambda g: (-g,))


def relu(x):
    xv = value_of(x)
    on = xv > 0
    return _record(np.where(on, xv, 0.0), (x,), lambda g: (g * on,))


def softmax(x):
    """Row-wise softmax."""
    xv = value_of(x)
    e = np.exp(xv - xv.max(axis=1, keepdims=True))
    out = e / e.sum(axis=1, keepdims=True)

    def vjp(g):
        return (out * (g - (g * out).sum(axis=1, keepdims=True)),)

    return _record(out, (x,), vjp)


def l2norm(x, eps=0.0):
    """Scale each row to unit Euclidean norm.

    With ``eps == 0`` an all-zero row raises :class:`DegenerateRowError`;
    callers that can produce such rows pass a positive ``eps`` which is added
    to every row norm.
    """
    xv = value_of(x)
    norm = np.sqrt((xv * xv).sum(axis=1, keepdims=True))
    if eps == 0.0 and np.any(norm == 0.0):
        row = int(np.flatnonzero(norm[:, 0] == 0.0)[0])
        raise DegenerateRowError(f"row {row} has zero norm")
    denom = norm + eps
    out = xv / denom

    def vjp(g):
        # d(x/(|x|+e)) = g/d - x (g.x) / (|x| d^2)
        dot = (g * xv).sum(axis=1, keepdims=True)
        safe = np.where(norm > 0, norm, 1.0)
        return (g / denom - xv * dot / (safe * denom * denom),)

    return _record(out, (x,), vjp)


_ROWWISE = {"relu": relu, "softmax": softmax, "l2norm": l2norm}


def rowwise(op, x):
    """Apply one of ``relu``, ``softmax`` or ``l2norm`` to ``x``."""
    try:
        fn = _ROWWISE[op]
    except KeyError:
        raise ValueError(f"unknown row-wise op {op!r}; expected one of {sorted(_ROWWISE)}") from None
    if _shape(x)[0] == 0 or _shape(x)[1] == 0:
        raise DimensionError("row-wise op on an empty matrix")
    return fn(x)


def log(x):
    xv = value_of(x)
    return _record(np.log(xv), (x,), lambda g: (g / xv,))


def clamp_min(x, floor):
    """max(x, floor); the gradient is zero where the floor is active."""
    xv = value_of(x)
    on = xv >= floor
    return _record(np.where(on, xv, floor), (x,), lambda g: (g * on,))


def total(x):
    """Sum of all entries as a 1x1 matrix."""
    xv = value_of(x)
    return _record(np.array([[xv.sum()]]), (x,), lambda g: (np.full(xv.shape, g[0, 0]),))


def sum_rows(x):
    """Column sums, shape 1 x cols."""
    xv = value_of(x)
    return _record(xv.sum(axis=0, keepdims=True), (x,), lambda g: (np.broadcast_to(g, xv.shape),))


def sum_cols(x):
    """Row sums, shape rows x 1."""
    xv = value_of(x)
    return _record(xv.sum(axis=1, keepdims=True), (x,), lambda g: (np.broadcast_to(g, xv.shape),))


def mean(x):
    return total(x) / float(np.size(value_of(x)))


def transpose(x):
    return _record(value_of(x).T, (x,), lambda g: (g.T,))


def take_rows(x, idx):
    """Rows ``idx`` of ``x`` (integer index array)."""
    xv = value_of(x)
    idx = np.asarray(idx, dtype=np.intp)

    def vjp(g):
        full = np.zeros_like(xv)
        np.add.at(full, idx, g)
        return (full,)

    return _record(xv[idx], (x,), vjp)


def grad_check(f, params, eps=1e-5):
    """Compare tape gradients of ``f`` against central differences.

    ``f`` maps the parameter matrices to a 1x1 loss and must be written with
    the ops of this module so it can run both on :class:`Var` nodes and on
    plain arrays.

    Returns
    -------
    float
        max over all entries of ``|analytic - numeric| / max(1, |numeric|)``.
    """
    if not 0.0 < eps <= 1e-2:
        raise ValueError(f"eps must lie in (0, 1e-2], got {eps}")
    params = [np.array(p, dtype=np.float64) for p in params]

    tape = Tape()
    leaves = [tape.leaf(p) for p in params]
    tape.backward(f(*leaves))
    analytic = [leaf.grad for leaf in leaves]

    def scalar(args):
        return float(np.asarray(value_of(f(*args))).reshape(-1)[0])

    worst = 0.0
    for k, p in enumerate(params):
        for index in np.ndindex(p.shape):
            orig = p[index]
            p[index] = orig + eps
            up = scalar(params)
            p[index] = orig - eps
            down = scalar(params)
            p[index] = orig
            if not (np.isfinite(up) and np.isfinite(down)):
                raise GradientCheckError(
                    f"non-finite loss perturbing parameter {k} at {index}", param=k, index=index
                )
            numeric = (up - down) / (2.0 * eps)
            err = abs(analytic[k][index] - numeric) / max(1.0, abs(numeric))
            worst = max(worst, err)
    return worst
