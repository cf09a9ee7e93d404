"""Reverse-mode tape with a forward time-derivative channel.

Two layers live here:

``Var``
    a node on a :class:`Tape`. Values are numpy arrays (0-d for scalars);
    every op records its local vector-Jacobian products so that
    :meth:`Tape.backward` can return gradients of a scalar output.

``Dual``
    a pair ``(primal, tangent)`` of ``Var`` nodes, where ``tangent`` carries
    d(primal)/dt for the network's time input.  Because the tangent is built
    from ordinary tape ops, a loss containing du/dt is differentiated through
    both channels by the same backward pass (forward-over-reverse).

A ``tangent`` of ``None`` means a structural zero and costs nothing.
"""

import numpy as np

from .errors import NumericFailure

__all__ = [
    "Tape",
    "Var",
    "Dual",
    "tanh",
    "exp",
    "exprel_inv",
    "square",
    "pow_int",
]


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    ndim = len(shape)
    while g.ndim > ndim:
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


class Tape:
    """Ordered record of operations; node ids are creation order."""

    def __init__(self):
        self._values = []
        self._parents = []
        self._ops = []
        self._trainable = set()

    def __len__(self):
        return len(self._values)

    @property
    def trainable_ids(self):
        return frozenset(self._trainable)

    def op_kind(self, node_id):
        return self._ops[node_id]

    def reset(self):
        self._values.clear()
        self._parents.clear()
        self._ops.clear()
        self._trainable.clear()

    def _push(self, value, parents, op):
        with np.errstate(all="ignore"):
            finite = np.isfinite(value).all()
        if not finite:
            raise NumericFailure(f"non-finite value produced by {op}", where=op)
        self._values.append(value)
        self._parents.append(parents)
        self._ops.append(op)
        return Var(self, len(self._values) - 1, value)

    def constant(self, value):
        """Leaf that never receives a gradient."""
        return self._push(np.array(value, dtype=float), (), "const")

    def variable(self, value):
        """Trainable leaf; its adjoint is reported by :meth:`backward`."""
        var = self._push(np.array(value, dtype=float), (), "leaf")
        self._trainable.add(var.id)
        return var

    def lift_input(self, t, is_time=False):
        """Lift a raw input onto the tape as a :class:`Dual`.

        With ``is_time`` the tangent is seeded with ones, otherwise it is a
        structural zero.
        """
        primal = self.constant(t)
        tangent = self.constant(np.ones_like(primal.value)) if is_time else None
        return Dual(primal, tangent)

    def backward(self, output, wrt=None):
        """Adjoints of a scalar ``output``.

        Returns ``{node_id: gradient}`` for the trainable leaves, or for the
        ids in ``wrt`` when given.
        """
        if not isinstance(output, Var) or output.tape is not self:
            raise ValueError("backward output is not a node of this tape")
        if output.value.size != 1:
            raise ValueError("backward needs a scalar output")
        adjoint = [None] * (output.id + 1)
        adjoint[output.id] = np.ones_like(output.value)
        parents, ops = self._parents, self._ops
        for i in range(output.id, -1, -1):
            g = adjoint[i]
            if g is None:
                continue
            for pid, vjp in parents[i]:
                if ops[pid] == "const":
                    continue
                contrib = vjp(g)
                if adjoint[pid] is None:
                    adjoint[pid] = contrib
                else:
                    adjoint[pid] = adjoint[pid] + contrib
        targets = self._trainable if wrt is None else wrt
        grads = {}
        for nid in targets:
            g = adjoint[nid] if nid < len(adjoint) else None
            if g is None:
                g = np.zeros_like(self._values[nid])
            elif not np.isfinite(g).all():
                raise NumericFailure(f"non-finite adjoint for node {nid}", where=nid)
            grads[nid] = g
        return grads

    def gradient(self, output, variables):
        grads = self.backward(output, wrt=[v.id for v in variables])
        return [grads[v.id] for v in variables]


def _same_tape(a, b):
    if a.tape is not b.tape:
        raise ValueError("operands live on different tapes")


class Var:
    """A value recorded on a tape."""

    __slots__ = ("tape", "id", "value")
    __array_priority__ = 1000

    def __init__(self, tape, node_id, value):
        self.tape = tape
        self.id = node_id
        self.value = value

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Var(id={self.id}, value={self.value!r})"

    def __float__(self):
        return float(self.value)

    def __add__(self, other):
        if isinstance(other, Dual):
            return NotImplemented
        return add(self, other)

    def __radd__(self, other):
        if isinstance(other, Dual):
            return NotImplemented
        return add(other, self)

    def __sub__(self, other):
        if isinstance(other, Dual):
            return NotImplemented
        return sub(self, other)

    def __rsub__(self, other):
        if isinstance(other, Dual):
            return NotImplemented
        return sub(other, self)

    def __mul__(self, other):
        if isinstance(other, Dual):
            return NotImplemented
        return mul(self, other)

    def __rmul__(self, other):
        if isinstance(other, Dual):
            return NotImplemented
        return mul(other, self)

    def __truediv__(self, other):
        if isinstance(other, Dual):
            return NotImplemented
        return div(self, other)

    def __rtruediv__(self, other):
        if isinstance(other, Dual):
            return NotImplemented
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, n):
        return pow_int(self, n)

    def __matmul__(self, other):
        if isinstance(other, Dual):
            return NotImplemented
        return matmul(self, other)

    def __rmatmul__(self, other):
        if isinstance(other, Dual):
            return NotImplemented
        return matmul(other, self)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None):
        return reduce_sum(self, axis)

    def mean(self, axis=None):
        return reduce_mean(self, axis)

    def reshape(self, *shape):
        return reshape(self, *shape)

    def tanh(self):
        return _tanh_var(self)

    def exp(self):
        return _exp_var(self)


def _val(x):
    return x.value if isinstance(x, Var) else x


def add(a, b):
    av, bv = _val(a), _val(b)
    value = av + bv
    if isinstance(a, Var):
        if isinstance(b, Var):
            _same_tape(a, b)
            sa, sb = a.shape, b.shape
            parents = ((a.id, lambda g: _unbroadcast(g, sa)),
                       (b.id, lambda g: _unbroadcast(g, sb)))
        else:
            sa = a.shape
            parents = ((a.id, lambda g: _unbroadcast(g, sa)),)
        return a.tape._push(value, parents, "add")
    sb = b.shape
    return b.tape._push(value, ((b.id, lambda g: _unbroadcast(g, sb)),), "add")


def sub(a, b):
    av, bv = _val(a), _val(b)
    value = av - bv
    if isinstance(a, Var):
        if isinstance(b, Var):
            _same_tape(a, b)
            sa, sb = a.shape, b.shape
            parents = ((a.id, lambda g: _unbroadcast(g, sa)),
                       (b.id, lambda g: -_unbroadcast(g, sb)))
        else:
            sa = a.shape
            parents = ((a.id, lambda g: _unbroadcast(g, sa)),)
        return a.tape._push(value, parents, "sub")
    sb = b.shape
    return b.tape._push(value, ((b.id, lambda g: -_unbroadcast(g, sb)),), "sub")


def mul(a, b):
    av, bv = _val(a), _val(b)
    value = av * bv
    if isinstance(a, Var):
        sa = a.shape
        if isinstance(b, Var):
            _same_tape(a, b)
            sb = b.shape
            parents = ((a.id, lambda g: _unbroadcast(g * bv, sa)),
                       (b.id, lambda g: _unbroadcast(g * av, sb)))
        else:
            parents = ((a.id, lambda g: _unbroadcast(g * bv, sa)),)
        return a.tape._push(value, parents, "mul")
    sb = b.shape
    return b.tape._push(value, ((b.id, lambda g: _unbroadcast(g * av, sb)),), "mul")


def div(a, b):
    av, bv = _val(a), _val(b)
    if np.any(np.asarray(bv) == 0):
        tape = a.tape if isinstance(a, Var) else b.tape
        raise NumericFailure("division by zero", where=f"div@{len(tape)}")
    value = av / bv
    if isinstance(a, Var):
        sa = a.shape
        if isinstance(b, Var):
            _same_tape(a, b)
            sb = b.shape
            parents = ((a.id, lambda g: _unbroadcast(g / bv, sa)),
                       (b.id, lambda g: _unbroadcast(-g * value / bv, sb)))
        else:
            parents = ((a.id, lambda g: _unbroadcast(g / bv, sa)),)
        return a.tape._push(value, parents, "div")
    sb = b.shape
    return b.tape._push(value, ((b.id, lambda g: _unbroadcast(-g * value / bv, sb)),), "div")


def neg(a):
    return a.tape._push(-a.value, ((a.id, lambda g: -g),), "neg")


def pow_int(a, n):
    """``a ** n`` for a non-negative integer exponent."""
    if not isinstance(a, Var):
        return a ** n
    n = int(n)
    if n < 0:
        raise ValueError("pow_int needs a non-negative exponent")
    av = a.value
    if n == 0:
        return a.tape._push(np.ones_like(av), ((a.id, lambda g: g * 0.0),), "pow")
    lower = av ** (n - 1)
    return a.tape._push(lower * av, ((a.id, lambda g: g * (n * lower)),), "pow")


def square(a):
    return pow_int(a, 2)


def _tanh_var(a):
    y = np.tanh(a.value)
    return a.tape._push(y, ((a.id, lambda g: g * (1.0 - y * y)),), "tanh")


def _exp_var(a):
    with np.errstate(over="ignore"):
        y = np.exp(a.value)
    return a.tape._push(y, ((a.id, lambda g: g * y),), "exp")


def _tanh_tangent(y, xt):
    """(1 - y**2) * xt as one node; both inputs are Vars."""
    yv, tv = y.value, xt.value
    slope = 1.0 - yv * yv
    sy, st = y.shape, xt.shape
    parents = ((y.id, lambda g: _unbroadcast(-2.0 * g * yv * tv, sy)),
               (xt.id, lambda g: _unbroadcast(g * slope, st)))
    return y.tape._push(slope * tv, parents, "tanh_tangent")


def _exprel_inv_value(x):
    with np.errstate(all="ignore"):
        big = x / -np.expm1(-x)
    return np.where(np.abs(x) < 1e-7, 1.0 + 0.5 * x, big)


def _exprel_inv_slope(x):
    with np.errstate(all="ignore"):
        d = -np.expm1(-x)
        big = (d - x * np.exp(-x)) / (d * d)
    return np.where(np.abs(x) < 1e-3, 0.5 + x / 6.0 - x ** 3 / 180.0, big)


def exprel_inv(x):
    """``x / (1 - exp(-x))`` with the removable singularity at 0 filled in."""
    if isinstance(x, Var):
        xv = x.value
        slope = _exprel_inv_slope(xv)
        return x.tape._push(_exprel_inv_value(xv),
                            ((x.id, lambda g: g * slope),), "exprel_inv")
    value = _exprel_inv_value(np.asarray(x, dtype=float))
    return value if value.ndim else float(value)


def matmul(a, b):
    av, bv = _val(a), _val(b)
    value = av @ bv
    if isinstance(a, Var):
        if isinstance(b, Var):
            _same_tape(a, b)
            parents = ((a.id, lambda g: g @ bv.T), (b.id, lambda g: av.T @ g))
        else:
            parents = ((a.id, lambda g: g @ bv.T),)
        return a.tape._push(value, parents, "matmul")
    return b.tape._push(value, ((b.id, lambda g: av.T @ g),), "matmul")


def getitem(a, idx):
    shape = a.shape

    def vjp(g):
        out = np.zeros(shape)
        out[idx] = g
        return out

    return a.tape._push(a.value[idx], ((a.id, vjp),), "getitem")


def reshape(a, *shape):
    if len(shape) == 1 and isinstance(shape[0], tuple):
        shape = shape[0]
    orig = a.shape
    return a.tape._push(a.value.reshape(shape), ((a.id, lambda g: g.reshape(orig)),), "reshape")


def reduce_sum(a, axis=None):
    shape = a.shape
    value = a.value.sum(axis=axis)
    if axis is None:
        vjp = lambda g: np.broadcast_to(g, shape).copy()  # noqa: E731
    else:
        vjp = lambda g: np.broadcast_to(np.expand_dims(g, axis), shape).copy()  # noqa: E731
    return a.tape._push(np.asarray(value), ((a.id, vjp),), "sum")


def reduce_mean(a, axis=None):
    n = a.value.size if axis is None else a.shape[axis]
    return reduce_sum(a, axis) * (1.0 / n)


class Dual:
    """Primal value plus its derivative with respect to the time input."""

    __slots__ = ("primal", "tangent")
    __array_priority__ = 1000

    def __init__(self, primal, tangent=None):
        self.primal = primal
        self.tangent = tangent

    @property
    def value(self):
        return self.primal.value

    @property
    def time_tangent(self):
        if self.tangent is None:
            return np.zeros_like(self.primal.value)
        return self.tangent.value

    @property
    def node_id(self):
        return self.primal.id

    @property
    def shape(self):
        return self.primal.shape

    def __repr__(self):
        return f"Dual(primal={self.value!r}, time_tangent={self.time_tangent!r})"

    def __add__(self, other):
        p, t = _split(other)
        return Dual(self.primal + p, _tadd(self.tangent, t))

    __radd__ = __add__

    def __sub__(self, other):
        p, t = _split(other)
        return Dual(self.primal - p, _tsub(self.tangent, t))

    def __rsub__(self, other):
        p, t = _split(other)
        return Dual(p - self.primal, _tsub(t, self.tangent))

    def __mul__(self, other):
        p, t = _split(other)
        tangent = _tadd(_tmul(self.tangent, p), _tmul(t, self.primal))
        return Dual(self.primal * p, tangent)

    __rmul__ = __mul__

    def __truediv__(self, other):
        p, t = _split(other)
        y = self.primal / p
        tangent = None
        if self.tangent is not None:
            tangent = self.tangent / p
        if t is not None:
            tangent = _tsub(tangent, y * t / p)
        return Dual(y, tangent)

    def __rtruediv__(self, other):
        return Dual(_const_on(self, other), None) / self

    def __neg__(self):
        return Dual(-self.primal, None if self.tangent is None else -self.tangent)

    def __pow__(self, n):
        n = int(n)
        y = pow_int(self.primal, n)
        if self.tangent is None or n == 0:
            return Dual(y, None)
        return Dual(y, n * pow_int(self.primal, n - 1) * self.tangent)

    def __matmul__(self, other):
        p, t = _split(other)
        tangent = None
        if self.tangent is not None:
            tangent = self.tangent @ p
        if t is not None:
            tangent = _tadd(tangent, self.primal @ t)
        return Dual(self.primal @ p, tangent)

    def __getitem__(self, idx):
        return Dual(self.primal[idx], None if self.tangent is None else self.tangent[idx])

    def reshape(self, *shape):
        return Dual(self.primal.reshape(*shape),
                    None if self.tangent is None else self.tangent.reshape(*shape))

    def tanh(self):
        y = _tanh_var(self.primal)
        if self.tangent is None:
            return Dual(y, None)
        return Dual(y, _tanh_tangent(y, self.tangent))

    def exp(self):
        y = _exp_var(self.primal)
        return Dual(y, None if self.tangent is None else y * self.tangent)


def _split(x):
    if isinstance(x, Dual):
        return x.primal, x.tangent
    return x, None


def _const_on(d, value):
    return d.primal.tape.constant(value)


def _tadd(a, b):
    if a is None:
        return b
    if b is None:
        return a
    return a + b


def _tsub(a, b):
    if b is None:
        return a
    if a is None:
        return -b
    return a - b


def _tmul(t, p):
    return None if t is None else t * p


def tanh(x):
    if isinstance(x, Dual):
        return x.tanh()
    if isinstance(x, Var):
        return _tanh_var(x)
    return np.tanh(x)


def exp(x):
    if isinstance(x, Dual):
        return x.exp()
    if isinstance(x, Var):
        return _exp_var(x)
    return np.exp(x)
