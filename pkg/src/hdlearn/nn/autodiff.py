"""Reverse-mode differentiation over numpy arrays.

A :class:`GradTape` records every operation applied to its :class:`Var`
objects.  ``tape.backward(out)`` sweeps the record once in reverse and
returns the gradient of the scalar ``out`` as a flat vector aligned with
the tape's :class:`~hdlearn.nn.params.ParamStore`.

The functions at the bottom of this module (``relu``, ``tanh``, ...)
accept either plain arrays or ``Var`` objects, so problem definitions can
be written once and evaluated with or without a tape.
"""

import numpy as np

from .summation import canonical_sum


class TapeError(RuntimeError):
    pass


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


class Var:
    __slots__ = ("value", "tape", "idx")
    __array_priority__ = 1000

    def __init__(self, value, tape, idx):
        self.value = value
        self.tape = tape
        self.idx = idx

    shape = property(lambda self: self.value.shape)
    ndim = property(lambda self: self.value.ndim)
    size = property(lambda self: self.value.size)

    def __repr__(self):
        return f"Var(shape={self.value.shape}, idx={self.idx})"

    def _lift(self, other):
        if isinstance(other, Var):
            if other.tape is not self.tape:
                raise TapeError("operands recorded on different tapes")
            return other
        return self.tape.constant(other)

    def __add__(self, other):
        other = self._lift(other)
        a, b = self.value, other.value
        return self.tape.record(
            a + b, (self, other),
            lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))

    __radd__ = __add__

    def __sub__(self, other):
        other = self._lift(other)
        a, b = self.value, other.value
        return self.tape.record(
            a - b, (self, other),
            lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))

    def __rsub__(self, other):
        return self._lift(other) - self

    def __mul__(self, other):
        other = self._lift(other)
        a, b = self.value, other.value
        return self.tape.record(
            a * b, (self, other),
            lambda g: (_unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)))

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = self._lift(other)
        a, b = self.value, other.value
        return self.tape.record(
            a / b, (self, other),
            lambda g: (_unbroadcast(g / b, a.shape), _unbroadcast(-g * a / (b * b), b.shape)))

    def __rtruediv__(self, other):
        return self._lift(other) / self

    def __neg__(self):
        return self.tape.record(-self.value, (self,), lambda g: (-g,))

    def __pow__(self, k):
        if isinstance(k, Var):
            raise TypeError("only constant exponents are supported")
        a = self.value
        return self.tape.record(a**k, (self,), lambda g: (g * k * a ** (k - 1),))

    def __matmul__(self, other):
        other = self._lift(other)
        a, b = self.value, other.value
        if a.ndim != 2 or b.ndim not in (1, 2):
            raise ValueError("matmul supports (n,k)@(k,m) and (n,k)@(k,)")

        def vjp(g):
            if b.ndim == 1:
                return np.outer(g, b), a.T @ g
            return g @ b.T, a.T @ g

        return self.tape.record(a @ b, (self, other), vjp)

    def __rmatmul__(self, other):
        return self._lift(other) @ self

    def __getitem__(self, key):
        a = self.value

        def vjp(g):
            out = np.zeros_like(a)
            np.add.at(out, key, g)
            return (out,)

        return self.tape.record(a[key], (self,), vjp)

    @property
    def T(self):
        return self.tape.record(self.value.T, (self,), lambda g: (g.T,))

    def reshape(self, *shape):
        a = self.value
        return self.tape.record(a.reshape(*shape), (self,), lambda g: (g.reshape(a.shape),))

    def sum(self, axis=None, keepdims=False):
        a = self.value

        def vjp(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, a.shape).copy(),)

        return self.tape.record(np.sum(a, axis=axis, keepdims=keepdims), (self,), vjp)

    def mean(self, axis=None, keepdims=False):
        n = self.value.size if axis is None else self.value.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)


class GradTape:
    """Records operations on :class:`Var` objects for one backward sweep."""

    def __init__(self, store=None):
        self.store = store
        self._parents = []
        self._vjps = []
        self._param_slices = {}  # node idx -> slice into the flat vector
        self._consumed = False

    def __len__(self):
        return len(self._vjps)

    def record(self, value, parents, vjp):
        if self._consumed:
            raise TapeError("tape already consumed; record a new forward pass")
        idx = len(self._vjps)
        self._parents.append(tuple(p.idx for p in parents))
        self._vjps.append(vjp)
        return Var(np.asarray(value, dtype=np.float64), self, idx)

    def constant(self, value):
        return self.record(value, (), None)

    def param(self, name):
        if self.store is None:
            raise TapeError("tape has no ParamStore")
        var = self.record(self.store.view(name), (), None)
        self._param_slices[var.idx] = self.store.slice(name)
        return var

    def watch(self, value):
        """A leaf whose adjoint is kept (see :meth:`adjoint`)."""
        var = self.constant(value)
        self._param_slices[var.idx] = None
        return var

    def backward(self, out, keep=()):
        """Gradient of scalar ``out`` w.r.t. the store (flat vector).

        Adjoints of the ``keep`` leaves (created by :meth:`watch`) are
        returned too when requested.
        """
        if self._consumed:
            raise TapeError("backward() called twice on the same tape")
        if out.tape is not self:
            raise TapeError("output was recorded on another tape")
        if out.value.size != 1:
            raise ValueError("backward() needs a scalar output")
        self._consumed = True
        adj = [None] * len(self._vjps)
        adj[out.idx] = np.ones_like(out.value)
        grad = np.zeros(len(self.store) if self.store is not None else 0)
        kept = {}
        for i in range(out.idx, -1, -1):
            g = adj[i]
            if g is None:
                continue
            vjp = self._vjps[i]
            if vjp is None:
                if i in self._param_slices:
                    sl = self._param_slices[i]
                    if sl is None:
                        kept[i] = g
                    else:
                        grad[sl] += g.ravel()
                continue
            for p, gp in zip(self._parents[i], vjp(g)):
                if gp is None:
                    continue
                adj[p] = gp if adj[p] is None else adj[p] + gp
        self._vjps = self._parents = None  # release closures
        if keep:
            zeros = [np.zeros_like(np.asarray(k.value)) for k in keep]
            return grad, [kept.get(k.idx, z) for k, z in zip(keep, zeros)]
        return grad


# -- elementwise ops usable on arrays and Vars --------------------------------

def _unary(x, f, df):
    if not isinstance(x, Var):
        return f(np.asarray(x, dtype=np.float64))
    a = x.value
    y = f(a)
    return x.tape.record(y, (x,), lambda g: (g * df(a, y),))


def relu(x):
    # subgradient convention: relu'(0) = 0
    return _unary(x, lambda a: np.maximum(a, 0.0), lambda a, y: (a > 0).astype(np.float64))


def relu_prime(x):
    """Step function; zero derivative everywhere (piecewise constant)."""
    return _unary(x, lambda a: (a > 0).astype(np.float64), lambda a, y: np.zeros_like(a))


def tanh(x):
    return _unary(x, np.tanh, lambda a, y: 1.0 - y * y)


def tanh_prime(x):
    return 1.0 - tanh(x) ** 2


def cos(x):
    return _unary(x, np.cos, lambda a, y: -np.sin(a))


def sin(x):
    return _unary(x, np.sin, lambda a, y: np.cos(a))


def cos_prime(x):
    return -sin(x)


def identity(x):
    return x


def identity_prime(x):
    if isinstance(x, Var):
        return x * 0.0 + 1.0
    return np.ones_like(np.asarray(x, dtype=np.float64))


def exp(x):
    return _unary(x, np.exp, lambda a, y: y)


def log(x):
    return _unary(x, np.log, lambda a, y: 1.0 / a)


def square(x):
    return _unary(x, np.square, lambda a, y: 2.0 * a)


def sigmoid(x):
    f = lambda a: 0.5 * (1.0 + np.tanh(0.5 * a))  # noqa: E731
    return _unary(x, f, lambda a, y: y * (1.0 - y))


def clip(x, lo, hi):
    return _unary(x, lambda a: np.clip(a, lo, hi),
                  lambda a, y: ((a > lo) & (a < hi)).astype(np.float64))


def minimum(x, axis):
    """Minimum along ``axis``; the gradient goes to the first argmin."""
    if not isinstance(x, Var):
        return np.min(x, axis=axis)
    a = x.value
    k = np.argmin(a, axis=axis)

    def vjp(g):
        out = np.zeros_like(a)
        np.put_along_axis(out, np.expand_dims(k, axis), np.expand_dims(g, axis), axis=axis)
        return (out,)

    return x.tape.record(np.take_along_axis(a, np.expand_dims(k, axis), axis).squeeze(axis),
                         (x,), vjp)


def particle_mean(h, a, scaled=True):
    """``(1/m) sum_j a_j h[:, j]`` with canonical (permutation-exact) summation.

    ``h`` has shape (n, m) and ``a`` shape (m,).  With ``scaled=False``
    the 1/m factor is dropped.
    """
    hv = h.value if isinstance(h, Var) else np.asarray(h, dtype=np.float64)
    av = a.value if isinstance(a, Var) else np.asarray(a, dtype=np.float64)
    m = av.shape[0]
    scale = 1.0 / m if scaled else 1.0
    out = canonical_sum(hv * av, axis=1)
    if scaled:
        out = out / m
    tape = h.tape if isinstance(h, Var) else a.tape if isinstance(a, Var) else None
    if tape is None:
        return out
    h = h if isinstance(h, Var) else tape.constant(hv)
    a = a if isinstance(a, Var) else tape.constant(av)

    def vjp(g):
        gs = g * scale
        return gs[:, None] * av[None, :], hv.T @ gs

    return tape.record(out, (h, a), vjp)


ACTIVATIONS = {
    "relu": (relu, relu_prime),
    "tanh": (tanh, tanh_prime),
    "cos": (cos, cos_prime),
    "identity": (identity, identity_prime),
}


def activation(name):
    try:
        return ACTIVATIONS[name]
    except KeyError:
        raise ValueError(f"unknown activation {name!r}; choose from {sorted(ACTIVATIONS)}") from None


def concat(parts, axis=-1):
    """Concatenate arrays and Vars along ``axis``."""
    tape = next((p.tape for p in parts if isinstance(p, Var)), None)
    values = [p.value if isinstance(p, Var) else np.asarray(p, dtype=np.float64) for p in parts]
    out = np.concatenate(values, axis=axis)
    if tape is None:
        return out
    bounds = np.cumsum([v.shape[axis] for v in values])[:-1]
    vars_ = [p if isinstance(p, Var) else tape.constant(v) for p, v in zip(parts, values)]
    return tape.record(out, vars_, lambda g: tuple(np.split(g, bounds, axis=axis)))
