"""Reverse-mode tape over numpy arrays plus second-order Taylor propagation.

Two layers live here:

* :class:`Var` -- a node in a reverse-mode graph. Each node holds a numpy
  array (a batch of scalars) and the vector-Jacobian closures to its parents.
  Only a small primitive set is supported; anything else raises
  :class:`UnsupportedPrimitive` naming the offending operation.
* :func:`taylor_forward` -- pushes value, first and second directional
  derivatives along each requested input coordinate through an MLP. It is
  written against the helper functions below, so it runs either on plain
  arrays (fast evaluation) or on :class:`Var` parameters (loss gradients).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import _kernels

_counter = itertools.count()


class UnsupportedPrimitive(TypeError):
    """Raised when a loss graph uses an operation the tape does not record."""

    def __init__(self, name: str):
        super().__init__(f"unsupported primitive in loss graph: {name}")
        self.primitive = name


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    ndim_extra = grad.ndim - len(shape)
    if ndim_extra > 0:
        grad = grad.sum(axis=tuple(range(ndim_extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Var:
    """Array-valued node of a reverse-mode computation graph."""

    __slots__ = ("value", "grad", "_parents", "_order")
    __array_priority__ = 1000

    def __init__(self, value, parents=()):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self._parents = parents
        self._order = next(_counter)

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def __len__(self):
        return len(self.value)

    def __repr__(self):
        return f"Var(shape={self.value.shape})"

    # -- arithmetic -----------------------------------------------------
    def __add__(self, other):
        if not isinstance(other, Var):
            other = np.asarray(other, dtype=np.float64)
            return Var(self.value + other, ((self, lambda g, s=self.shape: _unbroadcast(g, s)),))
        a, b = self.shape, other.shape
        return Var(
            self.value + other.value,
            ((self, lambda g: _unbroadcast(g, a)), (other, lambda g: _unbroadcast(g, b))),
        )

    __radd__ = __add__

    def __neg__(self):
        return Var(-self.value, ((self, lambda g: -g),))

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if not isinstance(other, Var):
            c = np.asarray(other, dtype=np.float64)
            s = self.shape
            return Var(self.value * c, ((self, lambda g: _unbroadcast(g * c, s)),))
        x, y = self.value, other.value
        return Var(
            x * y,
            (
                (self, lambda g: _unbroadcast(g * y, x.shape)),
                (other, lambda g: _unbroadcast(g * x, y.shape)),
            ),
        )

    __rmul__ = __mul__

    def __getitem__(self, idx):
        shape = self.shape

        def back(g):
            out = np.zeros(shape)
            if _needs_add_at(idx):
                np.add.at(out, idx, g)
            else:
                out[idx] = g
            return out

        return Var(self.value[idx], ((self, back),))

    def __truediv__(self, other):
        if isinstance(other, Var):
            raise UnsupportedPrimitive("division")
        return self * (1.0 / np.asarray(other, dtype=np.float64))

    def __rtruediv__(self, other):
        raise UnsupportedPrimitive("division")

    def __pow__(self, p):
        if p == 2:
            return square(self)
        raise UnsupportedPrimitive(f"power({p})")

    def __abs__(self):
        raise UnsupportedPrimitive("abs")

    def __matmul__(self, other):
        raise UnsupportedPrimitive("matmul (use linear)")

    def __array_ufunc__(self, ufunc, method, *inputs, **kwargs):
        handler = _UFUNCS.get(ufunc.__name__) if method == "__call__" else None
        if handler is None or kwargs:
            raise UnsupportedPrimitive(ufunc.__name__)
        return handler(*inputs)

    def __array_function__(self, func, types, args, kwargs):
        handler = _FUNCS.get(func.__name__)
        if handler is None:
            raise UnsupportedPrimitive(func.__name__)
        return handler(*args, **kwargs)

    # -- reductions -----------------------------------------------------
    def sum(self, axis=None):
        return vsum(self, axis)

    def mean(self, axis=None):
        return vmean(self, axis)

    # -- backward -------------------------------------------------------
    def backward(self):
        """Accumulate d(self)/d(node) into ``node.grad`` for every ancestor."""
        if self.value.size != 1:
            raise ValueError("backward() needs a scalar output")
        nodes = []
        seen = set()
        stack = [self]
        while stack:
            n = stack.pop()
            if id(n) in seen:
                continue
            seen.add(id(n))
            nodes.append(n)
            stack.extend(p for p, _ in n._parents)
        nodes.sort(key=lambda n: n._order, reverse=True)
        for n in nodes:
            n.grad = None
        self.grad = np.ones_like(self.value)
        for n in nodes:
            if n.grad is None:
                continue
            for parent, vjp in n._parents:
                g = vjp(n.grad)
                parent.grad = g if parent.grad is None else parent.grad + g


def _needs_add_at(idx) -> bool:
    items = idx if isinstance(idx, tuple) else (idx,)
    return any(isinstance(i, (list, np.ndarray)) for i in items)


def _val(x):
    return x.value if isinstance(x, Var) else np.asarray(x, dtype=np.float64)


# -- elementwise primitives -------------------------------------------------
def tanh(x):
    if not isinstance(x, Var):
        return np.tanh(x)
    y = np.tanh(x.value)
    return Var(y, ((x, lambda g: g * (1.0 - y * y)),))


def sin(x):
    if not isinstance(x, Var):
        return np.sin(x)
    v = x.value
    return Var(np.sin(v), ((x, lambda g: g * np.cos(v)),))


def cos(x):
    if not isinstance(x, Var):
        return np.cos(x)
    v = x.value
    return Var(np.cos(v), ((x, lambda g: -g * np.sin(v)),))


def _sigmoid(v):
    return 0.5 * (1.0 + np.tanh(0.5 * v))


def sigmoid(x):
    if not isinstance(x, Var):
        return _sigmoid(x)
    y = _sigmoid(x.value)
    return Var(y, ((x, lambda g: g * y * (1.0 - y)),))


def softplus(x):
    if not isinstance(x, Var):
        return np.logaddexp(0.0, x)
    v = x.value
    return Var(np.logaddexp(0.0, v), ((x, lambda g: g * _sigmoid(v)),))


def square(x):
    if not isinstance(x, Var):
        return np.square(x)
    v = x.value
    return Var(v * v, ((x, lambda g: 2.0 * g * v),))


def exp(x):
    if not isinstance(x, Var):
        return np.exp(x)
    y = np.exp(x.value)
    return Var(y, ((x, lambda g: g * y),))


def vsum(x, axis=None):
    if not isinstance(x, Var):
        return np.sum(x, axis=axis)
    shape = x.shape

    def back(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return np.broadcast_to(g, shape).copy()

    return Var(np.sum(x.value, axis=axis), ((x, back),))


def vmean(x, axis=None):
    if not isinstance(x, Var):
        return np.mean(x, axis=axis)
    n = x.value.size if axis is None else x.shape[axis]
    return vsum(x, axis) * (1.0 / n)


def linear(h, weight, bias=None):
    """``h @ weight.T + bias`` over the last axis of ``h``."""
    if not any(isinstance(a, Var) for a in (h, weight, bias)):
        out = h @ weight.T
        return out if bias is None else out + bias
    hv, wv = _val(h), _val(weight)
    out = hv @ wv.T
    parents = []
    if isinstance(h, Var):
        parents.append((h, lambda g: g @ wv))
    if isinstance(weight, Var):
        parents.append(
            (weight, lambda g: g.reshape(-1, g.shape[-1]).T @ hv.reshape(-1, hv.shape[-1]))
        )
    if bias is not None:
        out = out + _val(bias)
        if isinstance(bias, Var):
            parents.append((bias, lambda g: g.reshape(-1, g.shape[-1]).sum(axis=0)))
    return Var(out, tuple(parents))


def stack(items: Sequence, axis=0):
    if not any(isinstance(i, Var) for i in items):
        return np.stack([np.asarray(i) for i in items], axis=axis)
    vals = [_val(i) for i in items]
    parents = []
    for k, item in enumerate(items):
        if isinstance(item, Var):
            parents.append((item, lambda g, k=k: np.take(g, k, axis=axis)))
    return Var(np.stack(vals, axis=axis), tuple(parents))


_UFUNCS = {
    "add": lambda a, b: a + b if isinstance(a, Var) else b + a,
    "subtract": lambda a, b: a - b if isinstance(a, Var) else -(b - a),
    "multiply": lambda a, b: a * b if isinstance(a, Var) else b * a,
    "negative": lambda a: -a,
    "tanh": tanh,
    "sin": sin,
    "cos": cos,
    "square": square,
    "exp": exp,
}
_FUNCS = {"sum": vsum, "mean": vmean, "stack": stack}


# -- activations ------------------------------------------------------------
@dataclass(frozen=True)
class Activation:
    """A smooth activation with derivatives up to third order.

    ``derivs(z, s)`` maps ``z`` and ``s = fn(z)`` (plain arrays) to the first,
    second and third derivatives; the fused Taylor primitive needs the third
    one for its reverse pass.
    """

    name: str
    fn: Callable
    derivs: Callable


def _tanh_derivs(z, s):
    d1 = 1.0 - s * s
    d2 = -2.0 * s * d1
    return d1, d2, -2.0 * (d1 * d1 + s * d2)


def _sine_derivs(z, s):
    c = np.cos(z)
    return c, -s, -c


def _softplus_derivs(z, s):
    p = _sigmoid(z)
    d2 = p * (1.0 - p)
    return p, d2, d2 * (1.0 - 2.0 * p)


ACTIVATIONS = {
    "tanh": Activation("tanh", tanh, _tanh_derivs),
    "sine": Activation("sine", sin, _sine_derivs),
    "softplus": Activation("softplus", softplus, _softplus_derivs),
}


def get_activation(name: str) -> Activation:
    try:
        return ACTIVATIONS[name]
    except KeyError:
        raise ValueError(
            f"activation {name!r} is not twice differentiable or unknown; "
            f"choose from {sorted(ACTIVATIONS)}"
        ) from None


def mlp_forward(weights, biases, activation: Activation, x):
    """Plain value pass. ``x`` has shape (batch, n_in); returns shape (batch,)."""
    h = x
    for w, b in zip(weights[:-1], biases[:-1]):
        h = activation.fn(linear(h, w, b))
    out = linear(h, weights[-1], biases[-1])
    return out[..., 0]


# -- fused Taylor primitives --------------------------------------------------
# A Taylor state for k directions is a stacked array of shape (1 + 2k, B, w):
# slot 0 holds values, slots 1..k first derivatives and k+1..2k second
# derivatives along each direction.


def taylor_linear(state, weight, bias):
    """Affine map applied slot-wise; the bias only enters the value slot."""
    sv, wv, bv = _val(state), _val(weight), _val(bias)
    c, batch, width = sv.shape
    flat = sv.reshape(c * batch, width)
    out = np.empty((c, batch, wv.shape[0]))
    # value slot on its own so it rounds exactly like the plain forward pass
    out[0] = sv[0] @ wv.T + bv
    out[1:] = (flat[batch:] @ wv.T).reshape(c - 1, batch, -1)
    if not any(isinstance(a, Var) for a in (state, weight, bias)):
        return out
    parents = []
    if isinstance(state, Var):
        parents.append((state, lambda g: (g.reshape(c * batch, -1) @ wv).reshape(c, batch, width)))
    if isinstance(weight, Var):
        parents.append((weight, lambda g: g.reshape(c * batch, -1).T @ flat))
    if isinstance(bias, Var):
        parents.append((bias, lambda g: g[0].sum(axis=0)))
    return Var(out, tuple(parents))


def taylor_activation(state, activation: Activation):
    """Push a Taylor state through the activation (chain rule to 2nd order)."""
    sv = _val(state)
    k = (sv.shape[0] - 1) // 2
    z, dz, d2z = sv[0], sv[1 : k + 1], sv[k + 1 :]
    s, d1, d2, d3 = (np.empty_like(z) for _ in range(4))
    _kernels.act_derivs(_kernels.CODES[activation.name], z, s, d1, d2, d3)
    out = np.empty_like(sv)
    _kernels.taylor_act_forward(dz, d2z, s, d1, d2, out)
    if not isinstance(state, Var):
        return out

    def back(g):
        gin = np.empty_like(sv)
        _kernels.taylor_act_backward(np.ascontiguousarray(g), dz, d2z, d1, d2, d3, gin)
        return gin

    return Var(out, ((state, back),))


def taylor_input(x, coords):
    """Taylor state of the raw inputs: value x, unit first derivatives, zero curvature."""
    x = np.asarray(x, dtype=np.float64)
    k = len(coords)
    state = np.zeros((1 + 2 * k, x.shape[0], x.shape[1]))
    state[0] = x
    for j, c in enumerate(coords):
        state[1 + j, :, c] = 1.0
    return state


def taylor_forward(weights, biases, activation: Activation, x, coords: Sequence[int]):
    """Propagate second-order Taylor terms along each coordinate in ``coords``.

    Returns ``(value, grad, hess_diag)`` with shapes ``(B,)``, ``(k, B)`` and
    ``(k, B)`` where ``k = len(coords)``. Entries are exact derivatives of the
    network output (up to roundoff), not finite-difference estimates.
    """
    coords = list(coords)
    k = len(coords)
    state = taylor_input(x, coords)
    n_layers = len(weights)
    for layer in range(n_layers):
        state = taylor_linear(state, weights[layer], biases[layer])
        if layer < n_layers - 1:
            state = taylor_activation(state, activation)
    out = state[..., 0]
    return out[0], out[1 : k + 1], out[k + 1 :]
