"""Dense float64 tensors with tape-based reverse-mode differentiation.

Every tensor produced by an operation on tracked inputs records its parents
and a closure mapping the output gradient to parent gradients. Node ids grow
monotonically with creation, so sorting reachable nodes by descending id is a
valid reverse topological order for :meth:`Tensor.backward`.

Elementwise binary ops require identical shapes between tracked operands.
Untracked constants (python scalars or numpy arrays) may broadcast to the
tracked operand's shape; anything else has to go through
:func:`broadcast_to` explicitly.
"""

import contextlib
import itertools

import numpy as np
from scipy.special import erf

from .errors import ContractError, NumericError, ShapeError

_ids = itertools.count()
_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def is_grad_enabled():
    return _grad_enabled


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "node_id", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.array(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.node_id = next(_ids)
        self._parents = ()
        self._backward = None
        self.name = name

    @classmethod
    def _result(cls, data, parents, backward):
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.node_id = next(_ids)
        out.name = None
        track = _grad_enabled and any(p.requires_grad for p in parents)
        out.requires_grad = track
        out._parents = tuple(parents) if track else ()
        out._backward = backward if track else None
        return out

    # -- basic properties -------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else self.data.item()

    def numpy(self):
        return self.data

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # -- differentiation --------------------------------------------------

    def backward(self, grad=None):
        """Accumulate d(self)/d(node) into ``node.grad`` for every tracked ancestor."""
        if grad is None:
            if self.data.size != 1:
                raise ContractError(f"backward() needs a scalar output, got shape {self.shape}")
            grad = np.ones_like(self.data)
        else:
            grad = np.asarray(grad, dtype=np.float64)
            if grad.shape != self.shape:
                raise ShapeError(f"seed gradient shape {grad.shape} != output shape {self.shape}")
        if not self.requires_grad:
            raise ContractError("backward() called on a tensor that does not require grad")

        order = _reverse_topological(self)
        pending = {self.node_id: grad}
        for node in order:
            g = pending.pop(node.node_id, None)
            if g is None:
                continue
            node.grad = g if node.grad is None else node.grad + g
            if node._backward is None:
                continue
            parent_grads = node._backward(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                prev = pending.get(parent.node_id)
                pending[parent.node_id] = pg if prev is None else prev + pg

    # -- operator sugar ---------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(neg(self), other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        return power(self, p)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def swapaxes(self, a, b):
        return swapaxes(self, a, b)


def _reverse_topological(root):
    seen = {}
    stack = [root]
    while stack:
        node = stack.pop()
        if node.node_id in seen:
            continue
        seen[node.node_id] = node
        stack.extend(p for p in node._parents if p.requires_grad)
    return [seen[k] for k in sorted(seen, reverse=True)]


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _constant_operand(a, other):
    """Return ``other`` as a numpy constant compatible with tracked tensor ``a``."""
    c = np.asarray(other, dtype=np.float64)
    if c.shape != a.shape:
        try:
            ok = np.broadcast_shapes(c.shape, a.shape) == a.shape
        except ValueError:
            ok = False
        if not ok:
            raise ShapeError(f"constant of shape {c.shape} does not broadcast to {a.shape}")
    return c


def _check_same(a, b, op):
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ")


def _reduce_to(g, shape):
    if g.shape == shape:
        return g
    lead = g.ndim - len(shape)
    g = g.sum(axis=tuple(range(lead))) if lead else g
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    return g.sum(axis=axes, keepdims=True) if axes else g


# -- elementwise ------------------------------------------------------------


def add(a, b):
    if not isinstance(a, Tensor):
        a, b = b, a
    if isinstance(b, Tensor):
        _check_same(a, b, "add")
        return Tensor._result(a.data + b.data, (a, b), lambda g: (g, g))
    c = _constant_operand(a, b)
    return Tensor._result(a.data + c, (a,), lambda g: (g,))


def sub(a, b):
    if isinstance(b, Tensor):
        if not isinstance(a, Tensor):
            return add(neg(b), a)
        _check_same(a, b, "sub")
        return Tensor._result(a.data - b.data, (a, b), lambda g: (g, -g))
    c = _constant_operand(a, b)
    return Tensor._result(a.data - c, (a,), lambda g: (g,))


def neg(a):
    return Tensor._result(-a.data, (a,), lambda g: (-g,))


def mul(a, b):
    if not isinstance(a, Tensor):
        a, b = b, a
    if isinstance(b, Tensor):
        _check_same(a, b, "mul")
        ad, bd = a.data, b.data
        return Tensor._result(ad * bd, (a, b), lambda g: (g * bd, g * ad))
    c = _constant_operand(a, b)
    return Tensor._result(a.data * c, (a,), lambda g: (g * c,))


def div(a, b):
    if isinstance(b, Tensor):
        if not isinstance(a, Tensor):
            a = Tensor(np.broadcast_to(np.asarray(a, dtype=np.float64), b.shape).copy())
        _check_same(a, b, "div")
        ad, bd = a.data, b.data
        out = ad / bd
        return Tensor._result(out, (a, b), lambda g: (g / bd, -g * out / bd))
    c = _constant_operand(a, b)
    return Tensor._result(a.data / c, (a,), lambda g: (g / c,))


def power(a, p):
    p = float(p)
    ad = a.data
    return Tensor._result(ad**p, (a,), lambda g: (g * p * ad ** (p - 1.0),))


def sigmoid(a):
    out = np.empty_like(a.data)
    pos = a.data >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a.data[pos]))
    ez = np.exp(a.data[~pos])
    out[~pos] = ez / (1.0 + ez)
    return Tensor._result(out, (a,), lambda g: (g * out * (1.0 - out),))


_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT2PI = 1.0 / np.sqrt(2.0 * np.pi)


def gelu(a):
    """Exact (erf-based) GELU."""
    x = a.data
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    pdf = _INV_SQRT2PI * np.exp(-0.5 * x * x)
    return Tensor._result(x * cdf, (a,), lambda g: (g * (cdf + x * pdf),))


# -- reductions and shape ops -----------------------------------------------


def tsum(a, axis=None, keepdims=False):
    shape = a.shape
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return Tensor._result(np.asarray(out), (a,), backward)


def mean(a, axis=None, keepdims=False):
    count = a.data.size if axis is None else int(np.prod([a.shape[i] for i in np.atleast_1d(axis)]))
    return tsum(a, axis, keepdims) * (1.0 / count)


def reshape(a, shape):
    orig = a.shape
    return Tensor._result(a.data.reshape(shape), (a,), lambda g: (g.reshape(orig),))


def swapaxes(a, ax1, ax2):
    return Tensor._result(np.swapaxes(a.data, ax1, ax2), (a,), lambda g: (np.swapaxes(g, ax1, ax2),))


def broadcast_to(a, shape):
    """Explicit broadcast; the gradient sums over the expanded axes."""
    shape = tuple(shape)
    orig = a.shape
    try:
        out = np.broadcast_to(a.data, shape)
    except ValueError:
        raise ShapeError(f"cannot broadcast {orig} to {shape}") from None
    return Tensor._result(out, (a,), lambda g: (_reduce_to(g, orig),))


def _is_fancy(idx):
    items = idx if isinstance(idx, tuple) else (idx,)
    return any(isinstance(i, (list, np.ndarray)) for i in items)


def getitem(a, idx):
    shape = a.shape
    out = a.data[idx]
    fancy = _is_fancy(idx)

    def backward(g):
        full = np.zeros(shape)
        if fancy:
            np.add.at(full, idx, g)
        else:
            full[idx] = g
        return (full,)

    return Tensor._result(np.array(out), (a,), backward)


def concat(tensors, axis=0):
    data = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return Tensor._result(data, tuple(tensors), backward)


def stack(tensors, axis=0):
    data = np.stack([t.data for t in tensors], axis=axis)

    def backward(g):
        return tuple(np.moveaxis(g, axis, 0))

    return Tensor._result(data, tuple(tensors), backward)


# -- contractions -----------------------------------------------------------


def matmul(a, b):
    """Batched matrix product; batch extents must match exactly."""
    if a.ndim < 2 or b.ndim < 2 or a.shape[:-2] != b.shape[:-2] or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    ad, bd = a.data, b.data
    return Tensor._result(
        ad @ bd,
        (a, b),
        lambda g: (g @ np.swapaxes(bd, -1, -2), np.swapaxes(ad, -1, -2) @ g),
    )


def einsum(subscripts, *operands):
    """Differentiable einsum with an explicit ``->`` output.

    Each index of an operand must also appear in the output or in another
    operand; repeated indices within one operand are not supported.
    """
    if "->" not in subscripts:
        raise ContractError("einsum needs an explicit '->' output")
    lhs, rhs = subscripts.replace(" ", "").split("->")
    ins = lhs.split(",")
    if len(ins) != len(operands):
        raise ContractError(f"einsum: {len(ins)} subscripts for {len(operands)} operands")
    datas = [op.data for op in operands]
    out = np.einsum(subscripts, *datas, optimize=True)

    def backward(g):
        grads = []
        for k, op in enumerate(operands):
            if not op.requires_grad:
                grads.append(None)
                continue
            others = [ins[i] for i in range(len(ins)) if i != k]
            spec = ",".join([rhs] + others) + "->" + ins[k]
            grads.append(np.einsum(spec, g, *[datas[i] for i in range(len(ins)) if i != k], optimize=True))
        return tuple(grads)

    return Tensor._result(np.asarray(out), tuple(operands), backward)


# -- layers -----------------------------------------------------------------


def linear(x, w, b=None):
    """Channel-wise affine map ``x @ w + b`` over the last axis of ``x``."""
    if w.ndim != 2 or x.shape[-1] != w.shape[0]:
        raise ShapeError(f"linear: input shape {x.shape} incompatible with weight shape {w.shape}")
    if b is not None and b.shape != (w.shape[1],):
        raise ShapeError(f"linear: bias shape {b.shape} does not match weight shape {w.shape}")
    xd, wd = x.data, w.data
    out = xd @ wd
    if b is not None:
        out = out + b.data
    c_in, c_out = wd.shape

    def backward(g):
        g2 = g.reshape(-1, c_out)
        gx = g @ wd.T
        gw = xd.reshape(-1, c_in).T @ g2
        gb = g2.sum(axis=0)
        return (gx, gw, gb) if b is not None else (gx, gw)

    parents = (x, w, b) if b is not None else (x, w)
    return Tensor._result(out, parents, backward)


def softmax_lastdim(x):
    """Max-shifted softmax over the last axis."""
    xd = x.data
    if xd.shape and xd.shape[-1] < 1:
        raise ShapeError("softmax over an empty axis")
    if np.isnan(xd).any():
        raise NumericError("softmax input contains NaN")
    e = np.exp(xd - xd.max(axis=-1, keepdims=True))
    y = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return Tensor._result(y, (x,), backward)


LN_EPS = 1e-5


def layer_norm(x, gamma, beta, eps=LN_EPS):
    """Normalize the last axis to zero mean / unit (population) variance, then scale and shift."""
    c = x.shape[-1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"layer_norm: affine shapes {gamma.shape}/{beta.shape} vs channels {c}")
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    gd = gamma.data

    def backward(g):
        dxhat = g * gd
        dx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True) - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        lead = tuple(range(g.ndim - 1))
        return dx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return Tensor._result(xhat * gd + beta.data, (x, gamma, beta), backward)


def norm_lastdim(x):
    """Euclidean norm over the last axis; the subgradient at 0 is taken as 0."""
    xd = x.data
    n = np.sqrt((xd * xd).sum(axis=-1))

    def backward(g):
        safe = np.where(n > 0, n, 1.0)
        return (xd * (g / safe * (n > 0))[..., None],)

    return Tensor._result(n, (x,), backward)


def dropout(x, rate, rng):
    """Inverted dropout; identity when ``rate`` is 0 or ``rng`` is None."""
    if rate <= 0.0 or rng is None:
        return x
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return mul(x, keep)


# -- finite-difference checking ---------------------------------------------


def grad_check(f, inputs, eps=1e-4):
    """Max relative error between backprop and central differences.

    ``f`` maps the ``inputs`` tensors to a scalar tensor. The error of one
    entry is ``|analytic - numeric| / max(1, |analytic|)``.
    """
    if not 0.0 < eps <= 1e-2:
        raise ContractError(f"eps must lie in (0, 1e-2], got {eps}")
    inputs = list(inputs)
    for t in inputs:
        t.requires_grad = True
        t.grad = None
    out = f(*inputs)
    if not isinstance(out, Tensor) or out.data.size != 1:
        raise ContractError("grad_check: f must return a scalar tensor")
    out.backward()
    analytic = [np.zeros(t.shape) if t.grad is None else t.grad.copy() for t in inputs]

    worst = 0.0
    with no_grad():
        for t, a in zip(inputs, analytic):
            for idx in np.ndindex(t.shape):
                orig = t.data[idx]
                t.data[idx] = orig + eps
                fp = float(f(*inputs).data)
                t.data[idx] = orig - eps
                fm = float(f(*inputs).data)
                t.data[idx] = orig
                num = (fp - fm) / (2.0 * eps)
                worst = max(worst, abs(a[idx] - num) / max(1.0, abs(a[idx])))
    return worst
