"""Reverse-mode automatic differentiation on dense float64 tensors.

A ``Tape`` records every operation whose inputs require gradients; node ids
are assigned in creation order, so they are always topologically sorted and
``grad`` is a single reverse sweep over an id range.  Backward rules are
expressed with the same differentiable operations, which is what makes
second-order differentiation (gradient of a function of a gradient) work:
``grad(..., create_graph=True)`` leaves the tape recording on while the
backward expressions are built, so the returned gradients are themselves
differentiable tensors.

First-order gradients (``create_graph=False``, the default) run the same
backward rules with recording suspended, and the hot activations take a
fused-kernel shortcut in that mode.
"""

import math
from contextlib import contextmanager

import numpy as np

from . import kernels


class DimensionError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class NonFiniteError(ArithmeticError):
    """An operation produced NaN or infinity; surfaced instead of stored."""


class GradError(RuntimeError):
    """Invalid request to the backward machinery."""


# ---------------------------------------------------------------------------
# tape


class Tape:
    """Append-only operation record.

    Each entry is ``(op_kind, parent_ids, vjp)``; leaves carry ``vjp=None``.
    Saved forward values live in the vjp closures.  Ids are creation-ordered,
    hence topologically ordered.
    """

    __slots__ = ("nodes",)

    def __init__(self):
        self.nodes = []

    def append(self, op, parent_ids, vjp):
        self.nodes.append((op, parent_ids, vjp))
        return len(self.nodes) - 1

    def __len__(self):
        return len(self.nodes)


_TAPE = None


@contextmanager
def tape():
    """Open a fresh recording tape for the duration of the block."""
    global _TAPE
    prev = _TAPE
    _TAPE = t = Tape()
    try:
        yield t
    finally:
        _TAPE = prev


@contextmanager
def no_grad():
    """Suspend recording; operations return constant tensors."""
    global _TAPE
    prev = _TAPE
    _TAPE = None
    try:
        yield
    finally:
        _TAPE = prev


def recording():
    return _TAPE is not None


# ---------------------------------------------------------------------------
# tensor


class Tensor:
    __slots__ = ("data", "requires_grad", "tape", "node")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.tape = None
        self.node = None

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
        return self.data.item()

    def numpy(self):
        """Detached copy of the underlying array."""
        return self.data.copy()

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"

    # arithmetic sugar; every operator maps to a module-level op
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
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def tensor(data, requires_grad=False):
    return Tensor(data, requires_grad=requires_grad)


def constant(data):
    return Tensor(data)


def as_tensor(x):
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


def zeros(shape):
    return Tensor(np.zeros(shape, dtype=np.float64))


def ones(shape):
    return Tensor(np.ones(shape, dtype=np.float64))


# ---------------------------------------------------------------------------
# recording helpers


def _leaf_id(t, tp):
    """Node id of tensor ``t`` on tape ``tp``, registering a leaf if needed."""
    if t.tape is tp:
        return t.node
    nid = tp.append("leaf", (), None)
    t.tape = tp
    t.node = nid
    return nid


def _check_finite(op, data):
    if not np.all(np.isfinite(data)):
        raise NonFiniteError(f"op '{op}' produced a non-finite value")


def _make(op, data, parents, vjp):
    _check_finite(op, data)
    tp = _TAPE
    if tp is not None and any(p.requires_grad for p in parents):
        out = Tensor(data, requires_grad=True)
        pids = tuple(
            _leaf_id(p, tp) if p.requires_grad else -1 for p in parents
        )
        out.tape = tp
        out.node = tp.append(op, pids, vjp)
        return out
    return Tensor(data)


# ---------------------------------------------------------------------------
# broadcasting support


def broadcast_to(x, shape):
    x = as_tensor(x)
    if x.shape == tuple(shape):
        return x
    data = np.broadcast_to(x.data, shape).copy()
    xshape = x.shape

    def vjp(g):
        return (_unbroadcast(g, xshape),)

    return _make("broadcast", data, (x,), vjp)


def _unbroadcast(g, shape):
    """Sum gradient ``g`` down to ``shape`` (inverse of NumPy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = tsum(g, axis=tuple(range(extra)))
    axes = tuple(
        i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1
    )
    if axes:
        g = tsum(g, axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# arithmetic ops


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    ash, bsh = a.shape, b.shape

    def vjp(g):
        return (_unbroadcast(g, ash), _unbroadcast(g, bsh))

    return _make("add", a.data + b.data, (a, b), vjp)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    ash, bsh = a.shape, b.shape

    def vjp(g):
        return (_unbroadcast(g, ash), _unbroadcast(neg(g), bsh))

    return _make("sub", a.data - b.data, (a, b), vjp)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    ash, bsh = a.shape, b.shape

    def vjp(g):
        return (_unbroadcast(mul(g, b), ash), _unbroadcast(mul(g, a), bsh))

    return _make("mul", a.data * b.data, (a, b), vjp)


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    ash, bsh = a.shape, b.shape
    with np.errstate(divide="ignore", invalid="ignore"):
        data = a.data / b.data
    out = _make("div", data, (a, b), None)

    def vjp(g):
        ga = _unbroadcast(div(g, b), ash)
        gb = _unbroadcast(neg(mul(g, div(out, b))), bsh)
        return (ga, gb)

    _patch_vjp(out, vjp)
    return out


def neg(a):
    a = as_tensor(a)

    def vjp(g):
        return (neg(g),)

    return _make("neg", -a.data, (a,), vjp)


def _patch_vjp(out, vjp):
    """Install a vjp that needs to close over the output tensor."""
    if out.tape is not None:
        op, pids, _ = out.tape.nodes[out.node]
        out.tape.nodes[out.node] = (op, pids, vjp)


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError(f"matmul needs 2-d operands, got {a.shape} @ {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"inner dimensions disagree: {a.shape} @ {b.shape}")

    def vjp(g):
        return (matmul(g, transpose(b)), matmul(transpose(a), g))

    return _make("matmul", a.data @ b.data, (a, b), vjp)


def transpose(a):
    a = as_tensor(a)
    if a.ndim != 2:
        raise DimensionError(f"transpose needs a 2-d tensor, got {a.shape}")

    def vjp(g):
        return (transpose(g),)

    return _make("transpose", a.data.T.copy(), (a,), vjp)


def reshape(a, shape):
    a = as_tensor(a)
    old = a.shape

    def vjp(g):
        return (reshape(g, old),)

    return _make("reshape", a.data.reshape(shape).copy(), (a,), vjp)


def tsum(a, axis=None, keepdims=False):
    """Sum reduction (named to avoid shadowing the builtin)."""
    a = as_tensor(a)
    in_shape = a.shape
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is None:
            return (broadcast_to(g, in_shape),)
        axes = axis if isinstance(axis, tuple) else (axis,)
        if not keepdims:
            kshape = list(in_shape)
            for ax in axes:
                kshape[ax] = 1
            g = reshape(g, tuple(kshape))
        return (broadcast_to(g, in_shape),)

    return _make("sum", data, (a,), vjp)


def tmean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    if axis is None:
        count = a.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = 1
        for ax in axes:
            count *= a.shape[ax]
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]

    def vjp(g):
        grads, start = [], 0
        for s in sizes:
            grads.append(narrow(g, axis, start, s))
            start += s
        return tuple(grads)

    return _make("concat", data, tuple(tensors), vjp)


def narrow(a, axis, start, length):
    """Contiguous slice of ``length`` elements along ``axis``."""
    a = as_tensor(a)
    idx = [slice(None)] * a.ndim
    idx[axis] = slice(start, start + length)
    data = a.data[tuple(idx)].copy()
    before = start
    after = a.shape[axis] - start - length
    shape = a.shape

    def vjp(g):
        pieces = []
        if before:
            zshape = list(shape)
            zshape[axis] = before
            pieces.append(zeros(zshape))
        pieces.append(g)
        if after:
            zshape = list(shape)
            zshape[axis] = after
            pieces.append(zeros(zshape))
        if len(pieces) == 1:
            return (g,)
        return (concat(pieces, axis=axis),)

    return _make("narrow", data, (a,), vjp)


# ---------------------------------------------------------------------------
# elementwise nonlinearities


def tanh(x):
    x = as_tensor(x)
    out = _make("tanh", kernels.tanh(x.data), (x,), None)

    def vjp(g):
        if _TAPE is None:
            return (Tensor(kernels.tanh_grad(out.data, g.data)),)
        return (mul(g, sub(1.0, mul(out, out))),)

    _patch_vjp(out, vjp)
    return out


def elu(x):
    x = as_tensor(x)
    out = _make("elu", kernels.elu(x.data), (x,), None)
    pos = x.data > 0.0

    def vjp(g):
        if _TAPE is None:
            return (Tensor(kernels.elu_grad(x.data, out.data, g.data)),)
        # derivative is 1 for x > 0 and exp(x) = out + 1 otherwise
        deriv = where(pos, ones(out.shape), add(out, 1.0))
        return (mul(g, deriv),)

    _patch_vjp(out, vjp)
    return out


def softplus(x):
    x = as_tensor(x)

    def vjp(g):
        if _TAPE is None:
            return (Tensor(kernels.softplus_grad(x.data, g.data)),)
        return (mul(g, sigmoid(x)),)

    return _make("softplus", kernels.softplus(x.data), (x,), vjp)


def sigmoid(x):
    x = as_tensor(x)
    out = _make("sigmoid", kernels.sigmoid(x.data), (x,), None)

    def vjp(g):
        if _TAPE is None:
            return (Tensor(kernels.sigmoid_grad(out.data, g.data)),)
        return (mul(g, mul(out, sub(1.0, out))),)

    _patch_vjp(out, vjp)
    return out


def exp(x):
    x = as_tensor(x)
    with np.errstate(over="ignore"):
        data = np.exp(x.data)
    out = _make("exp", data, (x,), None)

    def vjp(g):
        return (mul(g, out),)

    _patch_vjp(out, vjp)
    return out


def log(x):
    x = as_tensor(x)

    def vjp(g):
        return (div(g, x),)

    with np.errstate(invalid="ignore", divide="ignore"):
        data = np.log(x.data)
    return _make("log", data, (x,), vjp)


def sqrt(x):
    x = as_tensor(x)
    with np.errstate(invalid="ignore"):
        data = np.sqrt(x.data)
    out = _make("sqrt", data, (x,), None)

    def vjp(g):
        return (div(g, mul(out, 2.0)),)

    _patch_vjp(out, vjp)
    return out


def absolute(x):
    x = as_tensor(x)
    sign = np.sign(x.data)

    def vjp(g):
        return (mul(g, constant(sign)),)

    return _make("abs", np.abs(x.data), (x,), vjp)


def square(x):
    x = as_tensor(x)
    return mul(x, x)


def where(mask, a, b):
    """Select ``a`` where the boolean array ``mask`` holds, else ``b``."""
    a, b = as_tensor(a), as_tensor(b)
    mask = np.asarray(mask, dtype=bool)
    fmask = mask.astype(np.float64)
    ash, bsh = a.shape, b.shape

    def vjp(g):
        ga = _unbroadcast(mul(g, constant(fmask)), ash)
        gb = _unbroadcast(mul(g, constant(1.0 - fmask)), bsh)
        return (ga, gb)

    return _make("where", np.where(mask, a.data, b.data), (a, b), vjp)


def maximum(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return where(a.data >= b.data, a, b)


def minimum(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return where(a.data <= b.data, a, b)


def clip(x, lo, hi):
    """Clamp to [lo, hi]; gradient passes only strictly inside the interval."""
    x = as_tensor(x)
    inside = ((x.data > lo) & (x.data < hi)).astype(np.float64)

    def vjp(g):
        return (mul(g, constant(inside)),)

    return _make("clip", np.clip(x.data, lo, hi), (x,), vjp)


_ACTIVATIONS = {
    "tanh": tanh,
    "elu": elu,
    "softplus": softplus,
    "linear": lambda x: as_tensor(x),
}


def activation(x, kind):
    try:
        fn = _ACTIVATIONS[kind]
    except KeyError:
        raise ValueError(
            f"unknown activation {kind!r}; expected one of {sorted(_ACTIVATIONS)}"
        ) from None
    return fn(x)


# ---------------------------------------------------------------------------
# backward


def grad(output, inputs, create_graph=False):
    """Gradients of a scalar ``output`` with respect to ``inputs``.

    With ``create_graph=True`` the returned tensors stay on the tape so a
    scalar function of them can be differentiated again.  Inputs the output
    does not depend on receive zero tensors.
    """
    if not isinstance(output, Tensor) or output.tape is None:
        raise GradError("output is not on a tape")
    if output.size != 1:
        raise GradError(f"output must be scalar, got shape {output.shape}")
    for i, t in enumerate(inputs):
        if not t.requires_grad:
            raise GradError(f"input {i} does not require grad")

    tp = output.tape
    if create_graph and _TAPE is not tp:
        raise GradError("create_graph=True requires the output's tape to be active")

    input_ids = [t.node if t.tape is tp else None for t in inputs]
    known = [nid for nid in input_ids if nid is not None]
    lo = min(known) if known else output.node

    seed = Tensor(np.ones(output.shape))
    cot = {output.node: seed}
    leaf_grads = {}

    ctx = no_grad() if not create_graph else _keep()
    with ctx:
        for nid in range(output.node, lo - 1, -1):
            g = cot.pop(nid, None)
            if g is None:
                continue
            op, pids, vjp = tp.nodes[nid]
            if vjp is None:
                leaf_grads[nid] = g
                continue
            pgrads = vjp(g)
            for pid, pg in zip(pids, pgrads):
                if pid < 0 or pg is None:
                    continue
                acc = cot.get(pid)
                cot[pid] = pg if acc is None else add(acc, pg)
            # interior cotangents for ids below `lo` are irrelevant

    out = []
    for t, nid in zip(inputs, input_ids):
        g = leaf_grads.get(nid) if nid is not None else None
        if g is None:
            g = cot.get(nid) if nid is not None else None
        if g is None:
            g = zeros(t.shape)
        elif g.shape != t.shape:
            g = reshape(g, t.shape)
        out.append(g)
    return out


@contextmanager
def _keep():
    yield


# ---------------------------------------------------------------------------
# Jacobian spectral norm


def l2norm_rows(x, keepdims=True, stabilizer=1e-24):
    """Euclidean norm of each row of a 2-d tensor.

    A tiny additive stabilizer under the square root keeps the backward pass
    finite at exactly-zero rows; it is far below every tolerance used
    downstream.
    """
    ss = tsum(mul(x, x), axis=1, keepdims=keepdims)
    return sqrt(add(ss, stabilizer))


def _jacobian_norm_and_value(f, x, iters=15):
    """Jacobian spectral norm of ``f`` at ``x`` plus the forward value.

    Shared by ``jacobian_2norm`` and callers (the Jacobian-normalized actor)
    that also need f(x) from the same recorded forward pass.
    """
    if _TAPE is None:
        raise GradError("jacobian_2norm requires an active tape")
    x = as_tensor(x)
    if x.ndim == 1:
        x = reshape(x, (1, x.shape[0]))
    if not x.requires_grad:
        x = tensor(x.data, requires_grad=True)

    y = f(x)
    if y.ndim != 2 or y.shape[0] != x.shape[0]:
        raise DimensionError(
            f"f must map (batch, n) to (batch, m); got {x.shape} -> {y.shape}"
        )
    m = y.shape[1]

    rows = []
    for j in range(m):
        col = tsum(narrow(y, 1, j, 1))
        (gj,) = grad(col, [x], create_graph=True)
        rows.append(gj)

    if m == 1:
        return l2norm_rows(rows[0]), y

    n = x.shape[1]
    v = constant(np.full((x.shape[0], n), 1.0 / math.sqrt(n)))
    for _ in range(iters):
        jv = [tsum(mul(r, v), axis=1, keepdims=True) for r in rows]
        jtjv = mul(rows[0], jv[0])
        for j in range(1, m):
            jtjv = add(jtjv, mul(rows[j], jv[j]))
        v = div(jtjv, add(l2norm_rows(jtjv), 1e-12))
    jv = [tsum(mul(r, v), axis=1, keepdims=True) for r in rows]
    ss = mul(jv[0], jv[0])
    for j in range(1, m):
        ss = add(ss, mul(jv[j], jv[j]))
    return sqrt(add(ss, 1e-24)), y


def jacobian_2norm(f, x, iters=15):
    """Differentiable spectral norm of the Jacobian of ``f`` at ``x``.

    ``f`` maps (batch, n) tensors to (batch, m) tensors with no interaction
    across batch rows.  The Jacobian rows are extracted with one reverse
    sweep per output dimension (recorded, so the result supports double
    backprop), and the 2-norm comes from power iteration on J^T J with a
    fixed iteration count.  For a single-output network the norm of the lone
    Jacobian row is returned directly (the exact rank-one fixed point).

    Returns a (batch, 1) tensor; a 1-d input is treated as a single-row
    batch and yields shape (1, 1).
    """
    norm, _ = _jacobian_norm_and_value(f, x, iters=iters)
    return norm
