"""Reverse-mode automatic differentiation over dense numpy arrays.

Graph nodes wrap float32/float64 arrays. Every primitive's backward rule is
itself expressed through these primitives, so gradients are ordinary graph
nodes and can be differentiated again (the critic's input-gradient penalty
relies on this). Ops without a second-order rule must be registered with
``twice_differentiable=False``; requesting a differentiable gradient through
one of them raises instead of silently producing wrong numbers.

Summation order inside ``conv1d`` is pinned (kernel-position major, input
channel minor) so its forward output is bit-identical to a naive triple-loop
reference at the same float width.
"""

import threading

import numpy as np

from .errors import GraphError, NotTwiceDifferentiableError, ShapeError

_FLOAT_TYPES = (np.float32, np.float64)

_state = threading.local()


def _recording():
    return getattr(_state, "recording", True)


class no_grad:
    """Context manager that disables graph recording."""

    def __enter__(self):
        self._prev = _recording()
        _state.recording = False
        return self

    def __exit__(self, *exc):
        _state.recording = self._prev
        return False


class kink_trace:
    """Collect the branch masks of piecewise ops evaluated inside the block.

    Finite-difference checks use this to detect when the two evaluation
    points fall on different linear pieces of a ReLU-family activation or a
    clamp, which makes the difference quotient meaningless for that draw.
    """

    def __init__(self, buf):
        self.buf = buf

    def __enter__(self):
        self._prev = getattr(_state, "kinks", None)
        _state.kinks = self.buf
        return self.buf

    def __exit__(self, *exc):
        _state.kinks = self._prev
        return False


def _record_kink(mask):
    buf = getattr(_state, "kinks", None)
    if buf is not None:
        buf.append(np.packbits(mask).tobytes())


# op name -> whether a differentiable (second-order) backward rule exists
_SECOND_ORDER = {}


def register_op(name, twice_differentiable=True):
    _SECOND_ORDER[name] = bool(twice_differentiable)


class Tensor:
    """A node in the computation graph.

    ``data`` is a numpy array (float32 unless explicitly float64); ``grad``
    is another Tensor of the same shape once populated by ``backward``.
    """

    __slots__ = ("data", "grad", "requires_grad", "op", "_inputs", "_vjp")

    def __init__(self, data, requires_grad=False):
        if isinstance(data, Tensor):
            raise TypeError("wrap raw arrays, not Tensors")
        arr = np.asarray(data)
        if arr.dtype not in _FLOAT_TYPES:
            arr = arr.astype(np.float32)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.op = "leaf"
        self._inputs = ()
        self._vjp = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data.reshape(()))

    def detach(self):
        return Tensor(self.data)

    def is_finite(self):
        return bool(np.isfinite(self.data).all())

    def backward(self, create_graph=False):
        backward(self, create_graph=create_graph)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, op={self.op!r})"

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

    def __pow__(self, p):
        return pow_const(self, p)


def _node(op, data, inputs, vjp):
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.op = op
    if _recording() and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out._inputs = tuple(inputs)
        out._vjp = vjp
    else:
        out.requires_grad = False
        out._inputs = ()
        out._vjp = None
    return out


def _lift(x, dtype=None):
    if isinstance(x, Tensor):
        return x
    arr = np.asarray(x, dtype=dtype if dtype is not None else np.float32)
    if arr.dtype not in _FLOAT_TYPES:
        arr = arr.astype(np.float32)
    return Tensor(arr)


def _lift2(op, a, b):
    """Lift scalars/arrays so both operands are Tensors of one dtype."""
    a_is = isinstance(a, Tensor)
    b_is = isinstance(b, Tensor)
    if a_is and not b_is:
        b = _lift(b, a.dtype)
    elif b_is and not a_is:
        a = _lift(a, b.dtype)
    elif not a_is and not b_is:
        a = _lift(a)
        b = _lift(b, a.dtype)
    if a.data.dtype != b.data.dtype:
        raise ShapeError(f"{op}: mixed dtypes {a.data.dtype} vs {b.data.dtype}")
    return a, b


def _lift2_elementwise(op, a, b):
    a, b = _lift2(op, a, b)
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None
    return a, b


def _unbroadcast(g, shape):
    """Reduce gradient ``g`` back to ``shape`` after numpy broadcasting."""
    shape = tuple(shape)
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    axes = tuple(range(extra)) + tuple(
        i + extra for i, s in enumerate(shape) if s == 1 and g.shape[i + extra] != 1
    )
    r = sum_(g, axis=axes, keepdims=False) if axes else g
    if r.shape != shape:
        r = reshape(r, shape)
    return r


# ---------------------------------------------------------------------------
# arithmetic primitives


def add(a, b):
    a, b = _lift2_elementwise("add", a, b)

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _node("add", a.data + b.data, (a, b), vjp)


def sub(a, b):
    a, b = _lift2_elementwise("sub", a, b)

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(neg(g), b.shape)

    return _node("sub", a.data - b.data, (a, b), vjp)


def mul(a, b):
    a, b = _lift2_elementwise("mul", a, b)

    def vjp(g):
        return _unbroadcast(mul(g, b), a.shape), _unbroadcast(mul(g, a), b.shape)

    return _node("mul", a.data * b.data, (a, b), vjp)


def div(a, b):
    a, b = _lift2_elementwise("div", a, b)

    def vjp(g):
        ga = _unbroadcast(div(g, b), a.shape)
        gb = _unbroadcast(neg(div(mul(g, a), mul(b, b))), b.shape)
        return ga, gb

    return _node("div", a.data / b.data, (a, b), vjp)


def neg(a):
    a = _lift(a)

    def vjp(g):
        return (neg(g),)

    return _node("neg", -a.data, (a,), vjp)


def pow_const(a, p):
    a = _lift(a)
    p = float(p)

    def vjp(g):
        return (mul(mul(g, p), pow_const(a, p - 1.0)),)

    return _node("pow", a.data ** p, (a,), vjp)


def sqrt_(a):
    a = _lift(a)
    holder = []

    def vjp(g):
        return (div(g, mul(holder[0], 2.0)),)

    out = _node("sqrt", np.sqrt(a.data), (a,), vjp)
    holder.append(out)
    return out


def exp(a):
    a = _lift(a)
    holder = []

    def vjp(g):
        return (mul(g, holder[0]),)

    out = _node("exp", np.exp(a.data), (a,), vjp)
    holder.append(out)
    return out


def log(a):
    a = _lift(a)

    def vjp(g):
        return (div(g, a),)

    return _node("log", np.log(a.data), (a,), vjp)


def sigmoid(a):
    a = _lift(a)
    d = a.data
    out_data = np.empty_like(d)
    pos = d >= 0
    out_data[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
    ez = np.exp(d[~pos])
    out_data[~pos] = ez / (1.0 + ez)
    holder = []

    def vjp(g):
        y = holder[0]
        return (mul(g, mul(y, sub(1.0, y))),)

    out = _node("sigmoid", out_data, (a,), vjp)
    holder.append(out)
    return out


def softplus(a):
    """log(1 + exp(a)) computed without overflow."""
    a = _lift(a)
    data = np.logaddexp(np.zeros((), dtype=a.dtype), a.data)

    def vjp(g):
        return (mul(g, sigmoid(a)),)

    return _node("softplus", data, (a,), vjp)


def arccos(a):
    a = _lift(a)

    def vjp(g):
        return (neg(div(g, sqrt_(sub(1.0, mul(a, a))))),)

    return _node("arccos", np.arccos(a.data), (a,), vjp)


def clamp(a, lo, hi):
    a = _lift(a)
    inside = (a.data >= lo) & (a.data <= hi)
    _record_kink(inside)
    mask = Tensor(inside.astype(a.dtype))

    def vjp(g):
        return (mul(g, mask),)

    return _node("clamp", np.clip(a.data, lo, hi), (a,), vjp)


# ---------------------------------------------------------------------------
# shape and reduction primitives


def reshape(a, shape):
    a = _lift(a)
    shape = tuple(int(s) for s in shape)
    old = a.shape

    def vjp(g):
        return (reshape(g, old),)

    try:
        data = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view {old} as {shape}") from None
    return _node("reshape", data, (a,), vjp)


def transpose2d(a):
    a = _lift(a)
    if a.ndim != 2:
        raise ShapeError(f"transpose2d: expected 2-d input, got {a.shape}")

    def vjp(g):
        return (transpose2d(g),)

    return _node("transpose2d", a.data.T, (a,), vjp)


def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, (int, np.integer)):
        axis = (axis,)
    return tuple(sorted(a % ndim for a in axis))


def sum_(a, axis=None, keepdims=False):
    a = _lift(a)
    axes = _norm_axes(axis, a.ndim)
    data = a.data.sum(axis=axes, keepdims=keepdims)
    kept = tuple(1 if i in axes else s for i, s in enumerate(a.shape))

    def vjp(g):
        gg = g if keepdims else reshape(g, kept)
        return (broadcast_to(gg, a.shape),)

    return _node("sum", data, (a,), vjp)


def broadcast_to(a, shape):
    a = _lift(a)
    shape = tuple(int(s) for s in shape)
    try:
        data = np.broadcast_to(a.data, shape).copy()
    except ValueError:
        raise ShapeError(f"broadcast_to: {a.shape} does not broadcast to {shape}") from None

    def vjp(g):
        return (_unbroadcast(g, a.shape),)

    return _node("broadcast", data, (a,), vjp)


def mean(a, axis=None, keepdims=False):
    a = _lift(a)
    axes = _norm_axes(axis, a.ndim)
    n = 1
    for ax in axes:
        n *= a.shape[ax]
    return mul(sum_(a, axis=axes, keepdims=keepdims), 1.0 / n)


def matmul(a, b):
    a, b = _lift2("matmul", a, b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul: expected 2-d operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dims disagree, {a.shape} @ {b.shape}")

    def vjp(g):
        return matmul(g, transpose2d(b)), matmul(transpose2d(a), g)

    return _node("matmul", a.data @ b.data, (a, b), vjp)


def concat(parts, axis):
    parts = [_lift(p) for p in parts]
    if not parts:
        raise ShapeError("concat: empty input list")
    axis = axis % parts[0].ndim
    data = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.shape[axis] for p in parts]

    def vjp(g):
        grads = []
        start = 0
        for p, s in zip(parts, sizes):
            key = tuple(
                slice(start, start + s) if i == axis else slice(None)
                for i in range(p.ndim)
            )
            grads.append(slice_(g, key))
            start += s
        return tuple(grads)

    return _node("concat", data, tuple(parts), vjp)


def slice_(a, key):
    """Basic slicing with a full tuple of ``slice`` objects."""
    a = _lift(a)
    if not isinstance(key, tuple) or len(key) != a.ndim or not all(
        isinstance(k, slice) for k in key
    ):
        raise ShapeError("slice_: key must be a tuple of slices, one per axis")
    shape = a.shape

    def vjp(g):
        return (unslice(g, shape, key),)

    return _node("slice", a.data[key], (a,), vjp)


def unslice(a, shape, key):
    """Scatter ``a`` into zeros of ``shape`` at ``key`` (adjoint of slice_)."""
    a = _lift(a)
    shape = tuple(int(s) for s in shape)
    data = np.zeros(shape, dtype=a.dtype)
    data[key] = a.data

    def vjp(g):
        return (slice_(g, key),)

    return _node("unslice", data, (a,), vjp)


# ---------------------------------------------------------------------------
# neural-net layers


def conv1d(x, w, b=None, stride=1, padding="same"):
    """1-d convolution over ``x`` of shape (batch, length, channels).

    ``w`` has shape (kernel, in_channels, out_channels). "same" padding keeps
    ceil(length/stride) output positions by zero-padding both ends, split as
    evenly as possible with the extra sample on the right.
    """
    x = _lift(x)
    w = _lift(w, x.dtype)
    if x.ndim != 3:
        raise ShapeError(f"conv1d: expected (batch, length, channels), got {x.shape}")
    if w.ndim != 3:
        raise ShapeError(f"conv1d: expected (kernel, in, out) weights, got {w.shape}")
    B, L, C = x.shape
    K, Cw, O = w.shape
    if Cw != C:
        raise ShapeError(f"conv1d: input has {C} channels, kernel expects {Cw}")
    if stride < 1:
        raise ShapeError(f"conv1d: stride must be positive, got {stride}")
    if padding == "same":
        T = -(-L // stride)
        total = max(0, (T - 1) * stride + K - L)
        if total:
            lo = total // 2
            x = unslice(x, (B, L + total, C), (slice(None), slice(lo, lo + L), slice(None)))
    elif padding == "valid":
        if L < K:
            raise ShapeError(f"conv1d: kernel {K} longer than input {L} with valid padding")
    else:
        raise ShapeError(f"conv1d: unknown padding {padding!r}")
    out = _conv1d_core(x, w, stride)
    if b is not None:
        b = _lift(b, x.dtype)
        if b.shape != (O,):
            raise ShapeError(f"conv1d: bias shape {b.shape}, expected ({O},)")
        out = add(out, b)
    return out


def _conv1d_core(x, w, stride):
    B, Lp, C = x.shape
    K, _, O = w.shape
    if Lp < K:
        raise ShapeError(f"conv1d: kernel {K} longer than padded input {Lp}")
    T = (Lp - K) // stride + 1
    xd = x.data
    wd = w.data
    out = np.zeros((B, T, O), dtype=xd.dtype)
    tmp = np.empty((B, T, O), dtype=xd.dtype)
    span = (T - 1) * stride + 1
    # accumulation order is part of the contract: kernel position major,
    # input channel minor, one product added at a time
    for k in range(K):
        xk = xd[:, k : k + span : stride, :]
        for c in range(C):
            np.multiply(xk[:, :, c, None], wd[k, c], out=tmp)
            out += tmp

    def vjp(g):
        g2 = reshape(g, (B * T, O))
        gx = None
        gw_rows = []
        for k in range(K):
            key = (slice(None), slice(k, k + span, stride), slice(None))
            xk_t = reshape(slice_(x, key), (B * T, C))
            gw_rows.append(reshape(matmul(transpose2d(xk_t), g2), (1, C, O)))
            wk = reshape(slice_(w, (slice(k, k + 1), slice(None), slice(None))), (C, O))
            gxk = reshape(matmul(g2, transpose2d(wk)), (B, T, C))
            piece = unslice(gxk, (B, Lp, C), key)
            gx = piece if gx is None else add(gx, piece)
        return gx, concat(gw_rows, axis=0)

    return _node("conv1d", out, (x, w), vjp)


def avgpool1d(x, width):
    """Non-overlapping average pooling along the length axis of (B, L, C)."""
    x = _lift(x)
    if x.ndim != 3:
        raise ShapeError(f"avgpool1d: expected 3-d input, got {x.shape}")
    B, L, C = x.shape
    if L % width:
        raise ShapeError(f"avgpool1d: length {L} not divisible by window {width}")
    return mean(reshape(x, (B, L // width, width, C)), axis=2)


def linear(x, w, b=None):
    """Affine map x @ w + b with x (B, in), w (in, out), b (out,)."""
    out = matmul(x, w)
    if b is not None:
        out = add(out, b)
    return out


def prelu(x, slope):
    """Parametric ReLU; ``slope`` broadcasts against the trailing axes."""
    x = _lift(x)
    _record_kink(x.data > 0)
    pos = (x.data > 0).astype(x.dtype)
    pos_t = Tensor(pos)
    neg_t = Tensor(1.0 - pos)
    return add(mul(x, pos_t), mul(mul(x, neg_t), slope))


def leaky_relu(x, slope=0.01):
    x = _lift(x)
    _record_kink(x.data > 0)
    pos = (x.data > 0).astype(x.dtype)
    scale = Tensor(pos + (1.0 - pos) * np.asarray(slope, dtype=x.dtype))
    return mul(x, scale)


def batchnorm1d(x, scale, shift, running_mean, running_var, train,
                momentum=0.9, eps=1e-5, update_running=True):
    """Batch normalization over (batch, length) for (B, L, C) input.

    ``running_mean``/``running_var`` are plain float arrays of shape (C,),
    updated in place during training with the biased batch variance.
    """
    x = _lift(x)
    if x.ndim != 3:
        raise ShapeError(f"batchnorm1d: expected 3-d input, got {x.shape}")
    C = x.shape[2]
    if train:
        m = mean(x, axis=(0, 1), keepdims=True)
        xc = sub(x, m)
        v = mean(mul(xc, xc), axis=(0, 1), keepdims=True)
        if update_running:
            running_mean[:] = momentum * running_mean + (1.0 - momentum) * m.data.reshape(C)
            running_var[:] = momentum * running_var + (1.0 - momentum) * v.data.reshape(C)
    else:
        m = Tensor(running_mean.astype(x.dtype).reshape(1, 1, C))
        xc = sub(x, m)
        v = Tensor(running_var.astype(x.dtype).reshape(1, 1, C))
    inv = div(1.0, sqrt_(add(v, eps)))
    return add(mul(mul(xc, inv), scale), shift)


def instance_norm(x, scale, shift, eps=1e-5):
    """Per-sample, per-channel normalization over the length axis of (B, L, C).

    Keeps samples independent, so per-sample input gradients of anything
    built on top stay well defined.
    """
    x = _lift(x)
    if x.ndim != 3:
        raise ShapeError(f"instance_norm: expected 3-d input, got {x.shape}")
    m = mean(x, axis=1, keepdims=True)
    xc = sub(x, m)
    v = mean(mul(xc, xc), axis=1, keepdims=True)
    inv = div(1.0, sqrt_(add(v, eps)))
    return add(mul(mul(xc, inv), scale), shift)


def softmax(x, axis=-1):
    """Shift-stabilized softmax along ``axis``."""
    x = _lift(x)
    m = Tensor(x.data.max(axis=axis, keepdims=True))
    e = exp(sub(x, m))
    return div(e, sum_(e, axis=axis, keepdims=True))


def log_softmax(x, axis=-1):
    x = _lift(x)
    m = Tensor(x.data.max(axis=axis, keepdims=True))
    xm = sub(x, m)
    return sub(xm, log(sum_(exp(xm), axis=axis, keepdims=True)))


def l2norm(a, axis=None, keepdims=False, eps=0.0):
    """Euclidean norm. With ``eps`` > 0 the norm is sqrt(sum(a^2) + eps),
    which keeps the backward pass finite when ``a`` can be exactly zero
    (the gradient-penalty path needs this: an untrainable-critic corner
    must yield a zero gradient, not a division by zero)."""
    s = sum_(mul(a, a), axis=axis, keepdims=keepdims)
    if eps:
        s = add(s, float(eps))
    return sqrt_(s)


def dot(a, b):
    return sum_(mul(a, b))


for _name in [
    "add", "sub", "mul", "div", "neg", "pow", "sqrt", "exp", "log",
    "sigmoid", "softplus", "arccos", "clamp", "reshape", "transpose2d",
    "sum", "broadcast", "matmul", "concat", "slice", "unslice", "conv1d",
    "leaf",
]:
    register_op(_name, twice_differentiable=True)


# ---------------------------------------------------------------------------
# backward pass


def _toposort(root):
    order = []
    seen = set()
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
        for inp in node._inputs:
            if inp.requires_grad and id(inp) not in seen:
                stack.append((inp, False))
    return order


def check_second_order(out):
    """Raise if any recorded op reachable from ``out`` lacks a second-order rule."""
    for node in _toposort(out):
        if node._vjp is not None and not _SECOND_ORDER.get(node.op, True):
            raise NotTwiceDifferentiableError(
                f"op {node.op!r} has no second-order rule; cannot build a "
                f"differentiable gradient through it"
            )


def _run_backward(out, create_graph, keep_ids):
    if out.data.size != 1:
        raise GraphError(f"backward requires a scalar output, got shape {out.shape}")
    if not out.requires_grad:
        return [], {}
    if create_graph:
        check_second_order(out)
    order = _toposort(out)
    adjoints = {id(out): Tensor(np.ones_like(out.data))}
    prev = _recording()
    _state.recording = bool(create_graph)
    try:
        for node in reversed(order):
            g = adjoints.get(id(node))
            if g is None or node._vjp is None:
                continue
            if id(node) not in keep_ids:
                del adjoints[id(node)]
            in_grads = node._vjp(g)
            for inp, ig in zip(node._inputs, in_grads):
                if ig is None or not inp.requires_grad:
                    continue
                if ig.shape != inp.shape:
                    raise GraphError(
                        f"vjp of {node.op!r} returned shape {ig.shape} for an "
                        f"input of shape {inp.shape}"
                    )
                prior = adjoints.get(id(inp))
                adjoints[id(inp)] = ig if prior is None else add(prior, ig)
    finally:
        _state.recording = prev
    return order, adjoints


def backward(out, create_graph=False):
    """Accumulate d(out)/d(leaf) into ``.grad`` of every reachable leaf."""
    order, adjoints = _run_backward(out, create_graph, keep_ids=frozenset())
    prev = _recording()
    _state.recording = bool(create_graph)
    try:
        for node in order:
            if node._vjp is not None:
                continue
            adj = adjoints.get(id(node))
            if adj is None:
                continue
            node.grad = adj if node.grad is None else add(node.grad, adj)
    finally:
        _state.recording = prev


def grad_of(out, wrt, create_graph=False):
    """Return d(out)/d(t) for each tensor in ``wrt`` without touching ``.grad``.

    Tensors unreachable from ``out`` get zero gradients.
    """
    wrt = list(wrt)
    keep = {id(t) for t in wrt}
    _, adjoints = _run_backward(out, create_graph, keep_ids=keep)
    grads = []
    for t in wrt:
        adj = adjoints.get(id(t))
        grads.append(adj if adj is not None else Tensor(np.zeros_like(t.data)))
    return grads


def input_gradient_norm(fn, x):
    """L2 norm of the gradient of scalar ``fn`` at ``x``, as a graph node.

    ``fn`` maps a leaf Tensor to a scalar node. The result is differentiable
    (the backward pass is rebuilt with create_graph), so it can sit inside a
    penalty term. Raises if any op in ``fn``'s graph lacks a second-order
    rule.
    """
    leaf = Tensor(np.array(x.data if isinstance(x, Tensor) else x, copy=True),
                  requires_grad=True)
    out = fn(leaf)
    if out.data.size != 1:
        raise GraphError(f"input_gradient_norm: fn returned shape {out.shape}, want scalar")
    (g,) = grad_of(out, [leaf], create_graph=True)
    return l2norm(g)


# ---------------------------------------------------------------------------
# parameter container


class ParamSet:
    """Named trainable tensors plus non-trainable buffers and Adam state."""

    def __init__(self):
        self.params = {}
        self.buffers = {}
        self.adam_m = {}
        self.adam_v = {}
        self.adam_steps = {}

    def add_param(self, name, value, dtype=np.float32):
        if name in self.params:
            raise ValueError(f"duplicate parameter {name!r}")
        self.params[name] = Tensor(np.asarray(value, dtype=dtype), requires_grad=True)
        return self.params[name]

    def add_buffer(self, name, value, dtype=np.float32):
        if name in self.buffers:
            raise ValueError(f"duplicate buffer {name!r}")
        self.buffers[name] = np.asarray(value, dtype=dtype)
        return self.buffers[name]

    def __getitem__(self, name):
        return self.params[name]

    def __contains__(self, name):
        return name in self.params

    def names(self, prefix=None):
        if prefix is None:
            return list(self.params)
        return [n for n in self.params if n.startswith(prefix)]

    def group(self, prefixes):
        return [n for n in self.params if any(n.startswith(p) for p in prefixes)]

    def zero_grad(self, names=None):
        for n in names if names is not None else self.params:
            self.params[n].grad = None

    def fingerprint(self, prefixes=None):
        """Hex digest of parameter values; lets tests assert non-interference."""
        import hashlib

        h = hashlib.sha256()
        names = sorted(self.group(prefixes)) if prefixes is not None else sorted(self.params)
        for n in names:
            h.update(n.encode())
            h.update(np.ascontiguousarray(self.params[n].data).tobytes())
        return h.hexdigest()

    def astype(self, dtype):
        out = ParamSet()
        for n, t in self.params.items():
            out.params[n] = Tensor(t.data.astype(dtype), requires_grad=True)
        for n, b in self.buffers.items():
            out.buffers[n] = b.astype(dtype) if b.dtype in _FLOAT_TYPES else b.copy()
        for n, m in self.adam_m.items():
            out.adam_m[n] = m.astype(dtype)
        for n, v in self.adam_v.items():
            out.adam_v[n] = v.astype(dtype)
        out.adam_steps = dict(self.adam_steps)
        return out
