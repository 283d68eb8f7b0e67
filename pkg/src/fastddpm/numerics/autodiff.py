"""Small reverse-mode autodiff over numpy arrays.

Only the operations the denoiser needs are provided. Every op takes
``Node`` objects or plain arrays (treated as constants) and returns a new
``Node``; ``backward(loss)`` walks the graph in reverse topological order
and accumulates ``.grad`` on every node that requires one.

Convolutions use the cross-correlation convention (the kernel is not
flipped), as in most deep-learning libraries.
"""

from __future__ import annotations

import numpy as np


class ShapeError(ValueError):
    pass


class Node:
    __slots__ = ("value", "grad", "parents", "backward_fn", "requires_grad", "op")

    def __init__(self, value, parents=(), backward_fn=None, requires_grad=False, op="leaf"):
        self.value = np.asarray(value)
        self.grad = None
        self.parents = parents
        self.backward_fn = backward_fn
        self.requires_grad = requires_grad
        self.op = op

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Node(op={self.op}, shape={self.value.shape}, dtype={self.value.dtype})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    __radd__ = __add__
    __rmul__ = __mul__


def parameter(value) -> Node:
    return Node(np.array(value), requires_grad=True, op="param")


def as_node(x) -> Node:
    return x if isinstance(x, Node) else Node(x)


def _value(x):
    return x.value if isinstance(x, Node) else np.asarray(x)


def _make(value, parents, backward_fn, op):
    req = any(p.requires_grad for p in parents)
    if not req:
        return Node(value, op=op)
    return Node(value, parents, backward_fn, True, op)


def _scalar(x):
    return not isinstance(x, Node) and np.ndim(x) == 0


def _check_same(a, b, op):
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def add(a, b) -> Node:
    if _scalar(b):
        a = as_node(a)
        return _make(a.value + b, (a,), lambda g: (g,), "add")
    a, b = as_node(a), as_node(b)
    _check_same(a, b, "add")
    return _make(a.value + b.value, (a, b), lambda g: (g, g), "add")


def sub(a, b) -> Node:
    if _scalar(b):
        a = as_node(a)
        return _make(a.value - b, (a,), lambda g: (g,), "sub")
    a, b = as_node(a), as_node(b)
    _check_same(a, b, "sub")
    return _make(a.value - b.value, (a, b), lambda g: (g, -g), "sub")


def mul(a, b) -> Node:
    if _scalar(b):
        return scale(a, b)
    a, b = as_node(a), as_node(b)
    _check_same(a, b, "mul")
    av, bv = a.value, b.value
    return _make(av * bv, (a, b), lambda g: (g * bv, g * av), "mul")


def scale(a, s: float) -> Node:
    a = as_node(a)
    s = a.value.dtype.type(s) if a.value.dtype.kind == "f" else s
    return _make(a.value * s, (a,), lambda g: (g * s,), "scale")


def sum_all(a) -> Node:
    a = as_node(a)
    shape, dtype = a.value.shape, a.value.dtype
    return _make(np.sum(a.value), (a,), lambda g: (np.full(shape, g, dtype=dtype),), "sum")


def reshape(a, shape) -> Node:
    a = as_node(a)
    old = a.value.shape
    return _make(a.value.reshape(shape), (a,), lambda g: (g.reshape(old),), "reshape")


def matmul(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    av, bv = a.value, b.value
    if av.ndim != 2 or bv.ndim != 2 or av.shape[1] != bv.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {av.shape} @ {bv.shape}")
    return _make(av @ bv, (a, b), lambda g: (g @ bv.T, av.T @ g), "matmul")


def linear(x, w, b=None) -> Node:
    """``x @ w + b`` for ``x`` of shape [N, k], ``w`` [k, n], ``b`` [n]."""
    out = matmul(x, w)
    if b is None:
        return out
    b = as_node(b)
    if b.value.shape != (out.value.shape[1],):
        raise ShapeError(f"linear: bias shape {b.value.shape} vs output {out.value.shape}")
    return _make(out.value + b.value, (out, b), lambda g: (g, g.sum(axis=0)), "bias")


def add_channel_bias(x, b, layout: str = "NCHW") -> Node:
    """Add ``b`` of shape [C] or [N, C] to every pixel of ``x``."""
    x, b = as_node(x), as_node(b)
    xv, bv = x.value, b.value
    if layout == "NCHW":
        n, c = xv.shape[:2]
    else:
        c, n = xv.shape[:2]
    if bv.shape == (c,):
        shaped = bv[None, :, None, None] if layout == "NCHW" else bv[:, None, None, None]
        red = (0, 2, 3) if layout == "NCHW" else (1, 2, 3)
        return _make(xv + shaped, (x, b), lambda g: (g, g.sum(axis=red)), "channel_bias")
    if bv.shape == (n, c):
        if layout == "NCHW":
            return _make(xv + bv[:, :, None, None], (x, b), lambda g: (g, g.sum(axis=(2, 3))), "channel_bias")
        return _make(xv + bv.T[:, :, None, None], (x, b), lambda g: (g, g.sum(axis=(2, 3)).T), "channel_bias")
    raise ShapeError(f"channel bias shape {bv.shape} incompatible with {xv.shape} ({layout})")


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def silu(x) -> Node:
    x = as_node(x)
    xv = x.value
    s = _sigmoid(xv)
    return _make(xv * s, (x,), lambda g: (g * (s * (1.0 + xv * (1.0 - s))),), "silu")


def mse_loss(pred, target) -> Node:
    """Mean of squared differences, accumulated in double precision."""
    pred, target = as_node(pred), as_node(target)
    _check_same(pred, target, "mse_loss")
    diff = pred.value - target.value
    n = diff.size
    val = np.mean(np.square(diff, dtype=np.float64))

    def back(g):
        d = diff * diff.dtype.type(2.0 * float(g) / n)
        return d, -d

    return _make(np.asarray(val), (pred, target), back, "mse")


def concat_channels(a, b, layout: str = "NCHW") -> Node:
    a, b = as_node(a), as_node(b)
    av, bv = a.value, b.value
    ax = 1 if layout == "NCHW" else 0
    other = [k for k in range(4) if k != ax]
    if av.ndim != 4 or bv.ndim != 4 or any(av.shape[k] != bv.shape[k] for k in other):
        raise ShapeError(f"concat_channels: incompatible shapes {av.shape}, {bv.shape}")
    ca = av.shape[ax]
    if ax == 1:
        back = lambda g: (g[:, :ca], g[:, ca:])
    else:
        back = lambda g: (g[:ca], g[ca:])
    return _make(np.concatenate([av, bv], axis=ax), (a, b), back, "concat")


def _out_extent(n, k, stride, pad):
    span = n + 2 * pad - k
    if span < 0 or span % stride:
        raise ShapeError(f"conv2d: non-integral output extent for size {n}, kernel {k}, stride {stride}, pad {pad}")
    return span // stride + 1


def conv2d(x, w, b=None, stride: int = 1, padding: int = 0, layout: str = "NCHW") -> Node:
    """2-D cross-correlation of ``x`` with ``w`` [F, C, kh, kw].

    ``layout`` names the axis order of ``x`` and of the result: "NCHW", or
    "CNHW" (channels first), which the denoiser uses internally because the
    patch matrix can then be filled without transposes.
    """
    x, w = as_node(x), as_node(w)
    xv, wv = x.value, w.value
    if layout not in ("NCHW", "CNHW"):
        raise ValueError(f"unknown layout {layout!r}")
    cax = 1 if layout == "NCHW" else 0
    if xv.ndim != 4 or wv.ndim != 4 or xv.shape[cax] != wv.shape[1]:
        raise ShapeError(f"conv2d: input {xv.shape} ({layout}) vs kernel {wv.shape}")
    f, c, kh, kw = wv.shape
    if kh % 2 == 0 or kw % 2 == 0:
        raise ShapeError(f"conv2d: kernel extents must be odd, got {kh}x{kw}")
    xc = xv.transpose(1, 0, 2, 3) if layout == "NCHW" else xv
    _, n, h, wd = xc.shape
    ho = _out_extent(h, kh, stride, padding)
    wo = _out_extent(wd, kw, stride, padding)
    p = padding
    xp = np.pad(xc, ((0, 0), (0, 0), (p, p), (p, p))) if p else xc
    # patch matrix [C, kh, kw, N, Ho, Wo]
    cols = np.empty((c, kh, kw, n, ho, wo), dtype=xv.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, i, j] = xp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride]
    cols = cols.reshape(c * kh * kw, n * ho * wo)
    wmat = wv.reshape(f, -1)
    out = wmat @ cols
    if b is not None:
        out += _value(b)[:, None]
    out = out.reshape(f, n, ho, wo)
    if layout == "NCHW":
        out = np.ascontiguousarray(out.transpose(1, 0, 2, 3))

    def back(g):
        gm = g.transpose(1, 0, 2, 3) if layout == "NCHW" else g
        gm = gm.reshape(f, n * ho * wo)
        gw = (gm @ cols.T).reshape(wv.shape) if w.requires_grad else None
        gx = None
        if x.requires_grad:
            gcols = (wmat.T @ gm).reshape(c, kh, kw, n, ho, wo)
            gxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += gcols[:, i, j]
            gx = gxp[:, :, p:p + h, p:p + wd] if p else gxp
            if layout == "NCHW":
                gx = gx.transpose(1, 0, 2, 3)
        grads = [gx, gw]
        if b is not None:
            grads.append(gm.sum(axis=1))
        return tuple(grads)

    parents = (x, w) if b is None else (x, w, as_node(b))
    return _make(out, parents, back, "conv2d")


def upsample2x(x) -> Node:
    """Nearest-neighbour 2x upsampling of the two trailing axes."""
    x = as_node(x)
    v = x.value.repeat(2, axis=-2).repeat(2, axis=-1)

    def back(g):
        s = g.shape
        return (g.reshape(s[:-2] + (s[-2] // 2, 2, s[-1] // 2, 2)).sum(axis=(-3, -1)),)

    return _make(v, (x,), back, "upsample2x")


def avgpool2x(x) -> Node:
    x = as_node(x)
    s = x.value.shape
    if s[-1] % 2 or s[-2] % 2:
        raise ShapeError(f"avgpool2x: spatial extents must be even, got {s[-2:]}")
    v = x.value.reshape(s[:-2] + (s[-2] // 2, 2, s[-1] // 2, 2)).mean(axis=(-3, -1))

    def back(g):
        q = g * g.dtype.type(0.25)
        return (q.repeat(2, axis=-2).repeat(2, axis=-1),)

    return _make(v, (x,), back, "avgpool2x")


def _topo_order(root: Node) -> list[Node]:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Node) -> None:
    """Accumulate d(loss)/d(node) into ``.grad`` of every reachable node needing it."""
    if loss.value.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.value.shape}")
    if not loss.requires_grad:
        return
    order = _topo_order(loss)
    grads = {id(loss): np.ones_like(loss.value)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.backward_fn is None:
            if not np.all(np.isfinite(g)):
                raise FloatingPointError(f"non-finite gradient reached {node!r}")
            node.grad = g if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node.parents, node.backward_fn(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg
