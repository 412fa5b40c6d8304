"""Minimal dense-tensor autograd engine on numpy.

Every op is a pure function from value tensors to a value tensor; nodes
remember their parents and a closure that maps the output gradient to
parent gradients. Reverse-mode accumulation walks the graph in a fixed
topological order, so repeated replays of the same graph produce
bit-identical gradients.

Only the ops needed by the condition encoder, the dual-branch temporal
attention blocks, the convolutional denoiser and the two losses are
implemented. No general broadcasting: elementwise ops require equal
shapes, explicit ``broadcast_to`` / ``bias_add`` cover the rest.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Tensor",
    "constant",
    "parameter",
    "add",
    "sub",
    "mul",
    "scale",
    "add_scalar",
    "neg",
    "broadcast_to",
    "bias_add",
    "matmul",
    "reshape",
    "transpose",
    "concat",
    "sum_all",
    "sum_axes",
    "mean_all",
    "square",
    "rsqrt",
    "silu",
    "softmax_rows",
    "conv2d",
    "avgpool2d",
    "upsample2x",
    "diag_part",
    "backward",
    "AdamW",
]


class Tensor:
    """A dense array plus the graph edge that produced it.

    ``data`` is an ``np.ndarray`` (float32 in normal runs, float64 when a
    model is built in verification mode) and is treated as immutable.
    """

    __slots__ = ("data", "parents", "grad_fn", "requires_grad", "name")

    def __init__(self, data, parents=(), grad_fn=None, requires_grad=False, name=None):
        self.data = data
        self.requires_grad = requires_grad
        self.name = name
        if requires_grad and parents:
            self.parents = parents
            self.grad_fn = grad_fn
        else:
            # Constant subgraphs are dropped eagerly so they cost nothing.
            self.parents = ()
            self.grad_fn = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self):
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    # Arithmetic sugar; all graph building goes through the module ops.
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def constant(data, dtype=None) -> Tensor:
    arr = np.asarray(data)
    if dtype is not None:
        arr = arr.astype(dtype, copy=False)
    elif arr.dtype not in (np.float32, np.float64):
        arr = arr.astype(np.float32)
    return Tensor(arr)


def parameter(data, name: str) -> Tensor:
    arr = np.asarray(data)
    if arr.dtype not in (np.float32, np.float64):
        arr = arr.astype(np.float32)
    return Tensor(arr, requires_grad=True, name=name)


def _node(data, parents, grad_fn) -> Tensor:
    requires = any(p.requires_grad for p in parents)
    return Tensor(data, parents=tuple(parents), grad_fn=grad_fn, requires_grad=requires)


def _check_same_shape(a: Tensor, b: Tensor, op: str):
    if a.data.shape != b.data.shape:
        raise ValueError(f"{op}: shape mismatch {a.data.shape} vs {b.data.shape}")


# ---------------------------------------------------------------------------
# elementwise


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "add")
    return _node(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "sub")
    return _node(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "mul")
    return _node(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data))


def neg(a: Tensor) -> Tensor:
    return _node(-a.data, (a,), lambda g: (-g,))


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _node(a.data * a.dtype.type(c), (a,), lambda g: (g * a.dtype.type(c),))


def add_scalar(a: Tensor, c: float) -> Tensor:
    return _node(a.data + a.dtype.type(float(c)), (a,), lambda g: (g,))


def square(a: Tensor) -> Tensor:
    return _node(a.data * a.data, (a,), lambda g: (g * (2.0 * a.data),))


def rsqrt(a: Tensor) -> Tensor:
    """1/sqrt(x); caller guarantees strictly positive input."""
    out = 1.0 / np.sqrt(a.data)
    return _node(out, (a,), lambda g: (g * (-0.5 * out / a.data),))


def silu(a: Tensor) -> Tensor:
    sig = 1.0 / (1.0 + np.exp(-a.data))
    out = a.data * sig
    return _node(out, (a,), lambda g: (g * (sig * (1.0 + a.data * (1.0 - sig))),))


def broadcast_to(a: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in shape)
    out = np.broadcast_to(a.data, shape)
    src_shape = a.data.shape

    def grad_fn(g):
        extra = len(shape) - len(src_shape)
        if extra:
            g = g.sum(axis=tuple(range(extra)))
        axes = tuple(i for i, s in enumerate(src_shape) if s == 1 and g.shape[i] != 1)
        if axes:
            g = g.sum(axis=axes, keepdims=True)
        return (np.ascontiguousarray(g),)

    return _node(np.ascontiguousarray(out), (a,), grad_fn)


def bias_add(x: Tensor, b: Tensor, axis: int = 1) -> Tensor:
    """Add a 1-D bias along ``axis`` of x."""
    if b.ndim != 1 or x.shape[axis] != b.shape[0]:
        raise ValueError(f"bias_add: bias {b.shape} does not fit axis {axis} of {x.shape}")
    view = [1] * x.ndim
    view[axis] = b.shape[0]
    sum_axes_ = tuple(i for i in range(x.ndim) if i != axis)

    def grad_fn(g):
        return (g, g.sum(axis=sum_axes_))

    return _node(x.data + b.data.reshape(view), (x, b), grad_fn)


# ---------------------------------------------------------------------------
# linear algebra / structure


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product; both 2-D, or stacked with identical leading dims."""
    ad, bd = a.data, b.data
    if ad.ndim < 2 or bd.ndim < 2:
        raise ValueError(f"matmul: operands must be at least 2-D, got {ad.shape} @ {bd.shape}")
    if ad.shape[-1] != bd.shape[-2]:
        raise ValueError(f"matmul: inner extents differ, {ad.shape} @ {bd.shape}")
    if ad.ndim != bd.ndim or ad.shape[:-2] != bd.shape[:-2]:
        if not (ad.ndim == 2 and bd.ndim == 2):
            raise ValueError(f"matmul: leading dims differ, {ad.shape} @ {bd.shape}")

    def grad_fn(g):
        ga = np.matmul(g, bd.swapaxes(-1, -2))
        gb = np.matmul(ad.swapaxes(-1, -2), g)
        return (ga, gb)

    return _node(np.matmul(ad, bd), (a, b), grad_fn)


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in shape)
    src = a.data.shape
    return _node(a.data.reshape(shape), (a,), lambda g: (g.reshape(src),))


def transpose(a: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _node(np.ascontiguousarray(a.data.transpose(axes)), (a,),
                 lambda g: (np.ascontiguousarray(g.transpose(inv)),))


def concat(tensors, axis: int) -> Tensor:
    datas = [t.data for t in tensors]
    sizes = [d.shape[axis] for d in datas]
    offsets = np.cumsum(sizes)[:-1]

    def grad_fn(g):
        return tuple(np.ascontiguousarray(p) for p in np.split(g, offsets, axis=axis))

    return _node(np.concatenate(datas, axis=axis), tuple(tensors), grad_fn)


def sum_all(a: Tensor) -> Tensor:
    shape = a.data.shape

    def grad_fn(g):
        return (np.broadcast_to(g, shape).astype(a.dtype, copy=True),)

    return _node(np.asarray(a.data.sum(dtype=a.dtype), dtype=a.dtype), (a,), grad_fn)


def sum_axes(a: Tensor, axes, keepdims: bool = False) -> Tensor:
    axes = tuple(sorted(axes))
    src = a.data.shape

    def grad_fn(g):
        if not keepdims:
            for ax in axes:
                g = np.expand_dims(g, ax)
        return (np.broadcast_to(g, src).astype(a.dtype, copy=True),)

    return _node(a.data.sum(axis=axes, keepdims=keepdims, dtype=a.dtype), (a,), grad_fn)


def mean_all(a: Tensor) -> Tensor:
    n = a.data.size
    return scale(sum_all(a), 1.0 / n)


def diag_part(a: Tensor) -> Tensor:
    """(..., L, L) -> (..., L), the (i, i) entries."""
    if a.ndim < 2 or a.shape[-1] != a.shape[-2]:
        raise ValueError(f"diag_part: trailing dims must be square, got {a.shape}")
    out = np.ascontiguousarray(np.diagonal(a.data, axis1=-2, axis2=-1))

    def grad_fn(g):
        full = np.zeros_like(a.data)
        np.einsum("...ii->...i", full)[...] = g
        return (full,)

    return _node(out, (a,), grad_fn)


# ---------------------------------------------------------------------------
# softmax


def softmax_rows(a: Tensor, scale_factor: float = 1.0) -> Tensor:
    """Row softmax over the trailing axis of ``scale_factor * a``.

    Max-subtraction keeps exponents bounded; rows sum to 1 to within
    accumulation error of the dtype.
    """
    s = a.dtype.type(float(scale_factor))
    z = a.data * s
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=-1, keepdims=True)

    def grad_fn(g):
        inner = (g * out).sum(axis=-1, keepdims=True)
        return (s * out * (g - inner),)

    return _node(out, (a,), grad_fn)


# ---------------------------------------------------------------------------
# conv / pooling / resampling


def _conv_out_extent(extent: int, k: int, stride: int, padding: int, what: str) -> int:
    num = extent + 2 * padding - k
    if num < 0:
        raise ValueError(f"conv2d: kernel {k} exceeds padded {what} extent {extent + 2 * padding}")
    if num % stride != 0:
        raise ValueError(
            f"conv2d: non-integral output extent along {what}: "
            f"({extent} + 2*{padding} - {k}) / {stride} + 1"
        )
    return num // stride + 1


def conv2d(x: Tensor, kernels: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation with zero padding.

    ``x`` is (C_in, H, W) or (N, C_in, H, W); kernels are
    (C_out, C_in, kh, kw). Output extents must be integral.
    """
    squeeze = x.ndim == 3
    xd = x.data[None] if squeeze else x.data
    if xd.ndim != 4:
        raise ValueError(f"conv2d: input must be 3-D or 4-D, got {x.shape}")
    kd = kernels.data
    if kd.ndim != 4 or kd.shape[1] != xd.shape[1]:
        raise ValueError(f"conv2d: kernels {kd.shape} do not match input channels {xd.shape}")
    n, c_in, h, w = xd.shape
    c_out, _, kh, kw = kd.shape
    ho = _conv_out_extent(h, kh, stride, padding, "height")
    wo = _conv_out_extent(w, kw, stride, padding, "width")

    if padding:
        xp = np.zeros((n, c_in, h + 2 * padding, w + 2 * padding), dtype=xd.dtype)
        xp[:, :, padding:padding + h, padding:padding + w] = xd
    else:
        xp = xd
    s0, s1, s2, s3 = xp.strides
    windows = np.lib.stride_tricks.as_strided(
        xp,
        shape=(n, c_in, kh, kw, ho, wo),
        strides=(s0, s1, s2, s3, s2 * stride, s3 * stride),
    )
    cols = np.ascontiguousarray(windows.transpose(0, 4, 5, 1, 2, 3)).reshape(n * ho * wo, c_in * kh * kw)
    kmat = kd.reshape(c_out, c_in * kh * kw)
    out = (cols @ kmat.T).reshape(n, ho, wo, c_out).transpose(0, 3, 1, 2)
    out = np.ascontiguousarray(out)

    def grad_fn(g):
        gd = g[None] if squeeze else g
        gmat = np.ascontiguousarray(gd.transpose(0, 2, 3, 1)).reshape(n * ho * wo, c_out)
        gk = (gmat.T @ cols).reshape(c_out, c_in, kh, kw)
        gcols = (gmat @ kmat).reshape(n, ho, wo, c_in, kh, kw).transpose(0, 3, 4, 5, 1, 2)
        gxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                gxp[:, :, i:i + ho * stride:stride, j:j + wo * stride:stride] += gcols[:, :, i, j]
        gx = gxp[:, :, padding:padding + h, padding:padding + w] if padding else gxp
        return (gx[0] if squeeze else gx, gk)

    return _node(out[0] if squeeze else out, (x, kernels), grad_fn)


def avgpool2d(x: Tensor, window: int, stride: int) -> Tensor:
    """Mean over each window; padding-free, extents must tile exactly."""
    squeeze = x.ndim == 3
    xd = x.data[None] if squeeze else x.data
    if xd.ndim != 4:
        raise ValueError(f"avgpool2d: input must be 3-D or 4-D, got {x.shape}")
    n, c, h, w = xd.shape
    if window > h or window > w:
        raise ValueError(f"avgpool2d: window {window} exceeds input extents {(h, w)}")
    if (h - window) % stride or (w - window) % stride:
        raise ValueError(f"avgpool2d: extents {(h, w)} not divisible for window {window} stride {stride}")
    ho = (h - window) // stride + 1
    wo = (w - window) // stride + 1
    if window == stride:
        out = xd.reshape(n, c, ho, window, wo, window).mean(axis=(3, 5), dtype=xd.dtype)
    else:
        v = np.lib.stride_tricks.sliding_window_view(xd, (window, window), axis=(2, 3))
        out = v[:, :, ::stride, ::stride].mean(axis=(-2, -1), dtype=xd.dtype)

    inv = 1.0 / (window * window)

    def grad_fn(g):
        gd = g[None] if squeeze else g
        gx = np.zeros_like(xd)
        gshare = gd * xd.dtype.type(inv)
        for i in range(window):
            for j in range(window):
                gx[:, :, i:i + ho * stride:stride, j:j + wo * stride:stride] += gshare
        return (gx[0] if squeeze else gx,)

    return _node(out[0] if squeeze else out, (x,), grad_fn)


def upsample2x(x: Tensor) -> Tensor:
    """Nearest-neighbour doubling of the two trailing extents."""
    xd = x.data
    out = xd.repeat(2, axis=-2).repeat(2, axis=-1)
    h, w = xd.shape[-2], xd.shape[-1]

    def grad_fn(g):
        gs = g.reshape(*g.shape[:-2], h, 2, w, 2).sum(axis=(-3, -1))
        return (gs,)

    return _node(out, (x,), grad_fn)


# ---------------------------------------------------------------------------
# reverse-mode accumulation


def backward(loss: Tensor) -> dict[Tensor, np.ndarray]:
    """Gradients of a scalar loss w.r.t. every reachable leaf parameter.

    Returns a map keyed by the parameter tensors themselves. Accumulation
    order is the reverse of a deterministic depth-first topological order,
    so identical graphs give bit-identical gradients.
    """
    if loss.data.shape != ():
        raise ValueError(f"backward: loss must be scalar, got shape {loss.data.shape}")

    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in seen:
                stack.append((p, False))

    grads: dict[int, np.ndarray] = {id(loss): np.ones((), dtype=loss.dtype)}
    result: dict[Tensor, np.ndarray] = {}
    for node in reversed(topo):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.grad_fn is not None:
            parent_grads = node.grad_fn(g)
            for p, pg in zip(node.parents, parent_grads):
                if not p.requires_grad:
                    continue
                acc = grads.get(id(p))
                grads[id(p)] = pg if acc is None else acc + pg
        elif node.requires_grad and node.name is not None:
            result[node] = g
    return result


# ---------------------------------------------------------------------------
# optimizer


class AdamW:
    """Adam with decoupled weight decay over a named parameter dict.

    Parameters are updated in sorted-name order; state round-trips through
    checkpoints exactly (see diffusion.save_checkpoint).
    """

    def __init__(self, params: dict[str, Tensor], lr=1e-3, betas=(0.9, 0.999),
                 eps=1e-8, weight_decay=1e-4):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self.m = {k: np.zeros_like(v.data) for k, v in params.items()}
        self.v = {k: np.zeros_like(v.data) for k, v in params.items()}

    def step(self, grads: dict[Tensor, np.ndarray]):
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1 ** t
        bc2 = 1.0 - self.beta2 ** t
        for name in sorted(self.params):
            p = self.params[name]
            g = grads.get(p)
            if g is None:
                continue
            m = self.m[name]
            v = self.v[name]
            m += (1.0 - self.beta1) * (g - m)
            v += (1.0 - self.beta2) * (g * g - v)
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            p.data = (p.data - self.lr * (update + self.weight_decay * p.data)).astype(p.data.dtype)
