"""Minimal reverse-mode automatic differentiation over float64 numpy arrays.

Provides exactly the operators the sensing/reconstruction networks need:
dense matmul, strided convolution, elementwise arithmetic, relu/sigmoid,
depth-to-space rearrangement, per-cell matrix-vector products, and the
usual concat/reshape/transpose plumbing. Graphs are built eagerly; each
node stores a vector-Jacobian closure and ``backward`` walks the tape in
reverse topological order exactly once per node.

Layout conventions are fixed package-wide: images and feature maps are
[N, H, W, C] row-major, convolution kernels are [k, k, Cin, Cout], and a
flattened patch orders (row, col, channel) with channel innermost. No
broadcasting beyond scalars.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Tensor",
    "node",
    "add",
    "sub",
    "mul",
    "scale",
    "relu",
    "sigmoid",
    "matmul",
    "conv2d",
    "depth_to_space",
    "space_to_depth",
    "block_matvec",
    "concat",
    "reshape",
    "transpose",
    "sum_all",
    "backward",
    "zero_grad",
]


class Tensor:
    """A float64 array plus the bookkeeping for reverse-mode autodiff.

    ``grad`` is populated (and accumulated across ``backward`` calls) for
    every tensor with ``requires_grad=True`` reachable from the loss,
    including intermediates.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_vjp")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents: tuple[Tensor, ...] = ()
        self._vjp = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        """Copy of the value with no graph attached."""
        return Tensor(self.data.copy())

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def node(data: np.ndarray, parents: tuple, vjp) -> Tensor:
    """Build a graph node from op output, inputs, and a VJP closure.

    ``vjp(grad_out)`` must return one gradient array (or None) per parent.
    This is the extension point modules use to register custom ops (e.g.
    the straight-through binarizer).
    """
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._vjp = vjp
    return out


def _as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=np.float64))


def _reduce_to(g: np.ndarray, shape: tuple) -> np.ndarray:
    # inverse of scalar broadcasting; nothing fancier is allowed
    if g.shape == shape:
        return g
    if shape == ():
        return np.asarray(g.sum())
    raise ValueError(f"cannot reduce gradient of shape {g.shape} to {shape}")


def _check_elementwise(opname: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape and a.shape != () and b.shape != ():
        raise ValueError(
            f"{opname}: operand shapes {a.shape} and {b.shape} differ "
            "(only scalar broadcast is supported)"
        )


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_elementwise("add", a, b)
    return node(
        a.data + b.data,
        (a, b),
        lambda g: (_reduce_to(g, a.shape), _reduce_to(g, b.shape)),
    )


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_elementwise("sub", a, b)
    return node(
        a.data - b.data,
        (a, b),
        lambda g: (_reduce_to(g, a.shape), _reduce_to(-g, b.shape)),
    )


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_elementwise("mul", a, b)
    ad, bd = a.data, b.data
    return node(
        ad * bd,
        (a, b),
        lambda g: (_reduce_to(g * bd, a.shape), _reduce_to(g * ad, b.shape)),
    )


def scale(x: Tensor, s: float) -> Tensor:
    """Multiply by a plain python scalar."""
    s = float(s)
    return node(x.data * s, (x,), lambda g: (g * s,))


def relu(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    mask = x.data > 0.0
    return node(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def sigmoid(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    d = x.data
    # split by sign so exp never overflows
    s = np.where(d >= 0, 1.0 / (1.0 + np.exp(-np.abs(d))), np.exp(-np.abs(d)) / (1.0 + np.exp(-np.abs(d))))
    return node(s, (x,), lambda g: (g * s * (1.0 - s),))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError(f"matmul: expected 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul: inner dimensions differ, {a.shape} x {b.shape}")
    ad, bd = a.data, b.data
    return node(
        ad @ bd,
        (a, b),
        lambda g: (g @ bd.T, ad.T @ g),
    )


def _extract_patches(xp: np.ndarray, k: int, stride: int) -> np.ndarray:
    # [N, Hp, Wp, C] -> [N, Ho, Wo, k, k, C], patch axes ordered (row, col, channel)
    win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(1, 2))
    win = win[:, ::stride, ::stride]
    return np.ascontiguousarray(np.moveaxis(win, 3, 5))


def conv2d(x: Tensor, kernel: Tensor, stride: int = 1, bias: Tensor | None = None,
           padding: str = "valid") -> Tensor:
    """Cross-correlation of [N,H,W,Cin] with a [k,k,Cin,Cout] kernel.

    ``valid`` requires the stride to tile the input exactly; ``same`` is
    zero padding and only supported for stride 1. The patch flattening
    order matches the package block-vectorization order, so a kxk stride-k
    conv on one block reproduces the matching matrix-vector product.
    """
    x, kernel = _as_tensor(x), _as_tensor(kernel)
    if x.ndim != 4:
        raise ValueError(f"conv2d: input must be [N,H,W,C], got {x.shape}")
    if kernel.ndim != 4 or kernel.shape[0] != kernel.shape[1]:
        raise ValueError(f"conv2d: kernel must be [k,k,Cin,Cout], got {kernel.shape}")
    k = kernel.shape[0]
    cin, cout = kernel.shape[2], kernel.shape[3]
    if x.shape[3] != cin:
        raise ValueError(
            f"conv2d: input shape {x.shape} and kernel shape {kernel.shape} "
            "disagree on channel count"
        )
    if stride < 1:
        raise ValueError(f"conv2d: stride must be >= 1, got {stride}")
    if bias is not None:
        bias = _as_tensor(bias)
        if bias.shape != (cout,):
            raise ValueError(f"conv2d: bias shape {bias.shape} does not match {cout} output channels")

    n, h, w = x.shape[0], x.shape[1], x.shape[2]
    if padding == "same":
        if stride != 1:
            raise ValueError("conv2d: 'same' padding is only supported for stride 1")
        pt, pb = (k - 1) // 2, k // 2
        pads = ((0, 0), (pt, pb), (pt, pb), (0, 0))
        xp = np.pad(x.data, pads)
    elif padding == "valid":
        if h < k or w < k:
            raise ValueError(f"conv2d: input {x.shape} smaller than kernel {kernel.shape}")
        if (h - k) % stride or (w - k) % stride:
            raise ValueError(
                f"conv2d: stride {stride} does not tile input {x.shape} with kernel {kernel.shape}"
            )
        pt = 0
        xp = x.data
    else:
        raise ValueError(f"conv2d: unknown padding {padding!r}")

    patches = _extract_patches(xp, k, stride)
    ho, wo = patches.shape[1], patches.shape[2]
    kmat = kernel.data.reshape(k * k * cin, cout)
    out = patches.reshape(n * ho * wo, k * k * cin) @ kmat
    out = out.reshape(n, ho, wo, cout)
    if bias is not None:
        out = out + bias.data

    hp, wp = xp.shape[1], xp.shape[2]
    kdata = kernel.data
    kshape = kernel.shape

    def vjp(g):
        gmat = g.reshape(n * ho * wo, cout)
        gk = (patches.reshape(n * ho * wo, k * k * cin).T @ gmat).reshape(kshape)
        gxp = np.zeros((n, hp, wp, cin))
        for r in range(k):
            for c in range(k):
                gxp[:, r:r + ho * stride:stride, c:c + wo * stride:stride, :] += g @ kdata[r, c].T
        if padding == "same":
            gx = gxp[:, pt:pt + h, pt:pt + w, :]
        else:
            gx = gxp
        if bias is None:
            return gx, gk
        return gx, gk, g.sum(axis=(0, 1, 2))

    parents = (x, kernel) if bias is None else (x, kernel, bias)
    return node(out, parents, vjp)


def depth_to_space(x: Tensor, block: int) -> Tensor:
    """[N,H,W,C*r^2] -> [N,H*r,W*r,C]; channel index decodes as (dr, dc, c)."""
    x = _as_tensor(x)
    r = int(block)
    if x.ndim != 4:
        raise ValueError(f"depth_to_space: input must be [N,H,W,C], got {x.shape}")
    n, h, w, ch = x.shape
    if r < 1 or ch % (r * r):
        raise ValueError(f"depth_to_space: {ch} channels not divisible by block {r}^2")
    c = ch // (r * r)
    out = x.data.reshape(n, h, w, r, r, c).transpose(0, 1, 3, 2, 4, 5).reshape(n, h * r, w * r, c)
    return node(np.ascontiguousarray(out), (x,), lambda g: (_s2d(g, r),))


def _s2d(d: np.ndarray, r: int) -> np.ndarray:
    n, hr, wr, c = d.shape
    h, w = hr // r, wr // r
    out = d.reshape(n, h, r, w, r, c).transpose(0, 1, 3, 2, 4, 5).reshape(n, h, w, r * r * c)
    return np.ascontiguousarray(out)


def space_to_depth(x: Tensor, block: int) -> Tensor:
    """Inverse of :func:`depth_to_space`."""
    x = _as_tensor(x)
    r = int(block)
    if x.ndim != 4:
        raise ValueError(f"space_to_depth: input must be [N,H,W,C], got {x.shape}")
    n, h, w, c = x.shape
    if r < 1 or h % r or w % r:
        raise ValueError(f"space_to_depth: spatial dims of {x.shape} not divisible by {r}")
    out = _s2d(x.data, r)

    def vjp(g):
        gn, gh, gw, gc = g.shape
        c0 = gc // (r * r)
        back = g.reshape(gn, gh, gw, r, r, c0).transpose(0, 1, 3, 2, 4, 5).reshape(gn, gh * r, gw * r, c0)
        return (np.ascontiguousarray(back),)

    return node(out, (x,), vjp)


def block_matvec(w: Tensor, v: Tensor) -> Tensor:
    """Per-cell matrix-vector product: [..., m, n] x [..., n] -> [..., m]."""
    w, v = _as_tensor(w), _as_tensor(v)
    if w.ndim < 2 or w.shape[:-2] != v.shape[:-1] or w.shape[-1] != v.shape[-1]:
        raise ValueError(f"block_matvec: shapes {w.shape} and {v.shape} are incompatible")
    wd, vd = w.data, v.data
    out = np.einsum("...mn,...n->...m", wd, vd)

    def vjp(g):
        gw = np.einsum("...m,...n->...mn", g, vd)
        gv = np.einsum("...mn,...m->...n", wd, g)
        return gw, gv

    return node(out, (w, v), vjp)


def concat(tensors, axis: int = -1) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    if not tensors:
        raise ValueError("concat: need at least one tensor")
    ax = axis % tensors[0].ndim
    base = tensors[0].shape
    for t in tensors[1:]:
        if t.ndim != len(base) or any(
            i != ax and t.shape[i] != base[i] for i in range(len(base))
        ):
            raise ValueError(f"concat: shapes {base} and {t.shape} differ off axis {ax}")
    out = np.concatenate([t.data for t in tensors], axis=ax)
    sizes = [t.shape[ax] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=ax))

    return node(out, tuple(tensors), vjp)


def reshape(x: Tensor, shape) -> Tensor:
    x = _as_tensor(x)
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape, dtype=np.int64)) != x.data.size:
        raise ValueError(f"reshape: cannot view {x.shape} as {shape}")
    return node(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


def transpose(x: Tensor, axes) -> Tensor:
    x = _as_tensor(x)
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return node(
        np.ascontiguousarray(x.data.transpose(axes)),
        (x,),
        lambda g: (np.ascontiguousarray(g.transpose(inv)),),
    )


def sum_all(x: Tensor) -> Tensor:
    """Reduce every element to a scalar (shape ())."""
    x = _as_tensor(x)
    return node(np.asarray(x.data.sum()), (x,), lambda g: (np.full(x.shape, float(g)),))


def backward(loss: Tensor) -> None:
    """Populate ``grad`` on every requires_grad tensor reachable from ``loss``.

    Repeated calls without :func:`zero_grad` accumulate.
    """
    if loss.shape != ():
        raise ValueError(f"backward: loss must be scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        return

    # reverse topological order over the requires_grad subgraph
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        t, expanded = stack.pop()
        if expanded:
            order.append(t)
            continue
        if id(t) in seen:
            continue
        seen.add(id(t))
        stack.append((t, True))
        for p in t._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))

    grads: dict[int, np.ndarray] = {id(loss): np.asarray(1.0)}
    for t in reversed(order):
        g = grads.pop(id(t), None)
        if g is None:
            continue
        t.grad = g if t.grad is None else t.grad + g
        if t._vjp is None:
            continue
        parent_grads = t._vjp(g)
        for p, pg in zip(t._parents, parent_grads):
            if pg is None or not p.requires_grad:
                continue
            acc = grads.get(id(p))
            grads[id(p)] = pg if acc is None else acc + pg


def zero_grad(tensors) -> None:
    for t in tensors:
        t.grad = None
