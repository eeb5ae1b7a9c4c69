"""Dense n-d tensors with reverse-mode autodiff and real-input FFTs.

Every higher-level block in this package (dense layers, spline layers,
spectral convolutions, the branch/trunk model) is written against the
primitives in this module.  Values are numpy arrays in row-major layout;
gradient tracking is opt-in through a Tape.
"""

from __future__ import annotations

import warnings

import numpy as np

from .errors import (
    AxisOutOfRange,
    DivByZeroWarning,
    ElementCountMismatch,
    InvalidPermutation,
    NotScalar,
    ShapeMismatch,
    TapeConsumed,
    UnknownActivation,
)

__all__ = [
    "Tensor",
    "ComplexTensor",
    "Tape",
    "tensor",
    "elementwise",
    "add",
    "sub",
    "mul",
    "div",
    "matmul",
    "permute",
    "reshape",
    "restructure",
    "rfft_nd",
    "irfft_nd",
    "activation",
    "einsum2",
    "reduce_sum",
    "reduce_mean",
    "clamp",
    "broadcast_shape",
]


class Tensor:
    """Immutable-by-convention dense array, optionally bound to a tape."""

    __slots__ = ("data", "tape", "node_id")

    def __init__(self, data, dtype=None, tape=None, node_id=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        if not arr.flags.c_contiguous:
            arr = np.ascontiguousarray(arr)
        self.data = arr
        self.tape = tape
        self.node_id = node_id

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self):
        return self.data.ndim

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def __repr__(self):
        tracked = "" if self.tape is None else ", tracked"
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name}{tracked})"

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
        return mul(self, -1.0)


class ComplexTensor:
    """Complex values stored as a (real, imag) pair of Tensors.

    Produced by rfft_nd; the last transformed axis holds floor(n/2)+1
    entries (redundant conjugate bins are not stored).
    """

    __slots__ = ("re", "im")

    def __init__(self, re: Tensor, im: Tensor):
        if re.shape != im.shape:
            raise ShapeMismatch(f"real/imag parts differ: {re.shape} vs {im.shape}")
        self.re = re
        self.im = im

    @property
    def shape(self):
        return self.re.shape

    def numpy(self):
        return self.re.data + 1j * self.im.data


def tensor(data, dtype=np.float64):
    return Tensor(data, dtype=dtype)


class _Node:
    __slots__ = ("out_ids", "in_ids", "vjp")

    def __init__(self, out_ids, in_ids, vjp):
        self.out_ids = out_ids
        self.in_ids = in_ids
        self.vjp = vjp


class Tape:
    """Records primitive applications for one reverse pass.

    Build-then-consume: after backward() the tape cannot be reused.
    """

    def __init__(self):
        self._nodes: list[_Node] = []
        self._leaf_ids: list[int] = []
        self._shapes: dict[int, tuple] = {}
        self._next_id = 0
        self._consumed = False

    def _new_id(self, shape):
        i = self._next_id
        self._next_id += 1
        self._shapes[i] = shape
        return i

    def watch(self, value) -> Tensor:
        """Register a leaf (trainable parameter) and return its tracked view."""
        arr = value.data if isinstance(value, Tensor) else np.asarray(value)
        t = Tensor(arr, tape=self, node_id=self._new_id(arr.shape))
        self._leaf_ids.append(t.node_id)
        return t

    def record(self, out_arrays, in_tensors, vjp):
        """Append one primitive application.

        out_arrays: list of numpy arrays produced by the primitive.
        in_tensors: the Tensor inputs (untracked ones get no gradient).
        vjp: callable mapping the list of output gradients (numpy arrays,
             zeros where unused) to a list of input gradients, entries
             aligned with in_tensors and None for untracked inputs.
        """
        outs = []
        out_ids = []
        for arr in out_arrays:
            nid = self._new_id(arr.shape)
            out_ids.append(nid)
            outs.append(Tensor(arr, tape=self, node_id=nid))
        in_ids = tuple(t.node_id if (t.tape is self) else None for t in in_tensors)
        self._nodes.append(_Node(tuple(out_ids), in_ids, vjp))
        return outs

    def backward(self, loss: Tensor) -> dict:
        """Reverse accumulation from a scalar loss; returns leaf-id -> grad."""
        if self._consumed:
            raise TapeConsumed("backward already ran on this tape")
        if not isinstance(loss, Tensor) or loss.tape is not self:
            raise ValueError("loss is not tracked on this tape")
        if loss.data.size != 1:
            raise NotScalar(f"loss must be scalar, got shape {loss.shape}")
        self._consumed = True

        grads: dict[int, np.ndarray] = {
            loss.node_id: np.ones_like(loss.data)
        }
        for node in reversed(self._nodes):
            if not any(i in grads for i in node.out_ids):
                continue
            out_grads = [
                grads.get(i, None) for i in node.out_ids
            ]
            out_grads = [
                g if g is not None else np.zeros(self._shapes[i], dtype=np.float64)
                for g, i in zip(out_grads, node.out_ids)
            ]
            in_grads = node.vjp(out_grads)
            for iid, g in zip(node.in_ids, in_grads):
                if iid is None or g is None:
                    continue
                if iid in grads:
                    grads[iid] = grads[iid] + g
                else:
                    grads[iid] = g
        return {
            lid: grads.get(lid, np.zeros(self._shapes[lid])) for lid in self._leaf_ids
        }


def backward(loss: Tensor) -> dict:
    """Run the reverse pass of the tape the scalar loss lives on."""
    if not isinstance(loss, Tensor) or loss.tape is None:
        raise ValueError("loss is not bound to a tape")
    return loss.tape.backward(loss)


# ---------------------------------------------------------------------------
# helpers

def _as_tensor(x, like=None):
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if isinstance(like, Tensor) else np.float64
    return Tensor(np.asarray(x, dtype=dtype))


def _tape_of(*tensors):
    tape = None
    for t in tensors:
        if t.tape is None:
            continue
        if tape is None:
            tape = t.tape
        elif tape is not t.tape:
            raise ValueError("operands belong to different tapes")
    return tape


def broadcast_shape(a_shape, b_shape):
    """NumPy-style trailing-axes broadcast shape; ShapeMismatch if invalid."""
    out = []
    for ea, eb in zip(reversed(a_shape), reversed(b_shape)):
        if ea == eb or ea == 1 or eb == 1:
            out.append(max(ea, eb))
        else:
            raise ShapeMismatch(f"cannot broadcast {a_shape} with {b_shape}")
    longer = a_shape if len(a_shape) >= len(b_shape) else b_shape
    out.extend(reversed(longer[: len(longer) - len(out)]))
    return tuple(reversed(out))


def _unbroadcast(grad, shape):
    """Sum grad down to `shape` (inverse of broadcasting)."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, e in enumerate(shape) if e == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise arithmetic

def elementwise(kind: str, a, b) -> Tensor:
    a = _as_tensor(a, like=b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, like=a)
    broadcast_shape(a.shape, b.shape)
    tape = _tape_of(a, b)

    if kind == "add":
        out = a.data + b.data
    elif kind == "sub":
        out = a.data - b.data
    elif kind == "mul":
        out = a.data * b.data
    elif kind == "div":
        if np.any(b.data == 0):
            warnings.warn("division by zero produces non-finite values",
                          DivByZeroWarning, stacklevel=2)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = a.data / b.data
    else:
        raise ValueError(f"unknown elementwise kind {kind!r}")

    if tape is None:
        return Tensor(out)

    ad, bd = a.data, b.data
    ash, bsh = a.shape, b.shape

    def vjp(gs):
        g = gs[0]
        if kind == "add":
            ga, gb = g, g
        elif kind == "sub":
            ga, gb = g, -g
        elif kind == "mul":
            ga, gb = g * bd, g * ad
        else:
            with np.errstate(divide="ignore", invalid="ignore"):
                ga = g / bd
                gb = -g * ad / (bd * bd)
        return [_unbroadcast(ga, ash), _unbroadcast(gb, bsh)]

    return tape.record([out], [a, b], vjp)[0]


def add(a, b):
    return elementwise("add", a, b)


def sub(a, b):
    return elementwise("sub", a, b)


def mul(a, b):
    return elementwise("mul", a, b)


def div(a, b):
    return elementwise("div", a, b)


# ---------------------------------------------------------------------------
# matmul

def matmul(a, b) -> Tensor:
    """Contract the last axis of a (rank >= 2) with a rank-2 b."""
    a = _as_tensor(a)
    b = _as_tensor(b)
    if a.ndim < 2:
        raise ShapeMismatch(f"matmul lhs must have rank >= 2, got {a.shape}")
    if b.ndim != 2:
        raise ShapeMismatch(f"matmul rhs must have rank 2, got {b.shape}")
    if a.shape[-1] != b.shape[0]:
        raise ShapeMismatch(
            f"inner extents differ: {a.shape} @ {b.shape}")
    tape = _tape_of(a, b)
    out = a.data @ b.data
    if tape is None:
        return Tensor(out)

    ad, bd = a.data, b.data

    def vjp(gs):
        g = gs[0]
        ga = g @ bd.T
        gb = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        return [ga, gb]

    return tape.record([out], [a, b], vjp)[0]


# ---------------------------------------------------------------------------
# layout

def permute(t, order) -> Tensor:
    """Physically reorder axes (a copy, so a later reshape is well defined)."""
    t = _as_tensor(t)
    order = tuple(int(i) for i in order)
    if sorted(order) != list(range(t.ndim)):
        raise InvalidPermutation(f"{order} is not a permutation of axes of {t.shape}")
    out = np.ascontiguousarray(np.transpose(t.data, order))
    tape = _tape_of(t)
    if tape is None:
        return Tensor(out)
    inverse = np.argsort(order)

    def vjp(gs):
        return [np.ascontiguousarray(np.transpose(gs[0], inverse))]

    return tape.record([out], [t], vjp)[0]


def reshape(t, new_shape) -> Tensor:
    t = _as_tensor(t)
    new_shape = tuple(int(e) for e in new_shape)
    if new_shape.count(-1) == 1:
        rest = -int(np.prod(new_shape))
        if rest <= 0 or t.data.size % rest:
            raise ElementCountMismatch(
                f"cannot infer extent reshaping {t.shape} to {new_shape}")
        new_shape = tuple(t.data.size // rest if e == -1 else e for e in new_shape)
    if int(np.prod(new_shape)) != t.data.size:
        raise ElementCountMismatch(
            f"cannot reshape {t.shape} ({t.data.size} elements) to {new_shape}")
    out = t.data.reshape(new_shape)
    tape = _tape_of(t)
    if tape is None:
        return Tensor(out)
    old_shape = t.shape

    def vjp(gs):
        return [gs[0].reshape(old_shape)]

    return tape.record([out], [t], vjp)[0]


def restructure(kind: str, t, spec) -> Tensor:
    if kind == "permute":
        return permute(t, spec)
    if kind == "reshape":
        return reshape(t, spec)
    raise ValueError(f"unknown restructure kind {kind!r}")


# ---------------------------------------------------------------------------
# FFT

def _check_axes(ndim, axes):
    axes = tuple(int(ax) for ax in axes)
    for ax in axes:
        if not -ndim <= ax < ndim:
            raise AxisOutOfRange(f"axis {ax} out of range for rank {ndim}")
    return tuple(ax % ndim for ax in axes)


def _last_axis_weights(shape, axes, half, full_last):
    """Per-bin weight on the reduced axis: `half` on conjugate-pair bins,
    1 on the self-conjugate bins (DC, and Nyquist when the extent is even)."""
    last = axes[-1]
    n_red = shape[last]
    w = np.full(n_red, half)
    w[0] = 1.0
    if full_last % 2 == 0 and n_red > 1:
        w[-1] = 1.0
    wshape = [1] * len(shape)
    wshape[last] = n_red
    return w.reshape(wshape)


def rfft_nd(t, axes) -> ComplexTensor:
    """Unnormalized forward transform of a real tensor over `axes`."""
    t = _as_tensor(t)
    axes = _check_axes(t.ndim, axes)
    spec = np.fft.rfftn(t.data, axes=axes)
    re = np.ascontiguousarray(spec.real)
    im = np.ascontiguousarray(spec.imag)
    tape = _tape_of(t)
    if tape is None:
        return ComplexTensor(Tensor(re), Tensor(im))

    extents = tuple(t.shape[ax] for ax in axes)
    n_tot = int(np.prod(extents))
    w = _last_axis_weights(re.shape, axes, half=0.5, full_last=t.shape[axes[-1]])

    def vjp(gs):
        gr, gi = gs
        gc = (gr + 1j * gi) * w
        gx = n_tot * np.fft.irfftn(gc, s=extents, axes=axes)
        return [gx]

    re_t, im_t = tape.record([re, im], [t], vjp)
    return ComplexTensor(re_t, im_t)


def irfft_nd(c: ComplexTensor, axes, out_extents) -> Tensor:
    """Inverse of rfft_nd with 1/prod(N) scaling; needs the original extents."""
    re, im = c.re, c.im
    axes = _check_axes(re.ndim, axes)
    out_extents = tuple(int(e) for e in out_extents)
    spec = re.data + 1j * im.data
    out = np.fft.irfftn(spec, s=out_extents, axes=axes)
    out = np.ascontiguousarray(out)
    tape = _tape_of(re, im)
    if tape is None:
        return Tensor(out)

    n_tot = int(np.prod(out_extents))
    w = _last_axis_weights(re.shape, axes, half=2.0, full_last=out_extents[-1])

    def vjp(gs):
        g = gs[0]
        gc = np.fft.rfftn(g, axes=axes) * (w / n_tot)
        return [np.ascontiguousarray(gc.real), np.ascontiguousarray(gc.imag)]

    return tape.record([out], [re, im], vjp)[0]


# ---------------------------------------------------------------------------
# activations

def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


_ACTIVATIONS = {
    "silu": (
        lambda x: x * _sigmoid(x),
        lambda x, y: _sigmoid(x) * (1.0 + x * (1.0 - _sigmoid(x))),
    ),
    "tanh": (np.tanh, lambda x, y: 1.0 - y * y),
    "relu": (
        lambda x: np.maximum(x, 0.0),
        lambda x, y: (x > 0).astype(x.dtype),
    ),
    "identity": (lambda x: x, lambda x, y: np.ones_like(x)),
}


def activation(name: str, t) -> Tensor:
    try:
        fn, deriv = _ACTIVATIONS[name]
    except KeyError:
        raise UnknownActivation(
            f"{name!r}; known: {sorted(_ACTIVATIONS)}") from None
    t = _as_tensor(t)
    out = fn(t.data)
    tape = _tape_of(t)
    if tape is None:
        return Tensor(out)
    xd = t.data

    def vjp(gs):
        return [gs[0] * deriv(xd, out)]

    return tape.record([out], [t], vjp)[0]


def activation_names():
    return sorted(_ACTIVATIONS)


# ---------------------------------------------------------------------------
# einsum (two operands, no repeated index within an operand)

def _einsum_vjp_spec(spec):
    lhs, out = spec.split("->")
    a_ix, b_ix = lhs.split(",")
    return a_ix, b_ix, out


def einsum2(spec: str, a, b) -> Tensor:
    """Two-operand einsum.  Each index may appear at most once per operand,
    which makes the transpose rule below exact."""
    a = _as_tensor(a)
    b = _as_tensor(b)
    a_ix, b_ix, out_ix = _einsum_vjp_spec(spec)
    if len(set(a_ix)) != len(a_ix) or len(set(b_ix)) != len(b_ix):
        raise ValueError(f"einsum2 does not support repeated indices: {spec}")
    if not (set(a_ix) <= set(b_ix + out_ix) and set(b_ix) <= set(a_ix + out_ix)):
        raise ValueError(f"einsum2 needs every index shared or kept: {spec}")
    tape = _tape_of(a, b)
    out = np.einsum(spec, a.data, b.data)
    if tape is None:
        return Tensor(out)
    ad, bd = a.data, b.data
    a_shape, b_shape = a.shape, b.shape

    def vjp(gs):
        g = gs[0]
        ga = np.einsum(f"{out_ix},{b_ix}->{a_ix}", g, bd)
        gb = np.einsum(f"{out_ix},{a_ix}->{b_ix}", g, ad)
        # indices absent from out and the partner operand were summed over
        # by broadcasting; restore them if needed
        if ga.shape != a_shape or gb.shape != b_shape:  # pragma: no cover
            raise ShapeMismatch(f"einsum2 vjp shape drift for {spec}")
        return [ga, gb]

    return tape.record([out], [a, b], vjp)[0]


# ---------------------------------------------------------------------------
# reductions and clamping

def reduce_sum(t) -> Tensor:
    t = _as_tensor(t)
    out = np.asarray(t.data.sum())
    tape = _tape_of(t)
    if tape is None:
        return Tensor(out)
    shape = t.shape
    dtype = t.dtype

    def vjp(gs):
        return [np.broadcast_to(gs[0], shape).astype(dtype, copy=True)]

    return tape.record([out], [t], vjp)[0]


def reduce_mean(t) -> Tensor:
    t = _as_tensor(t)
    out = np.asarray(t.data.mean())
    tape = _tape_of(t)
    if tape is None:
        return Tensor(out)
    shape = t.shape
    n = t.data.size
    dtype = t.dtype

    def vjp(gs):
        return [np.broadcast_to(gs[0] / n, shape).astype(dtype, copy=True)]

    return tape.record([out], [t], vjp)[0]


def clamp(t, lo: float, hi: float) -> Tensor:
    """Clip to [lo, hi]; gradient passes through on the closed interval."""
    t = _as_tensor(t)
    out = np.clip(t.data, lo, hi)
    tape = _tape_of(t)
    if tape is None:
        return Tensor(out)
    inside = (t.data >= lo) & (t.data <= hi)

    def vjp(gs):
        return [gs[0] * inside]

    return tape.record([out], [t], vjp)[0]
