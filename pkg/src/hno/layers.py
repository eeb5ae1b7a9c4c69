"""Network building blocks: dense layers, B-spline edge layers, and
Fourier blocks with spectral convolutions.

Parameter containers hold plain numpy arrays; `bind` swaps them for
tape-tracked tensors so one forward implementation serves both inference
and training.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import DegenerateKnots, ModesExceedResolution, ShapeMismatch
from .tensor import Tensor

__all__ = [
    "MlpParams",
    "SplineSpec",
    "KanLayerParams",
    "FnoParams",
    "SpectralBlock",
    "init_mlp",
    "init_kan_stack",
    "init_fno",
    "mlp_forward",
    "bspline_basis",
    "kan_layer_forward",
    "kan_forward",
    "spectral_conv",
    "fno_layer_forward",
    "fno_forward",
    "count_params",
    "bind",
    "named_arrays",
    "mode_indices",
]


# ---------------------------------------------------------------------------
# B-spline basis evaluation (Cox-de Boor, iterative)

def _check_knots(knots, order):
    knots = np.asarray(knots, dtype=np.float64)
    if knots.ndim != 1 or knots.size < order + 2:
        raise DegenerateKnots(f"need at least order+2 knots, got {knots.size}")
    if np.any(np.diff(knots) < 0):
        raise DegenerateKnots("knot vector must be nondecreasing")
    n_basis = knots.size - order - 1
    if n_basis < 1 or not knots[order] < knots[n_basis]:
        raise DegenerateKnots("empty evaluation domain")
    return knots, n_basis


def _basis_kernel(x, knots, order):
    """Basis values for every point in x; returns (*x.shape, n_basis)."""
    xk = x[..., None]
    b = ((xk >= knots[:-1]) & (xk < knots[1:])).astype(x.dtype)
    for k in range(1, order + 1):
        dl = knots[k:-1] - knots[: -(k + 1)]
        dr = knots[k + 1 :] - knots[1:-k]
        with np.errstate(divide="ignore", invalid="ignore"):
            left = np.where(dl > 0, (xk - knots[: -(k + 1)]) / dl, 0.0)
            right = np.where(dr > 0, (knots[k + 1 :] - xk) / dr, 0.0)
        b = left * b[..., :-1] + right * b[..., 1:]
    return b


def _basis_derivative(x, knots, order):
    """d/dx of each basis function at x (order >= 1)."""
    lower = _basis_kernel(x, knots, order - 1)
    dl = knots[order:-1] - knots[: -(order + 1)]
    dr = knots[order + 1 :] - knots[1:-order]
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = np.where(dl > 0, lower[..., :-1] / dl, 0.0)
        t2 = np.where(dr > 0, lower[..., 1:] / dr, 0.0)
    return order * (t1 - t2)


def bspline_basis(x, knots, order: int) -> np.ndarray:
    """Evaluate all basis functions at the given points.

    Returns a (len(x), n_basis) matrix with n_basis = len(knots) - order - 1.
    """
    knots, _ = _check_knots(knots, order)
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    return _basis_kernel(x, knots, order)


def _bspline_basis_op(x: Tensor, knots, order) -> Tensor:
    """Taped basis evaluation; gradient flows to the evaluation points."""
    out = _basis_kernel(x.data, knots, order)
    if x.tape is None:
        return Tensor(out)
    xd = x.data

    def vjp(gs):
        return [(gs[0] * _basis_derivative(xd, knots, order)).sum(axis=-1)]

    return x.tape.record([out], [x], vjp)[0]


@dataclass
class SplineSpec:
    """A univariate spline: knot vector, polynomial degree, coefficients."""

    order: int
    knots: np.ndarray
    coeffs: np.ndarray

    def __post_init__(self):
        self.knots, n_basis = _check_knots(self.knots, self.order)
        self.coeffs = np.asarray(self.coeffs, dtype=np.float64)
        if self.coeffs.shape != (n_basis,):
            raise ShapeMismatch(
                f"expected {n_basis} coefficients, got {self.coeffs.shape}")

    @property
    def domain(self):
        n_basis = self.knots.size - self.order - 1
        return float(self.knots[self.order]), float(self.knots[n_basis])

    def __call__(self, x):
        x = np.asarray(x, dtype=np.float64)
        return _basis_kernel(x, self.knots, self.order) @ self.coeffs


def uniform_knots(lo: float, hi: float, intervals: int, order: int) -> np.ndarray:
    """Uniform knot grid covering [lo, hi], padded by `order` knots per side."""
    h = (hi - lo) / intervals
    return lo + h * np.arange(-order, intervals + order + 1)


# ---------------------------------------------------------------------------
# dense (MLP) layers

@dataclass
class MlpParams:
    """Stacked affine layers; weights are (out, in), biases (out,)."""

    weights: list
    biases: list
    hidden_activation: str = "tanh"
    output_activation: str = "identity"

    def __post_init__(self):
        if len(self.weights) != len(self.biases):
            raise ShapeMismatch("one bias vector per weight matrix required")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if _dim(w, 0) != _dim(b, 0):
                raise ShapeMismatch(f"layer {i}: bias extent != output extent")
            if i > 0 and _dim(w, 1) != _dim(self.weights[i - 1], 0):
                raise ShapeMismatch(f"layer {i}: input extent does not chain")

    @property
    def in_width(self):
        return _dim(self.weights[0], 1)

    @property
    def out_width(self):
        return _dim(self.weights[-1], 0)


def _dim(a, i):
    return a.shape[i]


def _dim0(a):
    return a.shape[0]


def init_mlp(sizes, rng, hidden_activation="tanh", output_activation="identity",
             dtype=np.float64) -> MlpParams:
    """Fan-in uniform initialization for a size chain like [4, 32, 32, 20]."""
    weights, biases = [], []
    for n_in, n_out in zip(sizes, sizes[1:]):
        s = 1.0 / np.sqrt(n_in)
        weights.append(rng.uniform(-s, s, size=(n_out, n_in)).astype(dtype))
        biases.append(rng.uniform(-s, s, size=(n_out,)).astype(dtype))
    return MlpParams(weights, biases, hidden_activation, output_activation)


def mlp_forward(p: MlpParams, x) -> Tensor:
    """Apply the layer stack; all leading axes of x are batch."""
    x = x if isinstance(x, Tensor) else Tensor(x)
    if x.shape[-1] != _dim(p.weights[0], 1):
        raise ShapeMismatch(
            f"input width {x.shape[-1]} != first layer width {_dim(p.weights[0], 1)}")
    lead = x.shape[:-1]
    h = T.reshape(x, (_prod(lead), x.shape[-1]))
    n_layers = len(p.weights)
    for i, (w, b) in enumerate(zip(p.weights, p.biases)):
        h = T.add(T.einsum2("bi,oi->bo", h, w), b)
        act = p.hidden_activation if i < n_layers - 1 else p.output_activation
        h = T.activation(act, h)
    return T.reshape(h, lead + (h.shape[-1],))


def _prod(shape):
    out = 1
    for e in shape:
        out *= int(e)
    return out


# ---------------------------------------------------------------------------
# KAN layers (residual base + spline on every edge)

@dataclass
class KanLayerParams:
    """One edge layer: out_o(x) = sum_j [w_base[o,j]*act(x_j) + spline_oj(x_j)].

    The spline part shares a uniform knot grid on [-grid_bound, grid_bound];
    inputs are clamped into the grid before basis evaluation.
    """

    coeffs: np.ndarray          # (out, in, n_basis)
    w_base: np.ndarray          # (out, in)
    order: int = 3
    grid_size: int = 8
    grid_bound: float = 1.0
    base_activation: str = "silu"

    def __post_init__(self):
        knots = uniform_knots(-self.grid_bound, self.grid_bound,
                              self.grid_size, self.order)
        _check_knots(knots, self.order)
        self.grid = knots.astype(self.coeffs.dtype)
        n_basis = self.grid_size + self.order
        if self.coeffs.shape[-1] != n_basis:
            raise ShapeMismatch(
                f"coefficient grid last extent {self.coeffs.shape[-1]} != "
                f"grid_size+order = {n_basis}")
        if self.coeffs.shape[:2] != tuple(self.w_base.shape):
            raise ShapeMismatch("coeffs and w_base disagree on layer widths")

    @property
    def in_width(self):
        return self.w_base.shape[1]

    @property
    def out_width(self):
        return self.w_base.shape[0]


def init_kan_layer(n_in, n_out, rng, order=3, grid_size=8, grid_bound=1.0,
                   base_activation="silu", noise_scale=0.1,
                   dtype=np.float64) -> KanLayerParams:
    s = 1.0 / np.sqrt(n_in)
    w_base = rng.uniform(-s, s, size=(n_out, n_in)).astype(dtype)
    cs = noise_scale / np.sqrt(grid_size)
    coeffs = rng.uniform(-cs, cs, size=(n_out, n_in, grid_size + order)).astype(dtype)
    return KanLayerParams(coeffs, w_base, order, grid_size, grid_bound,
                          base_activation)


def init_kan_stack(sizes, rng, order=3, grid_size=8, grid_bound=1.0,
                   base_activation="silu", dtype=np.float64) -> list:
    return [
        init_kan_layer(a, b, rng, order, grid_size, grid_bound,
                       base_activation, dtype=dtype)
        for a, b in zip(sizes, sizes[1:])
    ]


def kan_layer_forward(p: KanLayerParams, x) -> Tensor:
    x = x if isinstance(x, Tensor) else Tensor(x)
    if x.shape[-1] != p.in_width:
        raise ShapeMismatch(
            f"input width {x.shape[-1]} != layer input width {p.in_width}")
    lead = x.shape[:-1]
    x2 = T.reshape(x, (_prod(lead), p.in_width))
    xc = T.clamp(x2, -p.grid_bound, p.grid_bound)
    basis = _bspline_basis_op(xc, p.grid, p.order)          # (b, in, n_basis)
    spline = T.einsum2("bin,oin->bo", basis, p.coeffs)
    base = T.einsum2("bi,oi->bo", T.activation(p.base_activation, x2), p.w_base)
    out = T.add(base, spline)
    return T.reshape(out, lead + (p.out_width,))


def kan_forward(layers: list, x) -> Tensor:
    for p in layers:
        x = kan_layer_forward(p, x)
    return x


# ---------------------------------------------------------------------------
# Fourier blocks

def mode_indices(extent: int, m: int, reduced: bool) -> np.ndarray:
    """Indices of the m lowest frequencies along one axis.

    On the Hermitian-reduced axis these are 0..m-1 of floor(n/2)+1 stored
    bins; elsewhere frequencies are ranked by |k| (0, 1, -1, 2, -2, ...).
    """
    if reduced:
        limit = extent // 2 + 1
        if m > limit:
            raise ModesExceedResolution(
                f"{m} modes > {limit} stored bins on reduced axis of extent {extent}")
        return np.arange(m)
    if m > extent:
        raise ModesExceedResolution(f"{m} modes > axis extent {extent}")
    order = [0]
    k = 1
    while len(order) < extent:
        order.append(k)
        if len(order) < extent:
            order.append(extent - k)
        k += 1
    return np.array(order[:m])


@dataclass
class SpectralBlock:
    """Complex channel-mixing weights over retained modes plus a local affine."""

    r_re: np.ndarray   # (out, in, m_1, ..., m_d)
    r_im: np.ndarray
    w: np.ndarray      # (out, in)
    w_bias: np.ndarray  # (out,)


@dataclass
class FnoParams:
    lift_w: np.ndarray          # (width, c_in)
    lift_b: np.ndarray
    blocks: list                # of SpectralBlock
    modes: tuple                # retained modes per spatial axis
    q1_w: np.ndarray            # (proj, width)
    q1_b: np.ndarray
    q2_w: np.ndarray            # (c_out, proj)
    q2_b: np.ndarray
    activation: str = "tanh"

    @property
    def width(self):
        return self.lift_w.shape[0]

    @property
    def c_in(self):
        return self.lift_w.shape[1]

    @property
    def c_out(self):
        return self.q2_w.shape[0]


def init_fno(c_in, c_out, width, modes, n_blocks, rng, proj_width=None,
             activation="tanh", dtype=np.float64) -> FnoParams:
    proj_width = proj_width or width
    s = 1.0 / np.sqrt(c_in)
    lift_w = rng.uniform(-s, s, size=(width, c_in)).astype(dtype)
    lift_b = rng.uniform(-s, s, size=(width,)).astype(dtype)
    blocks = []
    rs = 1.0 / (width * width)
    sw = 1.0 / np.sqrt(width)
    for _ in range(n_blocks):
        shape = (width, width) + tuple(modes)
        blocks.append(SpectralBlock(
            r_re=rng.uniform(-rs, rs, size=shape).astype(dtype),
            r_im=rng.uniform(-rs, rs, size=shape).astype(dtype),
            w=rng.uniform(-sw, sw, size=(width, width)).astype(dtype),
            w_bias=rng.uniform(-sw, sw, size=(width,)).astype(dtype),
        ))
    q1_w = rng.uniform(-sw, sw, size=(proj_width, width)).astype(dtype)
    q1_b = rng.uniform(-sw, sw, size=(proj_width,)).astype(dtype)
    sp = 1.0 / np.sqrt(proj_width)
    q2_w = rng.uniform(-sp, sp, size=(c_out, proj_width)).astype(dtype)
    q2_b = rng.uniform(-sp, sp, size=(c_out,)).astype(dtype)
    return FnoParams(lift_w, lift_b, blocks, tuple(modes),
                     q1_w, q1_b, q2_w, q2_b, activation)


def _channel_affine(x, w, b, spatial_rank):
    """Apply an (out, in) map across the channel axis sitting before the
    spatial axes: x is (batch, in, s1..sd)."""
    letters = "xyzuvw"[:spatial_rank]
    out = T.einsum2(f"bi{letters},oi->bo{letters}", x, w)
    bshape = (1, -1) + (1,) * spatial_rank
    b_t = b if isinstance(b, Tensor) else Tensor(b)
    return T.add(out, T.reshape(b_t, bshape))


def spectral_conv(z, r_re, r_im, modes) -> Tensor:
    """F^-1(R . F(z)) over the trailing spatial axes of z = (..., c, s1..sd).

    The channel-mixing complex weights act on the retained low modes; all
    other frequencies are zeroed.  The mode axes of R are laid out in
    `mode_indices` order for each spatial axis.
    """
    z = z if isinstance(z, Tensor) else Tensor(z)
    d = len(modes)
    spatial = z.shape[-d:]
    lead = z.shape[:-d - 1]
    c_in = z.shape[-d - 1]
    axes = tuple(range(z.ndim - d, z.ndim))
    idx = [mode_indices(spatial[i], modes[i], reduced=(i == d - 1))
           for i in range(d)]

    spec = T.rfft_nd(z, axes)
    sel_re = _take_grid(spec.re, axes, idx)
    sel_im = _take_grid(spec.im, axes, idx)

    b = _prod(lead)
    m_tot = _prod(tuple(modes))
    sel_re = T.reshape(sel_re, (b, c_in, m_tot))
    sel_im = T.reshape(sel_im, (b, c_in, m_tot))
    rr = _flatten_r(r_re)
    ri = _flatten_r(r_im)
    out_re = T.sub(T.einsum2("bcm,ocm->bom", sel_re, rr),
                   T.einsum2("bcm,ocm->bom", sel_im, ri))
    out_im = T.add(T.einsum2("bcm,ocm->bom", sel_im, rr),
                   T.einsum2("bcm,ocm->bom", sel_re, ri))

    c_out = rr.shape[0]
    grid_shape = lead + (c_out,) + tuple(modes)
    out_re = T.reshape(out_re, grid_shape)
    out_im = T.reshape(out_im, grid_shape)
    reduced_sp = spatial[:-1] + (spatial[-1] // 2 + 1,)
    full = lead + (c_out,) + reduced_sp
    out_re = _put_grid(out_re, axes, idx, full)
    out_im = _put_grid(out_im, axes, idx, full)
    return T.irfft_nd(T.ComplexTensor(out_re, out_im), axes, spatial)


def _flatten_r(r):
    if isinstance(r, Tensor):
        return T.reshape(r, (r.shape[0], r.shape[1], _prod(r.shape[2:])))
    return r.reshape(r.shape[0], r.shape[1], -1)


def _grid_key(axes, idx, ndim):
    key = [slice(None)] * ndim
    opened = np.ix_(*idx)
    for ax, ix in zip(axes, opened):
        key[ax] = ix
    # np.ix_ gives each index array the right broadcast shape only when the
    # selected axes are consecutive and trailing, which holds here.
    return tuple(key)


def _take_grid(t: Tensor, axes, idx) -> Tensor:
    key = _grid_key(axes, idx, t.ndim)
    out = np.ascontiguousarray(t.data[key])
    if t.tape is None:
        return Tensor(out)
    shape = t.shape

    def vjp(gs):
        g = np.zeros(shape, dtype=gs[0].dtype)
        g[key] = gs[0]
        return [g]

    return t.tape.record([out], [t], vjp)[0]


def _put_grid(t: Tensor, axes, idx, full_shape) -> Tensor:
    key = _grid_key(axes, idx, len(full_shape))
    out = np.zeros(full_shape, dtype=t.dtype)
    out[key] = t.data
    if t.tape is None:
        return Tensor(out)

    def vjp(gs):
        return [np.ascontiguousarray(gs[0][key])]

    return t.tape.record([out], [t], vjp)[0]


def fno_layer_forward(block: SpectralBlock, z, modes, act: str) -> Tensor:
    d = len(modes)
    conv = spectral_conv(z, block.r_re, block.r_im, modes)
    local = _channel_affine(z, block.w, block.w_bias, d)
    return T.activation(act, T.add(conv, local))


def fno_forward(p: FnoParams, v) -> Tensor:
    """Lift, run the Fourier blocks, project; v is (..., c_in, s1..sd)."""
    v = v if isinstance(v, Tensor) else Tensor(v)
    d = len(p.modes)
    if v.shape[-d - 1] != p.c_in:
        raise ShapeMismatch(
            f"channel extent {v.shape[-d - 1]} != lifting input {p.c_in}")
    lead = v.shape[:-d - 1]
    z = T.reshape(v, (_prod(lead),) + v.shape[-d - 1:])
    z = _channel_affine(z, p.lift_w, p.lift_b, d)
    for block in p.blocks:
        z = fno_layer_forward(block, z, p.modes, p.activation)
    z = T.activation(p.activation, _channel_affine(z, p.q1_w, p.q1_b, d))
    z = _channel_affine(z, p.q2_w, p.q2_b, d)
    return T.reshape(z, lead + z.shape[1:])


# ---------------------------------------------------------------------------
# parameter plumbing: naming, binding, counting

def named_arrays(params, prefix=""):
    """Yield (name, array) for every trainable array in a container."""
    if isinstance(params, MlpParams):
        for i, (w, b) in enumerate(zip(params.weights, params.biases)):
            yield f"{prefix}dense{i}/w", w
            yield f"{prefix}dense{i}/b", b
    elif isinstance(params, KanLayerParams):
        yield f"{prefix}coeffs", params.coeffs
        yield f"{prefix}w_base", params.w_base
    elif isinstance(params, FnoParams):
        yield f"{prefix}lift/w", params.lift_w
        yield f"{prefix}lift/b", params.lift_b
        for i, blk in enumerate(params.blocks):
            yield f"{prefix}block{i}/r_re", blk.r_re
            yield f"{prefix}block{i}/r_im", blk.r_im
            yield f"{prefix}block{i}/w", blk.w
            yield f"{prefix}block{i}/b", blk.w_bias
        yield f"{prefix}proj/w1", params.q1_w
        yield f"{prefix}proj/b1", params.q1_b
        yield f"{prefix}proj/w2", params.q2_w
        yield f"{prefix}proj/b2", params.q2_b
    elif isinstance(params, list):
        for i, item in enumerate(params):
            yield from named_arrays(item, f"{prefix}layer{i}/")
    else:
        raise TypeError(f"unknown parameter container {type(params)!r}")


def bind(params, mapping, prefix=""):
    """Copy of a container with arrays replaced through `mapping[name]`."""
    if isinstance(params, MlpParams):
        n = len(params.weights)
        return dataclasses.replace(
            params,
            weights=[mapping[f"{prefix}dense{i}/w"] for i in range(n)],
            biases=[mapping[f"{prefix}dense{i}/b"] for i in range(n)],
        )
    if isinstance(params, KanLayerParams):
        return dataclasses.replace(
            params,
            coeffs=mapping[f"{prefix}coeffs"],
            w_base=mapping[f"{prefix}w_base"],
        )
    if isinstance(params, FnoParams):
        blocks = [
            SpectralBlock(
                r_re=mapping[f"{prefix}block{i}/r_re"],
                r_im=mapping[f"{prefix}block{i}/r_im"],
                w=mapping[f"{prefix}block{i}/w"],
                w_bias=mapping[f"{prefix}block{i}/b"],
            )
            for i in range(len(params.blocks))
        ]
        return dataclasses.replace(
            params,
            lift_w=mapping[f"{prefix}lift/w"],
            lift_b=mapping[f"{prefix}lift/b"],
            blocks=blocks,
            q1_w=mapping[f"{prefix}proj/w1"],
            q1_b=mapping[f"{prefix}proj/b1"],
            q2_w=mapping[f"{prefix}proj/w2"],
            q2_b=mapping[f"{prefix}proj/b2"],
        )
    if isinstance(params, list):
        return [bind(item, mapping, f"{prefix}layer{i}/")
                for i, item in enumerate(params)]
    raise TypeError(f"unknown parameter container {type(params)!r}")


def _size(a):
    return int(np.prod(a.shape)) if hasattr(a, "shape") else int(np.asarray(a).size)


def count_params(params) -> dict:
    """Trainable scalar counts per named block plus the total.

    Complex spectral weights count their real and imaginary parts.
    """
    if isinstance(params, MlpParams):
        blocks = {"dense_layers": sum(_size(w) + _size(b) for w, b in
                                      zip(params.weights, params.biases))}
    elif isinstance(params, KanLayerParams):
        blocks = {"kan_layers": _size(params.coeffs) + _size(params.w_base)}
    elif isinstance(params, list):
        blocks = {}
        for item in params:
            for k, v in count_params(item)["blocks"].items():
                blocks[k] = blocks.get(k, 0) + v
    elif isinstance(params, FnoParams):
        blocks = {
            "lifting": _size(params.lift_w) + _size(params.lift_b),
            "fno_blocks": sum(
                _size(b.r_re) + _size(b.r_im) + _size(b.w) + _size(b.w_bias)
                for b in params.blocks),
            "projection": (_size(params.q1_w) + _size(params.q1_b)
                           + _size(params.q2_w) + _size(params.q2_b)),
        }
    else:
        raise TypeError(f"unknown parameter container {type(params)!r}")
    return {"blocks": blocks, "total": sum(blocks.values())}
