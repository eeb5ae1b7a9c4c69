"""Branch/trunk hybrid operator models.

A model pairs a spatial branch network (FNO, KAN, or MLP) with a temporal
trunk network (KAN or MLP).  The branch maps the input fields to
n_t * n_c_out channels over the grid; the trunk maps the n_t query times
to n_t scalars which are broadcast over channels and space and merged by
an elementwise product.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import layers as L
from . import tensor as T
from .errors import InvalidConfig, ModesExceedResolution, ShapeMismatch
from .tensor import Tensor

__all__ = ["ModelConfig", "HybridModel", "build_model", "merge_hadamard",
           "hybrid_forward"]

BRANCH_KINDS = ("fno", "kan", "mlp")
TRUNK_KINDS = ("kan", "mlp")


@dataclass
class ModelConfig:
    """Declarative description of a hybrid model.

    `branch_modes` may be a single int (capped per axis at the Nyquist
    limit) or an explicit per-axis tuple (validated strictly).
    """

    branch: str = "fno"
    trunk: str = "mlp"
    n_c_in: int = 1
    n_c_out: int = 1
    n_t: int = 1
    grid: tuple = (16, 16, 1)
    branch_hidden: tuple = (32, 32)
    branch_width: int = 32
    branch_blocks: int = 2
    branch_modes: object = 8
    branch_proj: int = 32
    branch_order: int = 3
    branch_grid_size: int = 8
    trunk_hidden: tuple = (32, 32)
    trunk_order: int = 3
    trunk_grid_size: int = 8
    trunk_width: int = None
    branch_activation: str = "silu"
    trunk_activation: str = "tanh"
    dtype: str = "f32"

    def __post_init__(self):
        if self.branch not in BRANCH_KINDS:
            raise InvalidConfig(f"branch kind {self.branch!r} not in {BRANCH_KINDS}")
        if self.trunk not in TRUNK_KINDS:
            raise InvalidConfig(f"trunk kind {self.trunk!r} not in {TRUNK_KINDS}")
        self.grid = tuple(int(e) for e in self.grid)
        if len(self.grid) != 3 or any(e < 1 for e in self.grid):
            raise InvalidConfig(f"grid must be three positive extents, got {self.grid}")
        for name in ("n_c_in", "n_c_out", "n_t"):
            if getattr(self, name) < 1:
                raise InvalidConfig(f"{name} must be >= 1")
        if self.trunk_width is not None and self.trunk_width != self.n_t:
            raise InvalidConfig(
                f"trunk output width {self.trunk_width} != n_t {self.n_t}")
        if self.dtype not in ("f32", "f64"):
            raise InvalidConfig(f"dtype must be f32 or f64, got {self.dtype!r}")
        self.branch_hidden = tuple(int(e) for e in self.branch_hidden)
        self.trunk_hidden = tuple(int(e) for e in self.trunk_hidden)

    @property
    def np_dtype(self):
        return np.float32 if self.dtype == "f32" else np.float64

    @property
    def branch_out_channels(self):
        return self.n_t * self.n_c_out

    def modes_tuple(self):
        nx, ny, nz = self.grid
        limits = (nx, ny, nz // 2 + 1)
        m = self.branch_modes
        if isinstance(m, (int, np.integer)):
            return tuple(min(int(m), lim) for lim in limits)
        m = tuple(int(e) for e in m)
        if len(m) != 3:
            raise InvalidConfig(f"branch_modes tuple must have 3 entries, got {m}")
        for e, lim in zip(m, limits):
            if e > lim:
                raise ModesExceedResolution(
                    f"modes {m} exceed per-axis limits {limits} for grid {self.grid}")
        return m

    def to_dict(self):
        d = dict(self.__dict__)
        d["grid"] = list(self.grid)
        d["branch_hidden"] = list(self.branch_hidden)
        d["trunk_hidden"] = list(self.trunk_hidden)
        if not isinstance(d["branch_modes"], int):
            d["branch_modes"] = list(d["branch_modes"])
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "branch_modes" in d and isinstance(d["branch_modes"], list):
            d["branch_modes"] = tuple(d["branch_modes"])
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise InvalidConfig(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class HybridModel:
    config: ModelConfig
    branch_params: object
    trunk_params: object

    def named_arrays(self):
        yield from L.named_arrays(self.branch_params, "branch/")
        yield from L.named_arrays(self.trunk_params, "trunk/")

    def bind(self, mapping):
        return HybridModel(
            self.config,
            L.bind(self.branch_params, mapping, "branch/"),
            L.bind(self.trunk_params, mapping, "trunk/"),
        )

    def count_params(self):
        branch = L.count_params(self.branch_params)["blocks"]
        trunk = L.count_params(self.trunk_params)["blocks"]
        blocks = {f"branch/{k}": v for k, v in branch.items()}
        blocks.update({f"trunk/{k}": v for k, v in trunk.items()})
        return {"blocks": blocks, "total": sum(blocks.values())}


def build_model(cfg: ModelConfig, seed: int) -> HybridModel:
    """Deterministically initialize a model; same seed, same parameters."""
    rng = np.random.default_rng(seed)
    dt = cfg.np_dtype

    if cfg.branch == "fno":
        branch = L.init_fno(
            cfg.n_c_in, cfg.branch_out_channels, cfg.branch_width,
            cfg.modes_tuple(), cfg.branch_blocks, rng,
            proj_width=cfg.branch_proj, activation=cfg.branch_activation,
            dtype=dt)
    else:
        sizes = [cfg.n_c_in, *cfg.branch_hidden, cfg.branch_out_channels]
        if cfg.branch == "mlp":
            branch = L.init_mlp(sizes, rng, hidden_activation=cfg.branch_activation,
                                dtype=dt)
        else:
            branch = L.init_kan_stack(sizes, rng, order=cfg.branch_order,
                                      grid_size=cfg.branch_grid_size,
                                      base_activation=cfg.branch_activation,
                                      dtype=dt)

    trunk_sizes = [cfg.n_t, *cfg.trunk_hidden, cfg.n_t]
    if cfg.trunk == "mlp":
        trunk = L.init_mlp(trunk_sizes, rng, hidden_activation=cfg.trunk_activation,
                           dtype=dt)
    else:
        trunk = L.init_kan_stack(trunk_sizes, rng, order=cfg.trunk_order,
                                 grid_size=cfg.trunk_grid_size,
                                 base_activation=cfg.trunk_activation, dtype=dt)
    return HybridModel(cfg, branch, trunk)


def merge_hadamard(b, t) -> Tensor:
    """Broadcast the trunk vector over channels and space, then multiply.

    b: (n_c_out, n_t, nx, ny, nz), t: (n_t,).  Leading batch axes on both
    operands are accepted as long as they agree.
    """
    b = b if isinstance(b, Tensor) else Tensor(b)
    t = t if isinstance(t, Tensor) else Tensor(t)
    if t.ndim == 1:
        if b.ndim != 5 or b.shape[1] != t.shape[0]:
            raise ShapeMismatch(f"cannot merge {b.shape} with trunk {t.shape}")
        tt = T.reshape(t, (1, t.shape[0], 1, 1, 1))
    elif t.ndim == 2:
        if b.ndim != 6 or b.shape[0] != t.shape[0] or b.shape[2] != t.shape[1]:
            raise ShapeMismatch(f"cannot merge {b.shape} with trunk {t.shape}")
        tt = T.reshape(t, (t.shape[0], 1, t.shape[1], 1, 1, 1))
    else:
        raise ShapeMismatch(f"trunk must be rank 1 or 2, got {t.shape}")
    return T.mul(b, tt)


def _branch_pointwise(net_forward, params, v, cfg):
    """MLP/KAN branch path: channels-last permute, pointwise net, permute back."""
    h = T.permute(v, (0, 4, 2, 3, 1))           # (s, z, x, y, c_in)
    h = net_forward(params, h)                   # (s, z, x, y, t*c_out)
    return T.permute(h, (0, 4, 2, 3, 1))         # (s, t*c_out, x, y, z)


def hybrid_forward(model: HybridModel, v, xi) -> Tensor:
    """Batched forward pass; returns (n_s, n_c_out, n_t, nx, ny, nz)."""
    cfg = model.config
    v = v if isinstance(v, Tensor) else Tensor(v, dtype=cfg.np_dtype)
    xi = xi if isinstance(xi, Tensor) else Tensor(xi, dtype=cfg.np_dtype)
    nx, ny, nz = cfg.grid
    if v.ndim != 5 or v.shape[1:] != (cfg.n_c_in, nx, ny, nz):
        raise ShapeMismatch(
            f"branch input {v.shape} != (n_s, {cfg.n_c_in}, {nx}, {ny}, {nz})")
    if xi.ndim != 2 or xi.shape != (v.shape[0], cfg.n_t):
        raise ShapeMismatch(
            f"trunk input {xi.shape} != ({v.shape[0]}, {cfg.n_t})")

    if cfg.branch == "fno":
        b = L.fno_forward(model.branch_params, v)
    elif cfg.branch == "mlp":
        b = _branch_pointwise(L.mlp_forward, model.branch_params, v, cfg)
    else:
        b = _branch_pointwise(L.kan_forward, model.branch_params, v, cfg)
    b = T.reshape(b, (v.shape[0], cfg.n_c_out, cfg.n_t, nx, ny, nz))

    if cfg.trunk == "mlp":
        t = L.mlp_forward(model.trunk_params, xi)
    else:
        t = L.kan_forward(model.trunk_params, xi)
    return merge_hadamard(b, t)
