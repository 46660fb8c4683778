"""Dense multi-head self-attention and its grid-hierarchical variant.

The hierarchical unit processes a [B,H,W,C] feature map in three phases:

1. local: split the map into G1 x G1 grids and attend within each grid
   independently, then add the input back (cheap, short-range).
2. global: average-pool the local output by G2 and let every original
   token query the pooled tokens, so long-range context costs only
   HW/G2^2 keys and values per query.
3. fuse: sum the two attention maps, apply the single output projection
   Wp, and add the unit input.

Grid sizes are runtime configuration, never baked into weights: no
parameter shape depends on (G1, G2), so one weight set runs under any
valid schedule. Head splitting applies to both phases with a shared
per-head width, and attention scores are scaled by 1/sqrt(head_dim).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

from hatnet.tensor import (
    ConfigError,
    ContractError,
    DivisibilityError,
    ShapeError,
    Tensor,
    add,
    avg_pool2d,
    mac_scope,
    matmul,
    reshape,
    scale,
    softmax_rows,
    transpose,
)

__all__ = [
    "AttentionParams",
    "HMHSAConfig",
    "mhsa",
    "mhsa_core",
    "grid_partition",
    "grid_merge",
    "hmhsa_local",
    "hmhsa_global",
    "hmhsa",
    "hmhsa_core",
    "complexity_mhsa",
    "complexity_hmhsa",
]


@dataclass(frozen=True, eq=False)
class AttentionParams:
    """Projection weights for one attention unit over C channels.

    All weights are square [C,C] with C = num_heads * head_dim. Biases
    are optional and disabled in the stock configurations. `wp` is the
    output projection; a hierarchical unit owns exactly one, carried by
    its global parameter set.
    """

    wq: Tensor
    wk: Tensor
    wv: Tensor
    num_heads: int
    head_dim: int
    wp: Optional[Tensor] = None
    bq: Optional[Tensor] = None
    bk: Optional[Tensor] = None
    bv: Optional[Tensor] = None
    bp: Optional[Tensor] = None

    def __post_init__(self):
        if self.num_heads < 1 or self.head_dim < 1:
            raise ConfigError(
                f"num_heads and head_dim must be positive, got {self.num_heads}, {self.head_dim}"
            )
        c = self.channels
        for label, w in (("wq", self.wq), ("wk", self.wk), ("wv", self.wv)):
            if w.shape != (c, c):
                raise ConfigError(f"{label} shape {w.shape} != ({c}, {c})")
        if self.wp is not None and self.wp.shape != (c, c):
            raise ConfigError(f"wp shape {self.wp.shape} != ({c}, {c})")
        for label, b in (("bq", self.bq), ("bk", self.bk), ("bv", self.bv), ("bp", self.bp)):
            if b is not None and b.shape != (c,):
                raise ConfigError(f"{label} shape {b.shape} != ({c},)")

    @property
    def channels(self) -> int:
        return self.num_heads * self.head_dim


@dataclass(frozen=True, eq=False)
class HMHSAConfig:
    """Grid sizes plus the local and global parameter sets of one unit.

    The output projection lives on `params_global` only; `params_local`
    must not carry one, keeping a single Wp per unit.
    """

    g1: int
    g2: int
    params_local: AttentionParams
    params_global: AttentionParams

    def __post_init__(self):
        if self.g1 < 1 or self.g2 < 1:
            raise ConfigError(f"grid sizes must be positive, got g1={self.g1}, g2={self.g2}")
        if self.params_local.channels != self.params_global.channels:
            raise ConfigError(
                "local and global parameter sets disagree on channel count: "
                f"{self.params_local.channels} vs {self.params_global.channels}"
            )
        if self.params_local.wp is not None:
            raise ConfigError("local parameter set must not carry an output projection")
        if self.params_global.wp is None:
            raise ConfigError("global parameter set must carry the output projection")

    @property
    def channels(self) -> int:
        return self.params_local.channels


def _check_tokens(x: Tensor, p: AttentionParams, op: str) -> None:
    if x.ndim != 3:
        raise ShapeError(f"{op} expects [B,N,C] tokens, got {x.shape}")
    if x.shape[1] < 1:
        raise ShapeError(f"{op} needs at least one token, got {x.shape}")
    if x.shape[2] != p.channels:
        raise ConfigError(
            f"{op}: input has {x.shape[2]} channels but params expect "
            f"{p.num_heads} heads x {p.head_dim} = {p.channels}"
        )


def _check_map(x: Tensor, channels: int, op: str) -> tuple:
    if x.ndim != 4:
        raise ShapeError(f"{op} expects [B,H,W,C] feature maps, got {x.shape}")
    if x.shape[3] != channels:
        raise ConfigError(f"{op}: input has {x.shape[3]} channels, params expect {channels}")
    return x.shape


def _project(tokens: Tensor, w: Tensor, b: Optional[Tensor]) -> Tensor:
    y = matmul(tokens, w)
    return add(y, b) if b is not None else y


def _attend(q: Tensor, k: Tensor, v: Tensor, num_heads: int, label: str) -> Tensor:
    """Per-head scaled dot-product attention; concatenated heads out."""
    b, n, c = q.shape
    m = k.shape[1]
    d = c // num_heads
    qh = transpose(reshape(q, (b, n, num_heads, d)), (0, 2, 1, 3))
    kh = transpose(reshape(k, (b, m, num_heads, d)), (0, 2, 1, 3))
    vh = transpose(reshape(v, (b, m, num_heads, d)), (0, 2, 1, 3))
    with mac_scope(label):
        scores = scale(matmul(qh, transpose(kh, (0, 1, 3, 2))), 1.0 / math.sqrt(d))
        weights = softmax_rows(scores)
        out = matmul(weights, vh)
    return reshape(transpose(out, (0, 2, 1, 3)), (b, n, c))


def mhsa_core(x: Tensor, p: AttentionParams) -> Tensor:
    """Dense attention over [B,N,C] tokens, output-projected, no residual."""
    _check_tokens(x, p, "mhsa")
    if p.wp is None:
        raise ConfigError("mhsa requires an output projection wp")
    with mac_scope("proj"):
        q = _project(x, p.wq, p.bq)
        k = _project(x, p.wk, p.bk)
        v = _project(x, p.wv, p.bv)
    a = _attend(q, k, v, p.num_heads, "attn")
    with mac_scope("out_proj"):
        y = matmul(a, p.wp)
    if p.bp is not None:
        y = add(y, p.bp)
    return y


def mhsa(x: Tensor, p: AttentionParams) -> Tensor:
    """Dense multi-head self-attention with residual: attn(x)Wp + x."""
    return add(mhsa_core(x, p), x)


def grid_partition(x: Tensor, g: int) -> Tensor:
    """[B,H,W,C] -> [B*(H/g)*(W/g), g*g, C]; grids row-major, tokens row-major."""
    if x.ndim != 4:
        raise ShapeError(f"grid_partition expects [B,H,W,C], got {x.shape}")
    g = int(g)
    if g < 1:
        raise ContractError(f"grid size must be >= 1, got {g}")
    b, h, w, c = x.shape
    if h % g or w % g:
        raise DivisibilityError(f"grid size g={g} must divide H={h} and W={w}")
    t = reshape(x, (b, h // g, g, w // g, g, c))
    t = transpose(t, (0, 1, 3, 2, 4, 5))
    return reshape(t, (b * (h // g) * (w // g), g * g, c))


def grid_merge(t: Tensor, g: int, h: int, w: int) -> Tensor:
    """Exact inverse of grid_partition for a target [B,h,w,C] map."""
    if t.ndim != 3:
        raise ShapeError(f"grid_merge expects [B*nGrids, g*g, C], got {t.shape}")
    g, h, w = int(g), int(h), int(w)
    if g < 1:
        raise ContractError(f"grid size must be >= 1, got {g}")
    if h % g or w % g:
        raise DivisibilityError(f"grid size g={g} must divide H={h} and W={w}")
    if t.shape[1] != g * g:
        raise ShapeError(f"grid_merge token count {t.shape[1]} != g*g = {g * g}")
    n_grids = (h // g) * (w // g)
    if t.shape[0] % n_grids:
        raise ShapeError(f"grid count {t.shape[0]} is not a multiple of (H/g)*(W/g) = {n_grids}")
    b = t.shape[0] // n_grids
    c = t.shape[2]
    u = reshape(t, (b, h // g, w // g, g, g, c))
    u = transpose(u, (0, 1, 3, 2, 4, 5))
    return reshape(u, (b, h, w, c))


def hmhsa_local(x: Tensor, cfg: HMHSAConfig) -> Tensor:
    """Grid-local attention with residual; unprojected (Wp is applied at fusion)."""
    b, h, w, c = _check_map(x, cfg.channels, "hmhsa_local")
    p = cfg.params_local
    grids = grid_partition(x, cfg.g1)
    with mac_scope("local_proj"):
        q = _project(grids, p.wq, p.bq)
        k = _project(grids, p.wk, p.bk)
        v = _project(grids, p.wv, p.bv)
    a = _attend(q, k, v, p.num_heads, "local_attn")
    return add(grid_merge(a, cfg.g1, h, w), x)


def hmhsa_global(a1: Tensor, cfg: HMHSAConfig) -> Tensor:
    """Pooled cross-attention: every token of a1 queries the G2-pooled tokens.

    Returns unprojected [B, H*W, C] attention output.
    """
    b, h, w, c = _check_map(a1, cfg.channels, "hmhsa_global")
    p = cfg.params_global
    pooled = avg_pool2d(a1, cfg.g2)
    q_tokens = reshape(a1, (b, h * w, c))
    kv_tokens = reshape(pooled, (b, (h // cfg.g2) * (w // cfg.g2), c))
    with mac_scope("global_q_proj"):
        q = _project(q_tokens, p.wq, p.bq)
    with mac_scope("global_kv_proj"):
        k = _project(kv_tokens, p.wk, p.bk)
        v = _project(kv_tokens, p.wv, p.bv)
    return _attend(q, k, v, p.num_heads, "global_attn")


def hmhsa_core(x: Tensor, cfg: HMHSAConfig) -> Tensor:
    """Local + global attention fused by the single output projection, no final residual."""
    b, h, w, c = _check_map(x, cfg.channels, "hmhsa")
    a1 = hmhsa_local(x, cfg)
    a2 = hmhsa_global(a1, cfg)
    fused = add(a1, reshape(a2, (b, h, w, c)))
    with mac_scope("out_proj"):
        y = matmul(reshape(fused, (b, h * w, c)), cfg.params_global.wp)
    if cfg.params_global.bp is not None:
        y = add(y, cfg.params_global.bp)
    return reshape(y, (b, h, w, c))


def hmhsa(x: Tensor, cfg: HMHSAConfig) -> Tensor:
    """Full hierarchical attention unit: (A1 + A2) Wp + x, shape preserved."""
    return add(hmhsa_core(x, cfg), x)


def _check_positive(**kwargs: int) -> None:
    for name, value in kwargs.items():
        if not isinstance(value, int) or isinstance(value, bool) or value < 1:
            raise ContractError(f"{name} must be a positive integer, got {value!r}")


def complexity_mhsa(h: int, w: int, c: int) -> int:
    """Multiply-accumulate count of dense attention: 3HWC^2 + 2(HW)^2 C.

    Covers the three input projections and the two attention products;
    the output projection, softmax, and residual are excluded. Exact
    integer arithmetic at any size.
    """
    _check_positive(h=h, w=w, c=c)
    n = h * w
    return 3 * n * c * c + 2 * n * n * c


def complexity_hmhsa(h: int, w: int, c: int, g1: int, g2: int) -> int:
    """Multiply-accumulate count of the hierarchical unit.

    HWC(4C + 2 G1^2) + 2(HW/G2^2) C (C + HW): four input projections,
    grid-local attention products, pooled key/value projections, and
    global cross-attention products. Output projection excluded, exact
    integers throughout.
    """
    _check_positive(h=h, w=w, c=c, g1=g1, g2=g2)
    n = h * w
    if n % (g2 * g2):
        raise DivisibilityError(f"g2^2 = {g2 * g2} must divide H*W = {n}")
    return n * c * (4 * c + 2 * g1 * g1) + 2 * (n // (g2 * g2)) * c * (c + n)
