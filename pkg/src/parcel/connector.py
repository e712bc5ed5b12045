"""Elastic connector: pooled 2D anchors plus pool-conditioned query resampling.

Dataflow for a budget ``B`` routed to ``(n_anchors, n_queries)``::

    P     = average_pool(grid, k)                      # n_anchors x D
    Q_in  = bank[:n_queries]                           # nested prefix
    Q_pa  = rows of [P; Q_in] + SelfAttn(LN([P; Q_in])) belonging to Q_in
    Q_se  = Q_pa + CrossAttn(LN(Q_pa), LN(grid tokens)); Q_se += MLP(LN(Q_se))
    out   = [P; Q_se]                                  # B x D

With ``n_queries == 0`` the output is the pooled anchors alone.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .numerics import (
    AttentionParams,
    AttentionResult,
    ShapeError,
    attention_backward,
    frozen,
    gelu,
    gelu_grad,
    layer_norm,
    layer_norm_backward,
    multi_head_attention,
    uniform_init,
)


class BudgetError(ValueError):
    """Budget outside the supported range or menu."""


class RouteMismatchError(ValueError):
    """Route and grid (or two routes) are inconsistent."""


@dataclass(frozen=True)
class Regime:
    name: str
    source_side: int
    anchor_sizes: tuple[int, ...]
    max_budget: int

    @property
    def source_tokens(self) -> int:
        return self.source_side**2

    @property
    def min_budget(self) -> int:
        return self.anchor_sizes[0]


DEFAULT = Regime("default-224", 16, (16, 64), 256)
HIGH = Regime("high-448", 32, (16, 64, 256), 1024)
REGIMES = {"default": DEFAULT, "default-224": DEFAULT, "high": HIGH, "high-448": HIGH}


def get_regime(regime: str | Regime) -> Regime:
    if isinstance(regime, Regime):
        return regime
    try:
        return REGIMES[regime]
    except KeyError:
        raise ValueError(f"unknown regime {regime!r}; choose from {sorted(REGIMES)}") from None


@dataclass(frozen=True)
class FeatureGrid:
    """An H x W x C feature map stored row-major (h, then w, then c)."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 3 or min(v.shape) < 1:
            raise ShapeError(f"feature grid must be H x W x C with all sides >= 1, got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("feature grid contains non-finite values")
        object.__setattr__(self, "values", frozen(v))

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def channels(self) -> int:
        return self.values.shape[2]

    @property
    def n_tokens(self) -> int:
        return self.height * self.width

    def tokens(self) -> np.ndarray:
        """Flattened (H*W) x C token matrix, row-major over the grid."""
        return self.values.reshape(self.n_tokens, self.channels)

    @classmethod
    def from_tokens(cls, tokens, height: int, width: int) -> "FeatureGrid":
        t = np.asarray(tokens, dtype=np.float64)
        if t.ndim != 2 or t.shape[0] != height * width:
            raise ShapeError(f"{t.shape} tokens cannot form a {height}x{width} grid")
        return cls(t.reshape(height, width, t.shape[1]))


@dataclass(frozen=True)
class BudgetRoute:
    """Split of a budget into pooled anchors and query tokens.

    ``kernel`` is the side of the average-pooling window, so
    ``kernel**2 * n_anchors`` equals the number of source tokens.
    """

    budget: int
    n_anchors: int
    n_queries: int
    kernel: int
    regime: str = "custom"

    def __post_init__(self):
        if self.n_queries < 0 or self.n_anchors < 1 or self.kernel < 1:
            raise ValueError(f"invalid route {self}")
        if self.n_anchors + self.n_queries != self.budget:
            raise ValueError(f"anchors {self.n_anchors} + queries {self.n_queries} != budget {self.budget}")
        if math.isqrt(self.n_anchors) ** 2 != self.n_anchors:
            raise ValueError(f"anchor count {self.n_anchors} is not a square grid")
        if self.regime in REGIMES:
            reg = REGIMES[self.regime]
            if self.n_anchors not in reg.anchor_sizes or self.source_tokens != reg.source_tokens:
                raise ValueError(f"route {self} is not valid in regime {reg.name}")

    @property
    def source_tokens(self) -> int:
        return self.kernel**2 * self.n_anchors

    @property
    def anchor_side(self) -> int:
        return math.isqrt(self.n_anchors)


def route_budget(budget: int, regime: str | Regime = "default") -> BudgetRoute:
    """Pick the largest anchor grid not exceeding ``budget``; queries fill the rest."""
    reg = get_regime(regime)
    if not reg.min_budget <= budget <= reg.max_budget:
        raise BudgetError(
            f"budget {budget} outside the valid range [{reg.min_budget}, {reg.max_budget}] "
            f"for regime {reg.name}"
        )
    n_anchors = max(n for n in reg.anchor_sizes if n <= budget)
    kernel = reg.source_side // math.isqrt(n_anchors)
    return BudgetRoute(budget, n_anchors, budget - n_anchors, kernel, reg.name)


METHODS = ("parcel", "mqt", "m3")


def budget_menu(method: str, regime: str | Regime = "default") -> tuple[int, ...]:
    """Budgets sampled during training for each method."""
    reg = get_regime(regime)
    if method == "parcel":
        return tuple(range(reg.min_budget, reg.max_budget + 1, 2))
    if method == "mqt":
        return tuple(range(2, reg.max_budget + 1, 2))
    if method == "m3":
        return tuple(4**i for i in range(1, 10) if 4**i <= reg.source_tokens)
    raise ValueError(f"unknown method {method!r}; choose from {METHODS}")


def sample_budget(rng: np.random.Generator | int, method: str, regime: str | Regime = "default") -> int:
    """Draw one budget uniformly from the method's menu."""
    rng = np.random.default_rng(rng)
    menu = budget_menu(method, regime)
    return menu[int(rng.integers(len(menu)))]


def sample_budgets(seed: int, method: str, regime: str | Regime = "default", size: int = 1) -> np.ndarray:
    menu = np.asarray(budget_menu(method, regime))
    rng = np.random.default_rng(seed)
    return menu[rng.integers(len(menu), size=size)]


def average_pool(grid: FeatureGrid, k: int) -> np.ndarray:
    """Mean over non-overlapping k x k windows, rows ordered row-major."""
    if k < 1 or grid.height % k or grid.width % k:
        raise ShapeError(f"grid {grid.height}x{grid.width} is not divisible by pooling window {k}")
    h, w, c = grid.height // k, grid.width // k, grid.channels
    return grid.values.reshape(h, k, w, k, c).mean(axis=(1, 3)).reshape(h * w, c)


def pool_grid(grid: FeatureGrid, k: int) -> FeatureGrid:
    """Same as :func:`average_pool` but kept on its native pooled grid."""
    return FeatureGrid.from_tokens(average_pool(grid, k), grid.height // k, grid.width // k)


@dataclass(frozen=True)
class QueryBank:
    """Ordered learnable query embeddings; truncation always keeps a prefix."""

    embeddings: np.ndarray

    def __post_init__(self):
        e = frozen(self.embeddings)
        if e.ndim != 2:
            raise ShapeError(f"query bank must be 2-D, got {e.shape}")
        object.__setattr__(self, "embeddings", e)

    @property
    def capacity(self) -> int:
        return self.embeddings.shape[0]

    @property
    def width(self) -> int:
        return self.embeddings.shape[1]

    @classmethod
    def init(cls, capacity: int, width: int, rng: np.random.Generator | int) -> "QueryBank":
        rng = np.random.default_rng(rng)
        return cls(uniform_init(rng, (capacity, width), width))


def bank_capacity(method: str, regime: str | Regime = "default") -> int:
    reg = get_regime(regime)
    if method == "parcel":
        # largest query count any route can ask for
        return max(route_budget(b, reg).n_queries for b in range(reg.min_budget, reg.max_budget + 1))
    if method == "mqt":
        return reg.max_budget
    raise ValueError(f"method {method!r} has no query bank")


def nested_truncate(bank: QueryBank, n: int) -> np.ndarray:
    if not 0 <= n <= bank.capacity:
        raise BudgetError(f"cannot take {n} queries from a bank of capacity {bank.capacity}")
    return bank.embeddings[:n]


@dataclass(frozen=True)
class ConnectorParams:
    """All learned connector weights besides the query bank."""

    self_attn: AttentionParams
    cross_attn: AttentionParams
    self_norm: np.ndarray
    query_norm: np.ndarray
    kv_norm: np.ndarray
    mlp_norm: np.ndarray
    mlp_in: np.ndarray
    mlp_out: np.ndarray

    def __post_init__(self):
        d = self.width
        if self.cross_attn.width != d:
            raise ShapeError("self- and cross-attention widths differ")
        for name in ("self_norm", "query_norm", "kv_norm", "mlp_norm", "mlp_in", "mlp_out"):
            object.__setattr__(self, name, frozen(getattr(self, name)))
        for name in ("self_norm", "query_norm", "kv_norm", "mlp_norm"):
            if getattr(self, name).shape != (d,):
                raise ShapeError(f"{name} must have shape ({d},)")
        hidden = self.mlp_in.shape[1]
        if self.mlp_in.shape != (d, hidden) or self.mlp_out.shape != (hidden, d):
            raise ShapeError("MLP weights do not match the connector width")

    @property
    def width(self) -> int:
        return self.self_attn.width

    @property
    def mlp_hidden(self) -> int:
        return self.mlp_in.shape[1]

    @classmethod
    def init(cls, width: int, heads: int, mlp_hidden: int, rng: np.random.Generator | int) -> "ConnectorParams":
        rng = np.random.default_rng(rng)
        self_attn = AttentionParams.init(width, heads, rng)
        cross_attn = AttentionParams.init(width, heads, rng)
        ones = np.ones(width)
        return cls(
            self_attn,
            cross_attn,
            ones,
            ones,
            ones,
            ones,
            uniform_init(rng, (width, mlp_hidden), width),
            uniform_init(rng, (mlp_hidden, width), mlp_hidden),
        )


@dataclass(frozen=True)
class ConnectorOutput:
    pool: np.ndarray  # P, n_anchors x D
    explorers: np.ndarray  # Q_se, n_queries x D
    assembled: np.ndarray  # [P; Q_se], B x D
    weights: np.ndarray  # head-averaged cross-attention, n_queries x N_v
    queries_in: np.ndarray = field(repr=False)
    pool_aware: np.ndarray = field(repr=False)


@dataclass
class _CrossTrace:
    queries: np.ndarray
    attn: AttentionResult
    after_attn: np.ndarray
    hidden: np.ndarray


def cross_block(queries: np.ndarray, grid_tokens: np.ndarray, params: ConnectorParams):
    """Pre-norm cross-attention with residual, then a query-only MLP with residual."""
    qn = layer_norm(queries, params.query_norm)
    xn = layer_norm(grid_tokens, params.kv_norm)
    attn = multi_head_attention(params.cross_attn, qn, xn)
    q1 = queries + attn.output
    hidden = layer_norm(q1, params.mlp_norm) @ params.mlp_in
    q2 = q1 + gelu(hidden) @ params.mlp_out
    return q2, attn.weights, _CrossTrace(queries, attn, q1, hidden)


def cross_block_backward(trace: _CrossTrace, params: ConnectorParams, d_out: np.ndarray) -> np.ndarray:
    d_hidden = (d_out @ params.mlp_out.T) * gelu_grad(trace.hidden)
    d_q1 = d_out + layer_norm_backward(trace.after_attn, params.mlp_norm, d_hidden @ params.mlp_in.T)
    d_qn, _ = attention_backward(params.cross_attn, trace.attn, d_q1)
    return d_q1 + layer_norm_backward(trace.queries, params.query_norm, d_qn)


@dataclass
class _SelfTrace:
    joint: np.ndarray
    attn: AttentionResult
    n_anchors: int


def self_block(pool: np.ndarray, queries: np.ndarray, params: ConnectorParams):
    """Joint pre-norm self-attention over [P; Q]; returns only the updated query rows."""
    joint = np.vstack([pool, queries])
    jn = layer_norm(joint, params.self_norm)
    attn = multi_head_attention(params.self_attn, jn, jn)
    updated = joint + attn.output
    return updated[len(pool):], _SelfTrace(joint, attn, len(pool))


def self_block_backward(trace: _SelfTrace, params: ConnectorParams, d_queries: np.ndarray) -> np.ndarray:
    d_updated = np.zeros_like(trace.joint)
    d_updated[trace.n_anchors:] = d_queries
    d_q, d_kv = attention_backward(params.self_attn, trace.attn, d_updated)
    d_joint = d_updated + layer_norm_backward(trace.joint, params.self_norm, d_q + d_kv)
    return d_joint[trace.n_anchors:]


def _check_inputs(grid: FeatureGrid, route: BudgetRoute, width: int):
    if grid.channels != width:
        raise ShapeError(f"grid has {grid.channels} channels, connector width is {width}")
    if grid.n_tokens != route.source_tokens:
        raise RouteMismatchError(
            f"route expects {route.source_tokens} source tokens (kernel {route.kernel}^2 x "
            f"{route.n_anchors} anchors), grid has {grid.n_tokens}"
        )
    if grid.height % route.kernel or grid.width % route.kernel or grid.height // route.kernel != route.anchor_side:
        raise RouteMismatchError(
            f"a {grid.height}x{grid.width} grid cannot be pooled into {route.anchor_side}x{route.anchor_side} anchors"
        )


def _forward(grid, route, queries_in, params):
    pool = average_pool(grid, route.kernel)
    if route.n_queries == 0:
        empty = np.zeros((0, params.width))
        return (
            ConnectorOutput(pool, empty, pool.copy(), np.zeros((0, grid.n_tokens)), empty, empty),
            None,
            None,
        )
    pool_aware, st = self_block(pool, queries_in, params)
    explorers, weights, ct = cross_block(pool_aware, grid.tokens(), params)
    out = ConnectorOutput(pool, explorers, np.vstack([pool, explorers]), weights, queries_in, pool_aware)
    return out, st, ct


def pcqr_forward(grid: FeatureGrid, route: BudgetRoute, bank: QueryBank, params: ConnectorParams) -> ConnectorOutput:
    """Run the connector for one frame at the routed budget."""
    _check_inputs(grid, route, params.width)
    if bank.width != params.width:
        raise ShapeError(f"query bank width {bank.width} != connector width {params.width}")
    queries_in = nested_truncate(bank, route.n_queries)
    out, _, _ = _forward(grid, route, queries_in, params)
    return out


def pcqr_query_gradient(
    grid: FeatureGrid, route: BudgetRoute, bank: QueryBank, params: ConnectorParams, upstream=None
) -> np.ndarray:
    """Gradient of ``sum(upstream * assembled)`` w.r.t. the consumed query embeddings.

    ``upstream`` defaults to all ones, i.e. the loss is the sum of assembled entries.
    """
    _check_inputs(grid, route, params.width)
    queries_in = nested_truncate(bank, route.n_queries)
    out, st, ct = _forward(grid, route, queries_in, params)
    if upstream is None:
        upstream = np.ones_like(out.assembled)
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != out.assembled.shape:
        raise ShapeError(f"upstream shape {upstream.shape} != assembled shape {out.assembled.shape}")
    if route.n_queries == 0:
        return np.zeros((0, params.width))
    d_explorers = upstream[route.n_anchors:]
    d_pool_aware = cross_block_backward(ct, params, d_explorers)
    return self_block_backward(st, params, d_pool_aware)


def pcqr_prefix_consistency_check(
    grid: FeatureGrid,
    bank: QueryBank,
    params: ConnectorParams,
    b1: int,
    b2: int,
    regime: str | Regime = "default",
) -> bool:
    """True iff the queries consumed at ``b1`` are the leading rows of those at ``b2``."""
    if not b1 < b2:
        raise ValueError(f"need b1 < b2, got {b1} and {b2}")
    r1, r2 = route_budget(b1, regime), route_budget(b2, regime)
    if r1.n_anchors != r2.n_anchors:
        raise RouteMismatchError(
            f"budgets {b1} and {b2} use different anchor counts ({r1.n_anchors} vs {r2.n_anchors})"
        )
    o1 = pcqr_forward(grid, r1, bank, params)
    o2 = pcqr_forward(grid, r2, bank, params)
    return bool(np.array_equal(o1.queries_in, o2.queries_in[: r1.n_queries]))
