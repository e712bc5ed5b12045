"""Reference connectors: square spatial pooling (M3-style) and query-only resampling (MQT-style)."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .connector import (
    BudgetError,
    ConnectorParams,
    FeatureGrid,
    QueryBank,
    Regime,
    average_pool,
    budget_menu,
    cross_block,
    nested_truncate,
)
from .numerics import ShapeError


@dataclass(frozen=True)
class BaselineMode:
    kind: str
    budgets: tuple[int, ...]

    @classmethod
    def for_regime(cls, kind: str, regime: str | Regime = "default") -> "BaselineMode":
        if kind not in ("m3", "mqt"):
            raise ValueError(f"unknown baseline {kind!r}")
        return cls(kind, budget_menu(kind, regime))


def m3_budgets(grid: FeatureGrid) -> tuple[int, ...]:
    """Square budgets reachable by pooling a square grid: 4, 16, 64, ... up to N_v."""
    if grid.height != grid.width:
        return ()
    return tuple(b for b in (4**i for i in range(1, 16)) if b <= grid.n_tokens and grid.height % math.isqrt(b) == 0)


def m3_forward(grid: FeatureGrid, budget: int) -> np.ndarray:
    if grid.height != grid.width:
        raise ShapeError(f"square pooling needs a square grid, got {grid.height}x{grid.width}")
    supported = m3_budgets(grid)
    if budget not in supported:
        raise BudgetError(f"budget {budget} is not supported by square pooling; choose from {supported}")
    return average_pool(grid, grid.height // math.isqrt(budget))


@dataclass(frozen=True)
class MqtOutput:
    tokens: np.ndarray
    weights: np.ndarray


def mqt_forward(
    grid: FeatureGrid,
    budget: int,
    bank: QueryBank,
    params: ConnectorParams,
    regime: str | Regime = "default",
) -> MqtOutput:
    """First ``budget`` queries cross-attend once to the full grid.

    Uses the same cross-attention block (norms, residual, query MLP) as the
    pool-conditioned connector; there is no self-attention and no anchor.
    """
    if budget not in budget_menu("mqt", regime):
        raise BudgetError(f"budget {budget} is not an even value in the query-only menu")
    if grid.channels != params.width or bank.width != params.width:
        raise ShapeError(f"grid/bank width must equal connector width {params.width}")
    queries = nested_truncate(bank, budget)
    tokens, weights, _ = cross_block(queries, grid.tokens(), params)
    return MqtOutput(tokens, weights)
