"""Elastic visual-token connector with pooled anchors and pool-conditioned queries."""

from .baselines import m3_forward, mqt_forward
from .connector import (
    BudgetRoute,
    ConnectorOutput,
    ConnectorParams,
    FeatureGrid,
    QueryBank,
    average_pool,
    budget_menu,
    nested_truncate,
    pcqr_forward,
    pcqr_prefix_consistency_check,
    pcqr_query_gradient,
    route_budget,
    sample_budget,
)
from .costmodel import CostReport, ModelConfig, Workload, total_report
from .spectral import (
    RadialProfile,
    attention_footprint,
    cumulative_concentration,
    dataset_average,
    dft2_normalized,
    normalize_profile,
    psd,
    radial_mean_power,
)

__version__ = "0.1.0"
