"""Theoretical prefill FLOPs and decoder KV-cache size.

One multiply-add counts as two FLOPs. Norms, activations, positional ops and
softmax normalization are not counted. All counts are exact Python integers;
rounding happens only in the presentation helpers.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from decimal import ROUND_HALF_UP, Decimal

from .connector import BudgetError, BudgetRoute, budget_menu, get_regime, route_budget

IMAGE_TEXT_PREFIX = 128 + 1
VIDEO_TEXT_PREFIX = 64 + 1
VIDEO_FRAMES = 16
FIGURE1_BUDGETS = (16, 64, 256)


@dataclass(frozen=True)
class ModelConfig:
    """Vision encoder + decoder constants (SigLIP-So400M / Gemma-2 2B defaults)."""

    vit_layers: int = 27
    vit_width: int = 1152
    vit_mlp: int = 4304
    vit_tokens: int = 256
    llm_layers: int = 26
    llm_width: int = 2304
    llm_mlp: int = 9216
    q_heads: int = 8
    kv_heads: int = 4
    head_dim: int = 256
    vocab: int = 257152
    cache_bytes: int = 2

    def __post_init__(self):
        for name, value in asdict(self).items():
            if not isinstance(value, int) or value < 1:
                raise ValueError(f"{name} must be a positive integer, got {value!r}")


@dataclass(frozen=True)
class Workload:
    frames: int
    budget: int
    text_prefix: int
    mode: str = "parcel"
    regime: str = "default"

    def __post_init__(self):
        if self.frames < 0 or self.budget < 0 or self.text_prefix < 0:
            raise ValueError(f"negative counts in workload {self}")
        if self.mode == "parcel":
            route_budget(self.budget, self.regime)
        elif self.mode == "mqt":
            if not 1 <= self.budget <= get_regime(self.regime).max_budget:
                raise BudgetError(f"query-only budget {self.budget} out of range")
        elif self.mode == "m3":
            if self.budget not in budget_menu("m3", self.regime):
                raise BudgetError(f"square-pooling budget {self.budget} not in {budget_menu('m3', self.regime)}")
        else:
            raise ValueError(f"unknown mode {self.mode!r}")

    @classmethod
    def image(cls, budget: int, **kw) -> "Workload":
        return cls(1, budget, IMAGE_TEXT_PREFIX, **kw)

    @classmethod
    def video(cls, budget: int, frames: int = VIDEO_FRAMES, **kw) -> "Workload":
        return cls(frames, budget, VIDEO_TEXT_PREFIX, **kw)

    @property
    def route(self) -> BudgetRoute | None:
        return route_budget(self.budget, self.regime) if self.mode == "parcel" else None

    @property
    def image_tokens(self) -> int:
        return self.frames * self.budget

    @property
    def total_tokens(self) -> int:
        return self.image_tokens + self.text_prefix


def vit_flops(cfg: ModelConfig, frames: int) -> int:
    n, d, m = cfg.vit_tokens, cfg.vit_width, cfg.vit_mlp
    per_frame = cfg.vit_layers * (8 * n * d * d + 4 * n * n * d + 4 * n * d * m)
    return frames * per_frame


def connector_terms(cfg: ModelConfig, route: BudgetRoute) -> dict[str, int]:
    """Per-frame connector sub-terms; all zero when no queries are routed."""
    if route.n_queries == 0:
        return {"query_pool": 0, "query_to_vit": 0, "query_mlp": 0}
    b, nq, nv = route.budget, route.n_queries, cfg.vit_tokens
    d, m = cfg.vit_width, cfg.vit_mlp
    return {
        "query_pool": 8 * b * d * d + 4 * b * b * d,
        "query_to_vit": 4 * (nq + nv) * d * d + 4 * nq * nv * d,
        "query_mlp": 4 * nq * d * m,
    }


def connector_flops(cfg: ModelConfig, route: BudgetRoute, frames: int) -> int:
    return frames * sum(connector_terms(cfg, route).values())


def baseline_connector_terms(cfg: ModelConfig, mode: str, budget: int) -> dict[str, int]:
    """Connector sub-terms for the reference modes: query-only has no self-attention, pooling costs nothing."""
    if mode == "m3" or budget == 0:
        return {"query_pool": 0, "query_to_vit": 0, "query_mlp": 0}
    if mode != "mqt":
        raise ValueError(f"no baseline connector named {mode!r}")
    nq, nv, d, m = budget, cfg.vit_tokens, cfg.vit_width, cfg.vit_mlp
    return {
        "query_pool": 0,
        "query_to_vit": 4 * (nq + nv) * d * d + 4 * nq * nv * d,
        "query_mlp": 4 * nq * d * m,
    }


def projection_flops(cfg: ModelConfig, budget: int, frames: int) -> int:
    return 2 * frames * budget * cfg.vit_width * cfg.llm_width


def llm_terms(cfg: ModelConfig, total_tokens: int) -> dict[str, int]:
    """Decoder sub-terms summed over all layers."""
    n, d = total_tokens, cfg.llm_width
    return {
        "gqa_proj": cfg.llm_layers * 4 * n * d * cfg.head_dim * (cfg.q_heads + cfg.kv_heads),
        "gqa_attn": cfg.llm_layers * 4 * n * n * cfg.q_heads * cfg.head_dim,
        "ffn": cfg.llm_layers * 6 * n * d * cfg.llm_mlp,
    }


def llm_flops(cfg: ModelConfig, total_tokens: int) -> int:
    if total_tokens < 1:
        raise ValueError("the decoder needs at least one token")
    return sum(llm_terms(cfg, total_tokens).values())


def head_flops(cfg: ModelConfig, text_prefix: int) -> int:
    return 2 * text_prefix * cfg.llm_width * cfg.vocab


def kv_bytes_per_token(cfg: ModelConfig) -> int:
    # bytes per scalar x (keys + values) x layers x kv heads x head dim
    return cfg.cache_bytes * 2 * cfg.llm_layers * cfg.kv_heads * cfg.head_dim


def kv_cache_bytes(cfg: ModelConfig, total_tokens: int) -> int:
    if total_tokens < 0:
        raise ValueError("token count must be nonnegative")
    return total_tokens * kv_bytes_per_token(cfg)


def kv_cache_mb(cfg: ModelConfig, total_tokens: int) -> float:
    return kv_cache_bytes(cfg, total_tokens) / 1024**2


def round_mb(n_bytes: int) -> int:
    return int((Decimal(n_bytes) / Decimal(1024**2)).quantize(Decimal(1), rounding=ROUND_HALF_UP))


def round_tflops(flops: int) -> Decimal:
    return (Decimal(flops) / Decimal(10**12)).quantize(Decimal("0.1"), rounding=ROUND_HALF_UP)


@dataclass(frozen=True)
class CostReport:
    workload: Workload
    vit: int
    connector: int
    projection: int
    llm: int
    head: int
    kv_bytes: int
    connector_terms: dict[str, int] = field(default_factory=dict)
    llm_terms: dict[str, int] = field(default_factory=dict)

    @property
    def total(self) -> int:
        return self.vit + self.connector + self.projection + self.llm + self.head

    @property
    def tflops(self) -> Decimal:
        return round_tflops(self.total)

    @property
    def kv_mb(self) -> int:
        return round_mb(self.kv_bytes)

    def to_dict(self) -> dict:
        route = self.workload.route
        return {
            "workload": {
                **asdict(self.workload),
                "image_tokens": self.workload.image_tokens,
                "total_tokens": self.workload.total_tokens,
                "route": None if route is None else {
                    "anchors": route.n_anchors, "queries": route.n_queries, "kernel": route.kernel,
                },
            },
            "flops": {
                "vit": self.vit,
                "connector": self.connector,
                "connector_terms": dict(self.connector_terms),
                "projection": self.projection,
                "llm": self.llm,
                "llm_terms": dict(self.llm_terms),
                "head": self.head,
                "total": self.total,
            },
            "tflops": str(self.tflops),
            "kv_cache": {"bytes": self.kv_bytes, "mb": self.kv_mb, "mb_exact": self.kv_bytes / 1024**2},
        }


def total_report(cfg: ModelConfig, workload: Workload) -> CostReport:
    w = workload
    if w.mode == "parcel":
        per_frame = connector_terms(cfg, w.route)
    else:
        per_frame = baseline_connector_terms(cfg, w.mode, w.budget)
    conn = {k: w.frames * v for k, v in per_frame.items()}
    terms = llm_terms(cfg, w.total_tokens)
    return CostReport(
        workload=w,
        vit=vit_flops(cfg, w.frames),
        connector=sum(conn.values()),
        projection=projection_flops(cfg, w.budget, w.frames),
        llm=llm_flops(cfg, w.total_tokens),
        head=head_flops(cfg, w.text_prefix),
        kv_bytes=kv_cache_bytes(cfg, w.total_tokens),
        connector_terms=conn,
        llm_terms=terms,
    )


def figure1_table(cfg: ModelConfig | None = None, mode: str = "parcel") -> list[dict]:
    """Rows of budget, image/video TFLOPs and KV MB, as strings for exact comparison."""
    cfg = cfg or ModelConfig()
    rows = []
    for b in FIGURE1_BUDGETS:
        img = total_report(cfg, Workload.image(b, mode=mode))
        vid = total_report(cfg, Workload.video(b, mode=mode))
        rows.append({
            "budget": str(b),
            "image_tflops": str(img.tflops),
            "video_tflops": str(vid.tflops),
            "image_kv_mb": str(img.kv_mb),
            "video_kv_mb": str(vid.kv_mb),
        })
    return rows
