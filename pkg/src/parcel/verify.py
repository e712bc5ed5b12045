"""Self-checks run by ``parcel verify``.

Each suite returns a mapping of property name -> (passed, detail).
"""

from __future__ import annotations

import csv
from importlib import resources
from pathlib import Path

import numpy as np

from .connector import (
    DEFAULT,
    HIGH,
    BudgetRoute,
    ConnectorParams,
    FeatureGrid,
    QueryBank,
    bank_capacity,
    pcqr_forward,
    pcqr_query_gradient,
    route_budget,
)
from .costmodel import figure1_table
from .numerics import (
    AttentionParams,
    attention_backward,
    finite_difference_gradient,
    multi_head_attention,
    relative_error,
)
from .spectral import nyquist_radius, parseval_gap

SUITES = ("parseval", "gradcheck", "prefix", "figure1")
FIGURE1_COLUMNS = ["budget", "image_tflops", "video_tflops", "image_kv_mb", "video_kv_mb"]


def golden_figure1_path() -> Path:
    return Path(str(resources.files("parcel") / "data" / "figure1.csv"))


def check_parseval(n_grids: int = 50, seed: int = 0, tol: float = 1e-6) -> dict:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_grids):
        h, w, c = rng.integers(1, 33), rng.integers(1, 33), rng.integers(1, 9)
        grid = FeatureGrid(rng.standard_normal((h, w, c)) * rng.uniform(0.1, 10))
        worst = max(worst, float(parseval_gap(grid).max()))
    nyq = nyquist_radius(16, 16) == 8 and nyquist_radius(8, 8) == 4
    return {
        "parseval_identity": (worst <= tol, f"worst relative gap {worst:.3e} over {n_grids} grids (tol {tol})"),
        "nyquist_radius": (nyq, "r_max(16,16)=8 and r_max(8,8)=4"),
    }


def attention_gradcheck(seed: int, step: float = 1e-4) -> float:
    rng = np.random.default_rng(seed)
    width, heads = 8, 2
    params = AttentionParams.init(width, heads, rng)
    nq, nkv = rng.integers(1, 9), rng.integers(1, 9)
    xq = rng.standard_normal((nq, width))
    xkv = rng.standard_normal((nkv, width))
    res = multi_head_attention(params, xq, xkv)
    dq, dkv = attention_backward(params, res, np.ones_like(res.output))
    fd_q = finite_difference_gradient(lambda x: multi_head_attention(params, x, xkv).output.sum(), xq, step)
    fd_kv = finite_difference_gradient(lambda x: multi_head_attention(params, xq, x).output.sum(), xkv, step)
    return max(relative_error(dq, fd_q), relative_error(dkv, fd_kv))


def pcqr_gradcheck(seed: int, step: float = 1e-4) -> float:
    rng = np.random.default_rng(seed)
    width, heads, hidden = 8, 2, 16
    grid = FeatureGrid(rng.standard_normal((4, 4, width)))
    route = BudgetRoute(budget=7, n_anchors=4, n_queries=3, kernel=2)
    params = ConnectorParams.init(width, heads, hidden, rng)
    queries = rng.standard_normal((3, width))
    analytic = pcqr_query_gradient(grid, route, QueryBank(queries), params)
    fd = finite_difference_gradient(
        lambda q: pcqr_forward(grid, route, QueryBank(q), params).assembled.sum(), queries, step
    )
    return relative_error(analytic, fd)


def check_gradients(n_seeds: int = 20, tol: float = 1e-4) -> dict:
    att = max(attention_gradcheck(s) for s in range(n_seeds))
    conn = max(pcqr_gradcheck(s) for s in range(n_seeds))
    return {
        "attention_gradient": (att <= tol, f"worst relative error {att:.3e} over {n_seeds} seeds"),
        "pcqr_query_gradient": (conn <= tol, f"worst relative error {conn:.3e} over {n_seeds} seeds"),
    }


def check_prefix(seed: int = 0, width: int = 8, heads: int = 2) -> dict:
    results = {}
    for reg in (DEFAULT, HIGH):
        rng = np.random.default_rng(seed)
        grid = FeatureGrid(rng.standard_normal((reg.source_side, reg.source_side, width)))
        params = ConnectorParams.init(width, heads, 2 * width, rng)
        bank = QueryBank.init(bank_capacity("parcel", reg), width, rng)
        consumed: dict[int, list[tuple[int, np.ndarray]]] = {}
        bad = 0
        for b in range(reg.min_budget, reg.max_budget + 1, 1 if reg is DEFAULT else 8):
            route = route_budget(b, reg)
            out = pcqr_forward(grid, route, bank, params)
            if out.assembled.shape[0] != b:
                bad += 1
            if route.n_queries == 0 and not np.array_equal(out.assembled, out.pool):
                bad += 1
            consumed.setdefault(route.n_anchors, []).append((b, out.queries_in))
        pairs = 0
        for group in consumed.values():
            for i, (_, q1) in enumerate(group):
                for _, q2 in group[i + 1:]:
                    pairs += 1
                    if not np.array_equal(q1, q2[: len(q1)]):
                        bad += 1
        results[f"nested_prefix_{reg.name}"] = (bad == 0, f"{pairs} budget pairs, {bad} failures")
    return results


def check_figure1(golden: str | Path | None = None) -> dict:
    path = Path(golden) if golden else golden_figure1_path()
    try:
        with open(path, newline="") as fh:
            expected = [dict(r) for r in csv.DictReader(fh)]
    except (OSError, csv.Error) as exc:
        return {"figure1_table": (False, f"cannot read golden table {path}: {exc}")}
    got = figure1_table()
    ok = expected == got
    detail = "all 12 cells match" if ok else f"expected {expected}, computed {got}"
    return {"figure1_table": (ok, detail)}


def run_suites(names, golden: str | Path | None = None, n_seeds: int = 20) -> dict:
    runners = {
        "parseval": check_parseval,
        "gradcheck": lambda: check_gradients(n_seeds),
        "prefix": check_prefix,
        "figure1": lambda: check_figure1(golden),
    }
    return {name: runners[name]() for name in names}
