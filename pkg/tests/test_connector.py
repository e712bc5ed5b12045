import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from parcel.connector import (
    DEFAULT,
    HIGH,
    BudgetError,
    BudgetRoute,
    ConnectorParams,
    FeatureGrid,
    QueryBank,
    RouteMismatchError,
    average_pool,
    bank_capacity,
    budget_menu,
    cross_block,
    nested_truncate,
    pcqr_forward,
    pcqr_prefix_consistency_check,
    pcqr_query_gradient,
    route_budget,
    sample_budget,
    sample_budgets,
)
from parcel.numerics import ShapeError, finite_difference_gradient, relative_error

from oracles import pcqr_oracle, window_mean

WIDTH, HEADS, HIDDEN = 8, 2, 16


def make_setup(seed, side=16, regime=DEFAULT, width=WIDTH):
    rng = np.random.default_rng(seed)
    grid = FeatureGrid(rng.standard_normal((side, side, width)))
    params = ConnectorParams.init(width, HEADS, HIDDEN, rng)
    bank = QueryBank.init(bank_capacity("parcel", regime), width, rng)
    return grid, params, bank


# routing

@pytest.mark.parametrize(
    "budget, regime, expected",
    [
        (16, "default", (16, 0, 4)),
        (63, "default", (16, 47, 4)),
        (64, "default", (64, 0, 2)),
        (100, "default", (64, 36, 2)),
        (256, "default", (64, 192, 2)),
        (16, "high", (16, 0, 8)),
        (200, "high", (64, 136, 4)),
        (256, "high", (256, 0, 2)),
        (1024, "high", (256, 768, 2)),
    ],
)
def test_route_budget_cases(budget, regime, expected):
    r = route_budget(budget, regime)
    assert (r.n_anchors, r.n_queries, r.kernel) == expected
    assert r.n_anchors + r.n_queries == budget


@pytest.mark.parametrize("budget, regime", [(15, "default"), (257, "default"), (0, "high"), (1025, "high")])
def test_route_budget_out_of_range(budget, regime):
    with pytest.raises(BudgetError, match="valid range"):
        route_budget(budget, regime)


@given(st.sampled_from([DEFAULT, HIGH]), st.data())
def test_route_invariants(regime, data):
    b = data.draw(st.integers(regime.min_budget, regime.max_budget))
    r = route_budget(b, regime)
    assert r.n_anchors + r.n_queries == b and r.n_queries >= 0
    assert r.kernel**2 * r.n_anchors == regime.source_tokens


def test_budget_route_validation():
    with pytest.raises(ValueError):
        BudgetRoute(20, 16, 3, 4)
    with pytest.raises(ValueError):
        BudgetRoute(20, 16, 4, 2, "default-224")  # 2^2 * 16 != 256


# budget sampling

def test_budget_menus():
    assert budget_menu("parcel") == tuple(range(16, 257, 2))
    assert budget_menu("mqt") == tuple(range(2, 257, 2))
    assert budget_menu("m3") == (4, 16, 64, 256)
    assert budget_menu("m3", "high") == (4, 16, 64, 256, 1024)
    assert budget_menu("mqt", "high")[-1] == 1024


@pytest.mark.parametrize("method", ["parcel", "mqt", "m3"])
def test_sample_budget_in_menu_and_deterministic(method):
    menu = budget_menu(method)
    for seed in range(20):
        b = sample_budget(seed, method)
        assert b in menu
        assert sample_budget(seed, method) == b


def test_parcel_draws_are_even_and_bounded():
    draws = sample_budgets(3, "parcel", size=10_000)
    assert np.all(draws % 2 == 0) and draws.min() >= 16 and draws.max() <= 256


# pooling

def test_average_pool_cases(rng):
    const = FeatureGrid(np.full((8, 8, 3), 2.5))
    for k in (1, 2, 4, 8):
        np.testing.assert_array_equal(average_pool(const, k), 2.5)
    np.testing.assert_array_equal(average_pool(FeatureGrid(np.array([1.0, 2, 3, 4]).reshape(2, 2, 1)), 2), [[2.5]])
    grid = FeatureGrid(rng.standard_normal((16, 16, 3)))
    np.testing.assert_allclose(average_pool(grid, 4), window_mean(grid.values, 4), atol=1e-14)
    assert average_pool(grid, 4).shape == (16, 3)


def test_average_pool_rejects_non_divisible():
    with pytest.raises(ShapeError):
        average_pool(FeatureGrid(np.zeros((6, 6, 1))), 4)


@given(st.integers(0, 10_000), st.sampled_from([1, 2, 4]), st.integers(1, 3), st.integers(1, 3))
def test_average_pool_preserves_channel_mean(seed, k, bh, bw):
    rng = np.random.default_rng(seed)
    grid = FeatureGrid(rng.standard_normal((k * bh, k * bw, 3)) + 5)
    pooled = average_pool(grid, k)
    np.testing.assert_allclose(pooled.mean(axis=0), grid.values.mean(axis=(0, 1)), rtol=1e-9)


# query bank

def test_nested_truncate():
    bank = QueryBank.init(192, 4, 0)
    assert nested_truncate(bank, 0).shape == (0, 4)
    a, b = nested_truncate(bank, 48), nested_truncate(bank, 192)
    np.testing.assert_array_equal(a, b[:48])
    with pytest.raises(BudgetError):
        nested_truncate(bank, 193)
    with pytest.raises(ValueError):
        bank.embeddings[0, 0] = 1.0


def test_bank_capacities():
    assert bank_capacity("parcel") == 192
    assert bank_capacity("parcel", "high") == 768
    assert bank_capacity("mqt", "high") == 1024


# forward pass

def test_anchor_only_budgets_return_pooled_tokens():
    grid, params, bank = make_setup(0)
    for b in (16, 64):
        r = route_budget(b)
        out = pcqr_forward(grid, r, bank, params)
        np.testing.assert_array_equal(out.assembled, average_pool(grid, r.kernel))
        assert out.explorers.shape == (0, WIDTH) and out.weights.shape == (0, 256)


def test_forward_matches_composition_oracle():
    grid, params, bank = make_setup(11)
    route = route_budget(20)
    out = pcqr_forward(grid, route, bank, params)
    expected = pcqr_oracle(grid.values, route.kernel, bank.embeddings[:4], params)
    np.testing.assert_allclose(out.assembled, expected, atol=1e-10)
    assert out.assembled.shape == (20, WIDTH)
    np.testing.assert_array_equal(out.assembled[:16], out.pool)
    np.testing.assert_allclose(out.weights.sum(axis=1), 1.0, atol=1e-9)


def test_forward_row_count_for_every_default_budget():
    grid, params, bank = make_setup(2)
    for b in range(16, 257, 7):
        assert pcqr_forward(grid, route_budget(b), bank, params).assembled.shape == (b, WIDTH)


def test_forward_rejects_inconsistent_grid():
    rng = np.random.default_rng(0)
    params = ConnectorParams.init(WIDTH, HEADS, HIDDEN, rng)
    bank = QueryBank.init(192, WIDTH, rng)
    small = FeatureGrid(rng.standard_normal((8, 8, WIDTH)))
    with pytest.raises(RouteMismatchError):
        pcqr_forward(small, route_budget(20), bank, params)
    wrong_width = FeatureGrid(rng.standard_normal((16, 16, WIDTH + 2)))
    with pytest.raises(ShapeError):
        pcqr_forward(wrong_width, route_budget(20), bank, params)


@given(st.integers(0, 1000), st.integers(17, 256))
def test_explorers_invariant_to_grid_token_permutation(seed, budget):
    grid, params, bank = make_setup(seed % 7)
    if route_budget(budget).n_queries == 0:
        return
    rng = np.random.default_rng(seed)
    route = route_budget(budget)
    base = pcqr_forward(grid, route, bank, params)
    # permute source tokens within pooling windows so the anchors stay put
    k = route.kernel
    vals = grid.values.reshape(16 // k, k, 16 // k, k, WIDTH).transpose(0, 2, 1, 3, 4).reshape(-1, k * k, WIDTH)
    vals = np.stack([v[rng.permutation(k * k)] for v in vals])
    vals = vals.reshape(16 // k, 16 // k, k, k, WIDTH).transpose(0, 2, 1, 3, 4).reshape(16, 16, WIDTH)
    perm = pcqr_forward(FeatureGrid(vals), route, bank, params)
    np.testing.assert_allclose(perm.pool, base.pool, atol=1e-12)
    np.testing.assert_allclose(perm.explorers, base.explorers, atol=1e-9)


def test_prefix_consistency_examples():
    grid, params, bank = make_setup(0)
    assert pcqr_prefix_consistency_check(grid, bank, params, 66, 70)
    with pytest.raises(RouteMismatchError):
        pcqr_prefix_consistency_check(grid, bank, params, 20, 100)
    grid_hi, params_hi, bank_hi = make_setup(0, side=32, regime=HIGH)
    assert pcqr_prefix_consistency_check(grid_hi, bank_hi, params_hi, 258, 266, "high")


def test_cross_block_ignores_arbitrary_token_order(rng):
    grid, params, bank = make_setup(4)
    queries = bank.embeddings[:5]
    tokens = grid.tokens()
    perm = rng.permutation(len(tokens))
    a, wa, _ = cross_block(queries, tokens, params)
    b, wb, _ = cross_block(queries, tokens[perm], params)
    np.testing.assert_allclose(a, b, atol=1e-9)
    np.testing.assert_allclose(wa[:, perm], wb, atol=1e-12)


@pytest.mark.parametrize("seed", range(5))
@pytest.mark.parametrize("side, kernel, n_queries", [(4, 2, 3), (8, 4, 4), (8, 2, 0)])
def test_query_gradient_matches_finite_differences(seed, side, kernel, n_queries):
    rng = np.random.default_rng(seed)
    width = 16 if side == 8 else 8
    grid = FeatureGrid(rng.standard_normal((side, side, width)))
    n_anchors = (side // kernel) ** 2
    route = BudgetRoute(n_anchors + n_queries, n_anchors, n_queries, kernel)
    params = ConnectorParams.init(width, HEADS, 2 * width, rng)
    queries = rng.standard_normal((n_queries, width))
    analytic = pcqr_query_gradient(grid, route, QueryBank(queries), params)
    if n_queries == 0:
        assert analytic.shape == (0, width)
        return
    fd = finite_difference_gradient(
        lambda q: pcqr_forward(grid, route, QueryBank(q), params).assembled.sum(), queries, 1e-4
    )
    assert relative_error(analytic, fd) < 1e-4


def test_query_gradient_with_custom_upstream(rng):
    grid = FeatureGrid(rng.standard_normal((4, 4, 8)))
    route = BudgetRoute(6, 4, 2, 2)
    params = ConnectorParams.init(8, 2, 16, rng)
    queries = rng.standard_normal((2, 8))
    up = rng.standard_normal((6, 8))
    analytic = pcqr_query_gradient(grid, route, QueryBank(queries), params, up)
    fd = finite_difference_gradient(
        lambda q: np.sum(up * pcqr_forward(grid, route, QueryBank(q), params).assembled), queries
    )
    assert relative_error(analytic, fd) < 1e-4
