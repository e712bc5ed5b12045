import mpmath
import pytest

from parcel.connector import route_budget
from parcel.costmodel import (
    ModelConfig,
    Workload,
    connector_flops,
    figure1_table,
    head_flops,
    kv_bytes_per_token,
    kv_cache_bytes,
    kv_cache_mb,
    llm_flops,
    projection_flops,
    round_mb,
    round_tflops,
    total_report,
    vit_flops,
)

CFG = ModelConfig()
mpmath.mp.dps = 60


def mp(expr):
    return int(mpmath.nint(expr))


def test_vit_flops():
    assert vit_flops(CFG, 0) == 0
    Lv, N, D, M = map(mpmath.mpf, (27, 256, 1152, 4304))
    expected = mp(Lv * (8 * N * D**2 + 4 * N**2 * D + 4 * N * D * M))
    assert vit_flops(CFG, 1) == expected
    assert vit_flops(CFG, 16) == 16 * expected


def test_connector_flops():
    assert connector_flops(CFG, route_budget(64), 1) == 0
    assert connector_flops(CFG, route_budget(16), 16) == 0
    B, Nq, Nv, D, M = map(mpmath.mpf, (256, 192, 256, 1152, 4304))
    expected = mp(8 * B * D**2 + 4 * B**2 * D + 4 * (Nq + Nv) * D**2 + 4 * Nq * Nv * D + 4 * Nq * D * M)
    assert connector_flops(CFG, route_budget(256), 1) == expected
    assert connector_flops(CFG, route_budget(256), 16) == 16 * expected


def test_projection_flops():
    assert projection_flops(CFG, 0, 1) == 0
    assert projection_flops(CFG, 256, 1) == 2 * 256 * 1152 * 2304
    assert projection_flops(CFG, 16, 16) == 2 * 16 * 16 * 1152 * 2304


def test_llm_flops():
    assert llm_flops(CFG, 1) == 26 * (4 * 2304 * 256 * 12 + 4 * 1 * 8 * 256 + 6 * 2304 * 9216)
    N = mpmath.mpf(145)
    expected = mp(26 * (4 * N * 2304 * 256 * 12 + 4 * N**2 * 8 * 256 + 6 * N * 2304 * 9216))
    assert llm_flops(CFG, 145) == expected
    for n in (1, 50, 145, 4161):
        assert llm_flops(CFG, 2 * n) > 2 * llm_flops(CFG, n)
    with pytest.raises(ValueError):
        llm_flops(CFG, 0)


def test_head_flops():
    assert head_flops(CFG, 0) == 0
    assert head_flops(CFG, 129) == 2 * 129 * 2304 * 257152
    assert head_flops(CFG, 65) == 2 * 65 * 2304 * 257152


def test_kv_cache():
    assert kv_bytes_per_token(CFG) == 106_496
    assert round_mb(kv_cache_bytes(CFG, 145)) == 15
    assert round_mb(kv_cache_bytes(CFG, 4161)) == 423
    assert kv_cache_mb(CFG, 1024**2) == 106_496


def test_rounding_is_half_up():
    assert str(round_tflops(1_250_000_000_000)) == "1.3"
    assert str(round_tflops(1_249_999_999_999)) == "1.2"
    assert round_mb(1024**2 // 2) == 1


@pytest.mark.parametrize(
    "workload, tflops, mb",
    [
        (Workload.image(16), "1.0", 15),
        (Workload.image(64), "1.2", 20),
        (Workload.image(256), "2.0", 39),
        (Workload.video(16), "4.9", 33),
        (Workload.video(64), "8.2", 111),
        (Workload.video(256), "24.3", 423),
    ],
)
def test_figure1_cells(workload, tflops, mb):
    r = total_report(CFG, workload)
    assert str(r.tflops) == tflops and r.kv_mb == mb


def test_report_is_itemized_and_exact():
    r = total_report(CFG, Workload.video(100))
    assert r.total == r.vit + r.connector + r.projection + r.llm + r.head
    assert r.connector == sum(r.connector_terms.values())
    assert r.llm == sum(r.llm_terms.values())
    assert all(isinstance(v, int) for v in (r.vit, r.connector, r.projection, r.llm, r.head))
    d = r.to_dict()
    assert d["flops"]["total"] == r.total and d["workload"]["total_tokens"] == 16 * 100 + 65


def test_total_monotone_in_budget_and_frames():
    prev = 0
    for b in range(16, 257):
        t = total_report(CFG, Workload(1, b, 129)).total
        assert t >= prev
        prev = t
    for b in (16, 100, 256):
        totals = [total_report(CFG, Workload(t, b, 65)).total for t in range(1, 17)]
        assert totals == sorted(totals)


def test_kv_cache_is_connector_independent():
    for b in (16, 64, 256):
        kv = {total_report(CFG, Workload.image(b, mode=m)).kv_bytes for m in ("parcel", "mqt", "m3")}
        assert len(kv) == 1


def test_baseline_connectors():
    m3 = total_report(CFG, Workload.image(64, mode="m3"))
    assert m3.connector == 0
    mqt = total_report(CFG, Workload.image(64, mode="mqt"))
    assert mqt.connector == 4 * (64 + 256) * 1152**2 + 4 * 64 * 256 * 1152 + 4 * 64 * 1152 * 4304
    parcel = total_report(CFG, Workload.image(64))
    assert parcel.total - parcel.connector == mqt.total - mqt.connector == m3.total


def test_workload_validation():
    with pytest.raises(ValueError):
        Workload(1, 0, 129)
    with pytest.raises(ValueError):
        Workload(1, 20, 129, mode="m3")
    with pytest.raises(ValueError):
        ModelConfig(vit_layers=0)


def test_figure1_table():
    assert figure1_table() == [
        {"budget": "16", "image_tflops": "1.0", "video_tflops": "4.9", "image_kv_mb": "15", "video_kv_mb": "33"},
        {"budget": "64", "image_tflops": "1.2", "video_tflops": "8.2", "image_kv_mb": "20", "video_kv_mb": "111"},
        {"budget": "256", "image_tflops": "2.0", "video_tflops": "24.3", "image_kv_mb": "39", "video_kv_mb": "423"},
    ]
