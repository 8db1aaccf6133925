import numpy as np
import pytest

from heatlens.bench import (
    FlopsReport,
    ThroughputRow,
    crossover_side,
    encoder_flops,
    fit_exponent,
    flops_attention_stage,
    flops_hco_stage,
    flops_table,
    heat_fd_oracle,
    init_attention_params,
    encode_attention,
    oracle_discrepancy,
    rows_to_csv,
    scaling_fit,
    throughput_ratios,
    throughput_scan,
)
from heatlens.heat import ContractError
from heatlens.model import ModelConfig
from heatlens.spectral import flops_dct2, make_plan
from heatlens.tensor import Tensor

SIDES = [32, 64, 128, 256, 512, 1024]


def test_transform_flops_value():
    assert flops_hco_stage(16, 1, transforms_only=True).total == 32768


@pytest.mark.parametrize("s", [8, 16, 32, 64])
def test_transform_flops_agree_with_plan_count(s):
    rep = flops_hco_stage(s, 3, transforms_only=True)
    assert rep.components["dct"] == flops_dct2(make_plan(s, s), 3)


@pytest.mark.parametrize("s", [16, 32, 64])
def test_side_doubling_ratios(s):
    h1 = flops_hco_stage(s, 1, transforms_only=True).total
    h2 = flops_hco_stage(2 * s, 1, transforms_only=True).total
    a1 = flops_attention_stage(s, 1).components["attention_scores"]
    a2 = flops_attention_stage(2 * s, 1).components["attention_scores"]
    assert h2 / h1 == 8
    assert a2 / a1 == 16


def test_report_total_is_component_sum():
    rep = flops_hco_stage(32, 8, depth=2)
    assert rep.total == sum(rep.components.values())
    assert rep.components["dct"] == 2 * flops_hco_stage(32, 8, transforms_only=True).components["dct"]
    r = FlopsReport(1, 1, 1, 1)
    r.add("x", 3)
    r.add("x", 4)
    assert r.components == {"x": 7}


def test_fit_exponent_recovers_power_law():
    n = np.array([10.0, 100.0, 1000.0])
    assert fit_exponent(n, 7 * n ** 1.5) == pytest.approx(1.5)


def test_scaling_exponents():
    assert 1.4 <= scaling_fit("hco", SIDES, 8) <= 1.6
    assert 1.9 <= scaling_fit("attention", SIDES, 8) <= 2.1


def test_hco_exponent_falls_toward_cubic_law_as_width_grows():
    # per-token linear terms dominate at small sides; wide channels lean on them more
    slopes = [scaling_fit("hco", SIDES, c) for c in (4, 8, 16, 64)]
    assert all(a > b for a, b in zip(slopes, slopes[1:]))
    assert scaling_fit("hco", [2 ** k for k in range(12, 15)], 8) == pytest.approx(1.5, abs=0.01)


def test_crossover_reported():
    side = crossover_side(8)
    assert side is not None and side >= 1
    for s in (side, side + 1, 2 * side + 5):
        assert flops_hco_stage(s, 8).total < flops_attention_stage(s, 8).total


def test_flops_table_columns():
    rows = flops_table([32, 64], 8)
    assert rows[0]["tokens"] == 1024
    assert rows[1]["hco_transform_flops"] == 8 * rows[0]["hco_transform_flops"]


def test_encoder_flops_positive_and_ordered():
    cfg = ModelConfig(image_size=(256, 256))
    assert encoder_flops(cfg, "attention") > encoder_flops(cfg, "hco") > 0


def test_attention_encoder_shapes():
    cfg = ModelConfig(image_size=(32, 32), stage_widths=(4, 6, 8, 10))
    stages = encode_attention(cfg, init_attention_params(cfg, 0), Tensor(np.zeros((2, 3, 32, 32))))
    assert [s.shape for s in stages] == [(2, 4, 8, 8), (2, 6, 4, 4), (2, 8, 2, 2), (2, 10, 1, 1)]


# -- oracle -------------------------------------------------------------------


def test_oracle_zero_diffusivity_is_identity(rng):
    u = rng.normal(size=(8, 8))
    assert np.array_equal(heat_fd_oracle(u, 0.0, 1.0, 0.1), u)


def test_oracle_preserves_mean_over_many_steps(rng):
    u = rng.normal(size=(16, 16))
    out = heat_fd_oracle(u, 0.25, 100.0, 0.01)
    assert abs(out.mean() - u.mean()) < 1e-10


def test_oracle_rejects_unstable_and_ragged_steps():
    u = np.zeros((4, 4))
    with pytest.raises(ContractError):
        heat_fd_oracle(u, 1.0, 1.0, 0.3)
    with pytest.raises(ContractError):
        heat_fd_oracle(u, 1.0, 0.1, 0.03)
    with pytest.raises(ContractError):
        heat_fd_oracle(u, -1.0, 0.1, 0.01)


def test_oracle_matches_spectral_solution(rng):
    u = rng.normal(size=(16, 16))
    e1 = oracle_discrepancy(u, 0.5, 0.1, 1e-4)
    e2 = oracle_discrepancy(u, 0.5, 0.1, 5e-5)
    assert e1 < 1e-3
    assert 1.5 <= e1 / e2 <= 2.5


def test_continuous_grid_does_not_match_stencil(rng):
    # the 5-point stencil's eigenvalues are 4 sin^2(pi u / 2m), not (pi u / m)^2
    u = rng.normal(size=(16, 16))
    assert oracle_discrepancy(u, 0.5, 0.1, 1e-4, omega="continuous") > 1e-2


# -- throughput ---------------------------------------------------------------


def test_throughput_scan_rows():
    cfg = ModelConfig(stage_widths=(4, 6, 8, 10))
    rows = throughput_scan([32], cfg, batch=1, runs=1)
    assert {(r.side, r.model) for r in rows} == {(32, "hco"), (32, "attention")}
    assert all(r.images_per_sec > 0 and r.flops > 0 for r in rows)
    skipped = throughput_scan([32], cfg, batch=1, runs=1, memory_budget=0)
    assert [r.images_per_sec for r in skipped if r.model == "attention"] == [None]


def test_throughput_ratios_and_csv():
    rows = [ThroughputRow(64, "hco", 4.0, 1, 0.5), ThroughputRow(64, "attention", 2.0, 1, 1.0),
            ThroughputRow(128, "hco", 1.0, 1, 1.0), ThroughputRow(128, "attention", None, 1, None)]
    assert throughput_ratios(rows) == {64: 2.0, 128: None}
    text = rows_to_csv([{"side": 64, "ratio": 2.0}, {"side": 128, "ratio": None}], missing="unmeasurable")
    assert text == "side,ratio\n64,2.0\n128,unmeasurable\n"
