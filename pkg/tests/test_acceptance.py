"""End-to-end acceptance checks, one test per criterion.

Each test records a PASS/FAIL line (shown in the "acceptance criteria"
section of the pytest summary) before asserting.
"""

import math
import time

import numpy as np
import pytest

from heatlens import gradcheck
from heatlens.bench import (
    crossover_side,
    oracle_discrepancy,
    scaling_fit,
    throughput_ratios,
    throughput_scan,
)
from heatlens.heat import hco_apply
from heatlens.masking import sample_mask, split_array
from heatlens.model import ModelConfig
from heatlens.spectral import dct2_array, idct2_array, make_plan
from heatlens.tensor import Tensor
from heatlens.train import ScheduleConfig, TrainConfig, lr_at, pretrain, save_checkpoint, load_checkpoint


def test_transform_correctness(acceptance_report):
    start = time.perf_counter()
    worst_inv, worst_parseval = 0.0, 0.0
    for size in (4, 8, 16, 32, 33, 224):
        plan = make_plan(size, size)
        x = np.random.default_rng(size).normal(size=(100, size, size))
        X = dct2_array(plan, x)
        worst_inv = max(worst_inv, float(np.max(np.abs(idct2_array(plan, X) - x))))
        nx = np.linalg.norm(x.reshape(100, -1), axis=1)
        nX = np.linalg.norm(X.reshape(100, -1), axis=1)
        worst_parseval = max(worst_parseval, float(np.max(np.abs(nX - nx) / nx)))
    elapsed = time.perf_counter() - start
    ok = worst_inv < 1e-10 and worst_parseval < 1e-12 and elapsed < 30
    acceptance_report(1, "transform correctness", ok,
                      f"max inverse err {worst_inv:.2e}, max Parseval rel err {worst_parseval:.2e}, {elapsed:.1f}s")
    assert ok


def test_heat_physics(acceptance_report):
    start = time.perf_counter()
    worst = {"mean": 0.0, "energy_excess": -np.inf, "semigroup": 0.0, "linearity": 0.0}
    for i in range(100):
        gen = np.random.default_rng(1000 + i)
        m, n, c = (int(v) for v in gen.integers(2, 24, 3))
        plan = make_plan(m, n)
        x, y = gen.normal(size=(2, c, m, n))
        k = Tensor(gen.uniform(0, 3, (m, n, c)), dtype="f64")
        t = float(gen.uniform(0, 2))
        a, b = gen.normal(size=2)

        def heat(u, time_):
            return hco_apply(plan, Tensor(u, dtype="f64"), k, time_).data

        out = heat(x, t)
        worst["mean"] = max(worst["mean"], float(np.max(np.abs(out.mean(axis=(1, 2)) - x.mean(axis=(1, 2))))))
        worst["energy_excess"] = max(worst["energy_excess"], float(np.linalg.norm(out) - np.linalg.norm(x)))
        split = float(gen.uniform(0, 1)) * t
        worst["semigroup"] = max(worst["semigroup"], float(np.max(np.abs(heat(heat(x, split), t - split) - out))))
        lin = heat(a * x + b * y, t) - (a * out + b * heat(y, t))
        worst["linearity"] = max(worst["linearity"], float(np.max(np.abs(lin))))
    elapsed = time.perf_counter() - start
    ok = (worst["mean"] < 1e-10 and worst["energy_excess"] <= 1e-12 and worst["semigroup"] < 1e-8
          and worst["linearity"] < 1e-10 and elapsed < 30)
    acceptance_report(2, "heat-physics invariants", ok,
                      f"mean drift {worst['mean']:.1e}, energy excess {worst['energy_excess']:.1e}, "
                      f"semigroup {worst['semigroup']:.1e}, linearity {worst['linearity']:.1e}, {elapsed:.1f}s")
    assert ok


def test_pde_oracle_equivalence(acceptance_report):
    start = time.perf_counter()
    u0 = np.random.default_rng(16).uniform(-1, 1, (16, 16))
    e1 = oracle_discrepancy(u0, 0.5, 0.1, 1e-4)
    e2 = oracle_discrepancy(u0, 0.5, 0.1, 5e-5)
    ratio = e1 / e2
    elapsed = time.perf_counter() - start
    ok = e1 < 1e-3 and 1.5 <= ratio <= 2.5 and elapsed < 60
    acceptance_report(3, "PDE oracle equivalence", ok,
                      f"rel L2 {e1:.3e} at dt=1e-4, {e2:.3e} at dt=5e-5, halving ratio {ratio:.3f}, {elapsed:.1f}s")
    assert ok


def test_masking_partition(acceptance_report):
    start = time.perf_counter()
    plan = make_plan(224, 224)
    worst_part, worst_disjoint = 0.0, 0.0
    for seed in range(5):
        x = np.random.default_rng(seed).uniform(0, 1, (3, 224, 224))
        spec = sample_mask(224, 224, seed)
        low, high = split_array(plan, x, spec)
        worst_part = max(worst_part, float(np.max(np.abs(low + high - x))))
        prod = dct2_array(plan, low) * dct2_array(plan, high)
        worst_disjoint = max(worst_disjoint, float(np.max(np.abs(prod))))
    rates = np.array([sample_mask(224, 224, s).realized_rate for s in range(1000)])
    elapsed = time.perf_counter() - start
    ok = (worst_part < 1e-10 and worst_disjoint < 1e-10 and rates.min() >= 0.19 and rates.max() <= 0.31
          and 0.24 <= rates.mean() <= 0.26 and elapsed < 60)
    acceptance_report(4, "masking partition", ok,
                      f"partition err {worst_part:.1e}, overlap {worst_disjoint:.1e}, rates "
                      f"[{rates.min():.4f}, {rates.max():.4f}] mean {rates.mean():.4f}, {elapsed:.1f}s")
    assert ok


def test_gradient_correctness(acceptance_report):
    start = time.perf_counter()
    results = gradcheck.run("ops") + gradcheck.run("block") + gradcheck.run("model")
    elapsed = time.perf_counter() - start
    failing = [r.name for r in results if not r.passed]
    worst = max(results, key=lambda r: r.rel_error)
    ok = not failing and elapsed < 300
    acceptance_report(5, "gradient correctness", ok,
                      f"{len(results)} checks, worst {worst.name} {worst.rel_error:.2e}, "
                      f"failing {failing or 'none'}, {elapsed:.1f}s")
    assert ok


def test_complexity_claim(acceptance_report):
    start = time.perf_counter()
    sides = [32, 64, 128, 256, 512, 1024]
    hco_exp = scaling_fit("hco", sides, channels=8)
    attn_exp = scaling_fit("attention", sides, channels=8)
    cross = crossover_side(8)
    rows = throughput_scan([64, 128, 256], ModelConfig(), batch=8, runs=5)
    ratios = throughput_ratios(rows)
    seq = [ratios[s] for s in (64, 128, 256)]
    measured = all(r is not None for r in seq)
    increasing = measured and all(a < b for a, b in zip(seq, seq[1:]))
    elapsed = time.perf_counter() - start
    ok = (1.4 <= hco_exp <= 1.6 and 1.9 <= attn_exp <= 2.1 and cross is not None
          and measured and seq[0] > 1 and increasing and elapsed < 600)
    shown = ", ".join(f"{s}:{r:.2f}" if r else f"{s}:n/a" for s, r in zip((64, 128, 256), seq))
    acceptance_report(6, "complexity claim", ok,
                      f"exponents hco {hco_exp:.3f} attention {attn_exp:.3f}, crossover side {cross}, "
                      f"throughput ratio {shown}, {elapsed:.1f}s")
    assert ok


def _finite_history(state):
    return all(math.isfinite(v) for row in state.loss_history for v in row[1:])


def test_training_viability(acceptance_report, tmp_path):
    start = time.perf_counter()
    cfg = ModelConfig()
    tcfg = TrainConfig()
    midpoint = tmp_path / "step100.rsvc"

    def keep_midpoint(state, row):
        if state.step == 100:
            save_checkpoint(midpoint, cfg, state, 42, 200, tcfg)

    base = pretrain(cfg, steps=200, seed=42, tcfg=tcfg, on_step=keep_midpoint)
    initial, final = base.loss_history[0][2], base.loss_history[-1][2]

    runs = {"sdr,fdr,cl": base}
    for toggles in ("sdr", "sdr,fdr"):
        on = set(toggles.split(","))
        variant = ModelConfig(sdr="sdr" in on, fdr="fdr" in on, cl="cl" in on)
        runs[toggles] = pretrain(variant, steps=200, seed=42, tcfg=tcfg)
    finite = all(_finite_history(s) and len(s.loss_history) == 200 for s in runs.values())
    histories = [tuple(r[2] for r in s.loss_history) for s in runs.values()]
    distinct = len(set(histories)) == len(histories)

    r_cfg, r_state, r_seed, r_steps, r_tcfg = load_checkpoint(midpoint)
    resumed = pretrain(r_cfg, r_state.schedule, steps=r_steps, seed=r_seed, tcfg=r_tcfg, resume=r_state)
    exact = resumed.loss_history == base.loss_history and all(
        np.array_equal(p.data, resumed.params[k].data) for k, p in base.params.items())

    elapsed = time.perf_counter() - start
    ok = final < 0.5 * initial and finite and distinct and exact and elapsed < 900
    ends = ", ".join(f"{{{k}}} {s.loss_history[-1][2]:.4f}" for k, s in runs.items())
    acceptance_report(7, "training viability", ok,
                      f"L_total {initial:.4f} -> {final:.4f} (ratio {final / initial:.3f}); final {ends}; "
                      f"finite {finite}, distinct {distinct}, resume exact {exact}, {elapsed:.0f}s")
    assert ok


def test_schedule_reproduction(acceptance_report):
    start = time.perf_counter()
    s = ScheduleConfig()
    values = [lr_at(s, 0), lr_at(s, 10), lr_at(s, 200)]
    expected = [1e-6, 2e-4, 1e-5]
    jump = abs(lr_at(s, 10 - 1e-9) - lr_at(s, 10 + 1e-9))
    elapsed = time.perf_counter() - start
    ok = all(v == pytest.approx(e, rel=1e-12) for v, e in zip(values, expected)) and jump < 1e-12 and elapsed < 1
    acceptance_report(8, "schedule reproduction", ok,
                      f"lr(0)={values[0]:.3g}, lr(10)={values[1]:.3g}, lr(200)={values[2]:.3g}, "
                      f"boundary jump {jump:.1e}")
    assert ok
