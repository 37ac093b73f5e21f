"""Timing harness: statistics, memory refusal, CSV schema."""

import csv

import pytest

from fusionbench.bench import (
    CSV_HEADER,
    MemoryCapError,
    bench_grid,
    bench_target,
    relative_speed,
    time_callable,
    write_csv,
)


def test_single_repeat_has_zero_iqr():
    r = bench_target("vanilla", 16, 8, repeats=1, warmup=0)
    assert r.iqr_s == 0.0
    assert r.median_s > 0.0
    assert r.flops > 0


def test_median_and_iqr_of_known_samples(monkeypatch):
    ticks = iter([0.0, 1.0, 1.0, 2.0, 2.0, 5.0, 5.0, 9.0])

    def fake(): pass

    monkeypatch.setattr("fusionbench.bench.perf_counter", lambda: next(ticks))
    med, iqr, samples = time_callable(fake, repeats=4, warmup=0)
    assert samples == [1.0, 1.0, 3.0, 4.0]
    assert med == 2.0
    assert iqr == pytest.approx(2.25)  # p75=3.25, p25=1.0 on [1,1,3,4]


def test_warmup_runs_excluded():
    calls = []
    time_callable(lambda: calls.append(1), repeats=2, warmup=3)
    assert len(calls) == 5
    with pytest.raises(ValueError):
        time_callable(lambda: None, repeats=0)


def test_memory_cap_refusal():
    with pytest.raises(MemoryCapError) as e:
        bench_target("vanilla", 50000, 256, repeats=1, warmup=0,
                     mem_cap_bytes=1 << 30)
    assert "cap" in str(e.value)


def test_sgst_flops_match_realized_routing():
    r = bench_target("sgst_stage", 32, 8, repeats=1, warmup=0, seed=1)
    assert r.k == 4  # ceil(32/9)
    assert r.flops > 0


def test_grid_and_csv(tmp_path):
    results = bench_grid(targets=("vanilla", "cst"), ns=(16,), cs=(8,),
                         repeats=1, warmup=0)
    path = tmp_path / "bench.csv"
    write_csv(path, results)
    rows = list(csv.reader(open(path)))
    assert tuple(rows[0]) == CSV_HEADER
    assert len(rows) == 3
    assert rows[1][0] == "vanilla" and rows[2][0] == "cst"
    assert float(rows[1][6]) > 0.0


def test_relative_speed_keys():
    d = relative_speed(n=64, c=8, repeats=1, warmup=0)
    assert set(d) >= {"vanilla_median_s", "cst_median_s",
                      "sgst_stage_median_s", "cst_over_vanilla",
                      "sgst_stage_over_vanilla"}
    assert d["cst_over_vanilla"] > 0.0


def test_unknown_target_rejected():
    with pytest.raises(ValueError):
        bench_target("flash", 16, 8, repeats=1, warmup=0)
