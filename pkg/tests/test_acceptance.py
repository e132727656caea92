"""End-to-end acceptance checks, one test per shipped guarantee.

Each test prints the measured values it judged, so a failing line carries
its evidence. Scenario runs are cached at module scope because several
criteria share them.
"""

import math
import random
import time
from pathlib import Path

import numpy as np

from edgecall.cli import main as cli_main
from edgecall.governor import (
    DEFAULT_MODE_TABLE,
    GovernorState,
    governor_step,
    mode_for_ci,
)
from edgecall.scenarios import build_workload, load_scenario, materialize
from edgecall.simulator import PolicyId, simulate, variant_utilization
from edgecall.toolselect import (
    HashedEmbedder,
    QuerySplit,
    Tool,
    ToolCatalog,
    VectorIndex,
    retrieve_topk,
    split_sentences,
)
from edgecall.variants import Quant, TpsWindow, VariantId, VariantState, variant_step

_RUNS: dict[str, tuple] = {}


def scenario_run(name: str):
    """CarbonCall run of a bundled scenario, cached, with its wall time."""
    if name not in _RUNS:
        inputs = load_scenario(name)
        t0 = time.perf_counter()
        report = simulate(
            PolicyId.CARBONCALL,
            inputs.trace,
            inputs.workload,
            inputs.device,
            inputs.table,
            inputs.selection,
            inputs.variant,
            inputs.settings,
        )
        _RUNS[name] = (report, time.perf_counter() - t0)
    return _RUNS[name]


def test_criterion_1_retrieval_matches_full_sort_oracle():
    # 200 seeded instances, up to 1000 tools, 64 dims, up to 8 sentences:
    # retrieve_topk must equal an independent full-sort top-k in set,
    # order, and score on all of them, inside 30 s.
    rng = random.Random(4801)
    vocab = [f"w{i}" for i in range(300)]
    embedder = HashedEmbedder(dim=64, seed=7)

    def words(n):
        return " ".join(rng.choice(vocab) for _ in range(n))

    mismatches = 0
    t0 = time.perf_counter()
    for _ in range(200):
        n_tools = rng.randint(2, 1000)
        descriptions = []
        for _ in range(n_tools):
            if descriptions and rng.random() < 0.1:
                descriptions.append(rng.choice(descriptions))  # force score ties
            else:
                descriptions.append(words(rng.randint(3, 8)))
        catalog = ToolCatalog(
            [Tool(f"tool-{i:04d}", d) for i, d in enumerate(descriptions)]
        )
        index = VectorIndex.build(catalog, embedder)
        query = ". ".join(words(rng.randint(3, 10)) for _ in range(rng.randint(1, 8)))
        split = split_sentences(query)
        k = rng.randint(1, min(20, n_tools))

        got = retrieve_topk(index, split, k)

        sentence_vecs = [embedder.embed(s) for s in split.sentences]
        scored = []
        for tool in catalog:
            vec = index.vectors[tool.id]
            best = -2.0
            for sv in sentence_vecs:
                sim = float(np.dot(sv, vec)) / (
                    float(np.linalg.norm(sv)) * float(np.linalg.norm(vec))
                )
                best = max(best, max(-1.0, min(1.0, sim)))
            scored.append((tool.id, best))
        expected = sorted(scored, key=lambda p: (-p[1], p[0]))[:k]

        if [(s.tool_id, s.score) for s in got] != expected:
            mismatches += 1
    wall = time.perf_counter() - t0

    print(f"retrieval oracle: {mismatches} mismatches in 200 instances, {wall:.2f} s")
    assert mismatches == 0
    assert wall < 30.0


def test_criterion_2_governor_laws_hold_on_random_walks():
    # Endpoint mapping, monotonicity, and the 10% hysteresis no-change
    # property over 10^4 random-walk steps, zero violations allowed.
    rng = random.Random(2202)
    table = DEFAULT_MODE_TABLE
    top = len(table)
    violations = 0
    steps_total = 0

    for _ in range(10):
        ci_min = rng.uniform(50.0, 400.0)
        ci_max = ci_min + rng.uniform(50.0, 500.0)
        band = 0.10 * (ci_max - ci_min)

        if mode_for_ci(ci_min, ci_min, ci_max, table) != 1:
            violations += 1
        if mode_for_ci(ci_max, ci_min, ci_max, table) != top:
            violations += 1

        ci = rng.uniform(ci_min, ci_max)
        state = GovernorState(
            mode_index=mode_for_ci(ci, ci_min, ci_max, table),
            ci_at_last_change=ci,
            ci_min=ci_min,
            ci_max=ci_max,
        )
        for _ in range(1000):
            steps_total += 1
            ci = min(ci_max, max(ci_min, ci + rng.uniform(-60.0, 60.0)))
            inside_band = abs(ci - state.ci_at_last_change) < band
            next_state, changed = governor_step(state, ci, table)
            if inside_band and (changed or next_state != state):
                violations += 1
            if changed and next_state.mode_index == state.mode_index:
                violations += 1
            state = next_state

        # Monotonicity of the static mapping inside this window.
        for _ in range(1000):
            a, b = sorted((rng.uniform(ci_min, ci_max), rng.uniform(ci_min, ci_max)))
            if mode_for_ci(a, ci_min, ci_max, table) > mode_for_ci(b, ci_min, ci_max, table):
                violations += 1

    print(f"governor laws: {violations} violations over {steps_total} walk steps")
    assert steps_total == 10_000
    assert violations == 0


def test_criterion_3_moving_average_and_dwell_invariants():
    rng = random.Random(3303)

    # Moving average equals the brute-force mean within 1e-9 on 10^3
    # random windows.
    worst = 0.0
    for _ in range(1000):
        window_len = rng.uniform(100.0, 1000.0)
        window = TpsWindow(window_len_s=window_len)
        t = 0.0
        kept: list[tuple[float, float]] = []
        for _ in range(rng.randint(1, 50)):
            t += rng.uniform(1.0, 200.0)
            tps = rng.uniform(1.0, 40.0)
            window.record(t, tps)
            kept.append((t, tps))
            kept = [(ts, v) for ts, v in kept if ts >= t - window_len]
            brute = math.fsum(v for _, v in kept) / len(kept)
            got = window.moving_average()
            worst = max(worst, abs(got - brute) / abs(brute))
    print(f"moving average: worst relative error {worst:.3e} over 1000 windows")
    assert worst <= 1e-9

    # No two variant switches closer than min_dwell across 10^4 random
    # TPS traces.
    dwell_violations = 0
    switches_seen = 0
    for _ in range(10_000):
        state = VariantState(
            active=VariantId("m", Quant.Q8),
            tps_ref=20.0,
            threshold_fraction=0.80,
            window_len_s=600.0,
            min_dwell_s=600.0,
        )
        window = TpsWindow(window_len_s=600.0)
        t = 0.0
        switch_times = []
        for _ in range(rng.randint(5, 30)):
            t += rng.uniform(20.0, 200.0)
            window.record(t, rng.uniform(10.0, 30.0))
            state, decision = variant_step(state, window, t, rng.randint(1, 5))
            if decision.value != "hold":
                switch_times.append(t)
        switches_seen += len(switch_times)
        for a, b in zip(switch_times, switch_times[1:]):
            if b - a < 600.0 - 1e-9:
                dwell_violations += 1
    print(
        f"dwell: {dwell_violations} violations over 10000 traces "
        f"({switches_seen} switches)"
    )
    assert switches_seen > 0
    assert dwell_violations == 0


def test_criterion_4_energy_and_carbon_conservation_on_bundled_scenarios():
    worst_energy = 0.0
    worst_carbon = 0.0
    for name in ("week1", "week2", "week3", "week4"):
        report, _ = scenario_run(name)
        energy = 0.0
        carbon = 0.0
        for seg in report.segments:
            seg_energy = seg.power_w * (seg.end - seg.start) / 3.6e6
            energy += seg_energy
            carbon += seg_energy * seg.ci
        worst_energy = max(
            worst_energy,
            abs(report.totals["energy_kwh"] - energy) / energy,
        )
        worst_carbon = max(
            worst_carbon,
            abs(report.totals["carbon_gco2"] - carbon) / carbon,
        )
        split_sum = report.totals["query_carbon_gco2"] + report.totals["idle_carbon_gco2"]
        worst_carbon = max(
            worst_carbon,
            abs(report.totals["carbon_gco2"] - split_sum) / split_sum,
        )
    print(
        f"conservation: worst relative error energy {worst_energy:.3e}, "
        f"carbon {worst_carbon:.3e}"
    )
    assert worst_energy <= 1e-9
    assert worst_carbon <= 1e-9


def test_criterion_5_week1_norms_and_runtime():
    report, wall = scenario_run("week1")
    agg = report.aggregates
    print(
        f"week1: cf_norm {agg['cf_norm']:.4f}, p_norm {agg['p_norm']:.4f}, "
        f"t_norm {agg['t_norm']:.4f}, wall {wall:.2f} s"
    )
    assert agg["cf_norm"] <= 0.70
    assert agg["p_norm"] <= 0.85
    assert agg["t_norm"] <= 1.0
    assert wall < 10.0


def test_criterion_6_q8_utilization_higher_when_ci_is_calm():
    assert build_workload("week3") == build_workload("week4")
    calm, _ = scenario_run("week3")
    volatile, _ = scenario_run("week4")
    calm_util = variant_utilization(calm)
    volatile_util = variant_utilization(volatile)
    print(f"q8 utilization: calm {calm_util:.4f} vs volatile {volatile_util:.4f}")
    assert calm_util > volatile_util


def test_criterion_7_repeat_cli_runs_are_byte_identical(tmp_path):
    paths = materialize("week2", tmp_path / "week2")
    cfg = str(paths["config"])
    out_a = tmp_path / "run_a"
    out_b = tmp_path / "run_b"
    for out in (out_a, out_b):
        code = cli_main(
            ["simulate", "--config", cfg, "--policies", "carboncall,default",
             "--out", str(out)]
        )
        assert code == 0
    identical = True
    for rel in ("report_carboncall.json", "report_default.json", "summary.csv"):
        if (out_a / rel).read_bytes() != (out_b / rel).read_bytes():
            identical = False
    print(f"determinism: repeated CLI runs byte-identical = {identical}")
    assert identical
