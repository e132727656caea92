import json

import pytest

from edgecall.errors import TraceParseError
from edgecall.toolselect import Tool, ToolCatalog
from edgecall.workload import (
    QueryEvent,
    WorkloadSpec,
    generate_workload,
    load_workload_jsonl,
    save_workload_jsonl,
)


def small_catalog():
    return ToolCatalog(
        [
            Tool("weather", "check the weather forecast for a city", ("paris",)),
            Tool("currency", "convert currency between euros and dollars"),
            Tool("flights", "search flights between airports"),
            Tool("music", "play a song or playlist"),
        ]
    )


def test_generation_is_deterministic():
    spec = WorkloadSpec(n_queries=50, mean_interarrival_s=30.0)
    catalog = small_catalog()
    a = generate_workload(spec, catalog, seed=42)
    b = generate_workload(spec, catalog, seed=42)
    assert a == b
    c = generate_workload(spec, catalog, seed=43)
    assert a != c


def test_arrivals_are_increasing_and_poisson_like():
    spec = WorkloadSpec(n_queries=1000, mean_interarrival_s=30.0)
    events = generate_workload(spec, small_catalog(), seed=7)
    arrivals = [e.arrival for e in events]
    assert all(b > a for a, b in zip(arrivals, arrivals[1:]))
    gaps = [b - a for a, b in zip([0.0] + arrivals, arrivals)]
    mean_gap = sum(gaps) / len(gaps)
    assert abs(mean_gap - 30.0) / 30.0 < 0.10


def test_queries_reference_catalog_tools():
    spec = WorkloadSpec(n_queries=200, mean_interarrival_s=10.0)
    catalog = small_catalog()
    events = generate_workload(spec, catalog, seed=3)
    for ev in events:
        assert 40 <= ev.prompt_tokens <= 160
        assert 30 <= ev.output_tokens <= 150
        assert 1 <= len(ev.ground_truth_tools) <= 2
        for tid in ev.ground_truth_tools:
            assert tid in catalog.by_id
        assert ev.text.strip()
    assert any(len(ev.ground_truth_tools) == 2 for ev in events)


def test_generation_input_validation():
    with pytest.raises(ValueError):
        WorkloadSpec(n_queries=0, mean_interarrival_s=30.0)
    with pytest.raises(ValueError):
        WorkloadSpec(n_queries=10, mean_interarrival_s=0.0)
    with pytest.raises(ValueError):
        WorkloadSpec(n_queries=10, mean_interarrival_s=30.0, prompt_tokens_range=(5, 2))
    with pytest.raises(ValueError):
        generate_workload(
            WorkloadSpec(n_queries=10, mean_interarrival_s=30.0), ToolCatalog([]), 1
        )


def test_query_event_validation():
    with pytest.raises(ValueError):
        QueryEvent(-1.0, 10, 10, ("a",), "text")
    with pytest.raises(ValueError):
        QueryEvent(0.0, 0, 10, ("a",), "text")
    with pytest.raises(ValueError):
        QueryEvent(0.0, 10, 10, ("a",), "   ")


def test_jsonl_round_trip(tmp_path):
    spec = WorkloadSpec(n_queries=40, mean_interarrival_s=20.0)
    events = generate_workload(spec, small_catalog(), seed=11)
    path = tmp_path / "workload.jsonl"
    save_workload_jsonl(events, path)
    loaded = load_workload_jsonl(path)
    assert loaded == events


def test_jsonl_loader_names_bad_lines(tmp_path):
    path = tmp_path / "w.jsonl"
    good = json.dumps(
        {
            "arrival": 1.0,
            "prompt_tokens": 10,
            "output_tokens": 10,
            "ground_truth_tools": ["a"],
            "text": "hello",
        }
    )
    path.write_text(good + "\nnot json\n", encoding="utf-8")
    with pytest.raises(TraceParseError, match=":2:"):
        load_workload_jsonl(path)

    bad_tokens = good.replace('"prompt_tokens": 10', '"prompt_tokens": 0')
    path.write_text(good + "\n" + bad_tokens + "\n", encoding="utf-8")
    with pytest.raises(TraceParseError, match=":2:"):
        load_workload_jsonl(path)

    earlier = good.replace('"arrival": 1.0', '"arrival": 0.5')
    path.write_text(good + "\n" + earlier + "\n", encoding="utf-8")
    with pytest.raises(TraceParseError, match="non-decreasing"):
        load_workload_jsonl(path)


def test_jsonl_loader_rejects_empty(tmp_path):
    path = tmp_path / "w.jsonl"
    path.write_text("\n\n", encoding="utf-8")
    with pytest.raises(TraceParseError, match="empty workload"):
        load_workload_jsonl(path)
