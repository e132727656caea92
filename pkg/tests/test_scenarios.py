import pytest

try:
    import tomllib
except ModuleNotFoundError:
    import tomli as tomllib

from edgecall.carbon import load_ci_trace
from edgecall.governor import DEFAULT_MODE_TABLE, ModeTable
from edgecall.scenarios import (
    BUNDLED_CATALOG,
    SCENARIOS,
    build_trace,
    build_workload,
    bundled_device_model,
    load_scenario,
    materialize,
)
from edgecall.simulator import DeviceModel
from edgecall.toolselect import EntityMap, ToolCatalog
from edgecall.variants import Quant
from edgecall.workload import load_workload_jsonl

EXPECTED_RANGES = {
    "week1": (220.0, 610.0),
    "week2": (70.0, 230.0),
    "week3": (350.0, 520.0),
    "week4": (200.0, 620.0),
}


def test_bundled_names():
    assert set(SCENARIOS) == set(EXPECTED_RANGES)


@pytest.mark.parametrize("name", sorted(EXPECTED_RANGES))
def test_trace_ranges_are_exact(name):
    trace = build_trace(name)
    values = [s.ci for s in trace.samples]
    assert (min(values), max(values)) == EXPECTED_RANGES[name]


@pytest.mark.parametrize("name", sorted(EXPECTED_RANGES))
def test_traces_are_seven_days_hourly(name):
    trace = build_trace(name)
    assert len(trace.samples) == 7 * 24
    times = [s.timestamp for s in trace.samples]
    assert times[0] == 0.0
    assert all(b - a == 3600.0 for a, b in zip(times, times[1:]))
    # Every day repeats the same 24-hour shape.
    day0 = [s.ci for s in trace.samples[:24]]
    for day in range(1, 7):
        assert [s.ci for s in trace.samples[day * 24:(day + 1) * 24]] == day0


def test_week3_and_week4_share_a_workload():
    assert build_workload("week3") == build_workload("week4")


def test_device_model_meets_table_invariants():
    device = bundled_device_model()
    device.validate(DEFAULT_MODE_TABLE)
    for mode in DEFAULT_MODE_TABLE:
        q8 = device.tps[(mode.index, Quant.Q8)]
        q4 = device.tps[(mode.index, Quant.Q4KM)]
        assert q4 >= 1.3 * q8


def test_unknown_scenario_is_rejected():
    with pytest.raises(KeyError, match="week9"):
        build_trace("week9")


def test_materialize_round_trips(tmp_path):
    paths = materialize("week2", tmp_path)
    trace = load_ci_trace(paths["ci_trace"])
    assert trace.samples == build_trace("week2").samples
    workload = load_workload_jsonl(paths["workload"])
    assert workload == build_workload("week2")
    catalog = ToolCatalog.from_json(paths["catalog"])
    assert [t.id for t in catalog] == [t.id for t in BUNDLED_CATALOG]
    EntityMap.from_json(paths["entity_map"], catalog)
    table = ModeTable.from_json(paths["mode_table"])
    assert list(table) == list(DEFAULT_MODE_TABLE)
    device = DeviceModel.from_json(paths["device_model"])
    assert device == bundled_device_model()
    with paths["config"].open("rb") as fh:
        config = tomllib.load(fh)
    assert config["scenario"]["name"] == "week2"
    assert "carboncall" in config["simulation"]["policies"]


def test_load_scenario_builds_runnable_inputs():
    inputs = load_scenario("week1")
    assert inputs.workload[0].arrival >= 0.0
    assert inputs.trace.start == 0.0
    assert inputs.selection.catalog is BUNDLED_CATALOG
    assert inputs.variant.active.quant is Quant.Q8
