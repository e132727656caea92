import math

import pytest
from hypothesis import given, strategies as st

from edgecall.carbon import (
    CiSample,
    CiTrace,
    EnergyRecord,
    carbon_footprint,
    energy_kwh,
    load_ci_trace,
)
from edgecall.errors import TraceParseError


def make_trace(points, horizon_s=86400.0):
    return CiTrace(tuple(CiSample(t, ci) for t, ci in points), horizon_s)


# --- footprint arithmetic ---


def test_footprint_known_values():
    assert carbon_footprint(1.0, 490.0) == 490.0
    assert carbon_footprint(0.0, 820.0) == 0.0
    assert carbon_footprint(0.002, 350.0) == pytest.approx(0.7, rel=1e-12)


def test_footprint_rejects_negative_inputs():
    with pytest.raises(ValueError):
        carbon_footprint(-0.1, 400.0)
    with pytest.raises(ValueError):
        carbon_footprint(0.1, -400.0)


@given(
    energy=st.floats(min_value=0.0, max_value=1e6, allow_nan=False),
    ci=st.floats(min_value=0.0, max_value=2000.0, allow_nan=False),
)
def test_footprint_is_linear_in_both_factors(energy, ci):
    base = carbon_footprint(energy, ci)
    # Doubling is exact in binary floating point.
    assert carbon_footprint(2.0 * energy, ci) == 2.0 * base
    assert carbon_footprint(energy, 2.0 * ci) == 2.0 * base


def test_energy_kwh_conversion():
    # 45 W for 10.5 s is 472.5 J.
    assert energy_kwh(45.0, 10.5) == pytest.approx(1.3125e-4, rel=1e-12)
    assert energy_kwh(0.0, 100.0) == 0.0
    with pytest.raises(ValueError):
        energy_kwh(-1.0, 10.0)
    with pytest.raises(ValueError):
        energy_kwh(10.0, -1.0)


def test_energy_record_consistency():
    rec = EnergyRecord.from_power(45.0, 0.0, 10.5)
    assert rec.energy_kwh == pytest.approx(1.3125e-4, rel=1e-9)
    assert rec.duration_s == 10.5


def test_energy_record_rejects_mismatched_energy():
    with pytest.raises(ValueError):
        EnergyRecord(0.0, 10.5, 45.0, 2e-4)
    with pytest.raises(ValueError):
        EnergyRecord(10.0, 5.0, 45.0, 0.0)
    with pytest.raises(ValueError):
        EnergyRecord(0.0, 1.0, -45.0, -1.25e-5)


# --- trace construction and lookup ---


def test_trace_requires_samples():
    with pytest.raises(ValueError, match="empty trace"):
        CiTrace(())


def test_trace_requires_increasing_timestamps():
    with pytest.raises(ValueError):
        make_trace([(0.0, 100.0), (0.0, 110.0)])
    with pytest.raises(ValueError):
        make_trace([(10.0, 100.0), (5.0, 110.0)])


def test_sample_rejects_negative_ci():
    with pytest.raises(ValueError):
        CiSample(0.0, -3.0)


def test_ci_at_holds_value_between_samples():
    trace = make_trace([(0.0, 100.0), (3600.0, 200.0)])
    assert trace.ci_at(0.0) == 100.0
    assert trace.ci_at(1800.0) == 100.0
    assert trace.ci_at(3599.999) == 100.0


def test_ci_at_boundary_belongs_to_later_sample():
    trace = make_trace([(0.0, 100.0), (3600.0, 200.0)])
    assert trace.ci_at(3600.0) == 200.0


def test_ci_at_holds_past_final_sample():
    trace = make_trace([(0.0, 100.0), (3600.0, 200.0)])
    assert trace.ci_at(1e9) == 200.0


def test_ci_at_before_first_sample_is_an_error():
    trace = make_trace([(60.0, 100.0)])
    with pytest.raises(ValueError):
        trace.ci_at(59.0)


def test_ci_range_over_one_day():
    points = [(i * 3600.0, ci) for i, ci in enumerate([300, 220, 480, 610, 590, 410])]
    trace = make_trace(points)
    assert trace.ci_range(0.0) == (220.0, 610.0)


def test_ci_range_window_subsets_trace():
    points = [(0.0, 100.0), (3600.0, 50.0), (7200.0, 400.0), (90000.0, 900.0)]
    trace = make_trace(points, horizon_s=7200.0)
    assert trace.ci_range(3600.0) == (50.0, 400.0)
    # Window endpoints are inclusive on both sides.
    assert trace.ci_range(7200.0) == (400.0, 400.0)


def test_ci_range_empty_window_is_an_error():
    trace = make_trace([(0.0, 100.0)], horizon_s=3600.0)
    with pytest.raises(ValueError):
        trace.ci_range(10_000.0)


# --- CSV loading ---

VALID_CSV = """\
# hourly forecast, trace-local seconds
timestamp,ci_gco2_per_kwh
0,300
3600,220

7200,480
"""


def test_load_numeric_trace(tmp_path):
    path = tmp_path / "trace.csv"
    path.write_text(VALID_CSV, encoding="utf-8")
    trace = load_ci_trace(path)
    assert [s.timestamp for s in trace.samples] == [0.0, 3600.0, 7200.0]
    assert [s.ci for s in trace.samples] == [300.0, 220.0, 480.0]
    assert trace.horizon_s == 86400.0


def test_load_iso_timestamps_rebased_to_zero(tmp_path):
    path = tmp_path / "trace.csv"
    path.write_text(
        "timestamp,ci_gco2_per_kwh\n"
        "2024-03-01T00:00:00Z,410\n"
        "2024-03-01T01:00:00Z,390\n"
        "2024-03-01T02:30:00Z,370\n",
        encoding="utf-8",
    )
    trace = load_ci_trace(path)
    assert [s.timestamp for s in trace.samples] == [0.0, 3600.0, 9000.0]
    assert trace.samples[0].ci == 410.0


def test_load_rejects_bad_header(tmp_path):
    path = tmp_path / "trace.csv"
    path.write_text("time,ci\n0,300\n", encoding="utf-8")
    with pytest.raises(TraceParseError, match=":1:"):
        load_ci_trace(path)


def test_load_names_offending_line(tmp_path):
    path = tmp_path / "trace.csv"
    path.write_text(
        "timestamp,ci_gco2_per_kwh\n0,300\n3600,not-a-number\n", encoding="utf-8"
    )
    with pytest.raises(TraceParseError, match=":3:"):
        load_ci_trace(path)


def test_load_rejects_negative_ci_with_line(tmp_path):
    path = tmp_path / "trace.csv"
    path.write_text("timestamp,ci_gco2_per_kwh\n0,300\n3600,-5\n", encoding="utf-8")
    with pytest.raises(TraceParseError, match=":3:"):
        load_ci_trace(path)


def test_load_rejects_unsorted_rows_with_line(tmp_path):
    path = tmp_path / "trace.csv"
    path.write_text("timestamp,ci_gco2_per_kwh\n3600,300\n0,310\n", encoding="utf-8")
    with pytest.raises(TraceParseError, match=":3:"):
        load_ci_trace(path)


def test_load_rejects_wrong_field_count(tmp_path):
    path = tmp_path / "trace.csv"
    path.write_text("timestamp,ci_gco2_per_kwh\n0,300,9\n", encoding="utf-8")
    with pytest.raises(TraceParseError, match=":2:"):
        load_ci_trace(path)


def test_load_rejects_mixed_timestamp_kinds(tmp_path):
    path = tmp_path / "trace.csv"
    path.write_text(
        "timestamp,ci_gco2_per_kwh\n0,300\n2024-03-01T01:00:00Z,390\n",
        encoding="utf-8",
    )
    with pytest.raises(TraceParseError, match=":3:"):
        load_ci_trace(path)


def test_load_empty_file_is_an_error(tmp_path):
    path = tmp_path / "trace.csv"
    path.write_text("# nothing here\ntimestamp,ci_gco2_per_kwh\n", encoding="utf-8")
    with pytest.raises(TraceParseError, match="empty trace"):
        load_ci_trace(path)


@given(
    offsets=st.lists(
        st.floats(min_value=0.001, max_value=3600.0, allow_nan=False),
        min_size=1,
        max_size=40,
    ),
    cis=st.lists(
        st.floats(min_value=0.0, max_value=1500.0, allow_nan=False),
        min_size=41,
        max_size=41,
    ),
    t=st.floats(min_value=0.0, max_value=200_000.0, allow_nan=False),
)
def test_ci_at_matches_linear_scan(offsets, cis, t):
    times = [0.0]
    for d in offsets:
        times.append(times[-1] + d)
    trace = make_trace(list(zip(times, cis)))
    expected = None
    for ts, ci in zip(times, cis):
        if ts <= t:
            expected = ci
    assert trace.ci_at(t) == expected
