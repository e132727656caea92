"""Bundled demo scenarios: weekly CI traces, a tool catalog, and a device model.

Each scenario is a seven-day hourly carbon-intensity trace paired with a
seeded synthetic workload over a shared sixteen-tool catalog. The traces
cover the grid regimes the runtime is meant to react to: a wide diurnal
swing, a renewable-heavy week, a calm week with one short daily peak, and
a volatile week that oscillates across its whole range.
"""

from __future__ import annotations

import argparse
import json
import math
from dataclasses import dataclass
from pathlib import Path

from .carbon import CiSample, CiTrace
from .governor import DEFAULT_MODE_TABLE, ModeTable
from .simulator import DeviceModel, SelectionSetup, SimulationSettings
from .toolselect import (
    EntityMap,
    HashedEmbedder,
    SelectionConfig,
    Tool,
    ToolCatalog,
    VectorIndex,
)
from .variants import Quant, VariantId, VariantState
from .workload import QueryEvent, WorkloadSpec, generate_workload, save_workload_jsonl

HOURS_PER_DAY = 24
DAYS = 7

BUNDLED_CATALOG = ToolCatalog(
    [
        Tool(
            "weather_forecast",
            "check the weather forecast and temperature for a city",
            ("paris", "london", "tokyo"),
        ),
        Tool(
            "currency_convert",
            "convert an amount of currency between euros dollars and pounds",
            ("euros", "dollars", "pounds", "yen"),
        ),
        Tool("flight_search", "search flights between airports by date and price"),
        Tool("hotel_search", "find hotels in a city filtered by rating and price"),
        Tool("calendar_add", "add a meeting or reminder to the calendar"),
        Tool("email_send", "send an email message to a contact"),
        Tool("music_play", "play a song album or playlist by an artist"),
        Tool("news_headlines", "read the latest world news headlines by topic"),
        Tool(
            "stock_quote",
            "look up the current stock price for a ticker symbol",
            ("nvda", "aapl", "tsla"),
        ),
        Tool("maps_route", "plan a driving route with traffic between two places"),
        Tool("restaurant_find", "find nearby restaurants filtered by cuisine and rating"),
        Tool("timer_set", "set a countdown timer or alarm for a duration"),
        Tool(
            "translate_text",
            "translate a phrase between two languages",
            ("french", "spanish", "german"),
        ),
        Tool("unit_convert", "convert units of length weight and temperature"),
        Tool("smart_home", "switch lights and thermostat settings in the house"),
        Tool("sports_scores", "report live scores and results for football and basketball"),
    ]
)

VARIANT_FAMILY = "edge-8b"


def bundled_device_model() -> DeviceModel:
    """Throughput and power tables for the reference edge board.

    The 4-bit variant runs at least 1.3x the 8-bit throughput in every
    mode, and per-mode power sits exactly at the mode's cap.
    """
    return DeviceModel(
        tps={
            (1, Quant.Q8): 22.0,
            (2, Quant.Q8): 20.0,
            (3, Quant.Q8): 18.0,
            (4, Quant.Q8): 16.0,
            (5, Quant.Q8): 13.0,
            (1, Quant.Q4KM): 29.5,
            (2, Quant.Q4KM): 27.0,
            (3, Quant.Q4KM): 24.5,
            (4, Quant.Q4KM): 21.5,
            (5, Quant.Q4KM): 17.5,
        },
        power_w={1: 45.0, 2: 42.0, 3: 37.0, 4: 33.0, 5: 28.0},
        tool_exec_time_s=0.5,
        idle_power_w=10.0,
    )


def _diurnal(low: float, high: float) -> tuple[float, ...]:
    """One day of hourly CI values on a cosine: low at midnight, high at noon."""
    mid = (low + high) / 2.0
    amp = (high - low) / 2.0
    return tuple(
        round(mid - amp * math.cos(2.0 * math.pi * h / HOURS_PER_DAY), 3)
        for h in range(HOURS_PER_DAY)
    )


# Calm day: a long floor with one short afternoon peak, so high-CI modes
# are rare and brief.
_CALM_DAY = (
    350.0, 352.0, 355.0, 353.0, 351.0, 354.0, 356.0, 352.0, 350.0, 353.0, 355.0,
    420.0, 520.0, 430.0,
    360.0, 356.0, 353.0, 351.0, 354.0, 356.0, 353.0, 352.0, 351.0, 350.0,
)

# Volatile day: long plateaus at both extremes with fast ramps between.
_VOLATILE_DAY = (
    200.0, 205.0, 210.0, 203.0, 207.0, 212.0,
    340.0, 480.0, 590.0,
    620.0, 610.0, 615.0, 618.0, 612.0, 616.0, 614.0, 611.0,
    520.0, 380.0, 260.0,
    210.0, 204.0, 208.0, 200.0,
)


@dataclass(frozen=True)
class Scenario:
    """A bundled trace shape plus the workload that replays against it."""

    name: str
    description: str
    day_ci: tuple[float, ...]
    workload_seed: int
    n_queries: int = 6500
    mean_interarrival_s: float = 90.0

    def __post_init__(self) -> None:
        if len(self.day_ci) != HOURS_PER_DAY:
            raise ValueError("day_ci must hold one value per hour")


SCENARIOS: dict[str, Scenario] = {
    s.name: s
    for s in (
        Scenario(
            "week1",
            "wide diurnal swing between 220 and 610 gCO2/kWh",
            _diurnal(220.0, 610.0),
            workload_seed=11,
        ),
        Scenario(
            "week2",
            "renewable-heavy week between 70 and 230 gCO2/kWh",
            _diurnal(70.0, 230.0),
            workload_seed=22,
        ),
        Scenario(
            "week3",
            "calm week between 350 and 520 gCO2/kWh with one short daily peak",
            _CALM_DAY,
            workload_seed=34,
        ),
        Scenario(
            "week4",
            "volatile week oscillating across 200 to 620 gCO2/kWh",
            _VOLATILE_DAY,
            workload_seed=34,  # shares week3's workload for utilization comparisons
        ),
    )
}


def build_trace(name: str) -> CiTrace:
    """Seven days of hourly samples for a bundled scenario."""
    scenario = _lookup(name)
    samples = tuple(
        CiSample(float(day * 86400 + hour * 3600), scenario.day_ci[hour])
        for day in range(DAYS)
        for hour in range(HOURS_PER_DAY)
    )
    return CiTrace(samples)


def build_workload(name: str) -> list[QueryEvent]:
    scenario = _lookup(name)
    spec = WorkloadSpec(
        n_queries=scenario.n_queries,
        mean_interarrival_s=scenario.mean_interarrival_s,
    )
    return generate_workload(spec, BUNDLED_CATALOG, seed=scenario.workload_seed)


@dataclass(frozen=True)
class ScenarioInputs:
    """Everything simulate() needs, built in memory."""

    trace: CiTrace
    workload: list[QueryEvent]
    device: DeviceModel
    table: ModeTable
    selection: SelectionSetup
    variant: VariantState
    settings: SimulationSettings


def load_scenario(name: str) -> ScenarioInputs:
    catalog = BUNDLED_CATALOG
    index = VectorIndex.build(catalog, HashedEmbedder(dim=64, seed=7))
    return ScenarioInputs(
        trace=build_trace(name),
        workload=build_workload(name),
        device=bundled_device_model(),
        table=DEFAULT_MODE_TABLE,
        selection=SelectionSetup(
            catalog=catalog,
            index=index,
            config=SelectionConfig(k=8, gap_delta=0.10),
            entity_map=EntityMap.from_catalog(catalog),
        ),
        variant=VariantState(active=VariantId(VARIANT_FAMILY, Quant.Q8)),
        settings=SimulationSettings(),
    )


def _lookup(name: str) -> Scenario:
    if name not in SCENARIOS:
        known = ", ".join(sorted(SCENARIOS))
        raise KeyError(f"unknown scenario {name!r}; bundled: {known}")
    return SCENARIOS[name]


def _catalog_json(catalog: ToolCatalog) -> str:
    entries = [
        {
            "id": tool.id,
            "description": tool.description,
            "entity_keywords": list(tool.entity_keywords),
        }
        for tool in catalog
    ]
    return json.dumps(entries, indent=2, sort_keys=True) + "\n"


def _entity_map_json(catalog: ToolCatalog) -> str:
    rules: dict[str, list[str]] = {}
    for tool in catalog:
        for keyword in tool.entity_keywords:
            rules.setdefault(keyword, []).append(tool.id)
    return json.dumps(rules, indent=2, sort_keys=True) + "\n"


def _mode_table_json(table: ModeTable) -> str:
    entries = [
        {
            "index": mode.index,
            "f_cpu_hz": mode.f_cpu_hz,
            "f_gpu_hz": mode.f_gpu_hz,
            "f_mem_hz": mode.f_mem_hz,
            "p_max_w": mode.p_max_w,
        }
        for mode in table
    ]
    return json.dumps(entries, indent=2, sort_keys=True) + "\n"


def _trace_csv(trace: CiTrace) -> str:
    lines = ["timestamp,ci_gco2_per_kwh"]
    for sample in trace.samples:
        lines.append(f"{sample.timestamp:.10g},{sample.ci:.10g}")
    return "\n".join(lines) + "\n"


_CONFIG_TEMPLATE = """\
# {name}: {description}

[scenario]
name = "{name}"
seed = 0

[paths]
ci_trace = "ci_trace.csv"
workload = "workload.jsonl"
catalog = "catalog.json"
entity_map = "entity_map.json"
mode_table = "mode_table.json"
device_model = "device_model.json"

[selection]
k = 8
gap_delta = 0.1
embed_dim = 64
embed_seed = 7

[variant]
family = "{family}"
threshold_fraction = 0.8
window_len_s = 600.0
min_dwell_s = 600.0
switch_overhead_s = 10.0
upgrade_policy = "mode_probe"

[simulation]
policies = ["carboncall", "default", "staticlow", "lisstar"]
per_tool_prompt_tokens = 40
hysteresis_fraction = 0.1
horizon_s = 86400.0
"""


def materialize(name: str, dest_dir: str | Path) -> dict[str, Path]:
    """Write a scenario's input files and config to a directory."""
    scenario = _lookup(name)
    dest = Path(dest_dir)
    dest.mkdir(parents=True, exist_ok=True)

    paths = {
        "ci_trace": dest / "ci_trace.csv",
        "workload": dest / "workload.jsonl",
        "catalog": dest / "catalog.json",
        "entity_map": dest / "entity_map.json",
        "mode_table": dest / "mode_table.json",
        "device_model": dest / "device_model.json",
        "config": dest / "config.toml",
    }
    paths["ci_trace"].write_text(_trace_csv(build_trace(name)), encoding="utf-8")
    save_workload_jsonl(build_workload(name), paths["workload"])
    paths["catalog"].write_text(_catalog_json(BUNDLED_CATALOG), encoding="utf-8")
    paths["entity_map"].write_text(_entity_map_json(BUNDLED_CATALOG), encoding="utf-8")
    paths["mode_table"].write_text(_mode_table_json(DEFAULT_MODE_TABLE), encoding="utf-8")
    paths["device_model"].write_text(
        json.dumps(bundled_device_model().to_dict(), indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )
    paths["config"].write_text(
        _CONFIG_TEMPLATE.format(
            name=scenario.name,
            description=scenario.description,
            family=VARIANT_FAMILY,
        ),
        encoding="utf-8",
    )
    return paths


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="edgecall.scenarios",
        description="Write bundled scenario input files to disk.",
    )
    parser.add_argument("names", nargs="*", default=sorted(SCENARIOS))
    parser.add_argument("--out", default="scenarios", help="destination directory")
    args = parser.parse_args(argv)
    for name in args.names or sorted(SCENARIOS):
        paths = materialize(name, Path(args.out) / name)
        print(f"{name}: wrote {len(paths)} files to {paths['config'].parent}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
