"""Trace-driven serving simulator: one device, one query stream, four policies.

The loop is fully deterministic. Queries are served one at a time in
arrival order; the governor's mode schedule is a pure function of the CI
trace, and variant switching reacts to the simulated throughput samples.
Every busy, switch-free idle, and overhead second lands in exactly one
accounting segment, so energy and carbon totals can be re-derived from
the report.
"""

from __future__ import annotations

import json
from bisect import bisect_right
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

from .carbon import CiTrace, carbon_footprint, energy_kwh
from .errors import ConfigError
from .governor import GovernorState, ModeTable, governor_step, plan_window, refresh_window
from .toolselect import EntityMap, SelectionConfig, ToolCatalog, VectorIndex, select_tools
from .variants import Decision, Quant, TpsWindow, VariantState, calibrate_reference, variant_step
from .workload import QueryEvent


class PolicyId(str, Enum):
    CARBONCALL = "carboncall"
    DEFAULT = "default"
    STATIC_LOW = "staticlow"
    LIS_STAR = "lisstar"


# Policies that follow the CI-driven governor rather than a pinned mode.
_GOVERNED = (PolicyId.CARBONCALL, PolicyId.LIS_STAR)
# Policies that skip retrieval and hand the model the whole catalog.
_FULL_CATALOG = (PolicyId.DEFAULT, PolicyId.STATIC_LOW)


@dataclass(frozen=True)
class DeviceModel:
    """Measured serving behavior of one device across modes and variants."""

    tps: dict[tuple[int, Quant], float]  # (mode index, quant) -> tokens/s
    power_w: dict[int, float]  # mode index -> busy draw in watts
    tool_exec_time_s: float = 0.5
    idle_power_w: float = 10.0

    def validate(self, table: ModeTable) -> None:
        if self.tool_exec_time_s < 0:
            raise ConfigError("tool_exec_time_s must be >= 0")
        if self.idle_power_w < 0:
            raise ConfigError("idle_power_w must be >= 0")
        for mode in table:
            if mode.index not in self.power_w:
                raise ConfigError(f"device model lacks power for mode {mode.index}")
            if self.power_w[mode.index] > mode.p_max_w:
                raise ConfigError(
                    f"mode {mode.index} draws {self.power_w[mode.index]} W, "
                    f"above its {mode.p_max_w} W cap"
                )
            if self.power_w[mode.index] <= 0:
                raise ConfigError(f"mode {mode.index} power must be positive")
            for quant in (Quant.Q8, Quant.Q4KM):
                if (mode.index, quant) not in self.tps:
                    raise ConfigError(
                        f"device model lacks tps for mode {mode.index}, {quant.value}"
                    )
                if self.tps[(mode.index, quant)] <= 0:
                    raise ConfigError("tps entries must be positive")
        for quant in (Quant.Q8, Quant.Q4KM):
            for prev, cur in zip(table, list(table)[1:]):
                if self.tps[(cur.index, quant)] >= self.tps[(prev.index, quant)]:
                    raise ConfigError(
                        f"tps must strictly decrease with mode index for {quant.value}"
                    )
        for mode in table:
            if self.tps[(mode.index, Quant.Q4KM)] < self.tps[(mode.index, Quant.Q8)]:
                raise ConfigError(
                    f"the 4-bit variant cannot be slower than 8-bit in mode {mode.index}"
                )

    @classmethod
    def from_json(cls, path: str | Path) -> "DeviceModel":
        path = Path(path)
        try:
            raw = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
        try:
            tps = {}
            for mode_key, by_quant in raw["tps"].items():
                for quant_key, value in by_quant.items():
                    tps[(int(mode_key), Quant(quant_key))] = float(value)
            power = {int(k): float(v) for k, v in raw["power_w"].items()}
            return cls(
                tps=tps,
                power_w=power,
                tool_exec_time_s=float(raw.get("tool_exec_time_s", 0.5)),
                idle_power_w=float(raw.get("idle_power_w", 10.0)),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"{path}: {exc}") from exc

    def to_dict(self) -> dict:
        tps: dict[str, dict[str, float]] = {}
        for (mode_index, quant), value in sorted(
            self.tps.items(), key=lambda kv: (kv[0][0], kv[0][1].value)
        ):
            tps.setdefault(str(mode_index), {})[quant.value] = value
        return {
            "tps": tps,
            "power_w": {str(k): v for k, v in sorted(self.power_w.items())},
            "tool_exec_time_s": self.tool_exec_time_s,
            "idle_power_w": self.idle_power_w,
        }


@dataclass(frozen=True)
class SelectionSetup:
    """Everything the retrieval pipeline needs, bundled for the simulator."""

    catalog: ToolCatalog
    index: VectorIndex
    config: SelectionConfig
    entity_map: EntityMap | None = None


@dataclass(frozen=True)
class SimulationSettings:
    per_tool_prompt_tokens: int = 40  # prompt cost of enumerating one tool
    hysteresis_fraction: float = 0.10
    seed: int = 0

    def __post_init__(self) -> None:
        if self.per_tool_prompt_tokens < 0:
            raise ValueError("per_tool_prompt_tokens must be >= 0")


@dataclass(frozen=True)
class QueryRecord:
    index: int
    arrival: float
    start: float
    end: float
    latency_s: float
    mode_index: int
    quant: str
    tps: float
    power_w: float
    energy_kwh: float
    carbon_gco2: float
    ci: float
    tools: tuple[str, ...]
    prompt_tokens_effective: int
    switch_overhead_s: float
    decision: str


@dataclass(frozen=True)
class Segment:
    kind: str  # "busy" or "idle"
    start: float
    end: float
    power_w: float
    energy_kwh: float
    ci: float
    carbon_gco2: float
    mode_index: int | None
    query_index: int | None


@dataclass
class SimulationReport:
    policy: PolicyId
    seed: int
    queries: list[QueryRecord]
    segments: list[Segment]
    totals: dict[str, float]
    aggregates: dict[str, float]
    q8_utilization: float
    mode_occupancy: dict[str, float]
    mode_changes: int
    variant_switches: int
    config: dict

    def to_dict(self) -> dict:
        return {
            "policy": self.policy.value,
            "seed": self.seed,
            "config": self.config,
            "totals": self.totals,
            "aggregates": self.aggregates,
            "q8_utilization": self.q8_utilization,
            "mode_occupancy": self.mode_occupancy,
            "mode_changes": self.mode_changes,
            "variant_switches": self.variant_switches,
            "queries": [
                {
                    "index": q.index,
                    "arrival": q.arrival,
                    "start": q.start,
                    "end": q.end,
                    "latency_s": q.latency_s,
                    "mode_index": q.mode_index,
                    "quant": q.quant,
                    "tps": q.tps,
                    "power_w": q.power_w,
                    "energy_kwh": q.energy_kwh,
                    "carbon_gco2": q.carbon_gco2,
                    "ci": q.ci,
                    "tools": list(q.tools),
                    "prompt_tokens_effective": q.prompt_tokens_effective,
                    "switch_overhead_s": q.switch_overhead_s,
                    "decision": q.decision,
                }
                for q in self.queries
            ],
            "segments": [
                {
                    "kind": s.kind,
                    "start": s.start,
                    "end": s.end,
                    "power_w": s.power_w,
                    "energy_kwh": s.energy_kwh,
                    "ci": s.ci,
                    "carbon_gco2": s.carbon_gco2,
                    "mode_index": s.mode_index,
                    "query_index": s.query_index,
                }
                for s in self.segments
            ],
        }


def mode_schedule(
    trace: CiTrace, table: ModeTable, hysteresis_fraction: float = 0.10
) -> tuple[list[tuple[float, float, int, float]], list[tuple[float, int]], int]:
    """Replay the governor over a whole trace.

    Returns per-sample rows (timestamp, ci, mode after the decision,
    p_max), the timeline of (time, mode) change points starting at the
    trace start, and the count of accepted mode changes. Window rollovers
    re-plan without hysteresis at every horizon boundary.
    """
    state = plan_window(trace, trace.start, table, hysteresis_fraction)
    timeline: list[tuple[float, int]] = [(trace.start, state.mode_index)]
    changes = 0
    rows: list[tuple[float, float, int, float]] = [
        (trace.start, trace.samples[0].ci, state.mode_index, table.mode(state.mode_index).p_max_w)
    ]
    next_rollover = trace.start + trace.horizon_s
    for sample in trace.samples[1:]:
        while next_rollover <= sample.timestamp:
            try:
                replanned = refresh_window(state, trace, next_rollover, table)
            except ValueError:
                next_rollover = float("inf")
                break
            if replanned.mode_index != state.mode_index:
                changes += 1
                timeline.append((next_rollover, replanned.mode_index))
            state = replanned
            next_rollover += trace.horizon_s
        state, changed = governor_step(state, sample.ci, table)
        if changed:
            changes += 1
            timeline.append((sample.timestamp, state.mode_index))
        rows.append(
            (sample.timestamp, sample.ci, state.mode_index, table.mode(state.mode_index).p_max_w)
        )
    return rows, timeline, changes


class _ModeLookup:
    """Mode at any instant, per policy, including the calibration hold."""

    def __init__(
        self,
        policy: PolicyId,
        table: ModeTable,
        timeline: list[tuple[float, int]] | None,
    ) -> None:
        self.policy = policy
        self.table = table
        self.calibration_until: float | None = None
        if timeline is not None:
            self._times = [t for t, _ in timeline]
            self._modes = [m for _, m in timeline]

    def mode_at(self, t: float) -> int:
        if self.policy is PolicyId.DEFAULT:
            return 1
        if self.policy is PolicyId.STATIC_LOW:
            return len(self.table)
        if self.calibration_until is not None and t < self.calibration_until:
            return 1
        idx = bisect_right(self._times, t) - 1
        return self._modes[max(idx, 0)]


def _check_overlap(trace: CiTrace, workload: list[QueryEvent]) -> None:
    if not workload:
        raise ConfigError("empty workload")
    first = workload[0].arrival
    if first < trace.start:
        raise ConfigError(
            f"workload starts at t={first}, before the trace's first sample "
            f"at t={trace.start}"
        )
    if first > trace.end + trace.horizon_s:
        raise ConfigError(
            "workload and trace time ranges are disjoint: first arrival "
            f"t={first} is beyond the trace end plus one horizon"
        )


def simulate(
    policy: PolicyId,
    trace: CiTrace,
    workload: list[QueryEvent],
    device: DeviceModel,
    table: ModeTable,
    selection: SelectionSetup,
    variant_cfg: VariantState,
    settings: SimulationSettings = SimulationSettings(),
    _baseline: "SimulationReport | None" = None,
) -> SimulationReport:
    """Run one policy over a workload and normalize against the default policy.

    The default policy pins mode 1, serves the 8-bit variant, and pays a
    per-tool prompt surcharge for enumerating the entire catalog. Every
    other policy is normalized against a fresh default run on identical
    inputs; the default run normalizes against itself, so its normalized
    metrics are exactly 1.0.
    """
    policy = PolicyId(policy)
    device.validate(table)
    _check_overlap(trace, workload)
    if variant_cfg.active.quant is not Quant.Q8:
        raise ConfigError("runs must start on the 8-bit variant")

    run = _run_policy(policy, trace, workload, device, table, selection, variant_cfg, settings)
    if policy is PolicyId.DEFAULT:
        baseline = run if _baseline is None else _baseline
    elif _baseline is not None:
        baseline = _baseline
    else:
        baseline = _run_policy(
            PolicyId.DEFAULT, trace, workload, device, table, selection, variant_cfg, settings
        )
    run.aggregates.update(normalize(run.aggregates, baseline.aggregates))
    return run


def normalize(aggregates: dict[str, float], baseline: dict[str, float]) -> dict[str, float]:
    """Ratio of per-query means against a baseline run's means."""
    pairs = {
        "t_norm": "mean_latency_s",
        "p_norm": "mean_power_w",
        "tps_norm": "mean_tps",
        "cf_norm": "carbon_per_query_gco2",
    }
    out = {}
    for norm_key, mean_key in pairs.items():
        base = baseline[mean_key]
        if base == 0:
            raise ValueError(f"baseline {mean_key} is zero; cannot normalize")
        out[norm_key] = aggregates[mean_key] / base
    return out


def variant_utilization(report: SimulationReport, quant: Quant = Quant.Q8) -> float:
    """Share of queries generated under the given variant."""
    if not report.queries:
        raise ValueError("report has no queries")
    hits = sum(1 for q in report.queries if q.quant == quant.value)
    return hits / len(report.queries)


def _run_policy(
    policy: PolicyId,
    trace: CiTrace,
    workload: list[QueryEvent],
    device: DeviceModel,
    table: ModeTable,
    selection: SelectionSetup,
    variant_cfg: VariantState,
    settings: SimulationSettings,
) -> SimulationReport:
    governed = policy in _GOVERNED
    timeline: list[tuple[float, int]] | None = None
    mode_changes = 0
    if governed:
        _, timeline, mode_changes = mode_schedule(trace, table, settings.hysteresis_fraction)
    lookup = _ModeLookup(policy, table, timeline)

    switching = policy is PolicyId.CARBONCALL
    vstate = variant_cfg
    window = TpsWindow(variant_cfg.window_len_s)
    calibrated = False
    variant_switches = 0

    queries: list[QueryRecord] = []
    segments: list[Segment] = []
    prev_end: float | None = None
    ci_times = [s.timestamp for s in trace.samples]

    def add_idle(gap_start: float, gap_end: float) -> None:
        # Idle gaps split at CI sample boundaries so each piece carries
        # the intensity that actually prevailed.
        cursor = gap_start
        while cursor < gap_end:
            nxt = bisect_right(ci_times, cursor)
            boundary = ci_times[nxt] if nxt < len(ci_times) else gap_end
            piece_end = min(boundary, gap_end)
            ci = trace.ci_at(cursor)
            energy = energy_kwh(device.idle_power_w, piece_end - cursor)
            segments.append(
                Segment(
                    kind="idle",
                    start=cursor,
                    end=piece_end,
                    power_w=device.idle_power_w,
                    energy_kwh=energy,
                    ci=ci,
                    carbon_gco2=carbon_footprint(energy, ci),
                    mode_index=None,
                    query_index=None,
                )
            )
            cursor = piece_end

    for i, event in enumerate(workload):
        start = event.arrival if prev_end is None else max(event.arrival, prev_end)
        if prev_end is not None and start > prev_end:
            add_idle(prev_end, start)

        if switching and not calibrated and window.spans_full_window(start):
            vstate = calibrate_reference(vstate, window, start)
            calibrated = True
            lookup.calibration_until = start

        if switching and not calibrated:
            mode_index = 1  # reference measurement holds the top mode
        else:
            mode_index = lookup.mode_at(start)

        overhead_s = 0.0
        decision = Decision.HOLD
        if switching and calibrated:
            vstate, decision = variant_step(vstate, window, start, mode_index)
            if decision is not Decision.HOLD:
                overhead_s = vstate.switch_overhead_s
                variant_switches += 1
        quant = vstate.active.quant if switching else Quant.Q8

        if policy in _FULL_CATALOG:
            executed = list(event.ground_truth_tools)
            prompt_eff = event.prompt_tokens + settings.per_tool_prompt_tokens * len(
                selection.catalog
            )
        else:
            picked = select_tools(
                event.text,
                selection.catalog,
                selection.index,
                selection.config,
                selection.entity_map,
            )
            executed = [t.id for t in picked]
            prompt_eff = event.prompt_tokens

        tps = device.tps[(mode_index, quant)]
        service_s = (
            (prompt_eff + event.output_tokens) / tps
            + device.tool_exec_time_s * len(executed)
            + overhead_s
        )
        end = start + service_s
        power = device.power_w[mode_index]
        energy = energy_kwh(power, service_s)
        ci = trace.ci_at(event.arrival)
        carbon = carbon_footprint(energy, ci)

        queries.append(
            QueryRecord(
                index=i,
                arrival=event.arrival,
                start=start,
                end=end,
                latency_s=end - event.arrival,
                mode_index=mode_index,
                quant=quant.value,
                tps=tps,
                power_w=power,
                energy_kwh=energy,
                carbon_gco2=carbon,
                ci=ci,
                tools=tuple(executed),
                prompt_tokens_effective=prompt_eff,
                switch_overhead_s=overhead_s,
                decision=decision.value,
            )
        )
        segments.append(
            Segment(
                kind="busy",
                start=start,
                end=end,
                power_w=power,
                energy_kwh=energy,
                ci=ci,
                carbon_gco2=carbon,
                mode_index=mode_index,
                query_index=i,
            )
        )
        window.record(end, tps)
        prev_end = end

    totals = _totals(queries, segments)
    aggregates = _aggregates(queries)
    busy_per_mode: dict[str, float] = {}
    busy_total = 0.0
    for seg in segments:
        if seg.kind == "busy":
            dur = seg.end - seg.start
            busy_per_mode[str(seg.mode_index)] = busy_per_mode.get(str(seg.mode_index), 0.0) + dur
            busy_total += dur
    occupancy = {
        k: v / busy_total for k, v in sorted(busy_per_mode.items(), key=lambda kv: int(kv[0]))
    }
    q8_share = sum(1 for q in queries if q.quant == Quant.Q8.value) / len(queries)

    config = {
        "policy": policy.value,
        "seed": settings.seed,
        "per_tool_prompt_tokens": settings.per_tool_prompt_tokens,
        "hysteresis_fraction": settings.hysteresis_fraction,
        "horizon_s": trace.horizon_s,
        "selection": {
            "k": selection.config.k,
            "gap_delta": selection.config.gap_delta,
            "max_selected": selection.config.max_selected,
            "embed_dim": selection.index.dim,
            "catalog_size": len(selection.catalog),
        },
        "variant": {
            "family": variant_cfg.active.family,
            "threshold_fraction": variant_cfg.threshold_fraction,
            "window_len_s": variant_cfg.window_len_s,
            "min_dwell_s": variant_cfg.min_dwell_s,
            "switch_overhead_s": variant_cfg.switch_overhead_s,
            "upgrade_policy": variant_cfg.upgrade_policy.value,
        },
        "device": device.to_dict(),
        "idle_accounting": {
            "idle_power_w": device.idle_power_w,
            "in_totals": True,
            "in_query_metrics": False,
        },
    }

    return SimulationReport(
        policy=policy,
        seed=settings.seed,
        queries=queries,
        segments=segments,
        totals=totals,
        aggregates=aggregates,
        q8_utilization=q8_share,
        mode_occupancy=occupancy,
        mode_changes=mode_changes,
        variant_switches=variant_switches,
        config=config,
    )


def _totals(queries: list[QueryRecord], segments: list[Segment]) -> dict[str, float]:
    total_energy = 0.0
    total_carbon = 0.0
    idle_energy = 0.0
    idle_carbon = 0.0
    idle_time = 0.0
    busy_time = 0.0
    for seg in segments:
        total_energy += seg.energy_kwh
        total_carbon += seg.carbon_gco2
        if seg.kind == "idle":
            idle_energy += seg.energy_kwh
            idle_carbon += seg.carbon_gco2
            idle_time += seg.end - seg.start
        else:
            busy_time += seg.end - seg.start
    return {
        "energy_kwh": total_energy,
        "carbon_gco2": total_carbon,
        "busy_energy_kwh": total_energy - idle_energy,
        "idle_energy_kwh": idle_energy,
        "idle_carbon_gco2": idle_carbon,
        "query_carbon_gco2": sum(q.carbon_gco2 for q in queries),
        "busy_time_s": busy_time,
        "idle_time_s": idle_time,
        "switch_overhead_s": sum(q.switch_overhead_s for q in queries),
        "span_s": segments[-1].end - segments[0].start if segments else 0.0,
    }


def _aggregates(queries: list[QueryRecord]) -> dict[str, float]:
    n = len(queries)
    return {
        "queries": float(n),
        "mean_latency_s": sum(q.latency_s for q in queries) / n,
        "mean_power_w": sum(q.power_w for q in queries) / n,
        "mean_tps": sum(q.tps for q in queries) / n,
        "carbon_per_query_gco2": sum(q.carbon_gco2 for q in queries) / n,
    }


def report_to_json(report: SimulationReport) -> str:
    """Canonical JSON for a report: stable key order, no wall-clock fields."""
    return json.dumps(report.to_dict(), sort_keys=True, indent=2) + "\n"
