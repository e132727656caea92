"""Command-line front end: simulate policies, preview schedules, pick tools.

Commands
--------
simulate      run the configured policies over a trace and workload
select-tools  run the retrieval pipeline on one query and show each stage
modes         print the governed mode schedule for a CI trace
report        merge summary CSVs from previous runs

Configs are TOML (JSON also accepted); command-line flags override file
values. Exit codes: 0 success, 1 runtime failure, 2 configuration or
usage error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from .carbon import CiTrace, load_ci_trace
from .errors import ConfigError
from .governor import DEFAULT_MODE_TABLE, ModeTable
from .simulator import (
    DeviceModel,
    PolicyId,
    SelectionSetup,
    SimulationSettings,
    mode_schedule,
    report_to_json,
    simulate,
)
from .toolselect import (
    EntityMap,
    HashedEmbedder,
    SelectionConfig,
    ToolCatalog,
    VectorIndex,
    adaptive_select,
    entity_augment,
    rerank,
    retrieve_topk,
    select_tools,
    split_sentences,
)
from .variants import Quant, UpgradePolicy, VariantId, VariantState
from .workload import QueryEvent, load_workload_jsonl

SUMMARY_COLUMNS = [
    "scenario",
    "policy",
    "seed",
    "queries",
    "mean_latency_s",
    "mean_power_w",
    "mean_tps",
    "carbon_per_query_gco2",
    "t_norm",
    "p_norm",
    "tps_norm",
    "cf_norm",
    "q8_utilization",
    "mode_changes",
    "variant_switches",
    "energy_kwh",
    "carbon_gco2",
]


def _load_config_file(path: Path) -> dict:
    if not path.is_file():
        raise ConfigError(f"{path}: file not found")
    data = path.read_bytes()
    if path.suffix.lower() == ".json":
        try:
            raw = json.loads(data.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    else:
        try:
            raw = tomllib.loads(data.decode("utf-8"))
        except (UnicodeDecodeError, tomllib.TOMLDecodeError) as exc:
            raise ConfigError(f"{path}: invalid TOML: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: config root must be a table")
    return raw


def _require_path(base: Path, section: dict, key: str, config_path: Path) -> Path:
    if key not in section:
        raise ConfigError(f"{config_path}: [paths] is missing {key!r}")
    resolved = base / str(section[key])
    if not resolved.is_file():
        raise ConfigError(f"{resolved}: file not found")
    return resolved


@dataclass
class RunConfig:
    """Resolved inputs for a simulation run."""

    scenario: str
    seed: int
    policies: list[PolicyId]
    trace: CiTrace
    workload: list[QueryEvent]
    device: DeviceModel
    table: ModeTable
    selection: SelectionSetup
    variant: VariantState
    settings: SimulationSettings
    out_dir: Path = field(default_factory=lambda: Path("out"))

    @classmethod
    def from_file(
        cls,
        config_path: str | Path,
        *,
        seed: int | None = None,
        policies: list[str] | None = None,
        out_dir: str | None = None,
    ) -> "RunConfig":
        config_path = Path(config_path)
        raw = _load_config_file(config_path)
        base = config_path.parent

        scenario_cfg = raw.get("scenario", {})
        paths_cfg = raw.get("paths", {})
        selection_cfg = raw.get("selection", {})
        variant_cfg = raw.get("variant", {})
        sim_cfg = raw.get("simulation", {})

        run_seed = seed if seed is not None else int(scenario_cfg.get("seed", 0))
        horizon_s = float(sim_cfg.get("horizon_s", 86400.0))

        trace_path = _require_path(base, paths_cfg, "ci_trace", config_path)
        workload_path = _require_path(base, paths_cfg, "workload", config_path)
        catalog_path = _require_path(base, paths_cfg, "catalog", config_path)
        device_path = _require_path(base, paths_cfg, "device_model", config_path)

        trace = load_ci_trace(trace_path, horizon_s=horizon_s)
        workload = load_workload_jsonl(workload_path)
        catalog = ToolCatalog.from_json(catalog_path)
        device = DeviceModel.from_json(device_path)

        if "mode_table" in paths_cfg:
            table_path = _require_path(base, paths_cfg, "mode_table", config_path)
            table = ModeTable.from_json(table_path)
        else:
            table = DEFAULT_MODE_TABLE

        if "entity_map" in paths_cfg:
            entity_path = _require_path(base, paths_cfg, "entity_map", config_path)
            entity_map = EntityMap.from_json(entity_path, catalog)
        else:
            entity_map = EntityMap.from_catalog(catalog)

        try:
            sel_config = SelectionConfig(
                k=int(selection_cfg.get("k", 8)),
                gap_delta=float(selection_cfg.get("gap_delta", 0.10)),
                max_selected=(
                    int(selection_cfg["max_selected"])
                    if "max_selected" in selection_cfg
                    else None
                ),
            )
            embedder = HashedEmbedder(
                dim=int(selection_cfg.get("embed_dim", 64)),
                seed=int(selection_cfg.get("embed_seed", 7)),
            )
            variant = VariantState(
                active=VariantId(str(variant_cfg.get("family", "model")), Quant.Q8),
                threshold_fraction=float(variant_cfg.get("threshold_fraction", 0.80)),
                window_len_s=float(variant_cfg.get("window_len_s", 600.0)),
                min_dwell_s=float(variant_cfg.get("min_dwell_s", 600.0)),
                switch_overhead_s=float(variant_cfg.get("switch_overhead_s", 10.0)),
                upgrade_policy=UpgradePolicy(
                    str(variant_cfg.get("upgrade_policy", "mode_probe"))
                ),
            )
            settings = SimulationSettings(
                per_tool_prompt_tokens=int(sim_cfg.get("per_tool_prompt_tokens", 40)),
                hysteresis_fraction=float(sim_cfg.get("hysteresis_fraction", 0.10)),
                seed=run_seed,
            )
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{config_path}: {exc}") from exc

        policy_names = policies if policies is not None else sim_cfg.get(
            "policies", ["carboncall", "default"]
        )
        run_policies = [_parse_policy(name) for name in policy_names]
        if not run_policies:
            raise ConfigError(f"{config_path}: no policies to run")

        resolved_out = Path(out_dir) if out_dir else base / str(
            sim_cfg.get("out_dir", "out")
        )
        return cls(
            scenario=str(scenario_cfg.get("name", config_path.stem)),
            seed=run_seed,
            policies=run_policies,
            trace=trace,
            workload=workload,
            device=device,
            table=table,
            selection=SelectionSetup(
                catalog=catalog,
                index=VectorIndex.build(catalog, embedder),
                config=sel_config,
                entity_map=entity_map,
            ),
            variant=variant,
            settings=settings,
            out_dir=resolved_out,
        )


def _parse_policy(name: str) -> PolicyId:
    try:
        return PolicyId(str(name).strip().lower())
    except ValueError:
        known = ", ".join(p.value for p in PolicyId)
        raise ConfigError(f"unknown policy {name!r}; expected one of: {known}") from None


def _summary_row(scenario: str, report) -> dict:
    agg = report.aggregates
    return {
        "scenario": scenario,
        "policy": report.policy.value,
        "seed": report.seed,
        "queries": int(agg["queries"]),
        "mean_latency_s": f"{agg['mean_latency_s']:.6f}",
        "mean_power_w": f"{agg['mean_power_w']:.6f}",
        "mean_tps": f"{agg['mean_tps']:.6f}",
        "carbon_per_query_gco2": f"{agg['carbon_per_query_gco2']:.9f}",
        "t_norm": f"{agg['t_norm']:.6f}",
        "p_norm": f"{agg['p_norm']:.6f}",
        "tps_norm": f"{agg['tps_norm']:.6f}",
        "cf_norm": f"{agg['cf_norm']:.6f}",
        "q8_utilization": f"{report.q8_utilization:.6f}",
        "mode_changes": report.mode_changes,
        "variant_switches": report.variant_switches,
        "energy_kwh": f"{report.totals['energy_kwh']:.9f}",
        "carbon_gco2": f"{report.totals['carbon_gco2']:.9f}",
    }


def cmd_simulate(args: argparse.Namespace) -> int:
    policies = args.policies.split(",") if args.policies else None
    config = RunConfig.from_file(
        args.config, seed=args.seed, policies=policies, out_dir=args.out
    )
    config.out_dir.mkdir(parents=True, exist_ok=True)

    # One Default run normalizes every policy, including itself.
    baseline = simulate(
        PolicyId.DEFAULT,
        config.trace,
        config.workload,
        config.device,
        config.table,
        config.selection,
        config.variant,
        config.settings,
    )
    rows = []
    for policy in config.policies:
        if policy is PolicyId.DEFAULT:
            report = baseline
        else:
            report = simulate(
                policy,
                config.trace,
                config.workload,
                config.device,
                config.table,
                config.selection,
                config.variant,
                config.settings,
                _baseline=baseline,
            )
        report_path = config.out_dir / f"report_{policy.value}.json"
        report_path.write_text(report_to_json(report), encoding="utf-8")
        rows.append(_summary_row(config.scenario, report))
        if args.verbose:
            print(f"wrote {report_path}", file=sys.stderr)

    summary_path = config.out_dir / "summary.csv"
    with summary_path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=SUMMARY_COLUMNS)
        writer.writeheader()
        writer.writerows(rows)

    if args.json:
        print(json.dumps(rows, indent=2, sort_keys=True))
    else:
        print(_format_table(rows))
        print(f"reports in {config.out_dir}")
    return 0


def _format_table(rows: list[dict]) -> str:
    cols = ["policy", "t_norm", "p_norm", "tps_norm", "cf_norm", "q8_utilization"]
    widths = {c: max(len(c), max(len(str(r[c])) for r in rows)) for c in cols}
    header = "  ".join(c.ljust(widths[c]) for c in cols)
    lines = [header, "  ".join("-" * widths[c] for c in cols)]
    for row in rows:
        lines.append("  ".join(str(row[c]).ljust(widths[c]) for c in cols))
    return "\n".join(lines)


def _selection_setup_for_args(args: argparse.Namespace) -> tuple[SelectionSetup, SelectionConfig]:
    if args.catalog:
        catalog = ToolCatalog.from_json(Path(args.catalog))
        entity_map = (
            EntityMap.from_json(Path(args.entity_map), catalog)
            if args.entity_map
            else EntityMap.from_catalog(catalog)
        )
        sel_config = SelectionConfig(
            k=args.k if args.k is not None else 8,
            gap_delta=args.gap_delta if args.gap_delta is not None else 0.10,
        )
        embedder = HashedEmbedder(dim=64, seed=7)
        setup = SelectionSetup(
            catalog=catalog,
            index=VectorIndex.build(catalog, embedder),
            config=sel_config,
            entity_map=entity_map,
        )
        return setup, sel_config
    if not args.config:
        raise ConfigError("select-tools needs --catalog or --config")
    config = RunConfig.from_file(args.config)
    sel_config = config.selection.config
    if args.k is not None or args.gap_delta is not None:
        sel_config = SelectionConfig(
            k=args.k if args.k is not None else sel_config.k,
            gap_delta=(
                args.gap_delta if args.gap_delta is not None else sel_config.gap_delta
            ),
            max_selected=sel_config.max_selected,
        )
    setup = SelectionSetup(
        catalog=config.selection.catalog,
        index=config.selection.index,
        config=sel_config,
        entity_map=config.selection.entity_map,
    )
    return setup, sel_config


def cmd_select_tools(args: argparse.Namespace) -> int:
    if not args.query or not args.query.strip():
        raise ConfigError("empty query")
    setup, sel_config = _selection_setup_for_args(args)

    split = split_sentences(args.query)
    candidates = retrieve_topk(setup.index, split, sel_config.k)
    reranked = rerank(args.query, candidates, setup.catalog)
    selected = adaptive_select(reranked, sel_config)
    final = selected
    if setup.entity_map is not None:
        final = entity_augment(args.query, setup.entity_map, selected, setup.catalog)
    selected_ids = {s.tool_id for s in selected}
    entity_added = [s for s in final if s.tool_id not in selected_ids]

    if args.json:
        payload = {
            "query": args.query,
            "sentences": list(split.sentences),
            "candidates": [{"tool_id": s.tool_id, "score": s.score} for s in candidates],
            "reranked": [{"tool_id": s.tool_id, "score": s.score} for s in reranked],
            "selected": [{"tool_id": s.tool_id, "score": s.score} for s in final],
            "entity_added": [s.tool_id for s in entity_added],
        }
        print(json.dumps(payload, indent=2, sort_keys=True))
        return 0

    print(f"query: {args.query}")
    print(f"sentences ({len(split.sentences)}):")
    for i, sentence in enumerate(split.sentences, 1):
        print(f"  {i}. {sentence}")
    print(f"top-{sel_config.k} by embedding:")
    for s in candidates:
        print(f"  {s.score:+.4f} {s.tool_id}")
    print("after re-ranking:")
    for s in reranked:
        print(f"  {s.score:+.4f} {s.tool_id}")
    print(f"selected (gap_delta={sel_config.gap_delta:g}):")
    for s in final:
        marker = "  (entity match)" if s.tool_id in {e.tool_id for e in entity_added} else ""
        print(f"  {s.score:+.4f} {s.tool_id}{marker}")
    return 0


def cmd_modes(args: argparse.Namespace) -> int:
    if args.trace:
        trace_path = Path(args.trace)
        if not trace_path.is_file():
            raise ConfigError(f"{trace_path}: file not found")
        horizon = args.horizon if args.horizon is not None else 86400.0
        trace = load_ci_trace(trace_path, horizon_s=horizon)
        table = (
            ModeTable.from_json(Path(args.mode_table))
            if args.mode_table
            else DEFAULT_MODE_TABLE
        )
        hysteresis = 0.10
    elif args.config:
        config = RunConfig.from_file(args.config)
        trace = config.trace
        table = config.table
        hysteresis = config.settings.hysteresis_fraction
    else:
        raise ConfigError("modes needs --trace or --config")

    rows, _, changes = mode_schedule(trace, table, hysteresis)
    if args.json:
        payload = {
            "changes": changes,
            "rows": [
                {"timestamp": t, "ci": ci, "mode": mode, "p_max_w": p_max}
                for t, ci, mode, p_max in rows
            ],
        }
        print(json.dumps(payload, indent=2, sort_keys=True))
        return 0

    out = io.StringIO()
    writer = csv.writer(out)
    writer.writerow(["timestamp", "ci_gco2_per_kwh", "mode", "p_max_w"])
    for t, ci, mode, p_max in rows:
        writer.writerow([f"{t:.10g}", f"{ci:.10g}", mode, f"{p_max:.10g}"])
    text = out.getvalue()
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
        print(f"wrote {args.out} ({changes} mode changes)")
    else:
        print(text, end="")
        print(f"changes: {changes}")
    return 0


def cmd_report(args: argparse.Namespace) -> int:
    rows: list[dict] = []
    header: list[str] | None = None
    for path_str in args.inputs:
        path = Path(path_str)
        if not path.is_file():
            raise ConfigError(f"{path}: file not found")
        with path.open(encoding="utf-8", newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None:
                raise ConfigError(f"{path}: empty CSV")
            if header is None:
                header = list(reader.fieldnames)
            elif list(reader.fieldnames) != header:
                raise ConfigError(f"{path}: column mismatch with {args.inputs[0]}")
            rows.extend(reader)
    assert header is not None

    seen = set()
    merged = []
    for row in rows:
        key = tuple(row.get(c, "") for c in header)
        if key not in seen:
            seen.add(key)
            merged.append(row)
    merged.sort(key=lambda r: (r.get("scenario", ""), r.get("policy", ""), r.get("seed", "")))

    out = io.StringIO()
    writer = csv.DictWriter(out, fieldnames=header)
    writer.writeheader()
    writer.writerows(merged)
    text = out.getvalue()
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
        print(f"wrote {args.out} ({len(merged)} rows)")
    else:
        print(text, end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="edgecall",
        description="Carbon-aware function-calling runtime simulator.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run policies over a trace and workload")
    sim.add_argument("--config", required=True, help="scenario config (TOML or JSON)")
    sim.add_argument("--policies", help="comma-separated policy list")
    sim.add_argument("--seed", type=int, help="override the config seed")
    sim.add_argument("--out", help="output directory")
    sim.add_argument("--json", action="store_true", help="print summary rows as JSON")
    sim.add_argument("--verbose", action="store_true")
    sim.set_defaults(func=cmd_simulate)

    sel = sub.add_parser("select-tools", help="run tool selection on one query")
    sel.add_argument("--query", required=True)
    sel.add_argument("--config", help="scenario config supplying catalog paths")
    sel.add_argument("--catalog", help="catalog JSON (overrides --config)")
    sel.add_argument("--entity-map", help="entity map JSON")
    sel.add_argument("--k", type=int)
    sel.add_argument("--gap-delta", type=float)
    sel.add_argument("--json", action="store_true")
    sel.set_defaults(func=cmd_select_tools)

    modes = sub.add_parser("modes", help="print the governed mode schedule")
    modes.add_argument("--config", help="scenario config supplying trace and table")
    modes.add_argument("--trace", help="CI trace CSV (overrides --config)")
    modes.add_argument("--mode-table", help="mode table JSON")
    modes.add_argument("--horizon", type=float, help="planning window seconds")
    modes.add_argument("--out", help="write the schedule CSV here")
    modes.add_argument("--json", action="store_true")
    modes.set_defaults(func=cmd_modes)

    rep = sub.add_parser("report", help="merge summary CSVs")
    rep.add_argument("--inputs", nargs="+", required=True)
    rep.add_argument("--out", help="write the merged CSV here")
    rep.set_defaults(func=cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failure, not a usage problem
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
