"""Synthetic query workloads and their JSONL on-disk form.

Queries arrive as a Poisson process and carry text stitched from the
catalog's own tool descriptions, so retrieval has a real signal to work
with and every query knows which tools it actually needs.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass
from pathlib import Path

from .errors import TraceParseError
from .toolselect import ToolCatalog, tokenize

_LEADS = ("please", "can you", "i need to", "help me", "quickly")


@dataclass(frozen=True)
class QueryEvent:
    arrival: float  # seconds, same axis as the CI trace
    prompt_tokens: int
    output_tokens: int
    ground_truth_tools: tuple[str, ...]
    text: str

    def __post_init__(self) -> None:
        if self.arrival < 0:
            raise ValueError(f"arrival must be >= 0, got {self.arrival}")
        if self.prompt_tokens <= 0 or self.output_tokens <= 0:
            raise ValueError("token counts must be positive")
        if not self.text.strip():
            raise ValueError("query text must be non-empty")


@dataclass(frozen=True)
class WorkloadSpec:
    n_queries: int
    mean_interarrival_s: float
    prompt_tokens_range: tuple[int, int] = (40, 160)
    output_tokens_range: tuple[int, int] = (30, 150)
    two_tool_fraction: float = 0.2  # chance a query needs a second tool
    entity_fraction: float = 0.4  # chance a sentence names an entity keyword
    start_time: float = 0.0

    def __post_init__(self) -> None:
        if self.n_queries < 1:
            raise ValueError(f"need at least one query, got {self.n_queries}")
        if self.mean_interarrival_s <= 0:
            raise ValueError(
                f"mean interarrival must be positive, got {self.mean_interarrival_s}"
            )
        for name in ("prompt_tokens_range", "output_tokens_range"):
            lo, hi = getattr(self, name)
            if lo < 1 or hi < lo:
                raise ValueError(f"{name} must satisfy 1 <= lo <= hi, got ({lo}, {hi})")
        if not 0.0 <= self.two_tool_fraction <= 1.0:
            raise ValueError("two_tool_fraction must be in [0, 1]")
        if not 0.0 <= self.entity_fraction <= 1.0:
            raise ValueError("entity_fraction must be in [0, 1]")


def _sentence_for(rng: random.Random, tool, entity_fraction: float) -> str:
    words = tokenize(tool.description)
    drop = rng.randint(0, min(2, max(0, len(words) - 2)))
    kept = words[: len(words) - drop] if drop else list(words)
    sentence = f"{rng.choice(_LEADS)} {' '.join(kept)}"
    if tool.entity_keywords and rng.random() < entity_fraction:
        sentence += f" for {rng.choice(tool.entity_keywords)}"
    return sentence + "."


def generate_workload(
    spec: WorkloadSpec, catalog: ToolCatalog, seed: int
) -> list[QueryEvent]:
    """Deterministic Poisson workload over the catalog's tools."""
    if len(catalog) == 0:
        raise ValueError("cannot generate a workload from an empty catalog")
    rng = random.Random(seed)
    tools = sorted(catalog, key=lambda t: t.id)
    events: list[QueryEvent] = []
    t = spec.start_time
    for _ in range(spec.n_queries):
        t += rng.expovariate(1.0 / spec.mean_interarrival_s)
        picked = [rng.choice(tools)]
        if len(tools) > 1 and rng.random() < spec.two_tool_fraction:
            second = rng.choice(tools)
            while second.id == picked[0].id:
                second = rng.choice(tools)
            picked.append(second)
        text = " ".join(_sentence_for(rng, p, spec.entity_fraction) for p in picked)
        events.append(
            QueryEvent(
                arrival=t,
                prompt_tokens=rng.randint(*spec.prompt_tokens_range),
                output_tokens=rng.randint(*spec.output_tokens_range),
                ground_truth_tools=tuple(p.id for p in picked),
                text=text,
            )
        )
    return events


def save_workload_jsonl(events: list[QueryEvent], path: str | Path) -> None:
    path = Path(path)
    with open(path, "w", encoding="utf-8") as fh:
        for ev in events:
            fh.write(
                json.dumps(
                    {
                        "arrival": ev.arrival,
                        "prompt_tokens": ev.prompt_tokens,
                        "output_tokens": ev.output_tokens,
                        "ground_truth_tools": list(ev.ground_truth_tools),
                        "text": ev.text,
                    },
                    sort_keys=True,
                )
                + "\n"
            )


def load_workload_jsonl(path: str | Path) -> list[QueryEvent]:
    """Read one QueryEvent per line, checking order and field sanity."""
    path = Path(path)
    events: list[QueryEvent] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.strip()
            if not text:
                continue
            try:
                raw = json.loads(text)
            except json.JSONDecodeError as exc:
                raise TraceParseError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
            try:
                event = QueryEvent(
                    arrival=float(raw["arrival"]),
                    prompt_tokens=int(raw["prompt_tokens"]),
                    output_tokens=int(raw["output_tokens"]),
                    ground_truth_tools=tuple(str(t) for t in raw["ground_truth_tools"]),
                    text=str(raw["text"]),
                )
            except (KeyError, TypeError, ValueError) as exc:
                raise TraceParseError(f"{path}:{lineno}: {exc}") from exc
            if events and event.arrival < events[-1].arrival:
                raise TraceParseError(
                    f"{path}:{lineno}: arrivals must be non-decreasing"
                )
            events.append(event)
    if not events:
        raise TraceParseError(f"{path}: empty workload")
    return events
