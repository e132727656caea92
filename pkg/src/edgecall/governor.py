"""CI-driven operating-mode governance.

A mode table orders discrete frequency/power-cap states from most to
least capable. The governor maps expected carbon intensity onto that
ladder: the lowest CI in the planning window gets the fastest mode, the
highest CI the most frugal one, with equal-width bins in between and a
hysteresis band to stop flapping on small CI wiggles.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

from .carbon import CiTrace
from .errors import ConfigError, DeviceError


@dataclass(frozen=True)
class OperatingMode:
    index: int  # 1 is the most capable mode
    f_cpu_hz: float
    f_gpu_hz: float
    f_mem_hz: float
    p_max_w: float

    def __post_init__(self) -> None:
        if self.index < 1:
            raise ValueError(f"mode index must be >= 1, got {self.index}")
        for name in ("f_cpu_hz", "f_gpu_hz", "f_mem_hz", "p_max_w"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


class ModeTable:
    """Operating modes indexed 1..M with strictly decreasing power caps."""

    def __init__(self, modes: list[OperatingMode]) -> None:
        modes = sorted(modes, key=lambda m: m.index)
        if len(modes) < 2:
            raise ValueError("a mode table needs at least two modes")
        for want, mode in enumerate(modes, start=1):
            if mode.index != want:
                raise ValueError(
                    f"mode indices must run 1..{len(modes)} contiguously, found {mode.index}"
                )
        for prev, cur in zip(modes, modes[1:]):
            if cur.p_max_w >= prev.p_max_w:
                raise ValueError(
                    f"p_max must strictly decrease with mode index, "
                    f"mode {cur.index} has {cur.p_max_w} W after {prev.p_max_w} W"
                )
        self.modes = tuple(modes)

    def __len__(self) -> int:
        return len(self.modes)

    def __iter__(self):
        return iter(self.modes)

    def mode(self, index: int) -> OperatingMode:
        if not 1 <= index <= len(self.modes):
            raise ValueError(f"no mode {index} in a {len(self.modes)}-mode table")
        return self.modes[index - 1]

    @classmethod
    def from_json(cls, path: str | Path) -> "ModeTable":
        path = Path(path)
        try:
            raw = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
        if not isinstance(raw, list):
            raise ConfigError(f"{path}: expected a JSON array of modes")
        modes = []
        for i, entry in enumerate(raw):
            try:
                modes.append(
                    OperatingMode(
                        index=int(entry["index"]),
                        f_cpu_hz=float(entry["f_cpu_hz"]),
                        f_gpu_hz=float(entry["f_gpu_hz"]),
                        f_mem_hz=float(entry["f_mem_hz"]),
                        p_max_w=float(entry["p_max_w"]),
                    )
                )
            except (KeyError, TypeError, ValueError) as exc:
                raise ConfigError(f"{path}: entry {i}: {exc}") from exc
        try:
            return cls(modes)
        except ValueError as exc:
            raise ConfigError(f"{path}: {exc}") from exc


# Jetson-class reference ladder: five steps from full tilt to power saver.
DEFAULT_MODE_TABLE = ModeTable(
    [
        OperatingMode(1, 2.2e9, 1.3e9, 3.1e9, 45.0),
        OperatingMode(2, 2.1e9, 1.2e9, 3.1e9, 42.0),
        OperatingMode(3, 1.8e9, 1.0e9, 3.1e9, 37.0),
        OperatingMode(4, 1.6e9, 918e6, 3.1e9, 33.0),
        OperatingMode(5, 1.2e9, 714e6, 3.1e9, 28.0),
    ]
)


@dataclass(frozen=True)
class GovernorState:
    """Immutable snapshot of the governor between decisions."""

    mode_index: int
    ci_at_last_change: float  # reference point for the hysteresis band
    ci_min: float
    ci_max: float
    hysteresis_fraction: float = 0.10

    def __post_init__(self) -> None:
        if self.ci_max < self.ci_min:
            raise ValueError(f"ci_max {self.ci_max} < ci_min {self.ci_min}")
        if not 0.0 <= self.hysteresis_fraction <= 1.0:
            raise ValueError(
                f"hysteresis fraction must be in [0, 1], got {self.hysteresis_fraction}"
            )
        if self.mode_index < 1:
            raise ValueError(f"mode index must be >= 1, got {self.mode_index}")


def mode_for_ci(ci: float, ci_min: float, ci_max: float, table: ModeTable) -> int:
    """Bin ci into one of M equal-width intervals over [ci_min, ci_max].

    Bins are half-open with the top endpoint closed, so ci == ci_max maps
    to mode M and interior boundaries belong to the higher-index bin. A
    degenerate range maps everything to mode 1.
    """
    if ci_max < ci_min:
        raise ValueError(f"ci_max {ci_max} < ci_min {ci_min}")
    if not ci_min <= ci <= ci_max:
        raise ValueError(f"ci {ci} outside [{ci_min}, {ci_max}]; clamp first")
    m = len(table)
    if ci_max == ci_min:
        return 1
    if ci == ci_max:
        return m
    j = int((ci - ci_min) * m // (ci_max - ci_min)) + 1
    return min(j, m)


def governor_step(
    state: GovernorState, ci_now: float, table: ModeTable
) -> tuple[GovernorState, bool]:
    """One governor decision against the current CI reading.

    Movement smaller than the hysteresis band (a fraction of the window's
    CI range, measured from the CI at the last accepted change) leaves the
    state untouched. Otherwise the mode is recomputed on the clamped CI;
    the hysteresis reference advances only when the mode actually moves.
    """
    if ci_now < 0:
        raise ValueError(f"carbon intensity must be >= 0, got {ci_now}")
    band = state.hysteresis_fraction * (state.ci_max - state.ci_min)
    if abs(ci_now - state.ci_at_last_change) < band:
        return state, False
    clamped = min(max(ci_now, state.ci_min), state.ci_max)
    new_mode = mode_for_ci(clamped, state.ci_min, state.ci_max, table)
    if new_mode == state.mode_index:
        return state, False
    return replace(state, mode_index=new_mode, ci_at_last_change=ci_now), True


def plan_window(
    trace: CiTrace,
    window_start: float,
    table: ModeTable,
    hysteresis_fraction: float = 0.10,
) -> GovernorState:
    """Fresh governor state for the window starting at window_start."""
    ci_min, ci_max = trace.ci_range(window_start)
    ci_now = trace.ci_at(window_start)
    clamped = min(max(ci_now, ci_min), ci_max)
    mode = mode_for_ci(clamped, ci_min, ci_max, table)
    return GovernorState(mode, ci_now, ci_min, ci_max, hysteresis_fraction)


def refresh_window(
    state: GovernorState, trace: CiTrace, window_start: float, table: ModeTable
) -> GovernorState:
    """Authoritative re-plan at a window rollover: new extremes, no hysteresis."""
    return plan_window(trace, window_start, table, state.hysteresis_fraction)


@dataclass(frozen=True)
class ModeAck:
    mode_index: int
    p_max_w: float
    changed: bool


class SimulatedDevice:
    """In-memory stand-in for platform frequency and power-cap control."""

    def __init__(self, table: ModeTable) -> None:
        self.table = table
        self.mode_index: int | None = None
        self.p_max_w: float | None = None

    def apply(self, mode: OperatingMode) -> ModeAck:
        if not 1 <= mode.index <= len(self.table) or self.table.mode(mode.index) != mode:
            raise DeviceError(f"mode {mode.index} is not in the device's table")
        changed = mode.index != self.mode_index
        self.mode_index = mode.index
        self.p_max_w = mode.p_max_w
        return ModeAck(mode.index, mode.p_max_w, changed)


class HardwareDevice:
    """Placeholder for a real platform backend; not available here."""

    def apply(self, mode: OperatingMode) -> ModeAck:
        raise NotImplementedError("hardware frequency control is not wired up")


def apply_mode(device, mode: OperatingMode) -> ModeAck:
    """Push an operating mode to a device backend and return its ack."""
    return device.apply(mode)
