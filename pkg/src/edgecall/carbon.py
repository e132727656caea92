"""Carbon-intensity traces and operational-carbon arithmetic.

Energy is tracked in kWh and grid carbon intensity in gCO2/kWh, so
footprints come out in grams of CO2. Traces live on a trace-local time
axis in seconds; when a file carries wall-clock dates the first sample
defines t=0.
"""

from __future__ import annotations

from bisect import bisect_right
from dataclasses import dataclass
from datetime import datetime
from pathlib import Path

from .errors import TraceParseError

JOULES_PER_KWH = 3.6e6

# Relative slack for the stored-vs-recomputed energy consistency check.
_ENERGY_RTOL = 1e-9


def carbon_footprint(energy_kwh: float, ci_gco2_per_kwh: float) -> float:
    """Operational carbon in grams: energy drawn times grid intensity."""
    if energy_kwh < 0:
        raise ValueError(f"energy must be >= 0 kWh, got {energy_kwh}")
    if ci_gco2_per_kwh < 0:
        raise ValueError(f"carbon intensity must be >= 0 gCO2/kWh, got {ci_gco2_per_kwh}")
    return energy_kwh * ci_gco2_per_kwh


def energy_kwh(power_w: float, duration_s: float) -> float:
    """Energy in kWh for a constant draw of power_w over duration_s."""
    if power_w < 0:
        raise ValueError(f"power must be >= 0 W, got {power_w}")
    if duration_s < 0:
        raise ValueError(f"duration must be >= 0 s, got {duration_s}")
    return power_w * duration_s / JOULES_PER_KWH


@dataclass(frozen=True)
class CiSample:
    """One forecast point: grid carbon intensity at a moment in time."""

    timestamp: float  # seconds, trace-local axis
    ci: float  # gCO2 per kWh

    def __post_init__(self) -> None:
        if self.ci < 0:
            raise ValueError(f"carbon intensity must be >= 0, got {self.ci}")


@dataclass(frozen=True)
class EnergyRecord:
    """Energy drawn over one interval at a constant mean power."""

    interval_start: float  # seconds
    interval_end: float  # seconds
    mean_power_w: float
    energy_kwh: float

    def __post_init__(self) -> None:
        if self.interval_end < self.interval_start:
            raise ValueError("interval must not end before it starts")
        if self.mean_power_w < 0:
            raise ValueError(f"mean power must be >= 0 W, got {self.mean_power_w}")
        expected = energy_kwh(self.mean_power_w, self.interval_end - self.interval_start)
        if abs(self.energy_kwh - expected) > _ENERGY_RTOL * max(abs(expected), 1e-300):
            raise ValueError(
                f"energy {self.energy_kwh} kWh inconsistent with "
                f"{self.mean_power_w} W over the interval (expected {expected})"
            )

    @classmethod
    def from_power(cls, power_w: float, start: float, end: float) -> "EnergyRecord":
        return cls(start, end, power_w, energy_kwh(power_w, end - start))

    @property
    def duration_s(self) -> float:
        return self.interval_end - self.interval_start


@dataclass(frozen=True)
class CiTrace:
    """Sorted carbon-intensity forecast plus the planning-window length."""

    samples: tuple[CiSample, ...]
    horizon_s: float = 86400.0

    def __post_init__(self) -> None:
        if not self.samples:
            raise ValueError("empty trace")
        if self.horizon_s <= 0:
            raise ValueError(f"horizon must be positive, got {self.horizon_s}")
        for prev, cur in zip(self.samples, self.samples[1:]):
            if cur.timestamp <= prev.timestamp:
                raise ValueError(
                    "timestamps must be strictly increasing, "
                    f"got {prev.timestamp} then {cur.timestamp}"
                )
        object.__setattr__(self, "_timestamps", tuple(s.timestamp for s in self.samples))

    @property
    def start(self) -> float:
        return self.samples[0].timestamp

    @property
    def end(self) -> float:
        return self.samples[-1].timestamp

    def ci_at(self, t: float) -> float:
        """Carbon intensity at time t, holding each sample until the next.

        A boundary timestamp belongs to the later sample; the final value
        holds for all t past the end of the trace.
        """
        if t < self.start:
            raise ValueError(f"t={t} precedes the first sample at {self.start}")
        idx = bisect_right(self._timestamps, t) - 1
        return self.samples[idx].ci

    def ci_range(self, window_start: float) -> tuple[float, float]:
        """(min, max) intensity over samples within one horizon of window_start."""
        window_end = window_start + self.horizon_s
        lo = None
        hi = None
        for s in self.samples:
            if window_start <= s.timestamp <= window_end:
                if lo is None or s.ci < lo:
                    lo = s.ci
                if hi is None or s.ci > hi:
                    hi = s.ci
        if lo is None or hi is None:
            raise ValueError(
                f"no samples in window [{window_start}, {window_end}]"
            )
        return lo, hi


_HEADER = ("timestamp", "ci_gco2_per_kwh")


def _parse_timestamp(raw: str) -> tuple[float, bool]:
    """Return (value, is_wallclock); wall-clock values are unix seconds."""
    try:
        return float(raw), False
    except ValueError:
        pass
    try:
        dt = datetime.fromisoformat(raw.replace("Z", "+00:00"))
    except ValueError:
        raise ValueError(f"unrecognized timestamp {raw!r}")
    return dt.timestamp(), True


def load_ci_trace(path: str | Path, horizon_s: float = 86400.0) -> CiTrace:
    """Load a CI trace from CSV.

    Expected layout: a `timestamp,ci_gco2_per_kwh` header, then one row
    per sample. Timestamps are either numeric seconds (kept verbatim) or
    ISO-8601 dates (rebased so the first sample sits at t=0). Lines that
    are blank or start with `#` are skipped.
    """
    path = Path(path)
    rows: list[tuple[float, float, bool]] = []  # (timestamp, ci, is_wallclock)
    header_seen = False
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.strip()
            if not text or text.startswith("#"):
                continue
            if not header_seen:
                fields = [f.strip().lower() for f in text.split(",")]
                if tuple(fields) != _HEADER:
                    raise TraceParseError(
                        f"{path}:{lineno}: expected header "
                        f"'{','.join(_HEADER)}', got {text!r}"
                    )
                header_seen = True
                continue
            parts = [f.strip() for f in text.split(",")]
            if len(parts) != 2:
                raise TraceParseError(
                    f"{path}:{lineno}: expected 2 fields, got {len(parts)}"
                )
            try:
                ts, wallclock = _parse_timestamp(parts[0])
            except ValueError as exc:
                raise TraceParseError(f"{path}:{lineno}: {exc}") from exc
            try:
                ci = float(parts[1])
            except ValueError:
                raise TraceParseError(
                    f"{path}:{lineno}: non-numeric carbon intensity {parts[1]!r}"
                ) from None
            if ci < 0:
                raise TraceParseError(
                    f"{path}:{lineno}: carbon intensity must be >= 0, got {ci}"
                )
            if rows and wallclock != rows[0][2]:
                raise TraceParseError(
                    f"{path}:{lineno}: mixed numeric and date timestamps"
                )
            if rows and ts <= rows[-1][0]:
                raise TraceParseError(
                    f"{path}:{lineno}: timestamps must be strictly increasing"
                )
            rows.append((ts, ci, wallclock))
    if not rows:
        raise TraceParseError(f"{path}: empty trace")
    base = rows[0][0] if rows[0][2] else 0.0
    samples = tuple(CiSample(ts - base, ci) for ts, ci, _ in rows)
    return CiTrace(samples, horizon_s)
