"""Quantized-variant switching driven by a throughput moving average.

The serving stack starts on the heavier 8-bit variant and drops to the
4-bit one when the trailing token throughput falls below a fraction of
the calibrated full-power reference. A minimum dwell time keeps the
switch from oscillating, and an optional probe re-tries the 8-bit
variant once the governor returns to a more powerful mode.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, replace
from enum import Enum


class Quant(str, Enum):
    Q8 = "q8"
    Q4KM = "q4_k_m"


class UpgradePolicy(str, Enum):
    NEVER = "never"
    MODE_PROBE = "mode_probe"


class Decision(str, Enum):
    HOLD = "hold"
    DOWNGRADE = "downgrade"
    UPGRADE_PROBE = "upgrade_probe"


@dataclass(frozen=True)
class VariantId:
    family: str
    quant: Quant

    def __post_init__(self) -> None:
        if not self.family:
            raise ValueError("variant family must be non-empty")

    def with_quant(self, quant: Quant) -> "VariantId":
        return replace(self, quant=quant)


@dataclass(frozen=True)
class TpsSample:
    timestamp: float
    tps: float


class TpsWindow:
    """Trailing throughput samples covering the last window_len_s seconds.

    Recording prunes samples strictly older than t - window_len_s, so a
    sample sitting exactly one window back still counts.
    """

    def __init__(self, window_len_s: float = 600.0) -> None:
        if window_len_s <= 0:
            raise ValueError(f"window length must be positive, got {window_len_s}")
        self.window_len_s = window_len_s
        self.first_sample_time: float | None = None
        self._samples: deque[TpsSample] = deque()

    def __len__(self) -> int:
        return len(self._samples)

    @property
    def samples(self) -> tuple[TpsSample, ...]:
        return tuple(self._samples)

    def record(self, t: float, tps: float) -> None:
        if tps <= 0:
            raise ValueError(f"tps must be positive, got {tps}")
        if self._samples and t < self._samples[-1].timestamp:
            raise ValueError(
                f"samples must arrive in time order, got t={t} after "
                f"{self._samples[-1].timestamp}"
            )
        if self.first_sample_time is None:
            self.first_sample_time = t
        self._samples.append(TpsSample(t, tps))
        cutoff = t - self.window_len_s
        while self._samples and self._samples[0].timestamp < cutoff:
            self._samples.popleft()

    def moving_average(self) -> float | None:
        """Arithmetic mean of the retained samples, or None when empty."""
        if not self._samples:
            return None
        return sum(s.tps for s in self._samples) / len(self._samples)

    def spans_full_window(self, t: float) -> bool:
        """True once a full window has elapsed since the first sample."""
        if self.first_sample_time is None:
            return False
        return t - self.first_sample_time >= self.window_len_s


@dataclass(frozen=True)
class VariantState:
    """Immutable snapshot of the variant switcher between decisions."""

    active: VariantId
    tps_ref: float | None = None
    threshold_fraction: float = 0.80
    last_switch_time: float | None = None
    min_dwell_s: float = 600.0
    switch_overhead_s: float = 10.0
    window_len_s: float = 600.0
    upgrade_policy: UpgradePolicy = UpgradePolicy.MODE_PROBE
    mode_at_downgrade: int | None = None
    probe_started_at: float | None = None

    def __post_init__(self) -> None:
        if not 0.0 < self.threshold_fraction < 1.0:
            raise ValueError(
                f"threshold fraction must be in (0, 1), got {self.threshold_fraction}"
            )
        if self.min_dwell_s < self.window_len_s:
            raise ValueError(
                f"min dwell {self.min_dwell_s}s must cover at least one "
                f"window ({self.window_len_s}s)"
            )
        if self.switch_overhead_s < 0:
            raise ValueError(
                f"switch overhead must be >= 0, got {self.switch_overhead_s}"
            )


def calibrate_reference(state: VariantState, window: TpsWindow, t: float) -> VariantState:
    """Freeze the reference throughput from the first full sample window.

    The reference is measured once, on the initial 8-bit variant at full
    power, and never moves afterwards; a second call is a no-op.
    """
    if state.tps_ref is not None:
        return state
    if not window.spans_full_window(t):
        raise ValueError("not ready: a full window of samples has not elapsed yet")
    avg = window.moving_average()
    if avg is None:
        raise ValueError("not ready: no samples in the window")
    return replace(state, tps_ref=avg)


def variant_step(
    state: VariantState, window: TpsWindow, t: float, mode_index: int
) -> tuple[VariantState, Decision]:
    """One switching decision at time t under the given governor mode.

    Downgrades fire when the trailing average falls below the threshold
    fraction of the reference, upgrades only as probes after the governor
    moves to a more powerful (lower-index) mode than the one the
    downgrade happened in. Every switch, probe reverts included, is
    separated from the previous one by at least min_dwell_s.
    """
    if state.tps_ref is None:
        raise ValueError("reference throughput is not calibrated yet")
    avg = window.moving_average()
    threshold = state.threshold_fraction * state.tps_ref
    dwell_ok = (
        state.last_switch_time is None or t - state.last_switch_time >= state.min_dwell_s
    )

    if state.probe_started_at is not None:
        # A probe is in flight on Q8; judge it only after a full dwell of
        # evidence, then either keep Q8 or revert.
        if t - state.probe_started_at < state.min_dwell_s or avg is None:
            return state, Decision.HOLD
        if avg < threshold:
            reverted = replace(
                state,
                active=state.active.with_quant(Quant.Q4KM),
                last_switch_time=t,
                probe_started_at=None,
            )
            return reverted, Decision.DOWNGRADE
        confirmed = replace(state, probe_started_at=None, mode_at_downgrade=None)
        return confirmed, Decision.HOLD

    if state.active.quant is Quant.Q8:
        if avg is not None and avg < threshold and dwell_ok:
            downgraded = replace(
                state,
                active=state.active.with_quant(Quant.Q4KM),
                last_switch_time=t,
                mode_at_downgrade=mode_index,
            )
            return downgraded, Decision.DOWNGRADE
        return state, Decision.HOLD

    # Active variant is Q4_K_M.
    if (
        state.upgrade_policy is UpgradePolicy.MODE_PROBE
        and state.mode_at_downgrade is not None
        and mode_index < state.mode_at_downgrade
        and dwell_ok
    ):
        probing = replace(
            state,
            active=state.active.with_quant(Quant.Q8),
            last_switch_time=t,
            probe_started_at=t,
        )
        return probing, Decision.UPGRADE_PROBE
    return state, Decision.HOLD
