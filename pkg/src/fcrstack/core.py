"""Battery physics, FCR droop activation and the SoE reserve envelope.

Sign convention everywhere in the package: positive power is injection into
the grid (discharge), negative power is withdrawal (charge).
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

# Slack for float noise in energy bound comparisons (MWh).
ENERGY_TOL = 1e-9
# Slack for converter limit checks (MW).
POWER_TOL = 1e-9

DAY_MINUTES = 1440


class PhysicsError(ValueError):
    """A battery operation was called outside its physical contract."""


class InfeasibleReserveError(ValueError):
    """The FCR reserve margin leaves no feasible SoE band (bid * t_res > e_cap / 2)."""


class ConverterLimitError(RuntimeError):
    """Total power exceeded the converter rating; a controller produced an illegal setpoint."""


@dataclass(frozen=True)
class BatteryParams:
    p_nom: float = 10.0
    e_cap: float = 20.0
    eta_c: float = 0.9
    eta_d: float = 0.9

    def __post_init__(self):
        if self.p_nom <= 0:
            raise ValueError(f"p_nom must be positive, got {self.p_nom}")
        if self.e_cap <= 0:
            raise ValueError(f"e_cap must be positive, got {self.e_cap}")
        for name in ("eta_c", "eta_d"):
            eta = getattr(self, name)
            if not 0 < eta <= 1:
                raise ValueError(f"{name} must lie in (0, 1], got {eta}")


@dataclass(frozen=True)
class FcrConfig:
    t_res_min: float = 25.0
    full_activation_mhz: float = 200.0
    dead_band_mhz: float = 0.0
    fcr_energy_settled: bool = False

    def __post_init__(self):
        if self.t_res_min <= 0:
            raise ValueError(f"t_res_min must be positive, got {self.t_res_min}")
        if self.dead_band_mhz < 0:
            raise ValueError("dead_band_mhz must be non-negative")
        if self.full_activation_mhz <= self.dead_band_mhz:
            raise ValueError("full_activation_mhz must exceed dead_band_mhz")

    @property
    def t_res_h(self) -> float:
        return self.t_res_min / 60.0


@dataclass(frozen=True)
class FcrBid:
    block_index: int
    power: int

    def validate(self, params: BatteryParams) -> None:
        if int(self.power) != self.power:
            raise ValueError(f"FCR bids are integer MW, got {self.power}")
        if not 0 <= self.power <= params.p_nom - 1:
            raise ValueError(
                f"bid {self.power} MW outside [0, {params.p_nom - 1:g}] MW"
            )


class DischargeWindow:
    """Trailing window of discharge energies used for cycle counting.

    Entries are ``(t_minutes, energy_mwh)``; anything older than
    ``now - horizon`` is dropped on :meth:`prune`.
    """

    def __init__(self, horizon_min: float = DAY_MINUTES, entries: Iterable = ()):
        self.horizon_min = horizon_min
        self.entries: deque[tuple[float, float]] = deque(entries)

    def append(self, t_min: float, energy: float) -> None:
        if energy < 0:
            raise ValueError("discharge energy must be non-negative")
        if self.entries and t_min < self.entries[-1][0]:
            raise ValueError("window entries must be appended in time order")
        self.entries.append((t_min, energy))

    def prune(self, now_min: float) -> None:
        cutoff = now_min - self.horizon_min
        while self.entries and self.entries[0][0] < cutoff:
            self.entries.popleft()

    @property
    def energy(self) -> float:
        return sum(e for _, e in self.entries)

    def copy(self) -> "DischargeWindow":
        return DischargeWindow(self.horizon_min, self.entries)

    def __len__(self):
        return len(self.entries)


@dataclass(frozen=True)
class BatteryState:
    e: float
    cycle_window: DischargeWindow = field(default_factory=DischargeWindow, compare=False)
    t_min: float = 0.0


def cycle_throughput(window: DischargeWindow, e_cap: float, now_min: float | None = None) -> float:
    """Equivalent full cycles discharged within the trailing horizon."""
    if now_min is not None:
        window.prune(now_min)
    return window.energy / e_cap


def soe_delta(p_charge, p_discharge, dt_h: float, params: BatteryParams):
    """Battery-side energy change for grid-side charge/discharge powers."""
    return (params.eta_c * p_charge - p_discharge / params.eta_d) * dt_h


def split_power(p_total):
    """Split signed grid power into non-negative (charge, discharge) parts."""
    p_total = np.asarray(p_total, dtype=float)
    return np.maximum(-p_total, 0.0), np.maximum(p_total, 0.0)


def step_soe(
    state: BatteryState,
    p_charge: float,
    p_discharge: float,
    dt_h: float,
    params: BatteryParams,
) -> BatteryState:
    """Advance the stored energy by one step.

    Does not clip to ``[0, e_cap]``: leaving the physical range is a
    controller bug and must stay visible to the safety layer.
    """
    if p_charge < 0 or p_discharge < 0:
        raise PhysicsError("charge and discharge powers are magnitudes (>= 0)")
    if p_charge > 0 and p_discharge > 0:
        raise PhysicsError("simultaneous charge and discharge is not allowed")
    if max(p_charge, p_discharge) > params.p_nom + POWER_TOL:
        raise PhysicsError(
            f"power {max(p_charge, p_discharge)} MW exceeds p_nom {params.p_nom} MW"
        )
    e_next = state.e + (params.eta_c * p_charge - p_discharge / params.eta_d) * dt_h
    t_next = state.t_min + dt_h * 60.0
    window = state.cycle_window.copy()
    if p_discharge > 0:
        window.append(t_next, p_discharge * dt_h)
    window.prune(t_next)
    return BatteryState(e=e_next, cycle_window=window, t_min=t_next)


def soe_bounds(bid: FcrBid | int, cfg: FcrConfig, params: BatteryParams) -> tuple[float, float]:
    """Feasible SoE band ``(lo, hi)`` keeping ``t_res`` of full activation in reserve."""
    power = bid.power if isinstance(bid, FcrBid) else bid
    if power < 0:
        raise ValueError("bid must be non-negative")
    reserve = power * cfg.t_res_h
    lo, hi = reserve, params.e_cap - reserve
    if lo > hi:
        raise InfeasibleReserveError(
            f"bid {power} MW x {cfg.t_res_min:g} min = {reserve:.4g} MWh exceeds "
            f"half the capacity ({params.e_cap / 2:.4g} MWh)"
        )
    return lo, hi


def bounds_arrays(bids, cfg: FcrConfig, params: BatteryParams) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised :func:`soe_bounds` for an array of integer bids."""
    bids = np.asarray(bids, dtype=float)
    reserve = bids * cfg.t_res_h
    lo, hi = reserve, params.e_cap - reserve
    if np.any(lo > hi):
        raise InfeasibleReserveError("at least one bid leaves an empty SoE band")
    return lo, hi


def droop_fraction(freq_dev_mhz, cfg: FcrConfig):
    """Per-unit activation for a frequency deviation (positive = inject).

    Linear between the dead band and full activation, saturated outside.
    """
    df = np.asarray(freq_dev_mhz, dtype=float)
    mag = np.clip(
        (np.abs(df) - cfg.dead_band_mhz) / (cfg.full_activation_mhz - cfg.dead_band_mhz),
        0.0,
        1.0,
    )
    out = -np.sign(df) * mag + 0.0  # + 0.0 drops negative zeros
    return float(out) if out.ndim == 0 else out


def fcr_activation(bid: FcrBid | int | np.ndarray, freq_dev_mhz, cfg: FcrConfig):
    """Required FCR power in MW; under-frequency gives positive (injection)."""
    power = bid.power if isinstance(bid, FcrBid) else bid
    out = np.asarray(power, dtype=float) * droop_fraction(freq_dev_mhz, cfg) + 0.0
    return float(out) if np.ndim(out) == 0 else out


def total_power(p_fcr: float, p_imb: float, p_nom: float | None = None) -> float:
    p = p_fcr + p_imb
    if p_nom is not None and abs(p) > p_nom + POWER_TOL:
        raise ConverterLimitError(
            f"|{p_fcr:.6g} + {p_imb:.6g}| = {abs(p):.6g} MW exceeds p_nom {p_nom:g} MW"
        )
    return p
