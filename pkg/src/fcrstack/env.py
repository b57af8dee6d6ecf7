"""Stage-2 environment: one decision per minute, 60 one-second FCR sub-steps.

The agent picks charge / idle / discharge at full residual power
``p_nom - bid``; FCR activation follows the frequency trace second by
second, and the reactive override takes over whenever the SoE has left the
band of the active block.
"""

from __future__ import annotations

import csv
import datetime as dt
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np
import pandas as pd

from .bidding import BidSchedule
from .core import (
    ENERGY_TOL,
    POWER_TOL,
    BatteryParams,
    ConverterLimitError,
    DischargeWindow,
    FcrConfig,
    bounds_arrays,
    droop_fraction,
)
from .data import MINUTES_PER_BLOCK, MINUTES_PER_QUARTER, SECONDS_PER_MINUTE, MarketDataset
from .safety import N_ACTIONS, action_mask, action_setpoint, apply_override
from .settlement import Ledger

DT_MIN_H = 1.0 / 60.0
DT_S_H = 1.0 / 3600.0

OBS_FIELDS = (
    "price_indicator",
    "quarter_of_day",
    "minute_in_quarter",
    "month",
    "soe_fraction",
    "cycle_usage",
    "dist_active_lo",
    "dist_active_hi",
    "dist_next_lo",
    "dist_next_hi",
    "bid",
    "next_bid",
    "minutes_to_next_block",
)
OBS_DIM = len(OBS_FIELDS)


@dataclass(frozen=True)
class RewardConfig:
    lambda_c: float = 500.0
    c_max: float = 420.0 / 365.0
    soe_margin_weight: float = 1.0
    soe_violation_weight: float = 100.0
    margin_threshold: float = 0.1
    override_penalty: float = 10.0
    gamma: float = 0.995

    def __post_init__(self):
        for name in ("lambda_c", "soe_margin_weight", "soe_violation_weight", "override_penalty", "margin_threshold"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.c_max <= 0:
            raise ValueError("c_max must be positive")
        if not 0 <= self.gamma < 1:
            raise ValueError("gamma must lie in [0, 1)")


@dataclass(frozen=True)
class EnvConfig:
    episode_minutes: int = 1440
    lookahead_min: int = MINUTES_PER_BLOCK
    guard_min: float = 15.0
    price_scale: float = 500.0
    init: str = "mid"  # or "uniform"

    def __post_init__(self):
        if self.episode_minutes < 1:
            raise ValueError("episode_minutes must be positive")
        if not 0 <= self.lookahead_min <= MINUTES_PER_BLOCK:
            raise ValueError("lookahead_min must lie within one block")
        if self.guard_min < 0:
            raise ValueError("guard_min must be non-negative")
        if self.price_scale <= 0:
            raise ValueError("price_scale must be positive")
        if self.init not in ("mid", "uniform"):
            raise ValueError(f"unknown init policy {self.init!r}")


class RewardParts(NamedTuple):
    r_imb: float
    r_soe: float
    r_cycle: float
    r_override: float

    @property
    def total(self) -> float:
        return self.r_imb + self.r_soe + self.r_cycle + self.r_override


def soe_penalty(soe: float, bounds, cfg: RewardConfig) -> float:
    lo, hi = bounds
    depth = max(lo - soe, 0.0) + max(soe - hi, 0.0)
    width = hi - lo
    if depth > 0 or width <= 0:
        proximity = cfg.margin_threshold
    else:
        proximity = max(0.0, cfg.margin_threshold - min(soe - lo, hi - soe) / width)
    return -cfg.soe_margin_weight * proximity - cfg.soe_violation_weight * depth


def cycle_penalty(cycles: float, cfg: RewardConfig) -> float:
    return -cfg.lambda_c * max(0.0, cycles - cfg.c_max)


def compute_reward(cash: float, soe: float, bounds, cycles: float, override_fired: bool, cfg: RewardConfig) -> RewardParts:
    """Reward components for one minute; the total is their plain sum."""
    return RewardParts(
        float(cash),
        soe_penalty(soe, bounds, cfg) + 0.0,
        cycle_penalty(cycles, cfg) + 0.0,
        -cfg.override_penalty if override_fired else 0.0,
    )


@dataclass
class StepOutcome:
    obs: np.ndarray
    parts: RewardParts
    override_fired: bool
    done: bool
    mask: np.ndarray
    info: dict = field(default_factory=dict)

    @property
    def reward(self) -> float:
        return self.parts.total


@dataclass(frozen=True)
class EpisodeSpec:
    day: dt.date
    init: str | None = None
    seed: int | None = None


class DayNotInSplitError(ValueError):
    pass


class BatteryEnv:
    def __init__(
        self,
        ds: MarketDataset,
        schedule: BidSchedule | np.ndarray | list,
        params: BatteryParams = BatteryParams(),
        fcr_cfg: FcrConfig = FcrConfig(),
        reward_cfg: RewardConfig = RewardConfig(),
        env_cfg: EnvConfig = EnvConfig(),
        days=None,
        record: bool = False,
    ):
        self.ds = ds
        self.params = params
        self.fcr_cfg = fcr_cfg
        self.reward_cfg = reward_cfg
        self.cfg = env_cfg
        bids = schedule.bids_for(ds) if isinstance(schedule, BidSchedule) else np.asarray(schedule, dtype=int)
        if len(bids) != ds.n_blocks:
            raise ValueError(f"{len(bids)} bids for {ds.n_blocks} blocks")
        if np.any(bids < 0) or np.any(bids > params.p_nom - 1):
            raise ValueError("bids must lie in [0, p_nom - 1]")
        self.bids = bids.astype(float)
        self.lo, self.hi = bounds_arrays(self.bids, fcr_cfg, params)
        self.droop = droop_fraction(ds.freq, fcr_cfg)
        self.days = list(ds.days()) if days is None else sorted(days)
        self.record = record

        idx = pd.date_range(ds.start, periods=ds.n_minutes, freq="1min")
        self._minute_of_day = (idx.hour * 60 + idx.minute).to_numpy()
        self._month = idx.month.to_numpy()
        self._timestamps = idx
        self.m = 0
        self.m_end = 0

    # -- episode control ---------------------------------------------------

    def reset(self, spec: EpisodeSpec | dt.date, soe: float | None = None) -> np.ndarray:
        if not isinstance(spec, EpisodeSpec):
            spec = EpisodeSpec(spec)
        if spec.day not in self.days:
            raise DayNotInSplitError(f"day {spec.day} is not available to this environment")
        self.day = spec.day
        self.m = self.ds.day_offset_minutes(spec.day)
        self.m_end = min(self.m + self.cfg.episode_minutes, self.ds.n_minutes)
        b = self.m // MINUTES_PER_BLOCK
        lo, hi = self.lo[b], self.hi[b]
        init = spec.init or self.cfg.init
        if soe is not None:
            self.e = float(soe)
        elif init == "mid":
            self.e = 0.5 * (lo + hi)
        else:
            self.e = float(np.random.default_rng(spec.seed).uniform(lo, hi))
        self.e_start = self.e
        self.window = DischargeWindow()
        self.ledger = Ledger()
        self._q_energy = 0.0
        self._q_proxy = 0.0
        self.discharged = 0.0
        self.override_steps = 0
        self.violation_steps = 0
        self.max_excursion = 0.0
        self.trace: list[dict] = []
        return self.observation()

    @property
    def block(self) -> int:
        return min(self.m, self.ds.n_minutes - 1) // MINUTES_PER_BLOCK

    def _next_block(self, b: int) -> int:
        return min(b + 1, self.ds.n_blocks - 1)

    def cycles(self) -> float:
        return self.window.energy / self.params.e_cap

    def observation(self) -> np.ndarray:
        m = min(self.m, self.ds.n_minutes - 1)
        b = m // MINUTES_PER_BLOCK
        nb = self._next_block(b)
        e, cap = self.e, self.params.e_cap
        mod = self._minute_of_day[m]
        obs = np.array([
            self.ds.indicator[m] / self.cfg.price_scale,
            (mod // MINUTES_PER_QUARTER) / 95.0,
            (mod % MINUTES_PER_QUARTER) / 14.0,
            (self._month[m] - 1) / 11.0,
            e / cap,
            self.cycles() / self.reward_cfg.c_max - 1.0,
            (e - self.lo[b]) / cap,
            (self.hi[b] - e) / cap,
            (e - self.lo[nb]) / cap,
            (self.hi[nb] - e) / cap,
            self.bids[b] / self.params.p_nom,
            self.bids[nb] / self.params.p_nom,
            (MINUTES_PER_BLOCK - m % MINUTES_PER_BLOCK) / MINUTES_PER_BLOCK,
        ])
        lower = np.array([-1, 0, 0, 0, 0, -1, -1, -1, -1, -1, 0, 0, 0], dtype=float)
        return np.clip(obs, lower, 1.0)

    def action_mask(self) -> np.ndarray:
        m = min(self.m, self.ds.n_minutes - 1)
        b = m // MINUTES_PER_BLOCK
        left = MINUTES_PER_BLOCK - m % MINUTES_PER_BLOCK
        upcoming, upcoming_bid = None, None
        if left <= self.cfg.lookahead_min and b + 1 < self.ds.n_blocks:
            upcoming = (self.lo[b + 1], self.hi[b + 1])
            upcoming_bid = self.bids[b + 1]
        bid = self.bids[b]
        return action_mask(
            self.e,
            (self.lo[b], self.hi[b]),
            upcoming,
            self.params.p_nom - bid,
            bid,
            self.params,
            DT_MIN_H,
            guard_h=self.cfg.guard_min / 60.0,
            upcoming_bid=upcoming_bid,
            minutes_left=left,
        )

    # -- dynamics ------------------------------------------------------------

    def _substeps(self, p_cmd: float, bid: float, band) -> tuple[float, float, float, bool, float, float]:
        """Run 60 one-second sub-steps; returns energies and override info."""
        lo, hi = band
        res = self.params.p_nom - bid
        s0 = self.m * SECONDS_PER_MINUTE
        p_fcr = bid * self.droop[s0 : s0 + SECONDS_PER_MINUTE]
        eta_c, eta_d = self.params.eta_c, self.params.eta_d

        p_tot = p_fcr + p_cmd
        inc = np.where(p_tot < 0.0, -eta_c * p_tot, -p_tot / eta_d) * DT_S_H
        path = self.e + np.cumsum(inc)
        before = np.concatenate(([self.e], path[:-1]))
        if np.all(before >= lo - ENERGY_TOL) and np.all(before <= hi + ENERGY_TOL):
            p_imb = np.full(SECONDS_PER_MINUTE, p_cmd)
            fired = False
        else:
            e = self.e
            p_imb = np.empty(SECONDS_PER_MINUTE)
            path = np.empty(SECONDS_PER_MINUTE)
            fired = False
            for k in range(SECONDS_PER_MINUTE):
                p, f = apply_override(p_cmd, e, band, res)
                fired |= f
                p_imb[k] = p
                pt = p_fcr[k] + p
                e += (-eta_c * pt if pt < 0 else -pt / eta_d) * DT_S_H
                path[k] = e
            p_tot = p_fcr + p_imb

        peak = float(np.abs(p_tot).max())
        if peak > self.params.p_nom + POWER_TOL:
            raise ConverterLimitError(f"{peak:.6g} MW exceeds p_nom at minute {self.m}")
        settled = p_tot if self.fcr_cfg.fcr_energy_settled else p_imb
        energy = float(settled.sum() * DT_S_H)
        discharge = float(np.maximum(p_tot, 0.0).sum() * DT_S_H)
        lowest = min(self.e, float(path.min()))
        highest = max(self.e, float(path.max()))
        self.e = float(path[-1])
        return energy, discharge, float(p_imb.mean()), fired, lowest, highest

    def step(self, action: int) -> StepOutcome:
        if not self.m < self.m_end:
            raise RuntimeError("episode is over; call reset()")
        if not 0 <= action < N_ACTIONS:
            raise ValueError(f"invalid action {action}")
        m = self.m
        b = m // MINUTES_PER_BLOCK
        bid = self.bids[b]
        band = (self.lo[b], self.hi[b])
        if m % MINUTES_PER_BLOCK == 0:
            self.ledger.credit_fcr(self.ds.block_start(b), bid, self.ds.fcr_prices[b])

        p_cmd = action_setpoint(action, self.params.p_nom - bid)
        energy, discharge, p_mean, fired, lowest, highest = self._substeps(p_cmd, bid, band)

        self.discharged += discharge
        self.window.append(m + 1, discharge)
        self.window.prune(m + 1)
        excursion = max(band[0] - lowest, highest - band[1], 0.0)
        self.max_excursion = max(self.max_excursion, excursion)
        self.override_steps += fired

        proxy = energy * self.ds.indicator[m]
        r_imb = proxy
        self._q_energy += energy
        self._q_proxy += proxy
        self.m = m + 1
        done = self.m >= self.m_end
        if self.m % MINUTES_PER_QUARTER == 0 or done:
            q = m // MINUTES_PER_QUARTER
            true_cash = self.ledger.settle(
                self._timestamps[q * MINUTES_PER_QUARTER].strftime("%Y-%m-%dT%H:%M:%SZ"),
                self._q_energy,
                self.ds.settlement[q],
            )
            r_imb = proxy + (true_cash - self._q_proxy)
            self._q_energy = 0.0
            self._q_proxy = 0.0

        outside = self.e < band[0] - ENERGY_TOL or self.e > band[1] + ENERGY_TOL
        self.violation_steps += outside
        parts = compute_reward(r_imb, self.e, band, self.cycles(), fired, self.reward_cfg)
        obs = self.observation()
        mask = self.action_mask() if not done else np.ones(N_ACTIONS, dtype=bool)
        info = {
            "minute": m,
            "p_imb": p_mean,
            "energy": energy,
            "cash_proxy": proxy,
            "soe": self.e,
            "bid": bid,
            "lo": band[0],
            "hi": band[1],
            "min_soe": lowest,
            "max_soe": highest,
            "excursion": excursion,
            "cycles": self.cycles(),
        }
        if self.record:
            self.trace.append({
                "timestamp": self._timestamps[m].strftime("%Y-%m-%dT%H:%M:%SZ"),
                "action": int(action),
                **{k: info[k] for k in ("bid", "p_imb", "soe", "lo", "hi", "energy", "cycles")},
                "override": int(fired),
                **parts._asdict(),
                "reward": parts.total,
            })
        return StepOutcome(obs, parts, bool(fired), done, mask, info)

    def write_trace(self, path) -> None:
        if not self.trace:
            raise RuntimeError("no trace recorded (construct the env with record=True)")
        with Path(path).open("w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(self.trace[0]))
            w.writeheader()
            for row in self.trace:
                w.writerow({k: repr(float(v)) if isinstance(v, float) else v for k, v in row.items()})
