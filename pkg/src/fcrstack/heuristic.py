"""Rule-based imbalance controller used inside the Stage-1 rollouts.

Priority: corrective SoE zones, then price-percentile triggers, then idle.
Every function here broadcasts over numpy arrays so a whole batch of
rollouts can be stepped at once.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import BatteryParams
from .data import MarketDataset


@dataclass(frozen=True)
class HeuristicConfig:
    zone_low: float = 0.15
    zone_high: float = 0.85
    buy_percentile: float = 20.0
    sell_percentile: float = 80.0
    power_fraction: float = 1.0

    def __post_init__(self):
        if not 0 < self.zone_low < self.zone_high < 1:
            raise ValueError("zone fractions must satisfy 0 < low < high < 1")
        if not 0 <= self.buy_percentile < self.sell_percentile <= 100:
            raise ValueError("percentiles must satisfy 0 <= buy < sell <= 100")
        if not 0 < self.power_fraction <= 1:
            raise ValueError("power_fraction must lie in (0, 1]")


@dataclass(frozen=True)
class PriceThresholds:
    buy: float
    sell: float


def price_thresholds(prices, cfg: HeuristicConfig) -> PriceThresholds:
    """Fixed buy/sell triggers from a reference price sample (the training period)."""
    prices = np.asarray(prices, dtype=float)
    if prices.size == 0:
        raise ValueError("no prices to derive thresholds from")
    buy, sell = np.percentile(prices, [cfg.buy_percentile, cfg.sell_percentile])
    return PriceThresholds(float(buy), float(sell))


def training_thresholds(ds: MarketDataset, cfg: HeuristicConfig) -> PriceThresholds:
    """Thresholds over the indicator prices of the training days in ``ds``.

    Falls back to the whole dataset when it contains no training day.
    """
    train = ds.split().train
    if not train:
        return price_thresholds(ds.indicator, cfg)
    in_train = np.array([d in train for d in ds.days()])
    keep = in_train[ds.minute_day_index()]
    return price_thresholds(ds.indicator[keep], cfg)


def clip_to_band(p_imb, soe, lo, hi, dt_h: float, params: BatteryParams):
    """Shrink a setpoint so one interval at that power (no FCR) stays inside ``[lo, hi]``."""
    max_charge = np.maximum((hi - soe) / (params.eta_c * dt_h), 0.0)
    max_discharge = np.maximum((soe - lo) * params.eta_d / dt_h, 0.0)
    return np.clip(p_imb, -max_charge, max_discharge)


def heuristic_action(
    soe,
    bounds,
    price_indicator,
    thresholds: PriceThresholds,
    residual_power,
    cfg: HeuristicConfig,
    params: BatteryParams,
    dt_h: float = 1.0 / 60.0,
):
    """Signed imbalance setpoint in MW (+ = discharge/inject)."""
    lo, hi = bounds
    soe = np.asarray(soe, dtype=float)
    width = hi - lo
    p = cfg.power_fraction * np.asarray(residual_power, dtype=float)

    low_zone = soe < lo + cfg.zone_low * width
    high_zone = soe > hi - (1.0 - cfg.zone_high) * width
    buy = price_indicator <= thresholds.buy
    sell = price_indicator >= thresholds.sell

    out = np.where(
        low_zone,
        -p,
        np.where(high_zone, p, np.where(buy, -p, np.where(sell, p, 0.0))),
    )
    out = clip_to_band(out, soe, lo, hi, dt_h, params) + 0.0
    return float(out) if out.ndim == 0 else out


def charge_only(soe, bounds, price_indicator, thresholds, residual_power, cfg, params, dt_h=1.0 / 60.0):
    """Degenerate controller: always charge at full residual power (within the band)."""
    lo, hi = bounds
    want = -np.asarray(residual_power, dtype=float) * np.ones_like(np.asarray(soe, dtype=float))
    out = clip_to_band(want, soe, lo, hi, dt_h, params) + 0.0
    return float(out) if np.ndim(out) == 0 else out
