"""Two-price toy market for learning sanity checks.

Lossless 1 MWh / 6 MW battery, no FCR, settlement alternating between
-100 and +100 EUR/MWh every quarter-hour. One action moves exactly 0.1 MWh,
so the state space is a small lattice an exact DP can solve.
"""

from __future__ import annotations

import numpy as np

from .core import BatteryParams, FcrConfig
from .data import from_arrays
from .env import BatteryEnv, EnvConfig, RewardConfig

TOY_PARAMS = BatteryParams(p_nom=6.0, e_cap=1.0, eta_c=1.0, eta_d=1.0)
TOY_REWARD = RewardConfig(
    lambda_c=0.0, soe_margin_weight=0.0, soe_violation_weight=0.0, override_penalty=0.0, gamma=0.99
)
TOY_ENV = EnvConfig(episode_minutes=120, guard_min=0.0)
BUY_PRICE, SELL_PRICE = -100.0, 100.0


def two_price_dataset(days: int = 1, period_quarters: int = 1, start="2022-01-01"):
    n_q = days * 96
    q = np.arange(n_q)
    settle = np.where((q // period_quarters) % 2 == 0, BUY_PRICE, SELL_PRICE)
    return from_arrays(
        np.zeros(n_q * 900), np.repeat(settle, 15), settle, np.zeros(days * 6), start=start
    )


def toy_env_factory(ds=None, reward_cfg: RewardConfig = TOY_REWARD, env_cfg: EnvConfig = TOY_ENV):
    ds = two_price_dataset() if ds is None else ds

    def make(days):
        return BatteryEnv(ds, np.zeros(ds.n_blocks, dtype=int), TOY_PARAMS, FcrConfig(), reward_cfg, env_cfg, days=days)

    return make
