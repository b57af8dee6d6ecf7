"""Grid battery that sells FCR capacity per 4 h block and trades the rest of its
power on the imbalance market.

Stage 1 picks one bid per block by Monte-Carlo roll-outs of a rule-based
controller; Stage 2 trains a masked double DQN to trade the residual power.
"""

from .agent import EvalReport, TrainConfig, evaluate, train
from .bidding import BidSchedule, MonteCarloPlan, optimize_schedule, select_bid, simulate_block
from .config import ExperimentConfig, load_config
from .core import (
    BatteryParams,
    BatteryState,
    FcrBid,
    FcrConfig,
    cycle_throughput,
    droop_fraction,
    fcr_activation,
    soe_bounds,
    step_soe,
    total_power,
)
from .data import MarketDataset, chronological_split, load_dataset, synth_dataset, write_dataset
from .env import BatteryEnv, EnvConfig, RewardConfig
from .heuristic import HeuristicConfig, heuristic_action
from .qnet import QFunction
from .settlement import Ledger, adjusted_block_profit, settle_quarter_hour

__all__ = [
    "BatteryEnv", "BatteryParams", "BatteryState", "BidSchedule", "EnvConfig", "EvalReport",
    "ExperimentConfig", "FcrBid", "FcrConfig", "HeuristicConfig", "Ledger", "MarketDataset",
    "MonteCarloPlan", "QFunction", "RewardConfig", "TrainConfig", "adjusted_block_profit",
    "chronological_split", "cycle_throughput", "droop_fraction", "evaluate", "fcr_activation",
    "heuristic_action", "load_config", "load_dataset", "optimize_schedule", "select_bid",
    "settle_quarter_hour", "simulate_block", "soe_bounds", "step_soe", "synth_dataset",
    "total_power", "train", "write_dataset",
]
