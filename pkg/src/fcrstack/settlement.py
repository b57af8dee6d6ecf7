"""Cash flows: single-price imbalance settlement, FCR capacity revenue and
the terminal-value adjusted block profit used to rank Stage-1 bids."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

from .core import FcrBid


def settle_quarter_hour(net_injected_energy: float, price: float) -> float:
    """Cash for a quarter-hour net position (MWh, + = injected) at one price."""
    return net_injected_energy * price


def fcr_capacity_revenue(bid: FcrBid | int, clearing_price: float) -> float:
    """Pay-as-cleared remuneration for the full 4 h block."""
    if clearing_price < 0:
        raise ValueError("FCR clearing price must be non-negative")
    power = bid.power if isinstance(bid, FcrBid) else bid
    return power * clearing_price


def adjusted_block_profit(r_fcr: float, pi_imb: float, delta_e: float, pi_bar_next: float) -> float:
    """Block profit with the end-of-block SoE change valued at the next block's median price."""
    return r_fcr + pi_imb + pi_bar_next * delta_e


@dataclass(frozen=True)
class BlockEvaluation:
    r_fcr: float
    pi_imb: float
    delta_e: float
    pi_bar_next: float
    j_adj: float
    violations: int = 0

    @classmethod
    def build(cls, r_fcr, pi_imb, delta_e, pi_bar_next, violations=0) -> "BlockEvaluation":
        return cls(
            float(r_fcr),
            float(pi_imb),
            float(delta_e),
            float(pi_bar_next),
            adjusted_block_profit(float(r_fcr), float(pi_imb), float(delta_e), float(pi_bar_next)),
            int(violations),
        )


@dataclass
class LedgerEntry:
    timestamp: str
    category: str  # "imbalance" or "fcr"
    energy: float  # MWh injected (imbalance) or MW committed (fcr)
    price: float
    cash: float


@dataclass
class Ledger:
    """Append-only record of settled quarter-hours and FCR blocks."""

    entries: list[LedgerEntry] = field(default_factory=list)

    def settle(self, timestamp, energy: float, price: float) -> float:
        cash = settle_quarter_hour(energy, price)
        self.entries.append(LedgerEntry(str(timestamp), "imbalance", energy, price, cash))
        return cash

    def credit_fcr(self, timestamp, bid_mw: float, clearing_price: float) -> float:
        cash = fcr_capacity_revenue(int(bid_mw), clearing_price)
        self.entries.append(LedgerEntry(str(timestamp), "fcr", float(bid_mw), clearing_price, cash))
        return cash

    def _sum(self, category: str) -> float:
        return sum(e.cash for e in self.entries if e.category == category)

    @property
    def imbalance_cash(self) -> float:
        return self._sum("imbalance")

    @property
    def fcr_revenue(self) -> float:
        return self._sum("fcr")

    @property
    def total(self) -> float:
        return self.imbalance_cash + self.fcr_revenue

    def to_csv(self, path) -> None:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["timestamp", "category", "energy", "price", "cash"])
            for e in self.entries:
                w.writerow([e.timestamp, e.category, repr(float(e.energy)), repr(float(e.price)), repr(float(e.cash))])
