"""Stage 1: Monte-Carlo evaluation of per-block FCR bids and schedule selection.

For every 4 h block each candidate bid in ``{0, ..., p_nom - 1}`` is rolled
out at 1 s resolution from a set of initial SoE values spanning its
feasible band, under the heuristic imbalance controller. The candidate with
the highest mean adjusted profit wins the block.
"""

from __future__ import annotations

import csv
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import pandas as pd

from .core import (
    ENERGY_TOL,
    POWER_TOL,
    BatteryParams,
    ConverterLimitError,
    FcrBid,
    FcrConfig,
    bounds_arrays,
    droop_fraction,
    soe_bounds,
)
from .data import (
    MINUTES_PER_BLOCK,
    MINUTES_PER_QUARTER,
    SECONDS_PER_BLOCK,
    SECONDS_PER_MINUTE,
    AlignmentError,
    MarketDataset,
)
from .heuristic import HeuristicConfig, PriceThresholds, heuristic_action, training_thresholds
from .safety import apply_override
from .settlement import BlockEvaluation

log = logging.getLogger(__name__)

DT_S = 1.0 / 3600.0


class ScheduleError(ValueError):
    """A bid schedule file is malformed or does not cover the dataset."""


@dataclass(frozen=True)
class MonteCarloPlan:
    n_draws: int = 50
    include_boundaries: bool = True
    mode: str = "stratified"  # or "uniform": seeded random interior points
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("stratified", "uniform"):
            raise ValueError(f"unknown draw mode {self.mode!r}")
        if self.n_draws < (2 if self.include_boundaries else 1):
            raise ValueError("n_draws must be >= 2 when boundaries are included")


def candidate_bids(params: BatteryParams) -> list[int]:
    """Integer MW bids from 0 up to, but excluding, the nominal rating."""
    return list(range(int(np.ceil(params.p_nom))))


def draw_initial_soe(bid: FcrBid | int, plan: MonteCarloPlan, params: BatteryParams, cfg: FcrConfig) -> np.ndarray:
    lo, hi = soe_bounds(bid, cfg, params)
    n = plan.n_draws
    if plan.mode == "stratified":
        if plan.include_boundaries:
            return np.linspace(lo, hi, n)
        return np.linspace(lo, hi, n + 2)[1:-1]
    power = bid.power if isinstance(bid, FcrBid) else bid
    rng = np.random.default_rng([plan.seed, int(power)])
    if plan.include_boundaries:
        inner = np.sort(rng.uniform(lo, hi, n - 2))
        return np.concatenate([[lo], inner, [hi]])
    return np.sort(rng.uniform(lo, hi, n))


Controller = Callable[..., np.ndarray]


def simulate_lanes(
    bids,
    initial_soe,
    block: MarketDataset,
    params: BatteryParams,
    cfg: FcrConfig,
    hcfg: HeuristicConfig,
    thresholds: PriceThresholds,
    pi_bar_next: float | None = None,
    controller: Controller = heuristic_action,
    record: bool = False,
) -> dict[str, np.ndarray]:
    """Roll out one block for a batch of (bid, initial SoE) lanes.

    Returns per-lane arrays ``r_fcr, pi_imb, delta_e, j_adj, violations,
    overrides`` and, with ``record``, the applied imbalance setpoint for
    every second (``p_imb``, shape lanes x 14400).
    """
    if block.n_blocks != 1 or len(block.freq) != SECONDS_PER_BLOCK:
        raise AlignmentError("simulate_lanes needs exactly one 4 h block at 1 s")
    bids = np.asarray(bids, dtype=float)
    e = np.array(initial_soe, dtype=float)
    if bids.shape != e.shape:
        bids = np.broadcast_to(bids, e.shape).astype(float)
    lo, hi = bounds_arrays(bids, cfg, params)
    band = (lo, hi)
    res = params.p_nom - bids
    e_start = e.copy()
    droop = droop_fraction(block.freq, cfg)
    eta_c, inv_eta_d = params.eta_c, 1.0 / params.eta_d
    settle_total = cfg.fcr_energy_settled

    quarter_energy = np.zeros_like(e)
    pi_imb = np.zeros_like(e)
    violations = np.zeros(e.shape, dtype=np.int64)
    overrides = np.zeros(e.shape, dtype=np.int64)
    trace = np.zeros((e.size, SECONDS_PER_BLOCK)) if record else None
    peak_power = 0.0

    for m in range(MINUTES_PER_BLOCK):
        p_cmd = controller(e, band, block.indicator[m], thresholds, res, hcfg, params)
        p_cmd = np.broadcast_to(np.asarray(p_cmd, dtype=float), e.shape)
        for s in range(SECONDS_PER_MINUTE):
            k = m * SECONDS_PER_MINUTE + s
            p, fired = apply_override(p_cmd, e, band, res)
            overrides += fired
            p_tot = bids * droop[k] + p
            peak_power = max(peak_power, float(np.abs(p_tot).max()))
            e = e + np.where(p_tot < 0.0, -eta_c * p_tot, -p_tot * inv_eta_d) * DT_S
            quarter_energy += (p_tot if settle_total else p) * DT_S
            violations += (e < lo - ENERGY_TOL) | (e > hi + ENERGY_TOL)
            if record:
                trace[:, k] = p
        if (m + 1) % MINUTES_PER_QUARTER == 0:
            pi_imb += quarter_energy * block.settlement[m // MINUTES_PER_QUARTER]
            quarter_energy[:] = 0.0

    if peak_power > params.p_nom + POWER_TOL:
        raise ConverterLimitError(f"rollout reached {peak_power:.6g} MW > p_nom")

    if pi_bar_next is None:
        pi_bar_next = block.block_median_settlement(0)
    r_fcr = bids * block.fcr_prices[0]
    delta_e = e - e_start
    out = {
        "r_fcr": r_fcr,
        "pi_imb": pi_imb,
        "delta_e": delta_e,
        "pi_bar_next": np.full(e.shape, float(pi_bar_next)),
        "j_adj": r_fcr + pi_imb + pi_bar_next * delta_e,
        "violations": violations,
        "overrides": overrides,
        "e_end": e,
    }
    if record:
        out["p_imb"] = trace
    return out


def simulate_block(
    bid: FcrBid | int,
    initial_soe: float,
    block: MarketDataset,
    params: BatteryParams,
    cfg: FcrConfig,
    hcfg: HeuristicConfig,
    thresholds: PriceThresholds,
    pi_bar_next: float | None = None,
    controller: Controller = heuristic_action,
) -> BlockEvaluation:
    power = bid.power if isinstance(bid, FcrBid) else bid
    r = simulate_lanes(
        [power], [initial_soe], block, params, cfg, hcfg, thresholds, pi_bar_next, controller
    )
    return BlockEvaluation.build(
        r["r_fcr"][0], r["pi_imb"][0], r["delta_e"][0], r["pi_bar_next"][0], r["violations"][0]
    )


def select_bid(evaluations: dict[int, Sequence], block_index: int = 0) -> FcrBid:
    """Candidate with the highest mean ``j_adj``; ties go to the lower bid.

    ``evaluations`` maps bid (MW) to either BlockEvaluations or raw ``j_adj`` values.
    """
    if not evaluations:
        raise ValueError("no candidate evaluations to select from")
    sizes = {len(v) for v in evaluations.values()}
    if len(sizes) != 1 or 0 in sizes:
        raise ValueError("every candidate needs the same, non-zero number of draws")
    best, best_mean = None, -np.inf
    for bid in sorted(evaluations):
        mean = mean_j_adj(evaluations[bid])
        if best is None or mean > best_mean:
            best, best_mean = bid, mean
    return FcrBid(block_index, int(best))


def mean_j_adj(values) -> float:
    arr = np.array([v.j_adj if isinstance(v, BlockEvaluation) else v for v in values], dtype=float)
    return float(np.mean(arr))


@dataclass
class BidSchedule:
    block_starts: list[pd.Timestamp]
    bids: list[int]
    mean_j_adj: list[float] = field(default_factory=list)
    std_j_adj: list[float] = field(default_factory=list)

    def __post_init__(self):
        if len(self.block_starts) != len(self.bids):
            raise ScheduleError("one bid per block start required")
        if any(int(b) != b or b < 0 for b in self.bids):
            raise ScheduleError("bids must be non-negative integers")

    def __len__(self):
        return len(self.bids)

    @classmethod
    def uniform(cls, ds: MarketDataset, bid: int) -> "BidSchedule":
        return cls([ds.block_start(b) for b in range(ds.n_blocks)], [int(bid)] * ds.n_blocks)

    def validate(self, params: BatteryParams) -> None:
        for b in self.bids:
            try:
                FcrBid(0, b).validate(params)
            except ValueError as exc:
                raise ScheduleError(str(exc)) from exc

    def bids_for(self, ds: MarketDataset) -> np.ndarray:
        """Bid for every block of ``ds``, matched on block start timestamps."""
        lookup = {pd.Timestamp(t): b for t, b in zip(self.block_starts, self.bids)}
        out = []
        for b in range(ds.n_blocks):
            t = ds.block_start(b)
            if t not in lookup:
                raise ScheduleError(f"schedule has no bid for block starting {t}")
            out.append(lookup[t])
        return np.array(out, dtype=int)

    def to_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["block_start", "bid_mw", "mean_j_adj", "std_j_adj"])
            for i, (t, b) in enumerate(zip(self.block_starts, self.bids)):
                mean = repr(float(self.mean_j_adj[i])) if self.mean_j_adj else ""
                std = repr(float(self.std_j_adj[i])) if self.std_j_adj else ""
                w.writerow([pd.Timestamp(t).strftime("%Y-%m-%dT%H:%M:%SZ"), int(b), mean, std])

    @classmethod
    def from_csv(cls, path) -> "BidSchedule":
        path = Path(path)
        if not path.exists():
            raise ScheduleError(f"schedule file {path} not found")
        with path.open(newline="") as fh:
            rows = list(csv.DictReader(fh))
        if not rows or not {"block_start", "bid_mw"} <= set(rows[0]):
            raise ScheduleError(f"{path}: needs block_start and bid_mw columns")
        try:
            starts = [pd.Timestamp(r["block_start"]).tz_convert("UTC") for r in rows]
            bids = [int(r["bid_mw"]) for r in rows]
        except (ValueError, TypeError) as exc:
            raise ScheduleError(f"{path}: {exc}") from exc
        means = [float(r["mean_j_adj"]) for r in rows if r.get("mean_j_adj")]
        stds = [float(r["std_j_adj"]) for r in rows if r.get("std_j_adj")]
        return cls(
            starts,
            bids,
            means if len(means) == len(rows) else [],
            stds if len(stds) == len(rows) else [],
        )


@dataclass
class CandidateStats:
    block: int
    block_start: pd.Timestamp
    bid: int
    mean_j_adj: float
    std_j_adj: float
    mean_r_fcr: float
    mean_pi_imb: float
    mean_delta_e: float
    violations: int


def evaluate_block(
    horizon: MarketDataset,
    b: int,
    plan: MonteCarloPlan,
    params: BatteryParams,
    cfg: FcrConfig,
    hcfg: HeuristicConfig,
    thresholds: PriceThresholds,
    controller: Controller = heuristic_action,
) -> dict[int, np.ndarray]:
    """All candidates x draws for block ``b``; returns per-bid rollout results."""
    cands = candidate_bids(params)
    draws = [draw_initial_soe(c, plan, params, cfg) for c in cands]
    bids = np.concatenate([np.full(len(d), c, dtype=float) for c, d in zip(cands, draws)])
    e0 = np.concatenate(draws)
    r = simulate_lanes(
        bids, e0, horizon.block(b), params, cfg, hcfg, thresholds,
        horizon.next_block_median(b), controller,
    )
    out, i = {}, 0
    for c, d in zip(cands, draws):
        sl = slice(i, i + len(d))
        out[c] = {k: v[sl] for k, v in r.items()}
        i += len(d)
    return out


def _block_job(args):
    return evaluate_block(*args)


@dataclass
class Stage1Result:
    schedule: BidSchedule
    candidates: list[CandidateStats]
    j_adj: dict[tuple[int, int], np.ndarray]  # (block, bid) -> per-draw j_adj

    def candidates_to_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([
                "block_start", "bid_mw", "mean_j_adj", "std_j_adj",
                "mean_r_fcr", "mean_pi_imb", "mean_delta_e", "violations",
            ])
            for c in self.candidates:
                w.writerow([
                    c.block_start.strftime("%Y-%m-%dT%H:%M:%SZ"), c.bid, repr(float(c.mean_j_adj)),
                    repr(float(c.std_j_adj)), repr(float(c.mean_r_fcr)), repr(float(c.mean_pi_imb)),
                    repr(float(c.mean_delta_e)), c.violations,
                ])


def optimize_schedule(
    horizon: MarketDataset,
    plan: MonteCarloPlan,
    params: BatteryParams,
    cfg: FcrConfig,
    hcfg: HeuristicConfig,
    thresholds: PriceThresholds | None = None,
    controller: Controller = heuristic_action,
    workers: int = 1,
) -> Stage1Result:
    """Pick the best bid for every block of ``horizon`` independently."""
    if horizon.n_minutes % MINUTES_PER_BLOCK:
        raise AlignmentError("horizon must consist of whole 4 h blocks")
    if thresholds is None:
        thresholds = training_thresholds(horizon, hcfg)
    jobs = [(horizon, b, plan, params, cfg, hcfg, thresholds, controller) for b in range(horizon.n_blocks)]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_block_job, jobs))
    else:
        results = [_block_job(j) for j in jobs]

    starts, bids, means, stds = [], [], [], []
    stats: list[CandidateStats] = []
    j_adj = {}
    for b, per_bid in enumerate(results):
        choice = select_bid({c: r["j_adj"] for c, r in per_bid.items()}, block_index=b)
        t = horizon.block_start(b)
        for c in sorted(per_bid):
            r = per_bid[c]
            j_adj[(b, c)] = r["j_adj"]
            stats.append(CandidateStats(
                b, t, c, mean_j_adj(r["j_adj"]), float(np.std(r["j_adj"])),
                float(np.mean(r["r_fcr"])), float(np.mean(r["pi_imb"])),
                float(np.mean(r["delta_e"])), int(r["violations"].sum()),
            ))
        starts.append(t)
        bids.append(choice.power)
        means.append(mean_j_adj(per_bid[choice.power]["j_adj"]))
        stds.append(float(np.std(per_bid[choice.power]["j_adj"])))
        log.info("block %d (%s): bid %d MW, mean j_adj %.2f", b, t, choice.power, means[-1])
    return Stage1Result(BidSchedule(starts, bids, means, stds), stats, j_adj)
