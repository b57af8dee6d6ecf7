"""Run artifacts and the cross-run comparison and bid heatmap tables."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from .agent import EvalReport
from .data import MINUTES_PER_BLOCK, QUARTERS_PER_BLOCK, MarketDataset

RUN_FILE = "run.json"
METRICS_FILE = "metrics.csv"
BLOCKS_FILE = "blocks.csv"
BLOCK_FIELDS = ("block_start", "bid_mw", "fcr_price", "imbalance_sigma")
COMPARISON_FIELDS = ("strategy", "bid_mw", "fcr_revenue", "imbalance_profit", "total_profit", "cycles", "days")
HEATMAP_FIELDS = ("fcr_price_lo", "fcr_price_hi", "sigma_lo", "sigma_hi", "mean_bid_mw", "blocks")


class ReportError(ValueError):
    pass


def block_sigma(ds: MarketDataset, b: int) -> float:
    """Population standard deviation of the block's quarter-hour settlement prices."""
    q = ds.settlement[b * QUARTERS_PER_BLOCK : (b + 1) * QUARTERS_PER_BLOCK]
    return float(np.std(q))


def block_features(ds: MarketDataset, bids, blocks=None) -> list[dict]:
    blocks = range(ds.n_blocks) if blocks is None else blocks
    return [
        {
            "block_start": ds.block_start(b).strftime("%Y-%m-%dT%H:%M:%SZ"),
            "bid_mw": int(bids[b]),
            "fcr_price": float(ds.fcr_prices[b]),
            "imbalance_sigma": block_sigma(ds, b),
        }
        for b in blocks
    ]


def blocks_of_days(ds: MarketDataset, days) -> list[int]:
    out = []
    for d in sorted(days):
        first = ds.day_offset_minutes(d) // MINUTES_PER_BLOCK
        out.extend(b for b in range(first, first + 6) if b < ds.n_blocks)
    return out


def _write_rows(path, fields, rows) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(fields)
        for r in rows:
            w.writerow([repr(float(r[f])) if isinstance(r[f], float) else r[f] for f in fields])


def write_block_features(path, rows) -> None:
    _write_rows(path, BLOCK_FIELDS, rows)


def strategy_of(bids) -> tuple[str, int | None]:
    bids = np.asarray(bids)
    if bids.size and np.all(bids == bids[0]):
        return f"uniform {int(bids[0])} MW", int(bids[0])
    return "non-uniform", None


def write_run(out_dir, report: EvalReport, ds: MarketDataset, bids, days, split: str) -> None:
    """Everything ``report`` needs from one evaluated run."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    report.to_csv(out / METRICS_FILE)
    blocks = blocks_of_days(ds, days)
    strategy, uniform = strategy_of(np.asarray(bids)[blocks])
    write_block_features(out / BLOCKS_FILE, block_features(ds, bids, blocks))
    meta = {
        "strategy": strategy,
        "uniform_bid_mw": uniform,
        "split": split,
        "days": [str(d) for d in sorted(days)],
    }
    (out / RUN_FILE).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


@dataclass
class RunSummary:
    name: str
    strategy: str
    uniform_bid: int | None
    fcr_revenue: float
    imbalance_profit: float
    cycles: float
    days: int
    blocks: pd.DataFrame

    @property
    def total_profit(self) -> float:
        return self.fcr_revenue + self.imbalance_profit


def load_run(run_dir) -> RunSummary:
    run_dir = Path(run_dir)
    missing = [f for f in (RUN_FILE, METRICS_FILE, BLOCKS_FILE) if not (run_dir / f).exists()]
    if missing:
        raise ReportError(f"{run_dir}: missing run artifact(s) {', '.join(missing)}")
    meta = json.loads((run_dir / RUN_FILE).read_text())
    metrics = pd.read_csv(run_dir / METRICS_FILE, dtype={"day": str})
    agg = metrics[metrics["day"] == "total"]
    if len(agg) != 1:
        raise ReportError(f"{run_dir}/{METRICS_FILE}: no aggregate row")
    agg = agg.iloc[0]
    return RunSummary(
        run_dir.name,
        meta["strategy"],
        meta.get("uniform_bid_mw"),
        float(agg["fcr_revenue"]),
        float(agg["imbalance_profit"]),
        float(agg["cycles"]),
        len(meta.get("days", [])),
        pd.read_csv(run_dir / BLOCKS_FILE),
    )


def comparison_rows(runs: list[RunSummary]) -> list[dict]:
    """One row per run: uniform bids in bid order, then everything else by name."""
    def key(r):
        return (0, r.uniform_bid, r.name) if r.uniform_bid is not None else (1, 0, r.name)

    return [
        {
            "strategy": r.strategy,
            "bid_mw": "" if r.uniform_bid is None else r.uniform_bid,
            "fcr_revenue": r.fcr_revenue,
            "imbalance_profit": r.imbalance_profit,
            "total_profit": r.total_profit,
            "cycles": r.cycles,
            "days": r.days,
        }
        for r in sorted(runs, key=key)
    ]


def bin_edges(values, n_bins: int) -> np.ndarray:
    lo, hi = float(np.min(values)), float(np.max(values))
    if hi == lo:
        return np.array([lo, hi])
    return np.linspace(lo, hi, n_bins + 1)


def _bin_index(values, edges) -> np.ndarray:
    n = len(edges) - 1
    return np.clip(np.searchsorted(edges, values, side="right") - 1, 0, n - 1)


def heatmap_rows(blocks: pd.DataFrame, n_price_bins: int = 4, n_sigma_bins: int = 4) -> list[dict]:
    """Mean selected bid per (FCR price, imbalance sigma) cell; empty cells have no mean."""
    if blocks.empty:
        return []
    price = blocks["fcr_price"].to_numpy(float)
    sigma = blocks["imbalance_sigma"].to_numpy(float)
    bids = blocks["bid_mw"].to_numpy(float)
    pe, se = bin_edges(price, n_price_bins), bin_edges(sigma, n_sigma_bins)
    pi, si = _bin_index(price, pe), _bin_index(sigma, se)
    rows = []
    for i in range(len(pe) - 1):
        for j in range(len(se) - 1):
            sel = (pi == i) & (si == j)
            rows.append({
                "fcr_price_lo": float(pe[i]),
                "fcr_price_hi": float(pe[i + 1]),
                "sigma_lo": float(se[j]),
                "sigma_hi": float(se[j + 1]),
                "mean_bid_mw": float(bids[sel].mean()) if sel.any() else "",
                "blocks": int(sel.sum()),
            })
    return rows


def build_report(run_dirs, out_dir, n_bins: int = 4, figures: bool = False) -> dict[str, Path]:
    if not run_dirs:
        raise ReportError("report needs at least one evaluated run directory")
    runs = [load_run(d) for d in run_dirs]
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    comp = comparison_rows(runs)
    varied = [r.blocks for r in runs if r.uniform_bid is None]
    blocks = pd.concat(varied, ignore_index=True) if varied else pd.DataFrame(columns=BLOCK_FIELDS)
    heat = heatmap_rows(blocks, n_bins, n_bins)
    paths = {"comparison": out / "comparison.csv", "heatmap": out / "heatmap.csv"}
    _write_rows(paths["comparison"], COMPARISON_FIELDS, comp)
    _write_rows(paths["heatmap"], HEATMAP_FIELDS, heat)
    if figures:
        from .plotting import plot_comparison, plot_heatmap

        paths["comparison_png"] = plot_comparison(comp, out / "comparison.png")
        if heat:
            paths["heatmap_png"] = plot_heatmap(heat, out / "heatmap.png")
    return paths
