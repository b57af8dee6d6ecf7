"""Optional PNG rendering of the report tables."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def plot_comparison(rows: list[dict], path) -> Path:
    """Stacked FCR/imbalance profit bars per strategy with cycles on a second axis."""
    labels = [r["strategy"].replace(" MW", "").replace("uniform ", "U") for r in rows]
    fcr = np.array([r["fcr_revenue"] for r in rows]) / 1e3
    imb = np.array([r["imbalance_profit"] for r in rows]) / 1e3
    x = np.arange(len(rows))
    fig, ax = plt.subplots(figsize=(max(5, 0.7 * len(rows) + 2), 4))
    ax.bar(x, fcr, label="FCR revenue", color="tab:blue")
    ax.bar(x, imb, bottom=np.where(imb >= 0, fcr, 0), label="imbalance profit", color="tab:orange")
    ax.set_xticks(x, labels, rotation=45, ha="right")
    ax.set_ylabel("profit (kEUR)")
    ax2 = ax.twinx()
    ax2.plot(x, [r["cycles"] for r in rows], "k.", label="cycles")
    ax2.set_ylabel("equivalent full cycles")
    ax.legend(loc="upper left", fontsize="small")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def plot_heatmap(rows: list[dict], path) -> Path:
    p_edges = sorted({r["fcr_price_lo"] for r in rows} | {r["fcr_price_hi"] for r in rows})
    s_edges = sorted({r["sigma_lo"] for r in rows} | {r["sigma_hi"] for r in rows})
    grid = np.full((max(len(s_edges) - 1, 1), max(len(p_edges) - 1, 1)), np.nan)
    for r in rows:
        if r["mean_bid_mw"] == "":
            continue
        i = min(s_edges.index(r["sigma_lo"]), grid.shape[0] - 1)
        j = min(p_edges.index(r["fcr_price_lo"]), grid.shape[1] - 1)
        grid[i, j] = r["mean_bid_mw"]
    fig, ax = plt.subplots(figsize=(5, 4))
    im = ax.imshow(grid, origin="lower", aspect="auto", cmap="viridis")
    ax.set_xticks(range(grid.shape[1]), [f"{v:.0f}" for v in p_edges[: grid.shape[1]]])
    ax.set_yticks(range(grid.shape[0]), [f"{v:.0f}" for v in s_edges[: grid.shape[0]]])
    ax.set_xlabel("FCR price bin start (EUR/MW)")
    ax.set_ylabel("imbalance sigma bin start (EUR/MWh)")
    fig.colorbar(im, ax=ax, label="mean bid (MW)")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)
