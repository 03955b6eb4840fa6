"""SVG line charts of loss against round, one panel per (M, p)"""

from pathlib import Path
from typing import Union

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import pandas as pd  # noqa: E402

SERIES_METHOD = "iteheat"
BASELINE_METHOD = "pooled_nodewise"
LINE_KEYS = ["n0", "hete_ratio", "graph", "rule"]


def plot_loss_series(
    results: pd.DataFrame,
    path: Union[str, Path],
    statistic: str = "frobenius_sq_over_p",
) -> Path:
    """Median loss vs round; the pooled baseline is drawn as a dashed level"""
    plt.rcParams["svg.hashsalt"] = "distheat"
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)

    rows = results[results["statistic"] == statistic]
    panels = sorted(rows[["M", "p"]].drop_duplicates().itertuples(index=False))
    n_panels = max(1, len(panels))
    fig, axes = plt.subplots(1, n_panels, figsize=(4.5 * n_panels, 3.6), squeeze=False)

    for ax, (M, p) in zip(axes[0], panels):
        panel = rows[(rows["M"] == M) & (rows["p"] == p)]
        series = panel[panel["method"] == SERIES_METHOD]
        for key, line in series.groupby(LINE_KEYS, sort=True):
            line = line.sort_values("t")
            label = ", ".join(f"{k}={v}" for k, v in zip(LINE_KEYS, key))
            drawn = ax.plot(line["t"], line["median"], marker="o", label=label)
            base = panel[
                (panel["method"] == BASELINE_METHOD)
                & (panel[LINE_KEYS] == pd.Series(key, index=LINE_KEYS)).all(axis=1)
            ]
            if not base.empty:
                ax.axhline(
                    float(base["median"].iloc[0]),
                    linestyle="--",
                    color=drawn[0].get_color(),
                    linewidth=1,
                )
        ax.set_title(f"M={M}, p={p}")
        ax.set_xlabel("round t")
        ax.set_ylabel(statistic)
        ax.legend(fontsize=6)

    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path
