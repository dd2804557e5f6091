#!/usr/bin/env python3
"""Plot study aggregates produced by `slfa study`.

Reads an aggregate.csv (columns: j,metric,median,q25,q75) and draws one
panel per metric with the median and the interquartile band against J.

Usage: plot_study.py <aggregate.csv> [output.png]
"""

import sys

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import pandas as pd


def main() -> int:
    if len(sys.argv) < 2:
        print(__doc__)
        return 1
    table = pd.read_csv(sys.argv[1])
    out = sys.argv[2] if len(sys.argv) > 2 else "study.png"
    metrics = [m for m in table["metric"].unique() if m != "fit_iters"]
    cols = min(3, len(metrics))
    rows = (len(metrics) + cols - 1) // cols
    fig, axes = plt.subplots(rows, cols, figsize=(4.5 * cols, 3.5 * rows), squeeze=False)
    for ax, metric in zip(axes.flat, metrics):
        sub = table[table["metric"] == metric].sort_values("j")
        ax.plot(sub["j"], sub["median"], marker="o", label="median")
        ax.fill_between(sub["j"], sub["q25"], sub["q75"], alpha=0.25, label="IQR")
        ax.set_xlabel("J")
        ax.set_title(metric)
        ax.legend()
    for ax in axes.flat[len(metrics):]:
        ax.set_visible(False)
    fig.tight_layout()
    fig.savefig(out, dpi=150)
    print(f"wrote {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
