"""Render the CSV outputs of the ``msvine`` command line as PNG figures.

Usage::

    python scripts/plot_outputs.py smoothed OUT/smoothed.csv smoothed.png
    python scripts/plot_outputs.py rolling OUT/rolling.csv rolling.png [--baseline NAME]

``smoothed`` draws the smoothed (or posterior) probability of every regime
over time. ``rolling`` draws each candidate's window log-likelihood; with
``--baseline`` it draws the difference to that candidate instead.

Needs matplotlib, which is not a dependency of the package itself.
"""
import argparse
import csv
from collections import defaultdict

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def plot_smoothed(path, out):
    with open(path) as fh:
        header = next(csv.reader(fh))
    arr = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    fig, ax = plt.subplots(figsize=(9, 3))
    for k, name in enumerate(header[1:], start=1):
        ax.plot(arr[:, 0], arr[:, k], lw=0.8, label=name)
    ax.set_ylim(-0.02, 1.02)
    ax.set_xlabel("t")
    ax.set_ylabel("probability")
    ax.legend(loc="upper right", frameon=False)
    fig.tight_layout()
    fig.savefig(out, dpi=150)


def plot_rolling(path, out, baseline=None):
    series = defaultdict(dict)
    with open(path) as fh:
        for row in csv.DictReader(fh):
            series[row["candidate_id"]][int(row["window_start"])] = float(row["loglik"])
    starts = sorted(next(iter(series.values())))
    base = np.array([series[baseline][s] for s in starts]) if baseline else 0.0
    fig, ax = plt.subplots(figsize=(9, 3))
    for name, values in series.items():
        if name == baseline:
            continue
        ax.plot(starts, np.array([values[s] for s in starts]) - base, lw=0.8, label=name)
    ax.axhline(0.0, color="grey", lw=0.5)
    ax.set_xlabel("window start")
    ax.set_ylabel(f"log-likelihood minus {baseline}" if baseline else "log-likelihood")
    ax.legend(loc="upper right", frameon=False)
    fig.tight_layout()
    fig.savefig(out, dpi=150)


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("kind", choices=("smoothed", "rolling"))
    p.add_argument("csv")
    p.add_argument("png")
    p.add_argument("--baseline")
    args = p.parse_args()
    if args.kind == "smoothed":
        plot_smoothed(args.csv, args.png)
    else:
        plot_rolling(args.csv, args.png, args.baseline)


if __name__ == "__main__":
    main()
