#!/usr/bin/env python3
"""Plot the loss evolution recorded in a fit trace CSV.

Usage: python scripts/plot_trace.py runs/chair.trace.csv [-o trace.png]
"""

import argparse
import csv

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("trace")
    ap.add_argument("-o", "--output", default=None)
    args = ap.parse_args()

    rows = list(csv.DictReader(open(args.trace, encoding="utf-8")))
    iters = [int(r["iter"]) for r in rows]

    fig, (ax, ax2) = plt.subplots(1, 2, figsize=(10, 4))
    for key in ("l_total", "l_px", "l_xp", "l_parsimony"):
        ax.plot(iters, [float(r[key]) for r in rows], label=key)
    ax.set_xlabel("iteration")
    ax.set_yscale("log")
    ax.legend()
    ax2.plot(iters, [float(r["sum_gamma"]) for r in rows], label="sum gamma")
    ax2.plot(iters, [int(r["active"]) for r in rows], label="active (0.5)")
    ax2.set_xlabel("iteration")
    ax2.legend()
    fig.tight_layout()
    out = args.output or args.trace.rsplit(".", 1)[0] + ".png"
    fig.savefig(out, dpi=120)
    print(out)


if __name__ == "__main__":
    main()
