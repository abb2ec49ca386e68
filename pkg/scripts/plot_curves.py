"""
Plot PA curves written by ``fire stream``.

Each pa_curve.csv becomes one line, labelled from its attack and variant header
entries. A centred moving average smooths the per-position means.

Usage:
    poetry run python scripts/plot_curves.py <pa_curve.csv>... [--window N] [--output PATH]

Examples:
    poetry run python scripts/plot_curves.py ~/.fire-repair/out/stream/patch/pa_curve.csv
    poetry run python scripts/plot_curves.py ~/.fire-repair/out/stream/*/pa_curve.csv --window 9
    poetry run python scripts/plot_curves.py runs/*/pa_curve.csv --output /tmp/fire/pa.png
"""

import argparse
import sys
from pathlib import Path

import matplotlib as mpl

mpl.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
from scipy.ndimage import uniform_filter1d

sys.path.insert(0, str(Path(__file__).parent.parent))

from fire_repair.report import read_csv, read_csv_header


def smooth(values: np.ndarray, window: int) -> np.ndarray:
    if window <= 1 or values.size == 0:
        return values
    return uniform_filter1d(values, size=min(window, values.size), mode="nearest")


def main() -> None:
    parser = argparse.ArgumentParser(description="Plot streaming PA curves.")
    parser.add_argument("curves", nargs="+", type=Path, help="pa_curve.csv files")
    parser.add_argument("--window", type=int, default=5, metavar="N", help="Moving-average window (default: 5)")
    parser.add_argument("--output", type=Path, default=Path("pa_curve.png"), metavar="PATH",
                        help="Image to write (default: ./pa_curve.png)")
    args = parser.parse_args()

    fig, ax = plt.subplots(figsize=(6.0, 3.7))
    for path in args.curves:
        if not path.exists():
            print(f"skipping {path}: not found", file=sys.stderr)
            continue
        header = read_csv_header(path)
        frame = read_csv(path)
        label = f"{header.get('attack', path.parent.name)} / {header.get('variant', '?')}"
        ax.plot(frame["position"].to_numpy(), smooth(frame["pa"].to_numpy(), args.window), label=label)

    ax.set_xlabel("poisoned samples seen")
    ax.set_ylabel("PA")
    ax.set_ylim(0.0, 1.0)
    ax.grid(alpha=0.3)
    ax.legend(frameon=False, fontsize=8)
    fig.tight_layout()
    args.output.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(args.output, dpi=150)
    print(f"wrote {args.output}")


if __name__ == "__main__":
    main()
