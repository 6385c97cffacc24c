import argparse
import os
import sys

import matplotlib.pyplot as plt
import numpy as np

SCRIPT_FOLDER = os.path.dirname(os.path.abspath(__file__))
sys.path.insert(0, os.path.join(SCRIPT_FOLDER, ".."))

from graph_core import load_multigraph  # noqa: E402

BINS = 30


def plot_multiplicity_histogram(posterior_file, out_png, bins=BINS):
    """Histogram of expected multiplicities over observed edges (self-loops excluded)."""
    mg = load_multigraph(posterior_file)
    off = mg.pairs[:, 0] != mg.pairs[:, 1]
    values = np.asarray(mg.counts[off], dtype=float)
    if values.size == 0:
        raise ValueError(f"{posterior_file} has no off-diagonal entries")
    share = float(np.mean(values > 1))

    fig = plt.figure(figsize=(12, 7))
    plt.hist(values, bins=bins, color="blue", alpha=0.75, edgecolor="black")
    plt.axvline(1.0, color="red", linestyle="--", linewidth=1.2, label="multiplicity 1")
    plt.title(f"Expected multiplicity of observed edges ({100 * share:.1f}% above 1)")
    plt.xlabel("expected multiplicity")
    plt.ylabel("number of edges")
    plt.legend(fontsize=9)
    plt.tight_layout()
    plt.savefig(out_png, dpi=300, bbox_inches="tight")
    plt.close(fig)
    return share


def main():
    parser = argparse.ArgumentParser(description="Plot expected edge multiplicities.")
    parser.add_argument("posterior_file")
    parser.add_argument("--out", default=None)
    parser.add_argument("--bins", type=int, default=BINS)
    args = parser.parse_args()

    out_path = args.out or os.path.join(SCRIPT_FOLDER, "multiplicity_histogram.png")
    share = plot_multiplicity_histogram(args.posterior_file, out_path, args.bins)
    print(f"Share of edges with expected multiplicity above 1: {share:.3f}")
    print(f"Saved figure to {out_path}")


if __name__ == "__main__":
    main()
