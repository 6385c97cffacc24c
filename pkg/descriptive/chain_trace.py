import argparse
import os

import matplotlib.pyplot as plt
import pandas as pd

SMOOTHING_WINDOW = 500


def plot_trace(trace_csv, out_png, window=SMOOTHING_WINDOW):
    """
    Three stacked panels from a sampler trace CSV: log joint (raw and rolling
    median), number of active clusters K, and mean edges per node.
    """
    df = pd.read_csv(trace_csv)
    if df.empty:
        raise ValueError(f"{trace_csv} has no rows")
    smoothed = df["log_joint"].rolling(min(window, len(df)), min_periods=1).median()

    fig, axes = plt.subplots(3, 1, figsize=(12, 10), sharex=True)
    axes[0].plot(df["epoch"], df["log_joint"], linewidth=0.6, color="lightgray", label="log joint")
    axes[0].plot(df["epoch"], smoothed, linewidth=1.8, color="blue", label=f"rolling median ({window})")
    axes[0].set_ylabel("log joint")
    axes[0].legend(fontsize=9)

    axes[1].step(df["epoch"], df["K"], where="post", color="red")
    axes[1].set_ylabel("active clusters K")

    axes[2].plot(df["epoch"], df["edges_per_node"], linewidth=1.2, color="green")
    axes[2].set_ylabel("edges per node")
    axes[2].set_xlabel("epoch")

    fig.suptitle("Sampler trace")
    fig.tight_layout()
    fig.savefig(out_png, dpi=300, bbox_inches="tight")
    plt.close(fig)
    return out_png


def main():
    parser = argparse.ArgumentParser(description="Plot a sampler trace CSV.")
    parser.add_argument("trace_csv")
    parser.add_argument("--out", default=None)
    args = parser.parse_args()

    out_path = args.out or os.path.splitext(args.trace_csv)[0] + ".png"
    plot_trace(args.trace_csv, out_path)
    print(f"Saved figure to {out_path}")


if __name__ == "__main__":
    main()
