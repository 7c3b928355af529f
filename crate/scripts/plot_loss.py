"""Plot one or more two-column loss curves (step, loss) on a log scale.

    python scripts/plot_loss.py results/diffusion_loss.txt -o loss.png
"""

import argparse

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("curves", nargs="+", help="loss curve files")
    parser.add_argument("-o", "--output", default="loss.png")
    parser.add_argument("--smooth", type=int, default=25, help="moving-average window in steps")
    args = parser.parse_args()

    fig, ax = plt.subplots(figsize=(7, 4))
    for path in args.curves:
        steps, loss = np.loadtxt(path, comments="#", unpack=True, ndmin=2)
        ax.plot(steps, loss, alpha=0.3, linewidth=0.8)
        if args.smooth > 1 and len(loss) >= args.smooth:
            kernel = np.ones(args.smooth) / args.smooth
            smoothed = np.convolve(loss, kernel, mode="valid")
            ax.plot(steps[args.smooth - 1 :], smoothed, label=path)
        else:
            ax.lines[-1].set_label(path)
    ax.set_yscale("log")
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.legend()
    fig.tight_layout()
    fig.savefig(args.output, dpi=120)


if __name__ == "__main__":
    main()
