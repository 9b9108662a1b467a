"""Log-log plot of T_delta and T*(delta) against eps from a phase_diagram.csv.

    python scripts/plot_phase_diagram.py out/phase_diagram/phase_diagram.csv -o phase_diagram.png
"""
import argparse
import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def read_table(path):
    eps, t_delta, t_star = [], [], []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            eps.append(float(row["epsilon"]))
            t_delta.append(float(row["T_delta"]) if row["T_delta"] else float("nan"))
            t_star.append(float(row["T_star"]) if row["T_star"] else float("nan"))
    return eps, t_delta, t_star


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("table", type=Path)
    p.add_argument("-o", "--output", type=Path, default=Path("phase_diagram.png"))
    args = p.parse_args(argv)

    eps, t_delta, t_star = read_table(args.table)
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.loglog(eps, t_star, "o-", label=r"$T^*(\delta)$")
    ax.loglog(eps, t_delta, "s--", label=r"$T_\delta$")
    ax.set_xlabel(r"$\varepsilon$")
    ax.set_ylabel("time")
    ax.legend()
    fig.tight_layout()
    fig.savefig(args.output, dpi=150)
    print(args.output)


if __name__ == "__main__":
    main()
