"""Convergence study for the manufactured point-source case via the CLI.

Drives the same entry point as the installed ``bdie converge`` command,
then reads the table back and prints the observed convergence order of
each error column between consecutive levels.  Levels 1-2 run in seconds;
pass --full to include level 3 (about a minute).

    python3 demos/convergence_study.py [--full]
"""

import argparse

import numpy as np

from bdie import cli
from bdie import reports


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--full", action="store_true",
                        help="include level 3 in the sweep")
    parser.add_argument("--out", default="demo-out", help="output directory")
    args = parser.parse_args()

    levels = ["1", "2", "3"] if args.full else ["1", "2"]
    code = cli.main(["converge", "--case", "point-source",
                     "--levels", *levels, "--out", args.out])
    if code != cli.EXIT_OK:
        raise SystemExit(code)

    table = reports.ConvergenceTable.from_csv(
        reports.resolve_output_dir(args.out) / "converge_point-source.csv")
    h = np.array(table.column("h_surface"))
    print()
    print("observed order between consecutive levels (error ~ h^p):")
    for name in table.metric_names:
        values = np.array(table.column(name))
        if np.any(values <= 0) or values.max() < 1e-12:
            print(f"  {name}: at rounding level, no order to estimate")
            continue
        orders = np.log(values[:-1] / values[1:]) / np.log(h[:-1] / h[1:])
        joined = ", ".join(f"{p:.2f}" for p in orders)
        print(f"  {name}: {joined}")


if __name__ == "__main__":
    main()
