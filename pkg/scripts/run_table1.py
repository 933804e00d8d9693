"""Regenerate the benchmark table (heuristics and TN-GEO variants) into results/table1.

Extra arguments are passed to the CLI, e.g. ``--preset paper`` or ``--seeds 0-9``.
"""
import sys

from tngeo import cli

INSTANCES = ["burma14", "ulysses16", "ulysses22", "att48", "eil51", "berlin52"]

if __name__ == "__main__":
    argv = ["--mode", "table1", "--seeds", "0-4", "--out", "results/table1"]
    for name in INSTANCES:
        argv += ["--instance", name]
    sys.exit(cli.main(argv + sys.argv[1:]))
