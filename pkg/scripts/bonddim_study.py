"""Sampling quality against bond dimension on ulysses16, three seeds.

Fits run to convergence (epoch cap 10000) rather than the desk loop's cap.
"""
import sys

from tngeo import cli

if __name__ == "__main__":
    argv = ["--mode", "bonddim-study", "--instance", "ulysses16", "--seeds", "0-2",
            "--chi", "4", "--chi", "16", "--chi", "64", "--max-epochs", "10000",
            "--out", "results/bonddim"]
    sys.exit(cli.main(argv + sys.argv[1:]))
